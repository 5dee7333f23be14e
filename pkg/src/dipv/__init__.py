"""Rotation-invariant point-cloud descriptors built from dot-product operators.

Local features come from dot products between each point and its nearest
neighbours; global features come from the direction-averaged Fourier energy
spectrum of the cloud, sampled on a Fibonacci sphere.
"""

from dipv.errors import InvalidInput
from dipv.geometry import (
    KnnGraph,
    PointCloud,
    Rotation,
    apply_rotation,
    build_knn,
    center_and_scale,
    farthest_point_sample,
    random_rotation_so3,
    random_rotation_z,
)
from dipv.local import (
    AggregationConfig,
    LocalInvariantTensor,
    aggregate_dlp,
    aggregate_sap,
    l2dp_forward,
    local_dot_products,
)
from dipv.spectrum import (
    DirectionSet,
    ErrorReport,
    FrequencyGrid,
    SpectrumGrid,
    cost_model,
    dasft_forward,
    error_report,
    fibonacci_directions,
    frequency_grid,
    radial_invariant,
    spherical_fourier,
    verify_rotation_covariance,
)

__version__ = "0.1.0"
