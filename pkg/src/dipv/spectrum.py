"""Direction-aware spherical Fourier energy spectrum of a point cloud.

The cloud is treated as a sum of Dirac deltas, so its Fourier transform at
frequency r*w is F = sum_j exp(-i r <w, v_j>). The energy E = |F|^2 is
evaluated on a Fibonacci set of directions and a grid of radii; averaging E
over directions gives the radial profile G(r), which is rotation invariant up
to the quadrature error of the direction set.
"""
from __future__ import annotations

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from dipv import nn
from dipv.errors import InvalidInput
from dipv.geometry import PointCloud, Rotation, apply_rotation

GOLDEN_AZIMUTH = np.pi * (1.0 + np.sqrt(5.0))
LOG_GRID_EPS = 1e-6
POINT_TILE = 1024

DEFAULT_N_DIR = 36
DEFAULT_F_RANGE = (0.0, 12.0)
DEFAULT_M = 32
DEFAULT_CHUNK = 16


def thread_count() -> int:
    """Worker cap from DIPV_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("DIPV_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class DirectionSet:
    omegas: np.ndarray

    def __post_init__(self):
        w = np.array(self.omegas, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 3 or w.shape[0] < 1:
            raise InvalidInput(f"directions must have shape (L, 3) with L >= 1, got {w.shape}")
        if np.max(np.abs(np.linalg.norm(w, axis=1) - 1.0)) > 1e-12:
            raise InvalidInput("directions must be unit vectors")
        w.setflags(write=False)
        object.__setattr__(self, "omegas", w)

    def __len__(self) -> int:
        return self.omegas.shape[0]

    def rotated(self, rot: Rotation) -> DirectionSet:
        """Directions R^T w for every w (row-vector form w @ R)."""
        w = self.omegas @ rot.matrix
        return DirectionSet(w / np.linalg.norm(w, axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    radii: np.ndarray
    mode: str = "linear"
    f_min: float = 0.0
    f_max: float = 12.0

    def __len__(self) -> int:
        return self.radii.shape[0]


@dataclass(frozen=True, eq=False)
class SpectrumGrid:
    """energies[k, l] = E(r_k * w_l); radial_profile[k] = mean_l energies[k, l]."""

    radii: np.ndarray
    energies: np.ndarray
    radial_profile: np.ndarray
    fourier_real: np.ndarray | None = None
    fourier_imag: np.ndarray | None = None


@dataclass(frozen=True)
class ErrorReport:
    bound_raw: np.ndarray
    bound_normalized: np.ndarray
    ratio_error_avg: float  # percent


def fibonacci_directions(n_dir: int) -> DirectionSet:
    """Golden-angle spiral with polar cosines at 1 - 2(i + 1/2)/n."""
    if n_dir < 1:
        raise InvalidInput("n_dir must be >= 1")
    alpha = np.arange(n_dir, dtype=np.float64) + 0.5
    theta = np.arccos(1.0 - 2.0 * alpha / n_dir)
    phi = alpha * GOLDEN_AZIMUTH
    st = np.sin(theta)
    w = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)
    return DirectionSet(w)


def frequency_grid(f_min: float, f_max: float, m: int, mode: str = "linear") -> FrequencyGrid:
    """Linear or geometric grid of radii on [f_min, f_max].

    The logarithmic grid interpolates ln(f + eps) linearly and subtracts eps
    again, so both endpoints are hit and f_min = 0 is allowed.
    """
    if mode not in ("linear", "log", "logarithmic"):
        raise InvalidInput(f"unknown grid mode {mode!r}")
    mode = "linear" if mode == "linear" else "logarithmic"
    if m < 1:
        raise InvalidInput("m must be >= 1")
    if not (0.0 <= f_min < f_max):
        raise InvalidInput(f"need 0 <= f_min < f_max, got [{f_min}, {f_max}]")
    if m == 1:
        return FrequencyGrid(np.array([float(f_min)]), mode, f_min, f_max)
    t = np.arange(m, dtype=np.float64) / (m - 1)
    if mode == "linear":
        r = f_min + t * (f_max - f_min)
    else:
        lo, hi = np.log(f_min + LOG_GRID_EPS), np.log(f_max + LOG_GRID_EPS)
        r = np.exp(lo + t * (hi - lo)) - LOG_GRID_EPS
    r = np.clip(r, f_min, f_max)
    r[0], r[-1] = f_min, f_max
    return FrequencyGrid(r, mode, float(f_min), float(f_max))


def _radii(freqs) -> np.ndarray:
    return np.asarray(freqs.radii if isinstance(freqs, FrequencyGrid) else freqs, dtype=np.float64)


def _uniform_step(radii: np.ndarray) -> float | None:
    if radii.shape[0] < 3:
        return None
    step = np.diff(radii)
    if np.all(np.abs(step - step[0]) <= 1e-12 * max(1.0, abs(radii[-1]))) and step[0] > 0:
        return float(step[0])
    return None


def _fourier_chunk(points: np.ndarray, radii: np.ndarray, omegas: np.ndarray):
    # Elementwise projection (not BLAS) so every (k, l) cell is computed the
    # same way regardless of how the directions are chunked.
    proj = (
        omegas[:, 0:1] * points[None, :, 0]
        + omegas[:, 1:2] * points[None, :, 1]
        + omegas[:, 2:3] * points[None, :, 2]
    )  # (c, N)
    step = _uniform_step(radii)
    if step is None:
        phase = radii[:, None, None] * proj[None, :, :]  # (M, c, N), N contiguous
        return np.cos(phase).sum(axis=-1), -np.sin(phase).sum(axis=-1)
    # evenly spaced radii: advance exp(-i r p) by one complex multiply per step,
    # over fixed point tiles so the working set does not grow with N
    out = np.zeros((radii.shape[0], proj.shape[0]), dtype=np.complex128)
    for t in range(0, proj.shape[1], POINT_TILE):
        p = proj[:, t : t + POINT_TILE]
        rot = np.exp(-1j * step * p)
        term = np.exp(-1j * radii[0] * p) if radii[0] != 0.0 else np.ones_like(rot)
        for k in range(radii.shape[0]):
            out[k] += term.sum(axis=-1)
            if k + 1 < radii.shape[0]:
                term *= rot
    return out.real.copy(), out.imag.copy()


def spherical_fourier(
    cloud: PointCloud,
    dirs: DirectionSet,
    freqs,
    chunk_size: int = DEFAULT_CHUNK,
    keep_complex: bool = False,
    threads: int | None = None,
) -> SpectrumGrid:
    """Fourier coefficients of the point comb on the (radius, direction) grid.

    Directions are processed in blocks of ``chunk_size``; each block is
    independent, so the result does not depend on the block size or on the
    number of worker threads.
    """
    if chunk_size < 1:
        raise InvalidInput("chunk_size must be >= 1")
    radii = _radii(freqs)
    pts = cloud.points
    omegas = dirs.omegas if isinstance(dirs, DirectionSet) else np.asarray(dirs, dtype=np.float64)
    n_dir = omegas.shape[0]
    starts = range(0, n_dir, chunk_size)
    work = [omegas[s : s + chunk_size] for s in starts]
    threads = thread_count() if threads is None else threads
    if threads > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda w: _fourier_chunk(pts, radii, w), work))
    else:
        parts = [_fourier_chunk(pts, radii, w) for w in work]
    re = np.concatenate([p[0] for p in parts], axis=1)
    im = np.concatenate([p[1] for p in parts], axis=1)
    energies = re * re + im * im
    profile = energies.mean(axis=1)
    if keep_complex:
        return SpectrumGrid(radii, energies, profile, re, im)
    return SpectrumGrid(radii, energies, profile)


def energy_spectrum(cloud: PointCloud, dirs, freqs, chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    return spherical_fourier(cloud, dirs, freqs, chunk_size).energies


def verify_rotation_covariance(cloud: PointCloud, rot: Rotation, dirs: DirectionSet, freqs) -> float:
    """max |E(R P, w) - E(P, R^T w)| over the grid."""
    e_rot = energy_spectrum(apply_rotation(cloud, rot), dirs, freqs)
    e_back = energy_spectrum(cloud, dirs.rotated(rot), freqs)
    return float(np.max(np.abs(e_rot - e_back)))


def radial_invariant(spectrum: SpectrumGrid | np.ndarray) -> np.ndarray:
    e = spectrum.energies if isinstance(spectrum, SpectrumGrid) else np.asarray(spectrum)
    return e.mean(axis=-1)


def normalize_profile(g: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """(G - mean) / std over radii (population std)."""
    g = np.asarray(g, dtype=np.float64)
    sd = np.sqrt(np.mean((g - g.mean(axis=-1, keepdims=True)) ** 2, axis=-1, keepdims=True) + eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (g - g.mean(axis=-1, keepdims=True)) / sd


def raw_error_bound(e_max, e_min, n_dir: int):
    """Monte Carlo bound on |dG|: (E_max - E_min) / (2 sqrt(N_dir))."""
    return (np.asarray(e_max) - np.asarray(e_min)) / (2.0 * np.sqrt(n_dir))


def normalized_error_bound(e_max, e_min, sigma_true, n_dir: int):
    """Bound on |dG_hat| after standardisation: raw bound / sigma_true."""
    return raw_error_bound(e_max, e_min, n_dir) / sigma_true


def error_report(spectrum: SpectrumGrid, n_dir: int) -> ErrorReport:
    """Per-radius Monte Carlo bounds for G and for the standardised profile.

    When G is constant over radii the standardised quantities are undefined
    and come back as NaN.
    """
    e = spectrum.energies
    if e.shape[1] != n_dir:
        raise InvalidInput(f"spectrum has {e.shape[1]} directions, expected {n_dir}")
    raw = raw_error_bound(e.max(axis=1), e.min(axis=1), n_dir)
    g = spectrum.radial_profile
    sigma = float(np.sqrt(np.mean((g - g.mean()) ** 2)))
    if sigma == 0.0:
        nan = np.full_like(raw, np.nan)
        return ErrorReport(raw, nan, float("nan"))
    norm = raw / sigma
    ghat = np.abs((g - g.mean()) / sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = norm / ghat
    ratio = ratio[np.isfinite(ratio)]
    avg = float(100.0 * ratio.mean()) if ratio.size else float("nan")
    return ErrorReport(raw, norm, avg)


def cost_model(n: int, m: int, l: int, l_max: int) -> tuple[int, int, float]:
    """Analytic multiply-add counts: DASFT 3NL + NML vs harmonics 2N(L_max + 1)^2."""
    if min(n, m, l) < 1 or l_max < 0:
        raise InvalidInput("n, m, l must be >= 1 and l_max >= 0")
    dasft = 3 * n * l + n * m * l
    sh = 2 * n * (l_max + 1) ** 2
    return dasft, sh, dasft / sh


# ---------------------------------------------------------- trainable branch
# Parameters: dasft_ffn_w (M, d), dasft_ffn_b (d,) map each direction's
# layer-normalised energy column to a d-vector, averaged into the pooled
# descriptor; dasft_tok_w (d,) and dasft_tok_pos (M, d) turn the standardised
# profile into M key/value tokens, each offset by the pooled descriptor.


class DasftOutput(NamedTuple):
    pooled: np.ndarray  # (..., d)
    tokens: np.ndarray  # (..., M, d)


def init_dasft_params(params: nn.ParameterSet, m: int, d: int, rng, tokens: bool = True):
    params.add("dasft_ffn_w", rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, d)))
    params.add("dasft_ffn_b", np.zeros(d))
    if tokens:
        params.add("dasft_tok_w", rng.normal(0.0, 1.0, size=d))
        params.add("dasft_tok_pos", rng.normal(0.0, 1.0, size=(m, d)))


def dasft_branch_forward(energies: np.ndarray, params, eps: float = 1e-5, normalize: bool = True):
    """energies: (..., M, L) -> DasftOutput, cache.

    Tokens are produced only when the token parameters are present.

    With ``params`` None the FFN is the identity: pooled is the direction
    mean of the (optionally normalised) energy columns and the tokens are the
    standardised profile as an (M, 1) column.
    """
    cols = np.swapaxes(energies, -1, -2)  # (..., L, M)
    cache = {"normalize": normalize}
    if normalize:
        cols, cache["col_ln"] = nn.layernorm_forward(cols, eps=eps)
    g = energies.mean(axis=-1)
    ghat, _ = nn.layernorm_forward(g, eps=eps) if normalize else (g, None)
    if params is None:
        return DasftOutput(cols.mean(axis=-2), ghat[..., None]), cache
    z, cache["ffn_aff"] = nn.affine_forward(cols, params["dasft_ffn_w"], params["dasft_ffn_b"])
    h, cache["ffn_act"] = nn.leaky_relu_forward(z)
    pooled = h.mean(axis=-2)
    cache["n_dir"] = h.shape[-2]
    if "dasft_tok_w" not in params:
        return DasftOutput(pooled, None), cache
    t = ghat[..., None] * params["dasft_tok_w"] + params["dasft_tok_pos"]
    tokens, cache["tok_act"] = nn.leaky_relu_forward(t)
    # every token also carries the pooled descriptor
    tokens = tokens + pooled[..., None, :]
    cache["ghat"] = ghat
    return DasftOutput(pooled, tokens), cache


def dasft_branch_backward(dpooled, dtokens, cache) -> dict[str, np.ndarray]:
    grads = {}
    if dtokens is not None:
        extra = dtokens.sum(axis=-2)
        dpooled = extra if dpooled is None else dpooled + extra
    if dpooled is not None:
        dh = np.repeat(dpooled[..., None, :] / cache["n_dir"], cache["n_dir"], axis=-2)
        dz = nn.leaky_relu_backward(dh, cache["ffn_act"])
        _, grads["dasft_ffn_w"], grads["dasft_ffn_b"] = nn.affine_backward(dz, cache["ffn_aff"])
    if dtokens is not None:
        dt = nn.leaky_relu_backward(dtokens, cache["tok_act"])
        d = dt.shape[-1]
        m = dt.shape[-2]
        flat = dt.reshape(-1, m, d)
        grads["dasft_tok_w"] = np.einsum("bm,bmd->d", cache["ghat"].reshape(-1, m), flat)
        grads["dasft_tok_pos"] = flat.sum(axis=0)
    return grads


def dasft_forward(
    cloud: PointCloud,
    dirs: DirectionSet,
    freqs,
    ffn_params=None,
    chunk_size: int = DEFAULT_CHUNK,
    normalize: bool = True,
) -> DasftOutput:
    """Global descriptor of one cloud: pooled (d,) vector and (M, d) tokens."""
    e = energy_spectrum(cloud, dirs, freqs, chunk_size)
    out, _ = dasft_branch_forward(e, ffn_params, normalize=normalize)
    return out


# ----------------------------------------------------------------- CSV export


def _fmt(x) -> str:
    return format(float(x), ".17g")


def spectrum_csv(spectrum: SpectrumGrid, dirs: DirectionSet) -> str:
    """Energy table then the radial profile block, both with fixed columns."""
    buf = io.StringIO()
    buf.write("r,omega_index,omega_x,omega_y,omega_z,energy\n")
    w = dirs.omegas
    for k, r in enumerate(spectrum.radii):
        rs = _fmt(r)
        for l in range(w.shape[0]):
            buf.write(
                f"{rs},{l},{_fmt(w[l, 0])},{_fmt(w[l, 1])},{_fmt(w[l, 2])},{_fmt(spectrum.energies[k, l])}\n"
            )
    buf.write("r,G\n")
    for r, g in zip(spectrum.radii, spectrum.radial_profile):
        buf.write(f"{_fmt(r)},{_fmt(g)}\n")
    return buf.getvalue()


def read_spectrum_csv(text: str):
    """Parse :func:`spectrum_csv` output into (energy rows, profile rows)."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != "r,omega_index,omega_x,omega_y,omega_z,energy":
        raise InvalidInput("missing spectrum header")
    split = lines.index("r,G")
    energy_rows = [tuple(float(x) for x in ln.split(",")) for ln in lines[1:split]]
    profile_rows = [tuple(float(x) for x in ln.split(",")) for ln in lines[split + 1 :]]
    return energy_rows, profile_rows
