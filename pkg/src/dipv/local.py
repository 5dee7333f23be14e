"""Local dot-product invariants and their aggregation into point features.

For each point v_j with neighbours g_jk the relative invariant is
<v_j, g_jk> - <v_j, v_j>, computed per 3-vector channel. Rotations cancel in
every dot product, so the tensor is exactly rotation invariant.

Two aggregations map the (c, K) block of a point to c' features:

* DLP flattens the block, applies a linear map, then layer normalisation.
* SAP pools max / population variance / mean over K, applies a linear map,
  then (training only) dropout.

Parameter names used by :func:`l2dp_forward` and the differentiable branch:
``l2dp_ffn_w``/``l2dp_ffn_b`` (optional FFN along the neighbour axis for DLP
or the statistic axis for SAP), ``l2dp_agg_w`` (required projection) and
``l2dp_ln_g``/``l2dp_ln_b`` (optional layer-norm affine, DLP only).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from dipv import nn
from dipv.errors import InvalidInput
from dipv.geometry import KnnGraph, PointCloud


class Aggregation(str, Enum):
    DLP = "dlp"
    SAP = "sap"


@dataclass(frozen=True)
class AggregationConfig:
    mode: Aggregation = Aggregation.DLP
    output_dim: int = 64
    dropout_rate: float = 0.2
    layernorm_epsilon: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "mode", Aggregation(self.mode))
        if self.output_dim < 1:
            raise InvalidInput("output_dim must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInput("dropout_rate must lie in [0, 1)")
        if self.layernorm_epsilon <= 0:
            raise InvalidInput("layernorm_epsilon must be positive")


@dataclass(frozen=True, eq=False)
class LocalInvariantTensor:
    """values[j, i, k] is the dot product for point j, channel i, neighbour k."""

    values: np.ndarray
    relative: bool = True

    @property
    def shape(self):
        return self.values.shape


def local_dot_products(cloud: PointCloud, graph: KnnGraph, relative: bool = True) -> LocalInvariantTensor:
    idx = graph.neighbor_indices
    if idx.shape[0] != len(cloud):
        raise InvalidInput(f"graph has {idx.shape[0]} rows but cloud has {len(cloud)} points")
    if idx.size and (idx.min() < 0 or idx.max() >= len(cloud)):
        raise InvalidInput("graph refers to points outside the cloud")
    vec = cloud.vectors  # (N, c, 3)
    nbr = vec[idx]  # (N, K, c, 3)
    dots = np.einsum("nci,nkci->nck", vec, nbr)
    if relative:
        dots = dots - np.einsum("nci,nci->nc", vec, vec)[:, :, None]
    return LocalInvariantTensor(dots, relative)


def sap_statistics(values: np.ndarray) -> np.ndarray:
    """(..., c, K) -> (..., 3, c): max, population variance, mean over K."""
    mean = values.mean(axis=-1)
    var = np.mean((values - mean[..., None]) ** 2, axis=-1)
    return np.stack([values.max(axis=-1), var, mean], axis=-2)


def aggregate_dlp(inv: LocalInvariantTensor, weights: np.ndarray, cfg: AggregationConfig) -> np.ndarray:
    if cfg.mode is not Aggregation.DLP:
        raise InvalidInput("aggregate_dlp needs a DLP config")
    n, c, k = inv.values.shape
    if weights.shape != (c * k, cfg.output_dim):
        raise InvalidInput(f"DLP weights must be {(c * k, cfg.output_dim)}, got {weights.shape}")
    flat = inv.values.reshape(n, c * k)
    out, _ = nn.layernorm_forward(flat @ weights, eps=cfg.layernorm_epsilon)
    return out


def aggregate_sap(
    inv: LocalInvariantTensor,
    weights: np.ndarray,
    cfg: AggregationConfig,
    train_mode: bool = False,
    seed=None,
) -> np.ndarray:
    if cfg.mode is not Aggregation.SAP:
        raise InvalidInput("aggregate_sap needs a SAP config")
    n, c, _ = inv.values.shape
    if weights.shape != (3 * c, cfg.output_dim):
        raise InvalidInput(f"SAP weights must be {(3 * c, cfg.output_dim)}, got {weights.shape}")
    stats = sap_statistics(inv.values).reshape(n, 3 * c)
    out, _ = nn.dropout_forward(stats @ weights, cfg.dropout_rate, train_mode, seed)
    return out


# ---------------------------------------------------------- trainable branch


def init_l2dp_params(params: nn.ParameterSet, cfg: AggregationConfig, k: int, channels: int, rng):
    """Register L2DP parameters: FFN near identity, projection scaled by fan-in."""
    width = k if cfg.mode is Aggregation.DLP else 3
    fan_in = channels * width
    params.add("l2dp_ffn_w", np.eye(width) + rng.normal(0.0, 0.1, size=(width, width)))
    params.add("l2dp_ffn_b", np.zeros(width))
    params.add("l2dp_agg_w", rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, cfg.output_dim)))
    if cfg.mode is Aggregation.DLP:
        params.add("l2dp_ln_g", np.ones(cfg.output_dim))
        params.add("l2dp_ln_b", np.zeros(cfg.output_dim))


def _get(params, name):
    return params[name] if params is not None and name in params else None


def l2dp_branch_forward(values, params, cfg: AggregationConfig, train_mode=False, seed=None):
    """Differentiable L2DP on raw invariants of shape (..., N, c, K) -> (..., N, c')."""
    ffn_w, ffn_b = _get(params, "l2dp_ffn_w"), _get(params, "l2dp_ffn_b")
    agg_w = _get(params, "l2dp_agg_w")
    if agg_w is None:
        raise InvalidInput("parameter set lacks l2dp_agg_w")
    lead = values.shape[:-2]
    c, k = values.shape[-2:]
    cache = {"lead": lead, "c": c, "k": k}
    if cfg.mode is Aggregation.DLP:
        h = values
    else:
        h = np.swapaxes(sap_statistics(values), -1, -2)  # (..., c, 3)
    if ffn_w is not None:
        z, cache["ffn_aff"] = nn.affine_forward(h, ffn_w, ffn_b)
        h, cache["ffn_act"] = nn.leaky_relu_forward(z)
    if cfg.mode is Aggregation.SAP:
        h = np.swapaxes(h, -1, -2)  # back to [max | var | avg] layout
    flat = h.reshape(*lead, -1)
    if flat.shape[-1] != agg_w.shape[0]:
        raise InvalidInput(f"l2dp_agg_w expects width {agg_w.shape[0]}, got {flat.shape[-1]}")
    y, cache["agg"] = nn.affine_forward(flat, agg_w)
    if cfg.mode is Aggregation.DLP:
        y, cache["ln"] = nn.layernorm_forward(
            y, _get(params, "l2dp_ln_g"), _get(params, "l2dp_ln_b"), cfg.layernorm_epsilon
        )
    else:
        y, cache["drop"] = nn.dropout_forward(y, cfg.dropout_rate, train_mode, seed)
    return y, cache


def l2dp_branch_backward(dy, cache, cfg: AggregationConfig) -> dict[str, np.ndarray]:
    """Parameter gradients of the L2DP branch (inputs are fixed features)."""
    grads = {}
    if cfg.mode is Aggregation.DLP:
        dy, dg, db = nn.layernorm_backward(dy, cache["ln"])
        if dg is not None:
            grads["l2dp_ln_g"] = dg
        if db is not None:
            grads["l2dp_ln_b"] = db
    else:
        dy = nn.dropout_backward(dy, cache["drop"])
    dflat, grads["l2dp_agg_w"], _ = nn.affine_backward(dy, cache["agg"])
    if "ffn_aff" in cache:
        lead, c, k = cache["lead"], cache["c"], cache["k"]
        if cfg.mode is Aggregation.DLP:
            dh = dflat.reshape(*lead, c, k)
        else:
            dh = np.swapaxes(dflat.reshape(*lead, 3, c), -1, -2)
        dz = nn.leaky_relu_backward(dh, cache["ffn_act"])
        _, grads["l2dp_ffn_w"], db = nn.affine_backward(dz, cache["ffn_aff"])
        if db is not None:
            grads["l2dp_ffn_b"] = db
    return grads


def l2dp_forward(
    cloud: PointCloud,
    graph: KnnGraph,
    ffn_params,
    agg_cfg: AggregationConfig,
    relative: bool = True,
    train_mode: bool = False,
    seed=None,
) -> np.ndarray:
    """Invariants -> FFN -> aggregation for one cloud; returns (N, c')."""
    inv = local_dot_products(cloud, graph, relative)
    out, _ = l2dp_branch_forward(inv.values, ffn_params, agg_cfg, train_mode, seed)
    return out
