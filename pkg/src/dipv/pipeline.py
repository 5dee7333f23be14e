"""Desk-scale experiment harness: synthetic shapes, the invariant head, training.

The head runs L2DP features (queries) and DASFT tokens (keys/values) through
a fusion block, max-pools over points and classifies with a two-layer MLP.
All randomness is drawn from generators keyed on (seed, purpose, ...), so a
run is reproducible from its config alone.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from dipv import nn
from dipv.errors import ConfigError, InvalidInput
from dipv.geometry import (
    KnnGraph,
    PointCloud,
    Rotation,
    apply_rotation,
    build_knn,
    center_and_scale,
    random_rotation_so3,
    random_rotation_z,
)
from dipv.local import (
    AggregationConfig,
    init_l2dp_params,
    l2dp_branch_backward,
    l2dp_branch_forward,
    local_dot_products,
)
from dipv.spectrum import (
    dasft_branch_backward,
    dasft_branch_forward,
    energy_spectrum,
    fibonacci_directions,
    frequency_grid,
    init_dasft_params,
    normalize_profile,
    thread_count,
)

log = logging.getLogger(__name__)

CLASSES = ("sphere", "cube", "cylinder", "cone", "torus", "plane")

PROTOCOLS = {
    "z/z": ("z", "z"),
    "z/SO(3)": ("z", "so3"),
    "SO(3)/SO(3)": ("so3", "so3"),
}
PROTOCOL_ALIASES = {"zz": "z/z", "zso3": "z/SO(3)", "so3so3": "SO(3)/SO(3)"}

FUSIONS = ("ca", "gate", "concat", "dasft", "l2dp")
FUSION_ALIASES = {"cross-attention": "ca", "cross_attention": "ca", "dasft-only": "dasft", "l2dp-only": "l2dp"}


def keyed_rng(*keys) -> np.random.Generator:
    """Independent generator for a tuple of non-negative ints."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


# stream tags for keyed_rng
_DATA, _AUG, _SHUFFLE, _TEST_ROT, _INIT, _DROP, _TRAIN_ROT = range(1, 8)


# --------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    protocol: str = "z/SO(3)"
    k_neighbors: int | None = None  # None: 12 for DLP, 20 for SAP
    aggregation: str = "dlp"
    fusion: str = "ca"
    n_dir: int = 36
    f_min: float = 0.0
    f_max: float = 12.0
    m: int = 32
    grid: str = "linear"
    chunk_size: int = 16
    epochs: int = 12
    batch_size: int = 32
    seed: int = 0
    n_train_per_class: int = 200
    n_test_per_class: int = 100
    points_per_cloud: int = 512
    noise_sigma: float = 0.01
    d_model: int = 64
    hidden: int = 64
    lr_start: float = 0.1
    lr_end: float = 0.001
    momentum: float = 0.9
    grad_clip: float = 1.0  # global gradient-norm cap; <= 0 disables
    label_smoothing: float = 0.1
    dropout: float = 0.2
    layernorm_epsilon: float = 1e-5

    def __post_init__(self):
        problems = {}
        self.protocol = PROTOCOL_ALIASES.get(self.protocol, self.protocol)
        if self.protocol not in PROTOCOLS:
            problems["protocol"] = f"must be one of {sorted(PROTOCOLS)} (or zz/zso3/so3so3)"
        self.aggregation = str(self.aggregation).lower()
        if self.aggregation not in ("dlp", "sap"):
            problems["aggregation"] = "must be 'dlp' or 'sap'"
        self.fusion = FUSION_ALIASES.get(self.fusion, self.fusion)
        if self.fusion not in FUSIONS:
            problems["fusion"] = f"must be one of {list(FUSIONS)}"
        if self.grid not in ("linear", "log", "logarithmic"):
            problems["grid"] = "must be 'linear' or 'log'"
        if self.k_neighbors is None:
            self.k_neighbors = 20 if self.aggregation == "sap" else 12
        positive = (
            "k_neighbors", "n_dir", "m", "chunk_size", "batch_size", "n_train_per_class",
            "n_test_per_class", "points_per_cloud", "d_model", "hidden",
        )
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                problems[name] = "must be a positive integer"
        if not isinstance(self.epochs, int) or self.epochs < 0:
            problems["epochs"] = "must be a non-negative integer"
        if not isinstance(self.seed, int) or self.seed < 0:
            problems["seed"] = "must be a non-negative integer"
        if "points_per_cloud" not in problems and "k_neighbors" not in problems:
            if self.k_neighbors >= self.points_per_cloud:
                problems["k_neighbors"] = "must be smaller than points_per_cloud"
        if not 0.0 <= self.f_min < self.f_max:
            problems["f_max"] = "need 0 <= f_min < f_max"
        if self.noise_sigma < 0:
            problems["noise_sigma"] = "must be >= 0"
        if not 0.0 <= self.label_smoothing < 1.0:
            problems["label_smoothing"] = "must lie in [0, 1)"
        if not 0.0 <= self.dropout < 1.0:
            problems["dropout"] = "must lie in [0, 1)"
        if not 0.0 <= self.momentum < 1.0:
            problems["momentum"] = "must lie in [0, 1)"
        if self.lr_start <= 0 or self.lr_end < 0:
            problems["lr_start"] = "learning rates must be positive"
        if self.layernorm_epsilon <= 0:
            problems["layernorm_epsilon"] = "must be positive"
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError({"<root>": "config must be a JSON object"})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError({k: "unknown field" for k in unknown})
        try:
            return cls(**data)
        except TypeError as exc:  # e.g. string where a number is expected
            raise ConfigError({"<root>": str(exc)}) from exc

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError({"<root>": f"not valid JSON: {exc}"}) from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    @property
    def agg_config(self) -> AggregationConfig:
        return AggregationConfig(self.aggregation, self.d_model, self.dropout, self.layernorm_epsilon)

    @property
    def train_rotation(self) -> str:
        return PROTOCOLS[self.protocol][0]

    @property
    def test_rotation(self) -> str:
        return PROTOCOLS[self.protocol][1]

    @property
    def uses_local(self) -> bool:
        return self.fusion != "dasft"

    @property
    def uses_global(self) -> bool:
        return self.fusion != "l2dp"


# -------------------------------------------------------------------- dataset


@dataclass(frozen=True, eq=False)
class ShapeSample:
    cloud: PointCloud
    label: int

    @property
    def name(self) -> str:
        return CLASSES[self.label]


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_sphere(rng, n):
    # antipodal pairs (plus one zero-sum triangle for odd n) keep the centroid
    # exactly at the origin, so normalisation leaves every norm at 1
    half = n // 2 if n % 2 == 0 else (n - 3) // 2
    pts = _unit_vectors(rng, half)
    parts = [pts, -pts]
    if n % 2:
        if n == 1:
            return _unit_vectors(rng, 1)
        a = _unit_vectors(rng, 1)[0]
        b = np.cross(a, _unit_vectors(rng, 1)[0])
        b /= np.linalg.norm(b)
        c = np.cross(a, b)
        ang = 2 * np.pi * np.arange(3) / 3
        parts.append(np.outer(np.cos(ang), b) + np.outer(np.sin(ang), c))
    return np.concatenate(parts)


def _sample_box(rng, n):
    half = rng.uniform(0.9, 1.1, size=3)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1, 1, size=(n, 3)) * half
    sign = rng.choice([-1.0, 1.0], size=n)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _sample_cylinder(rng, n):
    h = rng.uniform(1.5, 2.5)  # height for unit radius
    lateral, cap = 2 * np.pi * h, 2 * np.pi
    on_side = rng.random(n) < lateral / (lateral + cap)
    t = rng.uniform(0, 2 * np.pi, n)
    rad = np.where(on_side, 1.0, np.sqrt(rng.random(n)))
    z = np.where(on_side, rng.uniform(-h / 2, h / 2, n), rng.choice([-h / 2, h / 2], n))
    return np.stack([rad * np.cos(t), rad * np.sin(t), z], axis=1)


def _sample_cone(rng, n):
    h = rng.uniform(1.5, 2.5)
    slant = np.hypot(1.0, h)
    lateral, base = np.pi * slant, np.pi
    on_side = rng.random(n) < lateral / (lateral + base)
    t = rng.uniform(0, 2 * np.pi, n)
    s = np.sqrt(rng.random(n))  # area-uniform radial fraction
    z = np.where(on_side, h * (1.0 - s), 0.0)
    return np.stack([s * np.cos(t), s * np.sin(t), z], axis=1)


def _sample_torus(rng, n):
    big, tube = 1.0, rng.uniform(0.25, 0.45)
    out = np.empty((0, 3))
    while out.shape[0] < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.random(2 * n) < (big + tube * np.cos(v)) / (big + tube)
        u, v = u[keep], v[keep]
        ring = big + tube * np.cos(v)
        out = np.concatenate([out, np.stack([ring * np.cos(u), ring * np.sin(u), tube * np.sin(v)], 1)])
    return out[:n]


def _sample_plane(rng, n):
    aspect = rng.uniform(0.5, 1.0)
    xy = rng.uniform(-1, 1, size=(n, 2)) * [1.0, aspect]
    return np.column_stack([xy, np.zeros(n)])


_SAMPLERS = (_sample_sphere, _sample_box, _sample_cylinder, _sample_cone, _sample_torus, _sample_plane)


def sample_shape(label: int, n_points: int, noise_sigma: float, rng) -> ShapeSample:
    pts = _SAMPLERS[label](rng, n_points)
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
    return ShapeSample(center_and_scale(PointCloud(pts)), label)


def generate_dataset(n_per_class: int, points_per_cloud: int, noise_sigma: float, seed) -> list[ShapeSample]:
    """Class-interleaved synthetic samples, deterministic per seed."""
    if n_per_class < 1 or points_per_cloud < 1:
        raise InvalidInput("counts must be positive")
    if noise_sigma < 0:
        raise InvalidInput("noise_sigma must be >= 0")
    rng = keyed_rng(_DATA, seed)
    return [
        sample_shape(label, points_per_cloud, noise_sigma, rng)
        for _ in range(n_per_class)
        for label in range(len(CLASSES))
    ]


def make_splits(cfg: ExperimentConfig):
    n = cfg.n_train_per_class + cfg.n_test_per_class
    data = generate_dataset(n, cfg.points_per_cloud, cfg.noise_sigma, cfg.seed)
    cut = cfg.n_train_per_class * len(CLASSES)
    return data[:cut], data[cut:]


def protocol_rotation(kind: str | None, rng) -> Rotation:
    if kind is None:
        return Rotation.identity()
    if kind == "z":
        return random_rotation_z(rng)
    if kind == "so3":
        return random_rotation_so3(rng)
    raise InvalidInput(f"unknown rotation kind {kind!r}")


def augment(sample: ShapeSample, seed, rotation: str | None = None) -> ShapeSample:
    """Random translation in [-0.2, 0.2]^3 and scale in [2/3, 3/2], renormalise, rotate."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shift = rng.uniform(-0.2, 0.2, size=3)
    scale = rng.uniform(2.0 / 3.0, 1.5)
    moved = PointCloud(sample.cloud.points * scale + shift, sample.cloud.channels)
    cloud = center_and_scale(moved)
    if rotation is not None:
        cloud = apply_rotation(cloud, protocol_rotation(rotation, rng))
    return ShapeSample(cloud, sample.label)


# ------------------------------------------------------------------- features


@dataclass
class FeatureExtractor:
    """Parameter-free per-cloud inputs of the head: invariants and energies."""

    cfg: ExperimentConfig
    dirs: object = field(init=False)
    freqs: object = field(init=False)

    def __post_init__(self):
        self.dirs = fibonacci_directions(self.cfg.n_dir)
        self.freqs = frequency_grid(self.cfg.f_min, self.cfg.f_max, self.cfg.m, self.cfg.grid)

    def graph(self, cloud: PointCloud) -> KnnGraph:
        return build_knn(cloud, self.cfg.k_neighbors)

    def __call__(self, cloud: PointCloud, graph: KnnGraph | None = None):
        inv = None
        if self.cfg.uses_local:
            graph = graph if graph is not None else self.graph(cloud)
            inv = local_dot_products(cloud, graph, relative=True).values
        energies = energy_spectrum(cloud, self.dirs, self.freqs, self.cfg.chunk_size)
        return inv, energies

    def batch(self, clouds, graphs=None):
        graphs = graphs if graphs is not None else [None] * len(clouds)
        threads = thread_count()
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                feats = list(ex.map(lambda cg: self(*cg), zip(clouds, graphs)))
        else:
            feats = [self(c, g) for c, g in zip(clouds, graphs)]
        inv = None if feats[0][0] is None else np.stack([f[0] for f in feats])
        return inv, np.stack([f[1] for f in feats])


# ----------------------------------------------------------------------- head


def head_input_width(cfg: ExperimentConfig) -> int:
    return 2 * cfg.d_model if cfg.fusion == "concat" else cfg.d_model


def init_params(cfg: ExperimentConfig, channels: int = 1) -> nn.ParameterSet:
    rng = keyed_rng(_INIT, cfg.seed)
    p = nn.ParameterSet()
    d = cfg.d_model
    if cfg.uses_local:
        init_l2dp_params(p, cfg.agg_config, cfg.k_neighbors, channels, rng)
    if cfg.uses_global:
        init_dasft_params(p, cfg.m, d, rng, tokens=cfg.fusion == "ca")
    if cfg.fusion == "ca":
        nn.init_attention(p, d, rng)
    elif cfg.fusion == "gate":
        nn.init_gate(p, d, rng)
    width = head_input_width(cfg)
    p.add("mlp_w1", rng.normal(0.0, np.sqrt(2.0 / width), size=(width, cfg.hidden)))
    p.add("mlp_b1", np.zeros(cfg.hidden))
    p.add("mlp_w2", rng.normal(0.0, np.sqrt(1.0 / cfg.hidden), size=(cfg.hidden, len(CLASSES))))
    p.add("mlp_b2", np.zeros(len(CLASSES)))
    return p


def head_forward(params, cfg: ExperimentConfig, inv, energies, train_mode=False, rng=None):
    """Batched head. inv: (B, N, c, K) or None; energies: (B, M, L). Returns (B, C) logits."""
    cache = {}
    if cfg.uses_global:
        g, cache["dasft"] = dasft_branch_forward(energies, params, cfg.layernorm_epsilon)
    if cfg.uses_local:
        q, cache["l2dp"] = l2dp_branch_forward(inv, params, cfg.agg_config, train_mode, rng)

    if cfg.fusion == "ca":
        att, cache["ca"] = nn.cross_attention_forward(q, g.tokens, g.tokens, params)
        fused = q + att
    elif cfg.fusion == "gate":
        fused, cache["gate"] = nn.gate_fusion_forward(q, g.pooled, params)
    elif cfg.fusion == "concat":
        fused = np.concatenate([q, np.broadcast_to(g.pooled[:, None, :], q.shape)], axis=-1)
    elif cfg.fusion == "l2dp":
        fused = q

    if cfg.fusion == "dasft":
        feat = g.pooled
    else:
        arg = np.argmax(fused, axis=1)  # (B, D), lowest point index on ties
        feat = np.take_along_axis(fused, arg[:, None, :], axis=1)[:, 0, :]
        cache["pool"] = (arg, fused.shape)

    z1, cache["mlp1"] = nn.affine_forward(feat, params["mlp_w1"], params["mlp_b1"])
    h1, cache["act1"] = nn.leaky_relu_forward(z1)
    logits, cache["mlp2"] = nn.affine_forward(h1, params["mlp_w2"], params["mlp_b2"])
    return logits, cache


def head_backward(dlogits, cache, params, cfg: ExperimentConfig) -> dict[str, np.ndarray]:
    grads = {}
    dh1, grads["mlp_w2"], grads["mlp_b2"] = nn.affine_backward(dlogits, cache["mlp2"])
    dz1 = nn.leaky_relu_backward(dh1, cache["act1"])
    dfeat, grads["mlp_w1"], grads["mlp_b1"] = nn.affine_backward(dz1, cache["mlp1"])

    dpooled = dtokens = dq = None
    if cfg.fusion == "dasft":
        dpooled = dfeat
    else:
        arg, shape = cache["pool"]
        dfused = np.zeros(shape)
        np.put_along_axis(dfused, arg[:, None, :], dfeat[:, None, :], axis=1)
        d = cfg.d_model
        if cfg.fusion == "ca":
            dq_att, dtok_k, dtok_v, g_att = nn.cross_attention_backward(dfused, cache["ca"], params)
            grads.update(g_att)
            dq = dfused + dq_att
            dtokens = dtok_k + dtok_v
        elif cfg.fusion == "gate":
            dq, dpooled, g_gate = nn.gate_fusion_backward(dfused, cache["gate"], params)
            grads.update(g_gate)
        elif cfg.fusion == "concat":
            dq = dfused[..., :d]
            dpooled = dfused[..., d:].sum(axis=1)
        else:
            dq = dfused

    if cfg.uses_local:
        grads.update(l2dp_branch_backward(dq, cache["l2dp"], cfg.agg_config))
    if cfg.uses_global:
        grads.update(dasft_branch_backward(dpooled, dtokens, cache["dasft"]))
    return grads


def forward_head(sample: ShapeSample, cfg: ExperimentConfig, params, extractor: FeatureExtractor | None = None):
    """Logits (C,) for one sample in inference mode."""
    extractor = extractor or FeatureExtractor(cfg)
    inv, energies = extractor(sample.cloud)
    logits, _ = head_forward(
        params, cfg, None if inv is None else inv[None], energies[None], train_mode=False
    )
    return logits[0]


# ------------------------------------------------------------------- training


def _train_view(sample: ShapeSample, cfg: ExperimentConfig, epoch: int, idx: int) -> PointCloud:
    rng = keyed_rng(_AUG, cfg.seed, epoch, idx)
    return augment(sample, rng, cfg.train_rotation).cloud


def train(cfg: ExperimentConfig, dataset, progress: bool = False) -> nn.TrainState:
    """Momentum SGD with cosine decay over ``cfg.epochs`` passes.

    KNN graphs are built once per sample: augmentation is a similarity
    transform followed by renormalisation, which keeps neighbour order.
    """
    if not dataset:
        raise InvalidInput("dataset is empty")
    params = init_params(cfg, channels=dataset[0].cloud.vectors.shape[1])
    n = len(dataset)
    steps = -(-n // cfg.batch_size)
    state = nn.TrainState(
        params, cfg.momentum, cfg.lr_start, cfg.lr_end, total_steps=max(1, cfg.epochs * steps)
    )
    if cfg.epochs == 0:
        return state
    extractor = FeatureExtractor(cfg)
    graphs = [extractor.graph(s.cloud) for s in dataset] if cfg.uses_local else [None] * n
    labels = np.array([s.label for s in dataset])
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = keyed_rng(_SHUFFLE, cfg.seed, epoch).permutation(n)
        epoch_loss = 0.0
        for b in range(steps):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            clouds = [_train_view(dataset[i], cfg, epoch, i) for i in idx]
            inv, energies = extractor.batch(clouds, [graphs[i] for i in idx])
            loss = train_step(state, cfg, inv, energies, labels[idx], keyed_rng(_DROP, cfg.seed, epoch, b))
            epoch_loss += loss * len(idx)
        if progress:
            log.info("epoch %d loss %.4f lr %.4g (%.1fs)", epoch, epoch_loss / n, state.lr, time.perf_counter() - t0)
    return state


def train_step(state: nn.TrainState, cfg: ExperimentConfig, inv, energies, labels, rng=None) -> float:
    params = state.params
    logits, cache = head_forward(params, cfg, inv, energies, train_mode=True, rng=rng)
    loss, dlogits = nn.cross_entropy_label_smoothing(logits, labels, cfg.label_smoothing)
    params.zero_grad()
    params.accumulate(head_backward(dlogits, cache, params, cfg))
    nn.clip_grad_norm(params, cfg.grad_clip)
    nn.sgd_step(state)
    state.losses.append(loss)
    return loss


# ----------------------------------------------------------------- evaluation


@dataclass
class Metrics:
    accuracy: float
    per_class: list[float]
    confusion: np.ndarray  # rows: true class, cols: predicted

    @classmethod
    def from_predictions(cls, labels, preds, n_classes=len(CLASSES)) -> Metrics:
        conf = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(conf, (np.asarray(labels), np.asarray(preds)), 1)
        totals = conf.sum(axis=1)
        per_class = [float(conf[i, i] / totals[i]) if totals[i] else float("nan") for i in range(n_classes)]
        return cls(float(np.trace(conf) / conf.sum()), per_class, conf)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": dict(zip(CLASSES, self.per_class)),
            "confusion": self.confusion.tolist(),
        }

    def confusion_csv(self) -> str:
        rows = ["true\\pred," + ",".join(CLASSES)]
        for name, row in zip(CLASSES, self.confusion):
            rows.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(rows) + "\n"


def rotated_view(sample: ShapeSample, kind: str | None, seed: int, idx: int, stream: int = _TEST_ROT) -> PointCloud:
    rot = protocol_rotation(kind, keyed_rng(stream, seed, idx))
    return apply_rotation(sample.cloud, rot)


def predict_logits(params, cfg: ExperimentConfig, clouds, batch_size: int = 64) -> np.ndarray:
    extractor = FeatureExtractor(cfg)
    out = []
    for s in range(0, len(clouds), batch_size):
        inv, energies = extractor.batch(clouds[s : s + batch_size])
        logits, _ = head_forward(params, cfg, inv, energies, train_mode=False)
        out.append(logits)
    return np.concatenate(out)


def evaluate(state, cfg: ExperimentConfig, dataset, rotation: str | None = "protocol") -> Metrics:
    """Accuracy with the protocol's test rotation applied to each sample."""
    params = state.params if isinstance(state, nn.TrainState) else state
    kind = cfg.test_rotation if rotation == "protocol" else rotation
    clouds = [rotated_view(s, kind, cfg.seed, i) for i, s in enumerate(dataset)]
    logits = predict_logits(params, cfg, clouds)
    return Metrics.from_predictions([s.label for s in dataset], np.argmax(logits, axis=1))


def descriptor_profiles(clouds, cfg: ExperimentConfig) -> np.ndarray:
    extractor = FeatureExtractor(cfg)
    g = np.stack([energy_spectrum(c, extractor.dirs, extractor.freqs, cfg.chunk_size).mean(axis=1) for c in clouds])
    return normalize_profile(g, eps=cfg.layernorm_epsilon)


def knn_descriptor_baseline(train_set, test_set, cfg: ExperimentConfig) -> Metrics:
    """1-nearest-neighbour on standardised radial profiles; nothing is learned."""
    if not train_set or not test_set:
        raise InvalidInput("baseline needs non-empty train and test sets")
    train_clouds = [rotated_view(s, cfg.train_rotation, cfg.seed, i, _TRAIN_ROT) for i, s in enumerate(train_set)]
    test_clouds = [rotated_view(s, cfg.test_rotation, cfg.seed, i) for i, s in enumerate(test_set)]
    a = descriptor_profiles(train_clouds, cfg)
    b = descriptor_profiles(test_clouds, cfg)
    d = np.sum((b[:, None, :] - a[None, :, :]) ** 2, axis=-1)
    nearest = np.argmin(d, axis=1)
    train_labels = np.array([s.label for s in train_set])
    return Metrics.from_predictions([s.label for s in test_set], train_labels[nearest])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: Metrics
    state: nn.TrainState
    seconds: float


def run_experiment(cfg: ExperimentConfig, splits=None, progress: bool = False) -> ExperimentResult:
    t0 = time.perf_counter()
    train_set, test_set = splits if splits is not None else make_splits(cfg)
    state = train(cfg, train_set, progress=progress)
    metrics = evaluate(state, cfg, test_set)
    return ExperimentResult(cfg, metrics, state, time.perf_counter() - t0)
