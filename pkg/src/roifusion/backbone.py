"""Set abstraction and feature propagation layers over point sets."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatch
from .micronet import SetMaxPool, SharedMLP, scatter_add
from .sampling import fps_euclidean, fps_feature, fps_fused
from .validation import check_coords, check_features

COINCIDENT_EPS = 1e-8
SAMPLERS = ("d-fps", "f-fps", "fused")


@dataclass(frozen=True)
class FeatureSet:
    coords: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        coords = check_coords(self.coords, name="coords", min_rows=0)[:, :3]
        feats = check_features(self.features, n_rows=len(coords))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "features", feats)

    def __len__(self):
        return len(self.coords)

    @property
    def width(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class SAConfig:
    out_points: int
    radius: float
    max_neighbors: int
    mlp_channels: tuple = ()
    sampler: str = "d-fps"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball query radius must be positive")
        if self.out_points < 1 or self.max_neighbors < 1:
            raise ValueError("out_points and max_neighbors must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        object.__setattr__(self, "mlp_channels", tuple(int(c) for c in self.mlp_channels))


def _sq_dists(a, b):
    d = (a[:, None, :] - b[None, :, :])
    return np.einsum("ijk,ijk->ij", d, d)


def ball_query(centers, cloud, radius, max_neighbors):
    """Indices of up to ``max_neighbors`` cloud points within ``radius`` of each center.

    Groups are ordered nearest first (ties by index).  A center with no
    neighbour inside the ball gets its single nearest cloud point.
    """
    d2 = _sq_dists(np.asarray(centers, float)[:, :3], np.asarray(cloud, float)[:, :3])
    n = d2.shape[1]
    r2 = radius * radius
    k = min(max_neighbors, n)
    if k < n:
        # partial selection, then an exact (distance, index) sort of the survivors
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        pd = np.take_along_axis(d2, part, axis=1)
        kth = pd.max(axis=1)
        exact = (d2 <= kth[:, None]).sum(axis=1) == k  # no tie straddles the cut
    else:
        part = np.tile(np.arange(n), (len(d2), 1))
        pd = d2
        exact = np.ones(len(d2), dtype=bool)
    order = np.lexsort((part, pd), axis=1)
    idx_sorted = np.take_along_axis(part, order, axis=1)
    d_sorted = np.take_along_axis(pd, order, axis=1)
    groups = []
    for i in range(len(d2)):
        if exact[i]:
            idx, dist = idx_sorted[i], d_sorted[i]
        else:
            idx = np.argsort(d2[i], kind="stable")
            dist = d2[i, idx]
        inside = idx[dist <= r2][:max_neighbors]
        groups.append(inside if len(inside) else idx[:1])
    return groups


def pad_groups(groups, size):
    """Pad ragged groups to ``size`` columns by repeating each group's first index."""
    out = np.empty((len(groups), size), dtype=np.intp)
    for i, g in enumerate(groups):
        out[i, :] = g[0]
        out[i, :len(g)] = g[:size]
    return out


def interpolation_weights(query, source, k=3):
    """Neighbour indices and normalised inverse-squared-distance weights.

    A query closer than ``1e-8`` to a source point takes that point's
    feature exactly (one-hot weight).
    """
    query = np.asarray(query, float)[:, :3]
    source = np.asarray(source, float)[:, :3]
    if len(source) == 0:
        raise ValueError("cannot interpolate from an empty source set")
    k = min(k, len(source))
    d2 = _sq_dists(query, source)
    if k < len(source):
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    else:
        part = np.tile(np.arange(len(source)), (len(query), 1))
    pd = np.take_along_axis(d2, part, axis=1)
    order = np.lexsort((part, pd), axis=1)
    idx = np.take_along_axis(part, order, axis=1)
    dist2 = np.take_along_axis(pd, order, axis=1)
    hit = dist2[:, 0] < COINCIDENT_EPS ** 2
    with np.errstate(divide="ignore"):
        w = 1.0 / np.where(hit[:, None], 1.0, dist2)
    w[hit] = 0.0
    w[hit, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def fp_interpolate(query_coords, source, k=3):
    """Inverse-squared-distance interpolation of ``source`` features at the query points."""
    idx, w = interpolation_weights(query_coords, source.coords, k)
    return np.einsum("qk,qkf->qf", w, source.features[idx])


def _sample(cfg, fs):
    n = min(cfg.out_points, len(fs))
    if cfg.sampler == "d-fps":
        return fps_euclidean(fs.coords, n).indices
    if cfg.sampler == "f-fps":
        return fps_feature(fs.features, n).indices
    return fps_fused(fs.coords, fs.features, n).indices


class SALayer:
    """Sample centers, group neighbours by ball query, shared MLP, max-pool."""

    def __init__(self, in_features, cfg, rng=None):
        self.cfg = cfg
        self.in_features = in_features
        self.mlp = SharedMLP(3 + in_features, cfg.mlp_channels, rng)
        self.pool = SetMaxPool()

    @property
    def out_features(self):
        return self.mlp.fan_out

    def plan(self, fs, sample_indices=None):
        """Centers and padded neighbour groups for ``fs``."""
        idx = _sample(self.cfg, fs) if sample_indices is None else np.asarray(sample_indices)
        groups = ball_query(fs.coords[idx], fs.coords, self.cfg.radius, self.cfg.max_neighbors)
        return idx, pad_groups(groups, self.cfg.max_neighbors)

    def forward(self, fs, plan=None):
        if fs.width != self.in_features:
            raise ShapeMismatch(f"SA layer expects {self.in_features} features, got {fs.width}")
        idx, groups = self.plan(fs) if plan is None else plan
        centers = fs.coords[idx]
        rel = fs.coords[groups] - centers[:, None, :]
        grouped = np.concatenate([rel, fs.features[groups]], axis=-1)
        h, mlp_cache = self.mlp.forward(grouped)
        pooled, pool_cache = self.pool.forward(h)
        out = FeatureSet(centers, pooled)
        return out, (idx, groups, len(fs), mlp_cache, pool_cache)

    def backward(self, dy, cache):
        """Gradient with respect to the input features (coordinates are constant)."""
        _, groups, n_in, mlp_cache, pool_cache = cache
        dh = self.pool.backward(dy, pool_cache)
        dgrouped = self.mlp.backward(dh, mlp_cache)
        return scatter_add(groups, dgrouped[..., 3:], n_in)

    def layers(self):
        return self.mlp.layers()

    def parameters(self):
        return self.mlp.parameters()

    def gradients(self):
        return self.mlp.gradients()

    def zero_grad(self):
        self.mlp.zero_grad()


def sa_layer(fs, cfg, layer=None, rng=None):
    """Functional form: run one SA stage (building a fresh layer if none given)."""
    layer = SALayer(fs.width, cfg, rng) if layer is None else layer
    return layer.forward(fs)[0]


class FPLayer:
    """Interpolate coarse features onto query points, concatenate skip features, MLP."""

    def __init__(self, source_features, skip_features, mlp_channels, k=3, rng=None):
        self.source_features = source_features
        self.skip_features = skip_features
        self.k = k
        self.mlp = SharedMLP(source_features + skip_features, mlp_channels, rng)

    @property
    def out_features(self):
        return self.mlp.fan_out

    def forward(self, query, source, weights=None):
        if source.width != self.source_features or query.width != self.skip_features:
            raise ShapeMismatch(
                f"FP layer expects source/skip widths {self.source_features}/{self.skip_features}, "
                f"got {source.width}/{query.width}")
        idx, w = interpolation_weights(query.coords, source.coords, self.k) if weights is None else weights
        interp = np.einsum("qk,qkf->qf", w, source.features[idx])
        h, mlp_cache = self.mlp.forward(np.concatenate([interp, query.features], axis=1))
        return FeatureSet(query.coords, h), (idx, w, len(source), mlp_cache)

    def backward(self, dy, cache):
        """Returns ``(d_source_features, d_skip_features)``."""
        idx, w, n_src, mlp_cache = cache
        dx = self.mlp.backward(dy, mlp_cache)
        d_interp, d_skip = dx[:, :self.source_features], dx[:, self.source_features:]
        d_src = scatter_add(idx, w[..., None] * d_interp[:, None, :], n_src)
        return d_src, d_skip

    def layers(self):
        return self.mlp.layers()

    def parameters(self):
        return self.mlp.parameters()

    def gradients(self):
        return self.mlp.gradients()

    def zero_grad(self):
        self.mlp.zero_grad()


def fp_layer(query, source, mlp_channels, layer=None, rng=None):
    layer = FPLayer(source.width, query.width, mlp_channels, rng=rng) if layer is None else layer
    return layer.forward(query, source)[0]


@dataclass
class BackboneOutput:
    keypoints: FeatureSet  # last SA level
    point_features: FeatureSet  # FP output, one row per input point
    keypoint_indices: np.ndarray  # rows of the input cloud kept at the last SA level
    levels: list = field(default_factory=list)


class Backbone:
    """SA stages down to the keypoint level, then mirrored FP stages back to full resolution.

    ``fp_channels[i]`` is the MLP of the FP stage that lands on SA level
    ``len(sa_configs) - 1 - i`` (level 0 is the raw cloud).
    """

    def __init__(self, in_features, sa_configs, fp_channels, k=3, rng=None):
        if len(fp_channels) != len(sa_configs):
            raise ValueError("need one FP stage per SA stage")
        rng = np.random.default_rng(0) if rng is None else rng
        self.sa = []
        widths = [in_features]
        for cfg in sa_configs:
            layer = SALayer(widths[-1], cfg, rng)
            self.sa.append(layer)
            widths.append(layer.out_features)
        self.fp = []
        src = widths[-1]
        for i, channels in enumerate(fp_channels):
            skip = widths[len(sa_configs) - 1 - i]
            layer = FPLayer(src, skip, channels, k, rng)
            self.fp.append(layer)
            src = layer.out_features
        self.level_widths = widths

    @property
    def keypoint_width(self):
        return self.level_widths[-1]

    @property
    def point_width(self):
        return self.fp[-1].out_features

    def static_plan(self, coords, feats):
        """Sampling and grouping that depend on coordinates only.

        Leading D-FPS stages never look at features, so their plans (and the
        interpolation weights between two such levels) can be reused across
        training steps.
        """
        plans = {}
        fs = FeatureSet(coords, np.zeros((len(coords), 0)))
        level_coords = [fs.coords]
        for i, layer in enumerate(self.sa):
            if layer.cfg.sampler != "d-fps":
                break
            idx, groups = layer.plan(fs)
            plans[("sa", i)] = (idx, groups)
            fs = FeatureSet(fs.coords[idx], np.zeros((len(idx), 0)))
            level_coords.append(fs.coords)
        n_static = len(level_coords)
        n_sa = len(self.sa)
        for j, layer in enumerate(self.fp):
            src_level, dst_level = n_sa - j, n_sa - 1 - j
            if src_level < n_static:
                plans[("fp", j)] = interpolation_weights(level_coords[dst_level], level_coords[src_level], layer.k)
        return plans

    def forward(self, coords, feats, plans=None, point_rows=None):
        """Run every stage.

        ``point_rows`` restricts the final FP stage to those input rows
        (``point_features`` then has one row per entry); the default is the
        whole cloud.
        """
        plans = {} if plans is None else plans
        fs = FeatureSet(coords, feats)
        levels = [fs]
        sa_caches = []
        for i, layer in enumerate(self.sa):
            fs, cache = layer.forward(fs, plans.get(("sa", i)))
            levels.append(fs)
            sa_caches.append(cache)
        cur = levels[-1]
        fp_caches = []
        n_sa = len(self.sa)
        for j, layer in enumerate(self.fp):
            query = levels[n_sa - 1 - j]
            weights = plans.get(("fp", j))
            if point_rows is not None and j == len(self.fp) - 1:
                query = FeatureSet(query.coords[point_rows], query.features[point_rows])
                if weights is not None:
                    weights = (weights[0][point_rows], weights[1][point_rows])
            cur, cache = layer.forward(query, cur, weights)
            fp_caches.append(cache)
        kp_idx = np.arange(len(coords))
        for cache in sa_caches:
            kp_idx = kp_idx[cache[0]]
        out = BackboneOutput(levels[-1], cur, kp_idx, levels)
        return out, (sa_caches, fp_caches, point_rows, len(coords))

    def backward(self, d_keypoints, d_points, cache):
        """Backpropagate gradients on keypoint and per-point features; returns d(input features)."""
        sa_caches, fp_caches, point_rows, n_points = cache
        n_sa = len(self.sa)
        d_level = [None] * (n_sa + 1)
        d_cur = d_points
        # FP stages run level n_sa -> 0; walk them backwards
        for j in range(len(self.fp) - 1, -1, -1):
            d_src, d_skip = self.fp[j].backward(d_cur, fp_caches[j])
            if point_rows is not None and j == len(self.fp) - 1:
                d_skip = scatter_add(point_rows, d_skip, n_points)
            dst = n_sa - 1 - j
            d_level[dst] = d_skip if d_level[dst] is None else d_level[dst] + d_skip
            d_cur = d_src
        top = d_cur if d_keypoints is None else d_cur + d_keypoints
        d_level[n_sa] = top if d_level[n_sa] is None else d_level[n_sa] + top
        for i in range(n_sa - 1, -1, -1):
            d_in = self.sa[i].backward(d_level[i + 1], sa_caches[i])
            d_level[i] = d_in if d_level[i] is None else d_level[i] + d_in
        return d_level[0]

    def layers(self):
        return [l for stage in self.sa + self.fp for l in stage.layers()]

    def parameters(self):
        return [p for stage in self.sa + self.fp for p in stage.parameters()]

    def gradients(self):
        return [g for stage in self.sa + self.fp for g in stage.gradients()]

    def zero_grad(self):
        for stage in self.sa + self.fp:
            stage.zero_grad()
