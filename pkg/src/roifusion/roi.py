"""Vote layer, 3D/2D RoI generation and pooling, and RoI feature fusion."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeMismatch
from .geom import RoI2D, RoI3D, project_boxes_to_roi2d
from .micronet import MLP, Dense, SharedMLP, set_maxpool, set_maxpool_backward

FUSION_STRATEGIES = ("concat", "sum", "max")


@dataclass(frozen=True)
class VoteOutput:
    centers: np.ndarray
    vote_features: np.ndarray


class VoteLayer:
    """Single hidden layer predicting a 3D offset from each keypoint to its object center."""

    def __init__(self, in_features, hidden=128, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.hidden = Dense(in_features, hidden, "relu", rng)
        self.offset = Dense(hidden, 3, None, rng)

    def forward(self, features):
        h, c1 = self.hidden.forward(features)
        off, c2 = self.offset.forward(h)
        return (off, h), (c1, c2)

    def backward(self, d_offset, cache, d_hidden=None):
        c1, c2 = cache
        dh = self.offset.backward(d_offset, c2)
        if d_hidden is not None:
            dh = dh + d_hidden
        return self.hidden.backward(dh, c1)

    def layers(self):
        return [self.hidden, self.offset]

    def parameters(self):
        return [p for l in self.layers() for p in l.parameters()]

    def gradients(self):
        return [g for l in self.layers() for g in l.gradients()]

    def zero_grad(self):
        for l in self.layers():
            l.zero_grad()


def vote_centers(keypoints, vote_net):
    if keypoints.width != vote_net.hidden.fan_in:
        raise ShapeMismatch(f"vote layer expects {vote_net.hidden.fan_in} features, got {keypoints.width}")
    (offset, hidden), _ = vote_net.forward(keypoints.features)
    return VoteOutput(keypoints.coords + offset, hidden)


def make_roi3d(center, class_dims, eta=1.0):
    """Axis-aligned RoI of extent ``(h + eta, w + eta, l + eta)`` around ``center``."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    h, w, l = class_dims
    return RoI3D(tuple(center), (h + eta, w + eta, l + eta))


def roi_extent_array(class_dims, eta):
    h, w, l = class_dims
    return np.array([h + eta, w + eta, l + eta])


def points_in_rois(coords, centers, extents):
    """``(k, n)`` mask of points inside each axis-aligned RoI (closed bounds)."""
    half = np.asarray(extents)[:, [2, 1, 0]] / 2.0  # (h, w, l) -> x, y, z half-sizes
    centers = np.asarray(centers)
    pts = np.asarray(coords)[:, :3].T
    inside = np.abs(pts[0][None, :] - centers[:, 0, None]) <= half[:, 0, None]
    for a in (1, 2):
        inside &= np.abs(pts[a][None, :] - centers[:, a, None]) <= half[:, a, None]
    return inside


def pick_pool_indices(interior, k_pool):
    """Deterministic ``k_pool`` picks from sorted interior indices.

    More than ``k_pool`` points: evenly strided subset.  Fewer: cyclic
    repetition.
    """
    n = len(interior)
    if n >= k_pool:
        return interior[(np.arange(k_pool) * n) // k_pool]
    return interior[np.arange(k_pool) % n]


class RoIPool3D:
    """Gather the points inside each RoI, shift to the RoI center, shared MLP, max-pool."""

    def __init__(self, in_features, mlp_channels, k_pool=64, rng=None):
        self.k_pool = k_pool
        self.in_features = in_features
        self.mlp = SharedMLP(3 + in_features, mlp_channels, rng)

    @property
    def out_features(self):
        return self.mlp.fan_out

    def gather(self, centers, extents, coords):
        inside = points_in_rois(coords, centers, extents)
        idx = np.zeros((len(centers), self.k_pool), dtype=np.intp)
        empty = ~inside.any(axis=1)
        for i in np.flatnonzero(~empty):
            idx[i] = pick_pool_indices(np.flatnonzero(inside[i]), self.k_pool)
        return idx, empty

    def forward(self, centers, extents, coords, features, gathered=None):
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        features = np.asarray(features, dtype=np.float64).reshape(len(coords), -1)
        if features.shape[1] != self.in_features:
            raise ShapeMismatch(f"3D RoI pooling expects {self.in_features} features")
        idx, empty = self.gather(centers, extents, coords) if gathered is None else gathered
        out = np.zeros((len(centers), self.out_features))
        live = np.flatnonzero(~empty)
        if len(live) == 0:
            return out, empty, None
        rel = coords[idx[live]] - centers[live, None, :]
        grouped = np.concatenate([rel, features[idx[live]]], axis=-1)
        h, mlp_cache = self.mlp.forward(grouped)
        pooled, arg = set_maxpool(h)
        out[live] = pooled
        return out, empty, (live, mlp_cache, arg)

    def backward(self, dy, cache):
        if cache is None:
            return
        live, mlp_cache, arg = cache
        dh = set_maxpool_backward(dy[live], arg, self.k_pool)
        self.mlp.backward(dh, mlp_cache)

    def layers(self):
        return self.mlp.layers()

    def parameters(self):
        return self.mlp.parameters()

    def gradients(self):
        return self.mlp.gradients()

    def zero_grad(self):
        self.mlp.zero_grad()


def pool_roi3d(roi, coords, features, k_pool, pool_mlp):
    """Pool one RoI; returns ``(vector, empty_flag)``."""
    coords = np.asarray(coords, dtype=np.float64)[:, :3]
    features = np.asarray(features, dtype=np.float64).reshape(len(coords), -1)
    center = np.array(roi.center)
    interior = np.flatnonzero(points_in_rois(coords, center[None], np.array([roi.extent]))[0])
    if len(interior) == 0:
        return np.zeros(pool_mlp.fan_out), True
    idx = pick_pool_indices(interior, k_pool)
    x = np.concatenate([coords[idx] - center, features[idx]], axis=1)
    h = pool_mlp.forward(x)[0]
    return h.max(axis=0), False


def bilinear_sample(feature_map, u, v):
    """Sample a ``(W, H, F)`` map at continuous pixel coordinates.

    Pixel ``(i, j)`` holds the value at ``(i + 0.5, j + 0.5)``; samples
    outside the outermost pixel centers are clamped to the border.
    """
    W, H = feature_map.shape[:2]
    x = np.clip(np.asarray(u, float) - 0.5, 0.0, W - 1)
    y = np.clip(np.asarray(v, float) - 0.5, 0.0, H - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = (x - x0)[..., None]
    ay = (y - y0)[..., None]
    f = feature_map
    return ((1 - ax) * (1 - ay) * f[x0, y0] + ax * (1 - ay) * f[x1, y0]
            + (1 - ax) * ay * f[x0, y1] + ax * ay * f[x1, y1])


def roi2d_grid(rects, grid):
    """Cell-center sample coordinates, ``(k, G, G)`` arrays for u and v."""
    rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
    t = (np.arange(grid) + 0.5) / grid
    u = rects[:, 0, None] + t[None, :] * (rects[:, 2] - rects[:, 0])[:, None]
    v = rects[:, 1, None] + t[None, :] * (rects[:, 3] - rects[:, 1])[:, None]
    return np.broadcast_to(u[:, :, None], (len(rects), grid, grid)), \
        np.broadcast_to(v[:, None, :], (len(rects), grid, grid))


class RoIPool2D:
    """Bilinear ``G x G`` sampling of the image feature map inside each 2D RoI, then a dense layer."""

    def __init__(self, map_features, out_features, grid=7, rng=None):
        self.grid = grid
        self.map_features = map_features
        self.dense = Dense(grid * grid * map_features, out_features, "relu", rng)

    @property
    def out_features(self):
        return self.dense.fan_out

    def sample(self, rects, feature_map):
        rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
        degenerate = ((rects[:, 2] - rects[:, 0]) < 1.0) | ((rects[:, 3] - rects[:, 1]) < 1.0)
        u, v = roi2d_grid(rects, self.grid)
        samples = bilinear_sample(feature_map, u, v).reshape(len(rects), -1)
        return samples, degenerate

    def forward(self, rects, feature_map, sampled=None):
        if feature_map.shape[2] != self.map_features:
            raise ShapeMismatch(f"2D RoI pooling expects {self.map_features} map channels")
        samples, degenerate = self.sample(rects, feature_map) if sampled is None else sampled
        out, cache = self.dense.forward(samples)
        out[degenerate] = 0.0
        return out, degenerate, (cache, degenerate)

    def backward(self, dy, cache):
        dense_cache, degenerate = cache
        dy = dy.copy()
        dy[degenerate] = 0.0
        self.dense.backward(dy, dense_cache)

    def layers(self):
        return [self.dense]

    def parameters(self):
        return self.dense.parameters()

    def gradients(self):
        return self.dense.gradients()

    def zero_grad(self):
        self.dense.zero_grad()


def pool_roi2d(roi2d, feature_map, grid, dense):
    """Pool one 2D RoI; returns ``(vector, degenerate_flag)``."""
    layer = RoIPool2D(feature_map.shape[2], dense.fan_out, grid)
    layer.dense = dense
    rect = np.array(roi2d.as_tuple() if isinstance(roi2d, RoI2D) else roi2d, dtype=float)
    out, degenerate, _ = layer.forward(rect, feature_map)
    return out[0], bool(degenerate[0])


def rois_for_centers(centers, class_dims, eta, calib):
    """Extents, 2D rectangles and visibility flags for RoIs around each center."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    extents = np.tile(roi_extent_array(class_dims, eta), (len(centers), 1))
    rects, visible = project_boxes_to_roi2d(centers, extents, calib)
    return extents, rects, visible


def fusion_input(pc_feat, img_feat, strategy):
    """Pre-MLP combination of the two pooled features."""
    pc_feat = np.asarray(pc_feat, dtype=np.float64)
    img_feat = np.asarray(img_feat, dtype=np.float64)
    if strategy == "concat":
        return np.concatenate([pc_feat, img_feat], axis=-1)
    if pc_feat.shape != img_feat.shape:
        raise ShapeMismatch(f"{strategy} fusion needs equal widths, got {pc_feat.shape} and {img_feat.shape}")
    if strategy == "sum":
        return pc_feat + img_feat
    if strategy == "max":
        return np.maximum(pc_feat, img_feat)
    raise ValueError(f"unknown fusion strategy {strategy!r}")


class RoIFusion:
    """``MLP(combine(pc, img))`` with ``combine`` one of concat / sum / max."""

    def __init__(self, pc_width, img_width, mlp_channels, strategy="concat", rng=None):
        if strategy not in FUSION_STRATEGIES:
            raise ValueError(f"fusion strategy must be one of {FUSION_STRATEGIES}")
        if strategy != "concat" and pc_width != img_width:
            raise ShapeMismatch(f"{strategy} fusion needs equal widths, got {pc_width} and {img_width}")
        self.strategy = strategy
        self.pc_width = pc_width
        self.img_width = img_width
        fan_in = pc_width + img_width if strategy == "concat" else pc_width
        self.mlp = MLP(fan_in, mlp_channels, rng)

    @property
    def out_features(self):
        return self.mlp.fan_out

    def forward(self, pc_feat, img_feat):
        x = fusion_input(pc_feat, img_feat, self.strategy)
        y, cache = self.mlp.forward(x)
        return y, (cache, pc_feat, img_feat)

    def backward(self, dy, cache):
        mlp_cache, pc, img = cache
        dx = self.mlp.backward(dy, mlp_cache)
        if self.strategy == "concat":
            return dx[:, :self.pc_width], dx[:, self.pc_width:]
        if self.strategy == "sum":
            return dx, dx
        take_pc = pc >= img
        return dx * take_pc, dx * ~take_pc

    def layers(self):
        return self.mlp.layers()

    def parameters(self):
        return self.mlp.parameters()

    def gradients(self):
        return self.mlp.gradients()

    def zero_grad(self):
        self.mlp.zero_grad()


def fuse_roi(pc_feat, img_feat, strategy, fuse_mlp):
    """Fuse one pair of pooled features through ``fuse_mlp``."""
    x = fusion_input(np.atleast_2d(pc_feat), np.atleast_2d(img_feat), strategy)
    return fuse_mlp.forward(x)[0][0]
