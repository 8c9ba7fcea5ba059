"""Fused keypoint generation: point-guided, pixel-guided, and their union."""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import MalformedFile, NoForegroundPoints, ShapeMismatch
from .geom import PointCloud, project_points
from .sampling import fps_feature

SEG_MAGIC = b"RFSG"


@dataclass(frozen=True)
class SegScores:
    """Per-pixel class scores ``(W, H, C)`` indexed ``[u, v, c]``; class 0 is background.

    ``features`` is an optional ``(W, H, F_i)`` map; when absent the scores
    double as the image feature map.
    """

    scores: np.ndarray
    features: np.ndarray = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 3 or s.shape[2] < 2:
            raise ValueError("scores must be W x H x C with C >= 2")
        if np.any(s < 0) or np.any(s > 1) or not np.all(np.isfinite(s)):
            raise ValueError("scores must lie in [0, 1]")
        if np.max(np.abs(s.sum(axis=2) - 1.0)) > 1e-6:
            raise ValueError("per-pixel scores must sum to 1")
        object.__setattr__(self, "scores", s)
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.shape[:2] != s.shape[:2] or f.ndim != 3:
                raise ShapeMismatch("feature map must match the score map's W x H")
            object.__setattr__(self, "features", f)

    @property
    def width(self):
        return self.scores.shape[0]

    @property
    def height(self):
        return self.scores.shape[1]

    @property
    def n_classes(self):
        return self.scores.shape[2]

    def foreground(self):
        """Max foreground-class score per pixel, ``(W, H)``."""
        return self.scores[:, :, 1:].max(axis=2)

    def feature_map(self):
        return self.scores if self.features is None else self.features

    @classmethod
    def background(cls, width, height, n_classes=2):
        s = np.zeros((width, height, n_classes))
        s[:, :, 0] = 1.0
        return cls(s)


def encode_seg_scores(seg):
    W, H, C = seg.scores.shape
    parts = [SEG_MAGIC, struct.pack("<III", W, H, C),
             np.ascontiguousarray(seg.scores, dtype="<f4").tobytes()]
    if seg.features is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BI", 1, seg.features.shape[2]))
        parts.append(np.ascontiguousarray(seg.features, dtype="<f4").tobytes())
    return b"".join(parts)


def write_seg_scores(path, seg):
    with open(path, "wb") as fh:
        fh.write(encode_seg_scores(seg))


def read_seg_scores(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_seg_scores(data, source=path)


def decode_seg_scores(data, source="<bytes>"):
    if data[:4] != SEG_MAGIC or len(data) < 16:
        raise MalformedFile(f"{source}: not a segmentation score file")
    W, H, C = struct.unpack_from("<III", data, 4)
    pos = 16
    n = W * H * C
    if len(data) < pos + 4 * n:
        raise MalformedFile(f"{source}: truncated score block")
    scores = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(W, H, C)
    pos += 4 * n
    features = None
    if pos < len(data) and data[pos] == 1:
        if len(data) < pos + 5:
            raise MalformedFile(f"{source}: truncated feature header")
        (F,) = struct.unpack_from("<I", data, pos + 1)
        pos += 5
        if len(data) < pos + 4 * W * H * F:
            raise MalformedFile(f"{source}: truncated feature block")
        features = np.frombuffer(data, dtype="<f4", count=W * H * F, offset=pos).reshape(W, H, F)
    # f32 storage loses a little of the sum-to-one property
    scores = scores.astype(np.float64)
    scores /= scores.sum(axis=2, keepdims=True)
    try:
        return SegScores(scores, None if features is None else features.astype(np.float64))
    except ValueError as exc:
        raise MalformedFile(f"{source}: {exc}") from exc


class FileSegmentation:
    """Segmentation provider reading ``<frame_id>.rfsg`` files from a directory."""

    def __init__(self, directory):
        self.directory = directory

    def __call__(self, frame_id, cloud=None, calib=None):
        return read_seg_scores(os.path.join(self.directory, f"{frame_id}.rfsg"))


def oracle_seg_scores(object_xyz, calib, dilation=1, n_classes=2, labels=None):
    """Oracle scores: class ``labels[i]`` (default 1) at the pixels hit by object points.

    Each object pixel is dilated by a square of radius ``dilation`` pixels;
    every other pixel is pure background.
    """
    W, H = calib.image_size
    s = np.zeros((W, H, n_classes))
    s[:, :, 0] = 1.0
    if len(object_xyz) == 0:
        return SegScores(s)
    proj = project_points(np.asarray(object_xyz, float).reshape(-1, 3), calib)
    labels = np.ones(len(proj.uv), dtype=int) if labels is None else np.asarray(labels)
    px = np.floor(proj.uv[proj.in_image]).astype(int)
    lab = labels[proj.in_image]
    r = int(dilation)
    for du in range(-r, r + 1):
        for dv in range(-r, r + 1):
            u = px[:, 0] + du
            v = px[:, 1] + dv
            ok = (u >= 0) & (u < W) & (v >= 0) & (v < H)
            s[u[ok], v[ok], :] = 0.0
            s[u[ok], v[ok], lab[ok]] = 1.0
    return SegScores(s)


class OracleSegmentation:
    """Provider returning precomputed oracle scores keyed by frame id."""

    def __init__(self, scores_by_frame):
        self.scores_by_frame = dict(scores_by_frame)

    def __call__(self, frame_id, cloud=None, calib=None):
        return self.scores_by_frame[frame_id]


@dataclass(frozen=True)
class KeypointSet:
    coords: np.ndarray
    features: np.ndarray
    indices: np.ndarray = field(default=None)  # rows of the source cloud
    from_pixels: np.ndarray = field(default=None)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or len(feats) != len(coords):
            raise ShapeMismatch("keypoint features need one row per coordinate")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "features", feats)
        idx = np.full(len(coords), -1, dtype=np.intp) if self.indices is None else np.asarray(self.indices, dtype=np.intp)
        object.__setattr__(self, "indices", idx)
        fp = np.zeros(len(coords), dtype=bool) if self.from_pixels is None else np.asarray(self.from_pixels, dtype=bool)
        object.__setattr__(self, "from_pixels", fp)

    def __len__(self):
        return len(self.coords)

    @property
    def width(self):
        return self.features.shape[1]

    @classmethod
    def empty(cls, width):
        return cls(np.zeros((0, 3)), np.zeros((0, width)))


def point_guided_keypoints(cloud, backbone, plans=None):
    """Keypoints of the backbone's last SA level (its sampler decides the selection)."""
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud)[:, :3]
    refl = cloud.reflectance[:, None] if isinstance(cloud, PointCloud) else np.asarray(cloud)[:, 3:4]
    out, _ = backbone.forward(xyz, refl, plans)
    return KeypointSet(out.keypoints.coords, out.keypoints.features, out.keypoint_indices)


def foreground_mask(cloud, calib, seg, tau_fg=0.5):
    """Points whose pixel's best foreground score reaches ``tau_fg``."""
    if (seg.width, seg.height) != tuple(calib.image_size):
        raise ShapeMismatch(f"score map {seg.width}x{seg.height} does not match image {calib.image_size}")
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud)[:, :3]
    proj = project_points(xyz, calib)
    mask = np.zeros(len(xyz), dtype=bool)
    px = np.floor(proj.uv[proj.in_image]).astype(int)
    fg = seg.foreground()
    mask[proj.in_image] = fg[px[:, 0], px[:, 1]] >= tau_fg
    return mask, proj


def pixel_guided_keypoints(cloud, calib, seg, point_seg_features, count, tau_fg=0.5,
                           append_image_features=False, mask=None):
    """Project, mask by foreground score, gather point features, F-FPS.

    Returns at most ``count`` keypoints (fewer when fewer points pass the
    mask).  Raises :class:`NoForegroundPoints` when nothing passes.
    """
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud)[:, :3]
    feats = np.asarray(point_seg_features, dtype=np.float64)
    if len(feats) != len(xyz):
        raise ShapeMismatch("need one segmentation feature row per point")
    if mask is None:
        mask, proj = foreground_mask(xyz, calib, seg, tau_fg)
    else:
        proj = project_points(xyz, calib) if append_image_features else None
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise NoForegroundPoints("no point projects onto a foreground pixel")
    obj_feats = feats[idx]
    if append_image_features:
        px = np.floor(proj.uv[idx]).astype(int)
        obj_feats = np.concatenate([obj_feats, seg.feature_map()[px[:, 0], px[:, 1]]], axis=1)
    sel = fps_feature(obj_feats, min(count, len(idx))).indices
    chosen = idx[sel]
    return KeypointSet(xyz[chosen], obj_feats[sel], chosen, np.ones(len(chosen), dtype=bool))


def fuse_keypoints(pc_kp, img_kp):
    """Row-wise union, point-guided rows first; duplicates are kept."""
    if len(img_kp) == 0:
        return pc_kp
    if len(pc_kp) == 0:
        return img_kp
    if pc_kp.width != img_kp.width:
        raise ShapeMismatch(f"keypoint widths differ: {pc_kp.width} vs {img_kp.width}")
    return KeypointSet(
        np.vstack([pc_kp.coords, img_kp.coords]),
        np.vstack([pc_kp.features, img_kp.features]),
        np.concatenate([pc_kp.indices, img_kp.indices]),
        np.concatenate([pc_kp.from_pixels, img_kp.from_pixels]),
    )
