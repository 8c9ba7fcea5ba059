"""Prediction head: box regression, angle bins with residuals, objectness, losses, NMS."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import BinOutOfRange
from .geom import OrientedBox3D, iou_3d, normalize_angle
from .micronet import (MLP, Dense, cross_entropy, cross_entropy_grad, smooth_l1,
                       smooth_l1_grad, softmax)

MIN_SIZE = 0.05


class AngleBinCodec:
    """``H`` equal bins over ``[-pi, pi)`` with centers at ``-pi + (i + 0.5) * 2pi / H``."""

    def __init__(self, n_bins=12):
        if n_bins < 2:
            raise ValueError("need at least two angle bins")
        self.n_bins = int(n_bins)
        self.bin_width = 2 * np.pi / self.n_bins
        self.centers = -np.pi + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def encode(self, theta):
        """``(bin, residual)`` for scalar or array ``theta``."""
        t = normalize_angle(theta)
        b = np.clip(np.floor((np.asarray(t) + np.pi) / self.bin_width).astype(int), 0, self.n_bins - 1)
        r = np.asarray(t) - self.centers[b]
        if np.ndim(b) == 0:
            return int(b), float(r)
        return b, r

    def decode(self, bin_index, residual):
        b = np.asarray(bin_index)
        if np.any(b < 0) or np.any(b >= self.n_bins):
            raise BinOutOfRange(f"bin index outside [0, {self.n_bins})")
        return normalize_angle(self.centers[b] + np.asarray(residual, dtype=np.float64))


def encode_angle(theta, codec):
    return codec.encode(theta)


def decode_angle(bin_index, residual, codec):
    return codec.decode(bin_index, residual)


@dataclass
class BoxEncoding:
    center_offset: np.ndarray
    size: np.ndarray
    bin_logits: np.ndarray
    bin_residual: np.ndarray
    class_logits: np.ndarray = field(default_factory=lambda: np.zeros(2))


def decode_box(enc, roi_center, codec):
    """Box at ``roi_center + center_offset`` with the arg-max bin's yaw."""
    b = int(np.argmax(enc.bin_logits))
    yaw = codec.decode(b, enc.bin_residual[b])
    size = np.maximum(np.asarray(enc.size, dtype=float), MIN_SIZE)
    return OrientedBox3D(tuple(np.asarray(roi_center) + enc.center_offset), tuple(size), yaw)


def encode_box(box, roi_center, codec, n_classes=2, label=1):
    """Exact encoding of ``box`` relative to ``roi_center`` (saturated logits)."""
    b, r = codec.encode(box.yaw)
    bin_logits = np.full(codec.n_bins, -50.0)
    bin_logits[b] = 50.0
    residual = np.zeros(codec.n_bins)
    residual[b] = r
    cls = np.full(n_classes, -50.0)
    cls[label] = 50.0
    return BoxEncoding(np.array(box.center) - np.asarray(roi_center), np.array(box.size),
                       bin_logits, residual, cls)


class OutputLayout:
    """Column layout of the head's raw output vector."""

    def __init__(self, n_classes, n_bins):
        self.n_classes = n_classes
        self.n_bins = n_bins
        self.cls = slice(0, n_classes)
        self.ctr = slice(n_classes, n_classes + 3)
        self.size = slice(n_classes + 3, n_classes + 6)
        self.bin = slice(n_classes + 6, n_classes + 6 + n_bins)
        self.res = slice(n_classes + 6 + n_bins, n_classes + 6 + 2 * n_bins)
        self.width = n_classes + 6 + 2 * n_bins

    def split(self, out):
        return (out[:, self.cls], out[:, self.ctr], out[:, self.size],
                out[:, self.bin], out[:, self.res])

    def encoding(self, row):
        return BoxEncoding(row[self.ctr], row[self.size], row[self.bin], row[self.res], row[self.cls])


class PredictionHead:
    """Hidden MLP followed by one linear layer emitting every box term."""

    def __init__(self, in_features, hidden=(128,), n_classes=2, n_bins=12, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.layout = OutputLayout(n_classes, n_bins)
        self.mlp = MLP(in_features, hidden, rng)
        self.out = Dense(self.mlp.fan_out, self.layout.width, None, rng)

    def forward(self, x):
        h, c1 = self.mlp.forward(x)
        y, c2 = self.out.forward(h)
        return y, (c1, c2)

    def backward(self, dy, cache):
        c1, c2 = cache
        return self.mlp.backward(self.out.backward(dy, c2), c1)

    def layers(self):
        return self.mlp.layers() + [self.out]

    def parameters(self):
        return [p for l in self.layers() for p in l.parameters()]

    def gradients(self):
        return [g for l in self.layers() for g in l.gradients()]

    def zero_grad(self):
        for l in self.layers():
            l.zero_grad()


def assign_rois(voted_centers, gt_boxes, radius_scale=0.8):
    """Index of the GT box each RoI is assigned to, or ``-1``.

    Positive when the voted center lies within ``radius_scale * min(w, l) / 2``
    of a GT centroid; the nearest GT wins conflicts.
    """
    centers = np.asarray(voted_centers, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    out = np.full(len(centers), -1, dtype=np.intp)
    if len(gt) == 0 or len(centers) == 0:
        return out
    d = np.linalg.norm(centers[:, None, :] - gt[None, :, :3], axis=-1)
    radius = radius_scale * np.minimum(gt[:, 4], gt[:, 5]) / 2
    d = np.where(d <= radius[None, :], d, np.inf)
    best = np.argmin(d, axis=1)
    hit = np.isfinite(d[np.arange(len(centers)), best])
    out[hit] = best[hit]
    return out


DEFAULT_LOSS_WEIGHTS = {"cls": 1.0, "ctr": 1.0, "size": 1.0, "bin": 1.0, "res": 1.0}


@dataclass
class LossResult:
    total: float
    terms: dict
    grad: np.ndarray
    no_assigned: bool


def detection_loss(outputs, roi_centers, assignments, gt_boxes, gt_labels, codec, layout,
                   weights=None, valid=None):
    """Weighted sum of classification and regression terms plus its output gradient.

    Classification is averaged over every valid RoI; the four regression
    terms are summed over coordinates and averaged over assigned RoIs.
    ``valid`` masks RoIs that take no part at all (e.g. empty pooling).
    """
    w = dict(DEFAULT_LOSS_WEIGHTS)
    if weights:
        w.update(weights)
    outputs = np.asarray(outputs, dtype=np.float64)
    k = len(outputs)
    valid = np.ones(k, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    assignments = np.where(valid, assignments, -1)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    cls, ctr, size, bins, res = layout.split(outputs)
    grad = np.zeros_like(outputs)
    terms = dict.fromkeys(DEFAULT_LOSS_WEIGHTS, 0.0)

    vi = np.flatnonzero(valid)
    labels = np.zeros(k, dtype=np.intp)
    pos = np.flatnonzero(assignments >= 0)
    labels[pos] = np.asarray(gt_labels, dtype=np.intp)[assignments[pos]]
    if len(vi):
        terms["cls"] = cross_entropy(cls[vi], labels[vi]) / len(vi)
        grad[vi, layout.cls] = w["cls"] * cross_entropy_grad(cls[vi], labels[vi]) / len(vi)

    if len(pos):
        n = len(pos)
        tgt = gt[assignments[pos]]
        c_t = tgt[:, :3] - np.asarray(roi_centers)[pos]
        terms["ctr"] = smooth_l1(ctr[pos], c_t) / n
        grad[pos, layout.ctr] = w["ctr"] * smooth_l1_grad(ctr[pos], c_t) / n
        terms["size"] = smooth_l1(size[pos], tgt[:, 3:6]) / n
        grad[pos, layout.size] = w["size"] * smooth_l1_grad(size[pos], tgt[:, 3:6]) / n
        b_t, r_t = codec.encode(tgt[:, 6])
        terms["bin"] = cross_entropy(bins[pos], b_t) / n
        grad[pos, layout.bin] = w["bin"] * cross_entropy_grad(bins[pos], b_t) / n
        r_pred = res[pos, b_t]
        terms["res"] = smooth_l1(r_pred, r_t) / n
        g = np.zeros((n, layout.n_bins))
        g[np.arange(n), b_t] = w["res"] * smooth_l1_grad(r_pred, r_t) / n
        grad[pos, layout.res] = g

    total = sum(w[key] * terms[key] for key in terms)
    return LossResult(float(total), terms, grad, len(pos) == 0)


def decode_outputs(outputs, roi_centers, codec, layout):
    """Vectorized decoding: ``(boxes (k, 7), class probabilities (k, C))``."""
    cls, ctr, size, bins, res = layout.split(np.asarray(outputs))
    b = np.argmax(bins, axis=1)
    yaw = codec.decode(b, res[np.arange(len(b)), b])
    boxes = np.column_stack([np.asarray(roi_centers) + ctr, np.maximum(size, MIN_SIZE), yaw])
    return boxes, softmax(cls)


def nms_3d(boxes, scores, threshold=0.1):
    """Greedy 3D-IoU NMS; returns kept indices in descending score order."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    objs = [OrientedBox3D.from_array(b) for b in np.asarray(boxes)]
    keep = []
    for i in order:
        if all(iou_3d(objs[i], objs[j]) <= threshold for j in keep):
            keep.append(int(i))
    return np.array(keep, dtype=np.intp)
