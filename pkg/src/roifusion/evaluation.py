"""Detection evaluation: greedy matching, PR curves, AP per class / difficulty, distance buckets."""

from dataclasses import dataclass, field

import numpy as np

from .data import Difficulty, box_to_label, label_to_box, parse_label_line
from .geom import Detection, OrientedBox3D, iou_3d

TP, FP, IGNORED = 1, 0, -1

DEFAULT_IOU_THRESHOLDS = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
DEFAULT_RANGES = ((0.0, 20.0), (20.0, 40.0), (40.0, np.inf))
LEVELS = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)


@dataclass(frozen=True)
class GroundTruth:
    box: OrientedBox3D
    label: str = "Car"
    difficulty: Difficulty = Difficulty.EASY
    frame_id: str = ""


@dataclass
class MatchResult:
    status: np.ndarray  # per detection in input order: TP / FP / IGNORED
    gt_matched: np.ndarray
    gt_ignored: np.ndarray
    matched_gt: np.ndarray  # per detection: GT index or -1


def sort_detections(dets):
    """Indices ordering detections by score descending, then ``det_id`` ascending."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].det_id, i))


def match_detections(dets, gts, iou_threshold, ignore=None):
    """Greedy matching of one frame's detections to GTs of the same class.

    Each detection, in :func:`sort_detections` order, takes the unmatched GT
    of its class with the highest IoU at or above ``iou_threshold``.  A
    detection matched to an ignored GT is marked ``IGNORED``: it is neither a
    TP nor an FP, and that GT never counts as a miss.
    """
    n_det, n_gt = len(dets), len(gts)
    ignore = np.zeros(n_gt, dtype=bool) if ignore is None else np.asarray(ignore, dtype=bool)
    status = np.full(n_det, FP, dtype=np.int8)
    matched_gt = np.full(n_det, -1, dtype=np.intp)
    used = np.zeros(n_gt, dtype=bool)
    for i in sort_detections(dets):
        best, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if used[j] or gt.label != dets[i].label:
                continue
            v = iou_3d(dets[i].box, gt.box)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            matched_gt[i] = best
            status[i] = IGNORED if ignore[best] else TP
    return MatchResult(status, used & ~ignore, ignore, matched_gt)


@dataclass
class PRCurve:
    """Ranked ``(recall, precision)`` samples, anchored at ``(0, 1)``."""

    recall: np.ndarray
    precision: np.ndarray
    mode: str = "R11"
    n_tp: int = 0

    def __post_init__(self):
        if self.mode not in ("R11", "R40"):
            raise ValueError(f"unknown interpolation {self.mode!r}")


def pr_curve(is_tp, n_gt, mode="R11"):
    """PR curve of a score-ranked TP/FP sequence against ``n_gt`` ground truths."""
    is_tp = np.asarray(is_tp, dtype=bool)
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    recall = tp / n_gt if n_gt > 0 else np.zeros(len(tp))
    with np.errstate(invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
    return PRCurve(np.concatenate([[0.0], recall]), np.concatenate([[1.0], precision]),
                   mode, int(tp[-1]) if len(tp) else 0)


def recall_points(mode):
    if mode == "R11":
        return np.linspace(0.0, 1.0, 11)
    return np.arange(1, 41) / 40.0


def average_precision(curve):
    """Mean interpolated precision over the mode's recall points; 0 without any TP."""
    if curve.n_tp == 0:
        return 0.0
    r = np.asarray(curve.recall)
    p = np.asarray(curve.precision)
    # max precision to the right
    p_right = np.maximum.accumulate(p[::-1])[::-1]
    total = 0.0
    pts = recall_points(curve.mode)
    for q in pts:
        idx = np.flatnonzero(r >= q - 1e-12)
        total += p_right[idx[0]] if len(idx) else 0.0
    return float(total / len(pts))


def _by_frame(items):
    out = {}
    for it in items:
        out.setdefault(it.frame_id, []).append(it)
    return out


def evaluate_class(dets, gts, label, iou_threshold, level=Difficulty.HARD, mode="R11"):
    """AP of one class at a cumulative difficulty level (harder GTs are ignored)."""
    dets = [d for d in dets if d.label == label]
    gts = [g for g in gts if g.label == label]
    det_frames, gt_frames = _by_frame(dets), _by_frame(gts)
    scores, flags, n_gt = [], [], 0
    for fid in sorted(set(det_frames) | set(gt_frames)):
        fd, fg = det_frames.get(fid, []), gt_frames.get(fid, [])
        ignore = np.array([g.difficulty > level for g in fg], dtype=bool)
        n_gt += int((~ignore).sum())
        m = match_detections(fd, fg, iou_threshold, ignore)
        for d, s in zip(fd, m.status):
            if s != IGNORED:
                scores.append((-d.score, d.frame_id, d.det_id))
                flags.append(s == TP)
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    curve = pr_curve(np.array(flags, dtype=bool)[order], n_gt, mode)
    return average_precision(curve), curve, n_gt


@dataclass
class BucketStat:
    lo: float
    hi: float
    n_gt: int
    n_det: int
    n_tp: int
    recall: float = None  # None when the bucket has no GT
    accuracy: float = None  # None when the bucket has no detection


def _bev_range(box):
    return float(np.hypot(box.center[0], box.center[1]))


def distance_buckets(dets, gts, ranges=DEFAULT_RANGES, iou_threshold=0.7):
    """Recall and accuracy per BEV-distance bucket (GTs by their range, detections by theirs)."""
    det_frames, gt_frames = _by_frame(dets), _by_frame(gts)
    det_tp, gt_hit = [], []
    for fid in sorted(set(det_frames) | set(gt_frames)):
        fd, fg = det_frames.get(fid, []), gt_frames.get(fid, [])
        ignore = np.array([g.difficulty == Difficulty.IGNORED for g in fg], dtype=bool)
        m = match_detections(fd, fg, iou_threshold, ignore)
        det_tp += [(_bev_range(d.box), s) for d, s in zip(fd, m.status) if s != IGNORED]
        gt_hit += [(_bev_range(g.box), bool(h)) for g, h, ig in zip(fg, m.gt_matched, ignore) if not ig]
    out = []
    for lo, hi in ranges:
        g = [h for r, h in gt_hit if lo <= r < hi]
        d = [s for r, s in det_tp if lo <= r < hi]
        n_tp_gt = int(sum(g))
        n_tp_det = int(sum(1 for s in d if s == TP))
        out.append(BucketStat(lo, hi, len(g), len(d), n_tp_gt,
                              n_tp_gt / len(g) if g else None,
                              n_tp_det / len(d) if d else None))
    return out


@dataclass
class EvalReport:
    mode: str
    ap: dict = field(default_factory=dict)  # (class, level name) -> AP
    n_gt: dict = field(default_factory=dict)
    buckets: dict = field(default_factory=dict)  # class -> [BucketStat]

    def to_kv(self):
        """Machine-readable ``key=value`` lines (stable ordering and formatting)."""
        lines = [f"interpolation={self.mode}"]
        for (cls, lvl), ap in sorted(self.ap.items()):
            lines.append(f"ap.{cls}.{lvl}={ap:.6f}")
            lines.append(f"n_gt.{cls}.{lvl}={self.n_gt[(cls, lvl)]}")
        for cls in sorted(self.buckets):
            for b in self.buckets[cls]:
                key = f"bucket.{cls}.{_fmt_range(b.lo, b.hi)}"
                if b.recall is not None:
                    lines.append(f"{key}.recall={b.recall:.6f}")
                if b.accuracy is not None:
                    lines.append(f"{key}.accuracy={b.accuracy:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self):
        classes = sorted({c for c, _ in self.ap})
        names = [lvl.name.capitalize() for lvl in LEVELS]
        rows = [f"AP ({self.mode})  " + "".join(f"{n:>10}" for n in names)]
        for cls in classes:
            rows.append(f"{cls:<12}" + "".join(
                f"{100 * self.ap[(cls, n.lower())]:>10.2f}" if (cls, n.lower()) in self.ap else f"{'-':>10}"
                for n in names))
        for cls in sorted(self.buckets):
            rows.append(f"{cls} by distance: range, recall, accuracy")
            for b in self.buckets[cls]:
                rec = "-" if b.recall is None else f"{b.recall:.3f}"
                acc = "-" if b.accuracy is None else f"{b.accuracy:.3f}"
                rows.append(f"  {_fmt_range(b.lo, b.hi):<10}{rec:>8}{acc:>10}")
        return "\n".join(rows) + "\n"


def _fmt_range(lo, hi):
    return f"{lo:g}-{'inf' if np.isinf(hi) else f'{hi:g}'}"


def evaluate(dets, gts, classes=None, iou_thresholds=None, mode="R11", ranges=DEFAULT_RANGES):
    """AP per class and cumulative difficulty, plus distance buckets.

    Classes without any ground truth are left out of the report.
    """
    thr = dict(DEFAULT_IOU_THRESHOLDS)
    if iou_thresholds:
        thr.update(iou_thresholds)
    if classes is None:
        classes = sorted({g.label for g in gts})
    report = EvalReport(mode)
    for cls in classes:
        if not any(g.label == cls for g in gts):
            continue
        t = thr.get(cls, 0.5)
        for lvl in LEVELS:
            ap, _, n = evaluate_class(dets, gts, cls, t, lvl, mode)
            report.ap[(cls, lvl.name.lower())] = ap
            report.n_gt[(cls, lvl.name.lower())] = n
        cd = [d for d in dets if d.label == cls]
        cg = [g for g in gts if g.label == cls]
        report.buckets[cls] = distance_buckets(cd, cg, ranges, t)
    return report


def frame_ground_truth(frame):
    return [GroundTruth(b, c, d, frame.frame_id)
            for b, c, d in zip(frame.gt_boxes, frame.gt_classes, frame.gt_difficulty)]


# -- KITTI result files ---------------------------------------------------------------


def write_detections(path, dets, calib):
    with open(path, "w") as fh:
        for d in dets:
            fh.write(box_to_label(d.box, calib, d.label, d.score).to_line() + "\n")


def read_detections(path, calib, frame_id=""):
    """KITTI result file (16 fields per line, trailing score) into :class:`Detection`s."""
    out = []
    with open(path) as fh:
        for i, line in enumerate(l for l in fh if l.strip()):
            label = parse_label_line(line, path)
            score = 1.0 if label.score is None else min(max(label.score, 0.0), 1.0)
            out.append(Detection(label_to_box(label, calib), label.cls, score, frame_id, i))
    return out


__all__ = ["GroundTruth", "MatchResult", "PRCurve", "BucketStat", "EvalReport",
           "match_detections", "pr_curve", "average_precision", "evaluate_class", "distance_buckets",
           "evaluate", "frame_ground_truth", "write_detections", "read_detections", "sort_detections"]
