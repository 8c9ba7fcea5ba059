"""End-to-end network, per-scene training step, and the sklearn-style detector estimator."""

import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backbone import Backbone, SAConfig
from .config import RunConfig
from .data import subsample_cloud
from .evaluation import evaluate, frame_ground_truth
from .fusionkp import foreground_mask
from .geom import Detection, OrientedBox3D, PointCloud, points_in_box
from .head import AngleBinCodec, PredictionHead, assign_rois, decode_outputs, detection_loss, nms_3d
from .micronet import (Adam, StepSchedule, load_checkpoint, save_checkpoint, scatter_add,
                       smooth_l1, smooth_l1_grad)
from .roi import RoIFusion, RoIPool2D, RoIPool3D, VoteLayer, rois_for_centers
from .sampling import fps_feature


@dataclass
class ScenePrep:
    """Per-scene quantities that never change during training."""

    frame_id: str
    cloud: PointCloud
    xyz: np.ndarray
    refl: np.ndarray
    calib: object
    feature_map: np.ndarray
    fg_mask: np.ndarray
    plans: dict
    gt_boxes: np.ndarray  # (G, 7)
    gt_labels: np.ndarray  # class index, 1-based
    point_gt: np.ndarray  # per point: index of the GT box containing it, or -1


@dataclass
class ForwardState:
    keypoints: np.ndarray
    from_pixels: np.ndarray
    kp_indices: np.ndarray
    centers: np.ndarray
    roi_rows: np.ndarray
    outputs: np.ndarray
    empty: np.ndarray
    caches: dict


class RoIFusionNet:
    """Backbone -> fused keypoints -> votes -> 3D/2D RoI pooling -> fusion -> head."""

    def __init__(self, config, rng=None):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        sa = [SAConfig(p, r, k, m, s) for p, r, k, m, s in
              zip(cfg.sa_points, cfg.sa_radii, cfg.sa_neighbors, cfg.sa_mlps, cfg.sa_samplers)]
        self.backbone = Backbone(1, sa, cfg.fp_mlps, rng=rng)
        self.vote = VoteLayer(self.backbone.keypoint_width, cfg.vote_hidden, rng)
        self.pool3d = RoIPool3D(1, cfg.pool_mlp, cfg.k_pool, rng)
        self.pool2d = RoIPool2D(cfg.map_channels, cfg.image_out, cfg.grid, rng)
        self.fusion = RoIFusion(self.pool3d.out_features, self.pool2d.out_features,
                                cfg.fusion_mlp, cfg.fusion, rng)
        self.n_classes = len(cfg.classes) + 1
        self.head = PredictionHead(self.fusion.out_features, cfg.head_hidden, self.n_classes, cfg.n_bins, rng)
        self.codec = AngleBinCodec(cfg.n_bins)
        self.class_index = {c: i + 1 for i, c in enumerate(cfg.classes)}

    @property
    def modules(self):
        return [self.backbone, self.vote, self.pool3d, self.pool2d, self.fusion, self.head]

    def layers(self):
        return [l for m in self.modules for l in m.layers()]

    def parameters(self):
        return [p for m in self.modules for p in m.parameters()]

    def gradients(self):
        return [g for m in self.modules for g in m.gradients()]

    def zero_grad(self):
        for m in self.modules:
            m.zero_grad()

    # -- scene preparation ----------------------------------------------------------

    def prepare(self, frame, subsample_seed=0):
        cfg = self.config
        cloud = frame.cloud
        if len(cloud) != cfg.n_points:
            cloud, _ = subsample_cloud(cloud, cfg.n_points, subsample_seed)
        xyz = cloud.xyz
        mask, _ = foreground_mask(xyz, frame.calib, frame.seg, cfg.tau_fg)
        fmap = frame.seg.feature_map()
        keep = [i for i, c in enumerate(frame.gt_classes) if c in self.class_index]
        boxes = [frame.gt_boxes[i] for i in keep]
        gt = np.stack([b.to_array() for b in boxes]) if boxes else np.zeros((0, 7))
        labels = np.array([self.class_index[frame.gt_classes[i]] for i in keep], dtype=np.intp)
        point_gt = np.full(len(xyz), -1, dtype=np.intp)
        for j, box in enumerate(boxes):
            point_gt[points_in_box(xyz, box) & (point_gt < 0)] = j
        plans = self.backbone.static_plan(xyz, None)
        return ScenePrep(frame.frame_id, cloud, xyz, cloud.reflectance[:, None].copy(), frame.calib,
                         fmap, mask, plans, gt, labels, point_gt)

    # -- forward / backward -------------------------------------------------------------

    def forward(self, prep, roi_select=None):
        """Full forward pass.  ``roi_select(centers) -> row indices`` restricts the RoIs."""
        cfg = self.config
        # point features are only consumed at foreground points, so the last FP
        # stage runs on those rows alone
        fg_rows = np.flatnonzero(prep.fg_mask) if cfg.m2 > 0 else np.zeros(0, dtype=np.intp)
        out, bcache = self.backbone.forward(prep.xyz, prep.refl, prep.plans, point_rows=fg_rows)
        kp_xyz = out.keypoints.coords
        kp_feat = out.keypoints.features
        kp_idx = out.keypoint_indices
        fg_feats = out.point_features.features
        sel = np.zeros(0, dtype=np.intp)
        if len(fg_rows):
            sel = fps_feature(fg_feats, min(cfg.m2, len(fg_rows))).indices
        img_idx = fg_rows[sel]
        coords = np.vstack([kp_xyz, prep.xyz[img_idx]])
        feats = np.vstack([kp_feat, fg_feats[sel]])
        from_pixels = np.r_[np.zeros(len(kp_xyz), bool), np.ones(len(img_idx), bool)]
        (offset, _), vcache = self.vote.forward(feats)
        centers = coords + offset
        rows = np.arange(len(centers)) if roi_select is None else np.asarray(roi_select(centers))
        roi_centers = centers[rows]
        extents, rects, _ = rois_for_centers(roi_centers, cfg.roi_dims, cfg.eta, prep.calib)
        pc_feat, empty, c3 = self.pool3d.forward(roi_centers, extents, prep.xyz, prep.refl)
        img_feat, _, c2 = self.pool2d.forward(rects, prep.feature_map)
        fused, cf = self.fusion.forward(pc_feat, img_feat)
        y, ch = self.head.forward(fused)
        caches = dict(backbone=bcache, vote=vcache, pool3d=c3, pool2d=c2, fusion=cf, head=ch,
                      n_pc=len(kp_xyz), sel=sel, n_fg=len(fg_rows))
        return ForwardState(coords, from_pixels, np.r_[kp_idx, img_idx], centers, rows, y, empty, caches)

    def vote_loss(self, prep, state):
        """Smooth-L1 from each on-object keypoint's vote to its object's center."""
        gt_idx = prep.point_gt[state.kp_indices]
        pos = np.flatnonzero(gt_idx >= 0)
        grad = np.zeros_like(state.centers)
        if len(pos) == 0:
            return 0.0, grad
        target = prep.gt_boxes[gt_idx[pos], :3]
        n = len(pos)
        grad[pos] = smooth_l1_grad(state.centers[pos], target) / n
        return float(smooth_l1(state.centers[pos], target) / n), grad

    def loss(self, prep, state):
        cfg = self.config
        centers = state.centers[state.roi_rows]
        assign = assign_rois(centers, prep.gt_boxes, cfg.assign_radius)
        det = detection_loss(state.outputs, centers, assign, prep.gt_boxes, prep.gt_labels,
                             self.codec, self.head.layout, cfg.loss_weights, valid=~state.empty)
        v, dv = self.vote_loss(prep, state)
        terms = dict(det.terms)
        terms["vote"] = v
        total = det.total + cfg.w_vote * v
        return total, terms, det.grad, cfg.w_vote * dv

    def backward(self, state, d_out, d_centers, scale=1.0):
        c = state.caches
        d_fused = self.head.backward(d_out * scale, c["head"])
        d_pc, d_img = self.fusion.backward(d_fused, c["fusion"])
        # RoI centers are treated as constants by the pooling stages
        self.pool3d.backward(d_pc, c["pool3d"])
        self.pool2d.backward(d_img, c["pool2d"])
        d_feats = self.vote.backward(d_centers * scale, c["vote"])
        n_pc = c["n_pc"]
        d_points = scatter_add(c["sel"], d_feats[n_pc:], c["n_fg"])
        self.backbone.backward(d_feats[:n_pc], d_points, c["backbone"])

    def train_step(self, prep, rng=None, scale=1.0):
        """Forward + loss + backward (gradients accumulate); returns ``(total, terms)``."""
        select = None
        if self.config.roi_samples and rng is not None:
            select = self._roi_sampler(prep, rng)
        state = self.forward(prep, select)
        total, terms, d_out, d_centers = self.loss(prep, state)
        self.backward(state, d_out, d_centers, scale)
        return total, terms

    def _roi_sampler(self, prep, rng):
        """Keep up to half positives, fill the rest with negatives (random, seeded)."""
        k = self.config.roi_samples
        radius = self.config.assign_radius

        def select(centers):
            assign = assign_rois(centers, prep.gt_boxes, radius)
            pos = np.flatnonzero(assign >= 0)
            neg = np.flatnonzero(assign < 0)
            pos = rng.permutation(pos)[:max(k // 2, k - len(neg))]
            neg = rng.permutation(neg)[:k - len(pos)]
            return np.sort(np.r_[pos, neg])

        return select

    # -- inference -------------------------------------------------------------------------

    def detect(self, prep):
        cfg = self.config
        state = self.forward(prep)
        boxes, probs = decode_outputs(state.outputs, state.centers[state.roi_rows], self.codec, self.head.layout)
        fg = probs[:, 1:]
        label = np.argmax(fg, axis=1)
        score = fg[np.arange(len(fg)), label]
        ok = np.flatnonzero((score >= cfg.score_threshold) & ~state.empty)
        keep = ok[nms_3d(boxes[ok], score[ok], cfg.nms_iou)] if len(ok) else ok
        names = cfg.classes
        return [Detection(OrientedBox3D.from_array(boxes[i]), names[label[i]], float(np.clip(score[i], 0, 1)),
                          prep.frame_id, int(n)) for n, i in enumerate(keep)]

    def save(self, path):
        save_checkpoint(path, self.layers())

    def load(self, path):
        load_checkpoint(path, self.layers())


class RoIFusionDetector(BaseEstimator):
    """Estimator wrapper: ``fit(frames)``, ``predict(frames)``, ``score(frames)``.

    Parameters
    ----------
    config : RunConfig, optional
        Full run configuration; defaults to ``RunConfig()``.
    epochs : int, optional
        Overrides ``config.epochs``.
    random_state : int, optional
        Overrides ``config.seed`` (weight init and RoI sampling).
    verbose : int
        1 prints one line per epoch.
    """

    def __init__(self, config=None, epochs=None, random_state=None, verbose=0):
        self.config = config
        self.epochs = epochs
        self.random_state = random_state
        self.verbose = verbose

    def _resolved_config(self):
        cfg = RunConfig() if self.config is None else self.config
        kw = {}
        if self.epochs is not None:
            kw["epochs"] = int(self.epochs)
        if self.random_state is not None:
            kw["seed"] = int(self.random_state)
        return cfg.with_overrides(**kw) if kw else cfg

    def _init_net(self):
        self.config_ = self._resolved_config()
        self.net_ = RoIFusionNet(self.config_, np.random.default_rng(self.config_.seed))
        return self.net_

    def fit(self, frames, y=None, callback=None):
        net = self._init_net()
        cfg = self.config_
        preps = [net.prepare(f, cfg.seed + i) for i, f in enumerate(frames)]
        rng = np.random.default_rng(cfg.seed + 1)
        opt = Adam(net.parameters(), cfg.lr)
        sched = StepSchedule(cfg.lr, cfg.drop_epoch, cfg.lr_factor)
        self.history_ = []
        t0 = time.perf_counter()
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(preps))
            sums, n = {}, 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                net.zero_grad()
                for i in batch:
                    total, terms = net.train_step(preps[i], rng, 1.0 / len(batch))
                    for key, val in terms.items():
                        sums[key] = sums.get(key, 0.0) + val
                    sums["total"] = sums.get("total", 0.0) + total
                    n += 1
                opt.step(net.gradients(), sched(epoch))
            record = {k: v / n for k, v in sums.items()}
            record["epoch"] = epoch + 1
            self.history_.append(record)
            if self.verbose:
                print(f"epoch {epoch + 1:4d} loss {record['total']:.4f} ({time.perf_counter() - t0:.1f}s)",
                      flush=True)
            if callback is not None:
                callback(record)
        self.train_seconds_ = time.perf_counter() - t0
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("call fit() or load() first")

    def predict(self, frames):
        """One list of :class:`Detection` per frame."""
        self._check_fitted()
        return [self.net_.detect(self.net_.prepare(f, self.config_.seed + i)) for i, f in enumerate(frames)]

    def evaluate(self, frames, iou_thresholds=None):
        dets = [d for ds in self.predict(frames) for d in ds]
        gts = [g for f in frames for g in frame_ground_truth(f)]
        cfg = self.config_
        thr = cfg.iou_thresholds if iou_thresholds is None else iou_thresholds
        return evaluate(dets, gts, cfg.classes, thr, cfg.interpolation)

    def score(self, frames, y=None):
        """Moderate AP of the first class."""
        report = self.evaluate(frames)
        return report.ap.get((self.config_.classes[0], "moderate"), 0.0)

    def save(self, path):
        self._check_fitted()
        self.net_.save(path)

    def load(self, path):
        self._init_net().load(path)
        return self
