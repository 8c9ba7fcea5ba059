"""KITTI file formats, synthetic scenes with oracle segmentation, dataset splits."""

import enum
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, MalformedFile, MissingKey, PlacementFailure
from .fusionkp import SegScores, decode_seg_scores, encode_seg_scores, oracle_seg_scores, read_seg_scores
from .geom import (CalibContext, OrientedBox3D, PointCloud, boxes_corners, normalize_angle,
                   project_boxes_to_roi2d, project_points)

# -- velodyne ------------------------------------------------------------------


def read_velodyne(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) == 0 or len(data) % 16:
        raise MalformedFile(f"{path}: size {len(data)} is not a positive multiple of 16 bytes")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    if not np.all(np.isfinite(pts)):
        raise MalformedFile(f"{path}: non-finite values")
    # KITTI reflectance occasionally exceeds 1 by float noise
    pts[:, 3] = np.clip(pts[:, 3], 0.0, 1.0)
    return PointCloud(pts)


def write_velodyne(path, cloud):
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


# -- calibration -----------------------------------------------------------------


def _expand4(m):
    out = np.eye(4)
    out[:m.shape[0], :m.shape[1]] = m
    return out


def _orthonormalize(R, tol=1e-6):
    if np.max(np.abs(R @ R.T - np.eye(3))) <= tol:
        return R
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def parse_calib(text, image_size=(1242, 375), source="<calib>"):
    values = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            values[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError as exc:
            raise MalformedFile(f"{source}: bad numbers for {key.strip()}") from exc
    for key, n in (("P2", 12), ("R0_rect", 9), ("Tr_velo_to_cam", 12)):
        if key not in values:
            raise MissingKey(key)
        if values[key].size != n:
            raise MalformedFile(f"{source}: {key} needs {n} values, got {values[key].size}")
    M = values["P2"].reshape(3, 4)
    T = _expand4(values["R0_rect"].reshape(3, 3)) @ _expand4(values["Tr_velo_to_cam"].reshape(3, 4))
    T[:3, :3] = _orthonormalize(T[:3, :3])
    return CalibContext(T, M, image_size)


def read_calib(path, image_size=(1242, 375)):
    with open(path) as fh:
        return parse_calib(fh.read(), image_size, source=path)


def format_calib(calib):
    """KITTI-style calib text with ``R0_rect`` set to the identity."""
    rows = [
        ("P2", calib.M.reshape(-1)),
        ("R0_rect", np.eye(3).reshape(-1)),
        ("Tr_velo_to_cam", calib.T[:3].reshape(-1)),
    ]
    return "".join(f"{k}: {' '.join(repr(float(v)) for v in vals)}\n" for k, vals in rows)


# -- labels ------------------------------------------------------------------------


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


# (min bbox height px, max occlusion level, max truncation) per level
DIFFICULTY_RULES = (
    (Difficulty.EASY, 40.0, 0, 0.15),
    (Difficulty.MODERATE, 25.0, 1, 0.30),
    (Difficulty.HARD, 25.0, 2, 0.50),
)


@dataclass(frozen=True)
class KittiLabel:
    cls: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple
    dimensions: tuple  # h, w, l
    location: tuple  # camera frame, bottom center
    rotation_y: float
    score: float = None

    @property
    def bbox_height(self):
        return self.bbox[3] - self.bbox[1]

    def to_line(self):
        fields = [self.cls, f"{self.truncation:.2f}", str(int(self.occlusion)), f"{self.alpha:.6f}",
                  *(f"{v:.6f}" for v in self.bbox), *(f"{v:.6f}" for v in self.dimensions),
                  *(f"{v:.6f}" for v in self.location), f"{self.rotation_y:.6f}"]
        if self.score is not None:
            fields.append(f"{self.score:.6f}")
        return " ".join(fields)


def parse_label_line(line, source="<label>"):
    parts = line.split()
    if len(parts) not in (15, 16):
        raise MalformedFile(f"{source}: expected 15 or 16 fields, got {len(parts)}")
    try:
        nums = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise MalformedFile(f"{source}: non-numeric field") from exc
    if not np.all(np.isfinite(nums)):
        raise MalformedFile(f"{source}: non-finite field")
    return KittiLabel(
        cls=parts[0], truncation=nums[0], occlusion=int(nums[1]), alpha=nums[2],
        bbox=tuple(nums[3:7]), dimensions=tuple(nums[7:10]), location=tuple(nums[10:13]),
        rotation_y=nums[13], score=nums[14] if len(nums) == 15 else None,
    )


def read_labels(path):
    with open(path) as fh:
        return [parse_label_line(line, path) for line in fh if line.strip()]


def write_labels(path, labels):
    with open(path, "w") as fh:
        for label in labels:
            fh.write(label.to_line() + "\n")


def classify_difficulty(label):
    """Easiest KITTI level whose height / occlusion / truncation limits the label meets."""
    for level, min_h, max_occ, max_trunc in DIFFICULTY_RULES:
        if label.bbox_height >= min_h and label.occlusion <= max_occ and label.truncation <= max_trunc:
            return level
    return Difficulty.IGNORED


def label_to_box(label, calib):
    """Camera-frame KITTI label to a LiDAR-frame box."""
    h, w, l = label.dimensions
    x, y, z = label.location
    center = calib.camera_to_lidar([x, y - h / 2.0, z])[0]
    ry = label.rotation_y
    heading_cam = np.array([np.cos(ry), 0.0, -np.sin(ry)])
    heading = calib.T[:3, :3].T @ heading_cam
    yaw = np.arctan2(heading[1], heading[0])
    return OrientedBox3D(tuple(center), (h, w, l), yaw)


def box_to_label(box, calib, cls="Car", score=None, truncation=0.0, occlusion=0):
    """LiDAR-frame box to a camera-frame KITTI label (2D box from projected corners)."""
    h, w, l = box.size
    c = calib.lidar_to_camera(box.center)[0]
    heading = calib.T[:3, :3] @ np.array([np.cos(box.yaw), np.sin(box.yaw), 0.0])
    ry = normalize_angle(np.arctan2(-heading[2], heading[0]))
    alpha = normalize_angle(ry - np.arctan2(c[0], c[2]))
    corners = boxes_corners(box.to_array())[0]
    proj = project_points(corners, calib)
    front = proj.depth > 0
    W, H = calib.image_size
    if front.any():
        uv = proj.uv[front]
        bbox = (float(np.clip(uv[:, 0].min(), 0, W)), float(np.clip(uv[:, 1].min(), 0, H)),
                float(np.clip(uv[:, 0].max(), 0, W)), float(np.clip(uv[:, 1].max(), 0, H)))
    else:
        bbox = (0.0, 0.0, 0.0, 0.0)
    return KittiLabel(cls, truncation, occlusion, alpha, bbox, (h, w, l),
                      (c[0], c[1] + h / 2.0, c[2]), ry, score)


# -- splits and preprocessing ----------------------------------------------------------


def read_split(path):
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def write_split(path, frame_ids):
    with open(path, "w") as fh:
        fh.writelines(f"{f}\n" for f in frame_ids)


def frustum_mask(cloud, calib):
    return project_points(cloud, calib).in_image


def subsample_cloud(cloud, n, random_state=0):
    """Seeded shuffle down to ``n`` points; smaller clouds are padded by resampling."""
    rng = np.random.default_rng(random_state)
    m = len(cloud)
    if m >= n:
        idx = rng.permutation(m)[:n]
    else:
        idx = np.concatenate([rng.permutation(m), rng.integers(0, m, n - m)])
    return PointCloud(cloud.points[idx]), idx


# -- frames ------------------------------------------------------------------------------


@dataclass
class Frame:
    """Everything the detector needs for one scene."""

    frame_id: str
    cloud: PointCloud
    calib: CalibContext
    seg: SegScores
    gt_boxes: list = field(default_factory=list)
    gt_classes: list = field(default_factory=list)
    gt_difficulty: list = field(default_factory=list)

    def gt_array(self):
        if not self.gt_boxes:
            return np.zeros((0, 7))
        return np.stack([b.to_array() for b in self.gt_boxes])


class KittiDataset:
    """KITTI object layout: ``velodyne/``, ``calib/``, ``label_2/`` and segmentation scores.

    Segmentation scores come from ``seg_dir`` (``<frame>.rfsg``).  Without
    them every frame gets all-background scores, which disables the
    pixel-guided branch.
    """

    def __init__(self, root, split=None, seg_dir=None, image_size=(1242, 375),
                 frustum_filter=True, classes=("Car", "Pedestrian", "Cyclist")):
        self.root = root
        self.seg_dir = seg_dir
        self.image_size = image_size
        self.frustum_filter = frustum_filter
        self.classes = tuple(classes)
        if split is None:
            names = sorted(os.listdir(os.path.join(root, "velodyne")))
            self.frame_ids = [os.path.splitext(n)[0] for n in names if n.endswith(".bin")]
        elif isinstance(split, str):
            self.frame_ids = read_split(split)
        else:
            self.frame_ids = list(split)

    def __len__(self):
        return len(self.frame_ids)

    def __iter__(self):
        for fid in self.frame_ids:
            yield self.load(fid)

    def load(self, frame_id):
        calib = read_calib(os.path.join(self.root, "calib", f"{frame_id}.txt"), self.image_size)
        cloud = read_velodyne(os.path.join(self.root, "velodyne", f"{frame_id}.bin"))
        if self.frustum_filter:
            keep = frustum_mask(cloud, calib)
            if not keep.any():
                raise MalformedFile(f"frame {frame_id}: no points inside the camera frustum")
            cloud = PointCloud(cloud.points[keep])
        seg = None
        if self.seg_dir is not None:
            seg = read_seg_scores(os.path.join(self.seg_dir, f"{frame_id}.rfsg"))
        if seg is None:
            seg = SegScores.background(*calib.image_size)
        boxes, classes, diffs = [], [], []
        label_path = os.path.join(self.root, "label_2", f"{frame_id}.txt")
        if os.path.exists(label_path):
            for label in read_labels(label_path):
                if label.cls not in self.classes:
                    continue
                boxes.append(label_to_box(label, calib))
                classes.append(label.cls)
                diffs.append(classify_difficulty(label))
        return Frame(frame_id, cloud, calib, seg, boxes, classes, diffs)


# -- synthetic scenes ----------------------------------------------------------------------


def synthetic_calib(image_size=(640, 192), focal=320.0):
    """Camera at the LiDAR origin looking along +x (KITTI axis swap, no offset)."""
    W, H = image_size
    T = np.array([[0.0, -1.0, 0.0, 0.0],
                  [0.0, 0.0, -1.0, 0.0],
                  [1.0, 0.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0, 1.0]])
    M = np.array([[focal, 0.0, W / 2.0, 0.0],
                  [0.0, focal, H / 2.0, 0.0],
                  [0.0, 0.0, 1.0, 0.0]])
    return CalibContext(T, M, (W, H))


@dataclass
class SyntheticConfig:
    n_points: int = 2048
    min_objects: int = 1
    max_objects: int = 4
    points_per_object: int = 192
    min_object_points: int = 32
    n_distractors: int = 3
    points_per_distractor: int = 48
    x_range: tuple = (5.0, 45.0)
    y_range: tuple = (-20.0, 20.0)
    ground_z: float = -1.7
    car_h: tuple = (1.4, 1.7)
    car_w: tuple = (1.5, 1.9)
    car_l: tuple = (3.6, 4.6)
    noise: float = 0.02
    dilation: int = 0
    image_size: tuple = (640, 192)
    focal: float = 320.0
    clearance: float = 0.5
    max_attempts: int = 200


@dataclass
class SyntheticScene(Frame):
    object_ids: np.ndarray = None  # per point: GT box index, or -1
    seed: int = 0


def _sample_box_surface(rng, size, n, noise):
    """Points on the five non-bottom faces of a box at the origin (local frame), pushed inward by |noise|.

    Returns ``(points (n, 3), on_front_face (n,))``.
    """
    h, w, l = size
    # faces: +x (front), -x, +y, -y, top
    areas = np.array([w * h, w * h, l * h, l * h, l * w])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    a = rng.uniform(-0.5, 0.5, size=n)
    b = rng.uniform(-0.5, 0.5, size=n)
    depth = np.abs(rng.normal(0.0, noise, size=n)) if noise > 0 else np.zeros(n)
    pts = np.empty((n, 3))
    for f, (axis, sign) in enumerate([(0, 1), (0, -1), (1, 1), (1, -1), (2, 1)]):
        m = face == f
        half = np.array([l, w, h]) / 2.0
        other = [i for i in range(3) if i != axis]
        p = np.zeros((m.sum(), 3))
        p[:, axis] = sign * np.maximum(half[axis] - depth[m], 0.0)
        p[:, other[0]] = a[m] * 2 * half[other[0]]
        p[:, other[1]] = b[m] * 2 * half[other[1]]
        pts[m] = p
    return pts, face == 0


def _to_world(local, box):
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    x = c * local[:, 0] - s * local[:, 1]
    y = s * local[:, 0] + c * local[:, 1]
    return np.column_stack([x, y, local[:, 2]]) + np.array(box.center)


def _ray_hits_box(points, box):
    """Whether the segment origin -> point passes through ``box`` before reaching the point."""
    h, w, l = box.size
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    d = -np.array(box.center)
    o = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])
    p = points - np.array(box.center)
    pl = np.column_stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1], p[:, 2]])
    direction = pl - o
    half = np.array([l, w, h]) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / direction
        t2 = (half - o) / direction
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    return (tmax >= tmin) & (tmin < 1.0 - 1e-9) & (tmax > 0)


def _visible(box, calib):
    corners = boxes_corners(box.to_array())[0]
    proj = project_points(corners, calib)
    return bool(np.all(proj.in_image))


def gen_synthetic_scene(config=None, seed=0, n_objects=None, frame_id=None):
    """Deterministic synthetic scene: cars on a ground plane, distractors, oracle segmentation."""
    cfg = SyntheticConfig() if config is None else config
    rng = np.random.default_rng(seed)
    calib = synthetic_calib(cfg.image_size, cfg.focal)
    if n_objects is None:
        n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    if n_objects < 0:
        raise ValueError("object count must be non-negative")
    if cfg.points_per_object < cfg.min_object_points:
        raise ValueError("points_per_object is below min_object_points")

    boxes, radii = [], []
    for _ in range(n_objects):
        for _attempt in range(cfg.max_attempts):
            h = rng.uniform(*cfg.car_h)
            w = rng.uniform(*cfg.car_w)
            l = rng.uniform(*cfg.car_l)
            x = rng.uniform(*cfg.x_range)
            y = rng.uniform(*cfg.y_range)
            yaw = rng.uniform(-np.pi, np.pi)
            box = OrientedBox3D((x, y, cfg.ground_z + h / 2), (h, w, l), yaw)
            r = 0.5 * np.hypot(w, l)
            if not _visible(box, calib):
                continue
            if any(np.hypot(x - b.center[0], y - b.center[1]) < r + rb + cfg.clearance
                   for b, rb in zip(boxes, radii)):
                continue
            boxes.append(box)
            radii.append(r)
            break
        else:
            raise PlacementFailure(f"could not place object {len(boxes) + 1} of {n_objects}")

    parts, refl, ids = [], [], []
    for i, box in enumerate(boxes):
        local, front = _sample_box_surface(rng, box.size, cfg.points_per_object, cfg.noise)
        parts.append(_to_world(local, box))
        r = np.where(front, rng.uniform(0.8, 1.0, len(local)), rng.uniform(0.3, 0.7, len(local)))
        refl.append(r)
        ids.append(np.full(len(local), i))

    distractors = []
    for _ in range(cfg.n_distractors):
        for _attempt in range(cfg.max_attempts):
            dh = rng.uniform(0.5, 2.0)
            dw = rng.uniform(0.3, 1.0)
            x = rng.uniform(*cfg.x_range)
            y = rng.uniform(*cfg.y_range)
            r = 0.5 * np.hypot(dw, dw)
            if any(np.hypot(x - b.center[0], y - b.center[1]) < r + rb + cfg.clearance
                   for b, rb in zip(boxes, radii)):
                continue
            distractors.append(OrientedBox3D((x, y, cfg.ground_z + dh / 2), (dh, dw, dw),
                                             rng.uniform(-np.pi, np.pi)))
            break
    for box in distractors:
        local, _ = _sample_box_surface(rng, box.size, cfg.points_per_distractor, cfg.noise)
        parts.append(_to_world(local, box))
        refl.append(rng.uniform(0.1, 0.6, len(local)))
        ids.append(np.full(len(local), -1))

    n_fixed = sum(len(p) for p in parts)
    n_ground = cfg.n_points - n_fixed
    if n_ground < 0:
        raise ValueError("n_points is smaller than the object and distractor points")
    ground = np.zeros((0, 3))
    occluders = boxes + distractors
    while len(ground) < n_ground:
        m = 2 * (n_ground - len(ground)) + 16
        g = np.column_stack([rng.uniform(0.0, cfg.x_range[1], m), rng.uniform(*cfg.y_range, m),
                             cfg.ground_z + rng.normal(0.0, cfg.noise, m)])
        keep = np.ones(m, dtype=bool)
        for box in occluders:
            keep &= ~_ray_hits_box(g, box)
        ground = np.vstack([ground, g[keep]])
    ground = ground[:n_ground]
    parts.append(ground)
    refl.append(rng.uniform(0.0, 0.3, len(ground)))
    ids.append(np.full(len(ground), -1))

    xyz = np.vstack(parts)
    r = np.concatenate(refl)
    obj = np.concatenate(ids)
    order = rng.permutation(len(xyz))
    xyz, r, obj = xyz[order], r[order], obj[order]
    cloud = PointCloud(np.column_stack([xyz, r]))
    seg = oracle_seg_scores(xyz[obj >= 0], calib, cfg.dilation)
    return SyntheticScene(
        frame_id=f"syn{seed:06d}" if frame_id is None else frame_id,
        cloud=cloud, calib=calib, seg=seg, gt_boxes=boxes,
        gt_classes=["Car"] * len(boxes), gt_difficulty=[Difficulty.EASY] * len(boxes),
        object_ids=obj, seed=int(seed),
    )


def make_synthetic_dataset(n_scenes, seed=0, config=None, n_objects=None):
    return [gen_synthetic_scene(config, seed + i, n_objects=n_objects) for i in range(n_scenes)]


# -- scene archive ------------------------------------------------------------------


SCENE_MAGIC = b"RFSC"
SCENE_VERSION = 1


def _section(tag, payload):
    return tag + struct.pack("<Q", len(payload)) + payload


def encode_scene(scene):
    """Serialize a frame (synthetic or loaded) into the ``RFSC`` archive format."""
    pts = np.ascontiguousarray(scene.cloud.points, dtype="<f8")
    obj = getattr(scene, "object_ids", None)
    if obj is None:
        obj = np.full(len(pts), -1)
    cld = struct.pack("<I", len(pts)) + pts.tobytes() + np.asarray(obj, dtype="<i4").tobytes()
    box = io.BytesIO()
    box.write(struct.pack("<I", len(scene.gt_boxes)))
    for b, cls, diff in zip(scene.gt_boxes, scene.gt_classes, scene.gt_difficulty):
        name = cls.encode()
        box.write(np.asarray(b.to_array(), dtype="<f8").tobytes())
        box.write(struct.pack("<II", int(diff), len(name)) + name)
    cal = (np.asarray(scene.calib.T, dtype="<f8").tobytes() + np.asarray(scene.calib.M, dtype="<f8").tobytes()
           + struct.pack("<II", *scene.calib.image_size))
    fid = scene.frame_id.encode()
    meta = struct.pack("<qI", int(getattr(scene, "seed", -1)), len(fid)) + fid
    sections = [_section(b"CLD ", cld), _section(b"BOX ", box.getvalue()), _section(b"CAL ", cal),
                _section(b"SCR ", encode_seg_scores(scene.seg)), _section(b"META", meta)]
    return SCENE_MAGIC + struct.pack("<II", SCENE_VERSION, len(sections)) + b"".join(sections)


def decode_scene(data, source="<scene>"):
    if data[:4] != SCENE_MAGIC:
        raise MalformedFile(f"{source}: not a scene archive")
    version, n_sections = struct.unpack_from("<II", data, 4)
    if version != SCENE_VERSION:
        raise MalformedFile(f"{source}: unsupported archive version {version}")
    pos = 12
    sections = {}
    for _ in range(n_sections):
        if pos + 12 > len(data):
            raise MalformedFile(f"{source}: truncated section header")
        tag = data[pos:pos + 4]
        (n,) = struct.unpack_from("<Q", data, pos + 4)
        pos += 12
        if pos + n > len(data):
            raise MalformedFile(f"{source}: truncated section {tag!r}")
        sections[tag] = data[pos:pos + n]
        pos += n
    for tag in (b"CLD ", b"BOX ", b"CAL ", b"SCR "):
        if tag not in sections:
            raise MissingKey(tag.decode().strip())
    cld = sections[b"CLD "]
    (n_pts,) = struct.unpack_from("<I", cld, 0)
    pts = np.frombuffer(cld, dtype="<f8", count=4 * n_pts, offset=4).reshape(n_pts, 4).astype(np.float64)
    obj = np.frombuffer(cld, dtype="<i4", count=n_pts, offset=4 + 32 * n_pts).astype(np.intp)
    box = sections[b"BOX "]
    (n_box,) = struct.unpack_from("<I", box, 0)
    p = 4
    boxes, classes, diffs = [], [], []
    for _ in range(n_box):
        arr = np.frombuffer(box, dtype="<f8", count=7, offset=p)
        p += 56
        diff, n_name = struct.unpack_from("<II", box, p)
        p += 8
        classes.append(box[p:p + n_name].decode())
        p += n_name
        boxes.append(OrientedBox3D.from_array(arr))
        diffs.append(Difficulty(diff))
    cal = sections[b"CAL "]
    T = np.frombuffer(cal, dtype="<f8", count=16, offset=0).reshape(4, 4)
    M = np.frombuffer(cal, dtype="<f8", count=12, offset=128).reshape(3, 4)
    W, H = struct.unpack_from("<II", cal, 224)
    calib = CalibContext(T, M, (W, H))
    seg = decode_seg_scores(sections[b"SCR "], source)
    seed, fid = -1, "scene"
    if b"META" in sections:
        meta = sections[b"META"]
        seed, n = struct.unpack_from("<qI", meta, 0)
        fid = meta[12:12 + n].decode()
    return SyntheticScene(fid, PointCloud(pts), calib, seg, boxes, classes, diffs, obj, int(seed))


def write_scene(path, scene):
    with open(path, "wb") as fh:
        fh.write(encode_scene(scene))


def read_scene(path):
    with open(path, "rb") as fh:
        return decode_scene(fh.read(), source=path)


def load_frames(dataset, path=None, n_scenes=8, seed=0, config=None, split=None, seg_dir=None):
    """Frames for a CLI ``--dataset`` choice: ``synthetic`` or ``kitti``."""
    if dataset == "synthetic":
        if path is not None and os.path.isdir(path):
            names = sorted(n for n in os.listdir(path) if n.endswith(".rfsc"))
            return [read_scene(os.path.join(path, n)) for n in names]
        return make_synthetic_dataset(n_scenes, seed, config)
    if dataset == "kitti":
        if path is None:
            raise DataError("the kitti dataset needs a data path")
        return list(KittiDataset(path, split, seg_dir))
    raise DataError(f"unknown dataset {dataset!r}")
