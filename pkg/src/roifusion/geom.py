"""Frames, calibration, projection, box representations and IoU kernels.

Frames follow KITTI: the LiDAR frame is x-forward / y-left / z-up, the
rectified camera frame is x-right / y-down / z-forward.  Box sizes are
``(h, w, l)``: ``l`` runs along the box heading, ``w`` across it and ``h``
vertically.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import NoVisibleCorners
from .validation import check_coords

TWO_PI = 2.0 * np.pi
AREA_EPS = 1e-9


def normalize_angle(theta):
    """Wrap angles into ``[-pi, pi)``; works on scalars and arrays."""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, TWO_PI) - np.pi
    # fmod rounding can land exactly on +pi
    wrapped = np.where(wrapped >= np.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class PointCloud:
    """``N x 4`` array of ``(x, y, z, reflectance)`` in the LiDAR frame."""

    points: np.ndarray

    def __post_init__(self):
        pts = check_coords(self.points, dims=4, name="points")[:, :4].copy()
        r = pts[:, 3]
        if np.any(r < 0.0) or np.any(r > 1.0):
            raise ValueError("reflectance must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_xyz(cls, xyz, reflectance=None):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if reflectance is None:
            reflectance = np.zeros(len(xyz))
        return cls(np.column_stack([xyz, reflectance]))

    @property
    def xyz(self):
        return self.points[:, :3]

    @property
    def reflectance(self):
        return self.points[:, 3]

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class CalibContext:
    """LiDAR to rectified-camera transform ``T`` and pixel projection ``M``."""

    T: np.ndarray
    M: np.ndarray
    image_size: tuple

    def __post_init__(self):
        T = np.array(self.T, dtype=np.float64)
        M = np.array(self.M, dtype=np.float64)
        if T.shape != (4, 4) or M.shape != (3, 4):
            raise ValueError(f"expected T 4x4 and M 3x4, got {T.shape} and {M.shape}")
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(M))):
            raise ValueError("calibration matrices must be finite")
        if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError("bottom row of T must be (0, 0, 0, 1)")
        R = T[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation block of T is not orthonormal")
        W, H = (int(v) for v in self.image_size)
        if W <= 0 or H <= 0:
            raise ValueError("image size must be positive")
        T.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "image_size", (W, H))

    @classmethod
    def identity(cls, image_size=(1242, 375)):
        return cls(np.eye(4), np.eye(3, 4), image_size)

    @property
    def width(self):
        return self.image_size[0]

    @property
    def height(self):
        return self.image_size[1]

    def lidar_to_camera(self, xyz):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return xyz @ self.T[:3, :3].T + self.T[:3, 3]

    def camera_to_lidar(self, xyz):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        R, t = self.T[:3, :3], self.T[:3, 3]
        return (xyz - t) @ R


class Projection(NamedTuple):
    uv: np.ndarray
    depth: np.ndarray
    in_image: np.ndarray


def project_points(cloud, calib):
    """Project LiDAR points to pixels.

    ``cloud`` may be a :class:`PointCloud` or any ``(n, >=3)`` array.  Points
    with non-positive camera depth get ``in_image=False`` (their ``uv`` is
    still reported but meaningless).
    """
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)[:, :3]
    homo = np.column_stack([xyz, np.ones(len(xyz))])
    cam = homo @ calib.T.T
    pix = cam @ calib.M.T
    depth = pix[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = pix[:, :2] / depth[:, None]
    front = depth > 0
    W, H = calib.image_size
    in_image = (front & np.all(np.isfinite(uv), axis=1)
                & (uv[:, 0] >= 0) & (uv[:, 0] < W) & (uv[:, 1] >= 0) & (uv[:, 1] < H))
    return Projection(uv, depth, in_image)


@dataclass(frozen=True)
class OrientedBox3D:
    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size need three components")
        if not all(np.isfinite(center)) or not np.isfinite(self.yaw):
            raise ValueError("box parameters must be finite")
        if min(size) <= 0:
            raise ValueError(f"box size must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @classmethod
    def from_array(cls, arr):
        """Build from ``(x, y, z, h, w, l, yaw)``."""
        arr = np.asarray(arr, dtype=np.float64)
        return cls(tuple(arr[:3]), tuple(arr[3:6]), float(arr[6]))

    def to_array(self):
        return np.array([*self.center, *self.size, self.yaw])

    @property
    def volume(self):
        h, w, l = self.size
        return h * w * l


@dataclass(frozen=True)
class RoI3D:
    """Axis-aligned region; ``extent`` is ``(h, w, l)`` along ``(z, y, x)``."""

    center: tuple
    extent: tuple

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        extent = tuple(float(v) for v in self.extent)
        if min(extent) <= 0:
            raise ValueError(f"RoI extent must be positive, got {extent}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "extent", extent)

    def bounds(self):
        """``(lo, hi)`` corner arrays in ``x, y, z`` order."""
        h, w, l = self.extent
        half = np.array([l, w, h]) / 2.0
        c = np.array(self.center)
        return c - half, c + half

    def corners(self):
        h, w, l = self.extent
        return box_corners(OrientedBox3D(self.center, (h, w, l), 0.0))


@dataclass(frozen=True)
class RoI2D:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise ValueError("RoI2D bounds are inverted")

    @property
    def width(self):
        return self.u_max - self.u_min

    @property
    def height(self):
        return self.v_max - self.v_min

    def as_tuple(self):
        return (self.u_min, self.v_min, self.u_max, self.v_max)


# Corner order: bottom face counter-clockwise seen from above starting at the
# front-left corner (+l/2, +w/2), then the top face in the same order.
_CORNER_SIGNS = np.array([
    [1, 1, -1], [-1, 1, -1], [-1, -1, -1], [1, -1, -1],
    [1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1],
], dtype=np.float64)


def boxes_corners(boxes):
    """Corners for a ``(k, 7)`` array of ``(x, y, z, h, w, l, yaw)``; returns ``(k, 8, 3)``."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    h, w, l, yaw = boxes[:, 3], boxes[:, 4], boxes[:, 5], boxes[:, 6]
    half = np.stack([l, w, h], axis=1)[:, None, :] / 2.0
    local = _CORNER_SIGNS[None] * half
    c, s = np.cos(yaw)[:, None], np.sin(yaw)[:, None]
    x = c * local[..., 0] - s * local[..., 1]
    y = s * local[..., 0] + c * local[..., 1]
    out = np.stack([x, y, local[..., 2]], axis=-1)
    return out + boxes[:, None, :3]


def box_corners(box):
    """The 8 corners of ``box`` as an ``(8, 3)`` array (order documented above)."""
    return boxes_corners(box.to_array())[0]


def points_in_box(xyz, box, tol=1e-6):
    """Boolean mask of points inside an oriented box (surface included)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    h, w, l = box.size
    d = xyz - np.array(box.center)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return ((np.abs(lx) <= l / 2 + tol) & (np.abs(ly) <= w / 2 + tol)
            & (np.abs(d[:, 2]) <= h / 2 + tol))


def bev_polygon(box):
    """Counter-clockwise BEV footprint, ``(4, 2)``."""
    return box_corners(box)[:4, :2]


def polygon_area(poly):
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon(subject, clip):
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = output
        output = []
        prev = inp[-1]
        prev_side = side(prev)
        for cur in inp:
            cur_side = side(cur)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a, b):
    pa, pb = bev_polygon(a), bev_polygon(b)
    inter = clip_polygon(pa, pb)
    area = polygon_area(inter)
    return area if area > AREA_EPS else 0.0


def iou_3d(a, b):
    """Rotated 3D IoU of two :class:`OrientedBox3D`."""
    ka, kb = a.to_array().tolist(), b.to_array().tolist()
    if ka == kb:
        return 1.0
    # canonical argument order makes the result exactly symmetric
    if ka > kb:
        a, b = b, a
    ra = 0.5 * np.hypot(a.size[1], a.size[2])
    rb = 0.5 * np.hypot(b.size[1], b.size[2])
    if np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) >= ra + rb:
        return 0.0
    za0, za1 = a.center[2] - a.size[0] / 2, a.center[2] + a.size[0] / 2
    zb0, zb1 = b.center[2] - b.size[0] / 2, b.center[2] + b.size[0] / 2
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0:
        return 0.0
    area = bev_intersection_area(a, b)
    if area <= 0.0:
        return 0.0
    inter = area * dz
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou_3d_matrix(boxes_a, boxes_b):
    """Pairwise IoU between two sequences of boxes."""
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou_3d(a, b)
    return out


def project_boxes_to_roi2d(centers, extents, calib):
    """Vectorized 2D RoIs for axis-aligned 3D RoIs.

    ``centers`` is ``(k, 3)``, ``extents`` ``(k, 3)`` as ``(h, w, l)``.
    Returns ``(rects (k, 4), visible (k,))``; rows with no corner in front of
    the camera are all-zero with ``visible=False``.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    extents = np.asarray(extents, dtype=np.float64).reshape(-1, 3)
    k = len(centers)
    boxes = np.column_stack([centers, extents, np.zeros(k)])
    corners = boxes_corners(boxes).reshape(-1, 3)
    proj = project_points(corners, calib)
    uv = proj.uv.reshape(k, 8, 2)
    front = (proj.depth > 0).reshape(k, 8)
    visible = front.any(axis=1)
    big = np.inf
    u = np.where(front, uv[..., 0], big)
    v = np.where(front, uv[..., 1], big)
    u_min, v_min = u.min(axis=1), v.min(axis=1)
    u = np.where(front, uv[..., 0], -big)
    v = np.where(front, uv[..., 1], -big)
    u_max, v_max = u.max(axis=1), v.max(axis=1)
    W, H = calib.image_size
    rects = np.column_stack([
        np.clip(u_min, 0, W), np.clip(v_min, 0, H),
        np.clip(u_max, 0, W), np.clip(v_max, 0, H),
    ])
    rects[~visible] = 0.0
    return rects, visible


def project_box_to_roi2d(roi, calib):
    """Pixel bounding rectangle of the RoI's corners that lie in front of the camera."""
    rects, visible = project_boxes_to_roi2d(roi.center, roi.extent, calib)
    if not visible[0]:
        raise NoVisibleCorners("all RoI corners are behind the camera")
    return RoI2D(*(float(v) for v in rects[0]))


@dataclass(frozen=True)
class Detection:
    box: OrientedBox3D
    label: str = "Car"
    score: float = 1.0
    frame_id: str = field(default="")
    det_id: int = 0  # tie-break among equal scores

    def __post_init__(self):
        s = float(self.score)
        if not np.isfinite(s) or s < 0.0 or s > 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "score", s)
