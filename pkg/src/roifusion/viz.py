"""PLY point clouds colored by segmentation mask, and SVG bird's-eye plots."""

import re

import numpy as np

from .geom import boxes_corners

FG_COLOR = (230, 40, 40)
BG_COLOR = (150, 150, 150)
GT_STROKE = "green"
DET_STROKE = "red"


def write_ply(path, xyz, mask=None):
    """ASCII PLY; points with ``mask`` set are drawn in the foreground color."""
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]
    mask = np.zeros(len(xyz), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(xyz)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
        for p, m in zip(xyz, mask):
            r, g, b = FG_COLOR if m else BG_COLOR
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {r} {g} {b}\n")


def read_ply(path):
    """Read back what :func:`write_ply` wrote: ``(xyz, rgb)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    start = lines.index("end_header") + 1
    rows = np.array([[float(v) for v in line.split()] for line in lines[start:]]).reshape(-1, 6)
    return rows[:, :3], rows[:, 3:].astype(int)


def bev_polygon_points(box_array):
    """Bottom-face corners ``(4, 2)`` of a ``(x, y, z, h, w, l, yaw)`` box."""
    return boxes_corners(np.asarray(box_array, dtype=np.float64).reshape(1, 7))[0, :4, :2]


def _polygon(pts, stroke, cls):
    coords = " ".join(f"{float(x)!r},{float(y)!r}" for x, y in pts)
    return (f'<polygon class="{cls}" points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="0.1"/>')


def bev_svg(gt_boxes, det_boxes, xyz=None, scale=10.0, margin=2.0):
    """SVG text of a bird's-eye view.

    Polygons carry raw LiDAR-frame coordinates in meters; a group transform
    maps them to the canvas (x right, y up).
    """
    gt = [np.asarray(b, dtype=np.float64) for b in gt_boxes]
    det = [np.asarray(b, dtype=np.float64) for b in det_boxes]
    pts = [bev_polygon_points(b) for b in gt + det]
    if xyz is not None and len(xyz):
        pts.append(np.asarray(xyz)[:, :2])
    allp = np.vstack(pts) if pts else np.zeros((1, 2))
    lo = allp.min(axis=0) - margin
    hi = allp.max(axis=0) + margin
    width = (hi[0] - lo[0]) * scale
    height = (hi[1] - lo[1]) * scale
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" height="{height:.1f}">',
           f'<g transform="scale({scale},{-scale}) translate({-float(lo[0])!r},{-float(hi[1])!r})">']
    if xyz is not None:
        for x, y in np.asarray(xyz)[:, :2]:
            out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="0.05" fill="#999"/>')
    out += [_polygon(bev_polygon_points(b), GT_STROKE, "gt") for b in gt]
    out += [_polygon(bev_polygon_points(b), DET_STROKE, "det") for b in det]
    out.append("</g>\n</svg>\n")
    return "\n".join(out)


def write_bev_svg(path, gt_boxes, det_boxes, xyz=None, scale=10.0):
    with open(path, "w") as fh:
        fh.write(bev_svg(gt_boxes, det_boxes, xyz, scale))


def parse_svg_polygons(text):
    """``{"gt": [(4, 2) arrays], "det": [...]}`` from :func:`bev_svg` output."""
    out = {"gt": [], "det": []}
    for cls, pts in re.findall(r'<polygon class="(\w+)" points="([^"]+)"', text):
        out[cls].append(np.array([[float(v) for v in p.split(",")] for p in pts.split()]))
    return out
