import numpy as np
import pytest

from roifusion.backbone import Backbone, SAConfig
from roifusion.data import gen_synthetic_scene, SyntheticConfig, synthetic_calib
from roifusion.exceptions import MalformedFile, NoForegroundPoints, ShapeMismatch
from roifusion.fusionkp import (KeypointSet, SegScores, decode_seg_scores, encode_seg_scores,
                                foreground_mask, fuse_keypoints, oracle_seg_scores,
                                pixel_guided_keypoints, point_guided_keypoints, read_seg_scores,
                                write_seg_scores)
from roifusion.geom import PointCloud, project_points
from oracles import brute_force_fps


def backbone(m1, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    return Backbone(1, [SAConfig(m1, 1.0, 8, (8,), "fused")], [(8,)], rng=rng)


def test_seg_scores_validation():
    with pytest.raises(ValueError):
        SegScores(np.full((2, 2, 2), 0.6))
    s = SegScores.background(4, 3)
    assert s.width == 4 and s.height == 3 and not s.foreground().any()


def test_seg_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.uniform(size=(5, 4, 3))
    seg = SegScores(raw / raw.sum(axis=2, keepdims=True), rng.normal(size=(5, 4, 2)))
    path = tmp_path / "x.rfsg"
    write_seg_scores(path, seg)
    back = read_seg_scores(path)
    assert np.allclose(back.scores, seg.scores, atol=1e-6)
    assert np.allclose(back.features, seg.features, atol=1e-6)
    data = path.read_bytes()
    assert data[:4] == b"RFSG"
    with pytest.raises(MalformedFile):
        decode_seg_scores(data[:20])
    assert decode_seg_scores(encode_seg_scores(SegScores.background(3, 2))).features is None


def test_point_guided_keeps_all_when_cloud_is_m1():
    rng = np.random.default_rng(1)
    cloud = PointCloud(np.column_stack([rng.normal(size=(16, 3)), rng.uniform(size=16)]))
    kp = point_guided_keypoints(cloud, backbone(16))
    assert sorted(kp.indices.tolist()) == list(range(16))


def test_point_guided_two_clusters():
    rng = np.random.default_rng(2)
    a = rng.normal(scale=0.1, size=(20, 3))
    b = rng.normal(scale=0.1, size=(20, 3)) + [50, 0, 0]
    xyz = np.vstack([a, b])
    cloud = PointCloud(np.column_stack([xyz, np.full(40, 0.5)]))
    bb = Backbone(1, [SAConfig(2, 1.0, 8, (8,), "d-fps")], [(8,)], rng=rng)
    kp = point_guided_keypoints(cloud, bb)
    assert kp.indices.tolist() == brute_force_fps(xyz, 2)
    assert (kp.indices < 20).sum() == 1
    again = point_guided_keypoints(cloud, bb)
    assert np.array_equal(kp.features, again.features)


def test_background_only_raises():
    calib = synthetic_calib()
    cloud = np.array([[10.0, 0.0, 0.0]])
    with pytest.raises(NoForegroundPoints):
        pixel_guided_keypoints(cloud, calib, SegScores.background(*calib.image_size), np.ones((1, 2)), 4)


def test_seg_size_must_match_image():
    calib = synthetic_calib()
    with pytest.raises(ShapeMismatch):
        foreground_mask(np.array([[10.0, 0, 0]]), calib, SegScores.background(10, 10))


def _scene():
    return gen_synthetic_scene(SyntheticConfig(), seed=3, n_objects=2)


def test_single_object_mask_selects_only_that_object():
    scene = _scene()
    xyz = scene.cloud.xyz
    seg = oracle_seg_scores(xyz[scene.object_ids == 0], scene.calib, dilation=0)
    feats = np.random.default_rng(0).normal(size=(len(xyz), 4))
    # in this scene no other point falls on the object's pixels
    mask, _ = foreground_mask(xyz, scene.calib, seg)
    assert np.array_equal(mask, scene.object_ids == 0)
    kp = pixel_guided_keypoints(scene.cloud, scene.calib, seg, feats, 16)
    assert np.all(scene.object_ids[kp.indices] == 0)
    # every chosen keypoint sits on a foreground pixel (direct invariant)
    proj = project_points(kp.coords, scene.calib)
    px = np.floor(proj.uv).astype(int)
    assert np.all(seg.foreground()[px[:, 0], px[:, 1]] >= 0.5)


def test_pixel_guided_matches_composed_oracle():
    scene = _scene()
    xyz = scene.cloud.xyz
    feats = np.random.default_rng(1).normal(size=(len(xyz), 3))
    kp = pixel_guided_keypoints(scene.cloud, scene.calib, scene.seg, feats, 8)
    # projection -> mask -> mapping -> F-FPS, spelled out
    T, M = scene.calib.T, scene.calib.M
    W, H = scene.calib.image_size
    fg = scene.seg.scores[:, :, 1:].max(axis=2)
    keep = []
    for i, p in enumerate(xyz):
        c = M @ (T @ np.r_[p, 1.0])
        if c[2] <= 0:
            continue
        u, v = c[0] / c[2], c[1] / c[2]
        if 0 <= u < W and 0 <= v < H and fg[int(np.floor(u)), int(np.floor(v))] >= 0.5:
            keep.append(i)
    ref = [keep[j] for j in brute_force_fps(feats[keep], 8)]
    assert kp.indices.tolist() == ref
    assert np.array_equal(kp.features, feats[ref])
    assert np.array_equal(kp.coords, xyz[ref])


def test_fuse_keypoints():
    rng = np.random.default_rng(0)
    pc = KeypointSet(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), np.arange(4))
    assert fuse_keypoints(pc, KeypointSet.empty(2)) is pc
    img = KeypointSet(rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), np.arange(10, 13))
    out = fuse_keypoints(pc, img)
    assert len(out) == 7 and out.indices.tolist() == [0, 1, 2, 3, 10, 11, 12]
    dup = KeypointSet(pc.coords[:2], pc.features[:2], pc.indices[:2])
    both = fuse_keypoints(pc, dup)
    assert sorted(both.indices.tolist()) == sorted(pc.indices.tolist() + [0, 1])
    with pytest.raises(ShapeMismatch):
        fuse_keypoints(pc, KeypointSet(np.zeros((1, 3)), np.zeros((1, 5))))


def test_keypoints_are_cloud_members():
    scene = _scene()
    bb = backbone(32)
    pc = point_guided_keypoints(scene.cloud, bb)
    feats = np.random.default_rng(0).normal(size=(len(scene.cloud), pc.width))
    img = pixel_guided_keypoints(scene.cloud, scene.calib, scene.seg, feats, 32)
    fused = fuse_keypoints(pc, img)
    assert len(fused) == 64
    assert np.array_equal(scene.cloud.xyz[fused.indices], fused.coords)
