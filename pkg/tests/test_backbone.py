import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import idw_hand
from roifusion.backbone import (Backbone, FeatureSet, FPLayer, SAConfig, SALayer, ball_query,
                                fp_interpolate, fp_layer, interpolation_weights, pad_groups, sa_layer)
from roifusion.exceptions import ShapeMismatch
from roifusion.micronet import Dense, grad_check, set_maxpool, squared_error


def identity_sa(width, cfg):
    layer = SALayer(width, cfg)
    d = layer.mlp.layers()[0]
    d.activation = None
    d.W[...] = np.eye(3 + width)
    d.b[...] = 0.0
    return layer


def test_ball_query_tiny_radius_single_point():
    cloud = np.random.default_rng(0).normal(size=(20, 3))
    g = ball_query(cloud[[4]], cloud, 1e-9, 8)
    assert g[0].tolist() == [4]


def test_ball_query_fallback_nearest():
    cloud = np.array([[10.0, 0, 0], [0, 10.0, 0], [3.0, 0, 0]])
    assert ball_query(np.zeros((1, 3)), cloud, 1.0, 4)[0].tolist() == [2]


def test_ball_query_matches_brute_force():
    rng = np.random.default_rng(1)
    cloud = rng.uniform(-1, 1, size=(200, 3))
    centers = cloud[:30]
    groups = ball_query(centers, cloud, 0.4, 16)
    for c, g in zip(centers, groups):
        d = np.sum((cloud - c) ** 2, axis=1)
        ref = sorted((d[i], i) for i in range(len(cloud)) if d[i] <= 0.16)[:16]
        assert g.tolist() == [i for _, i in ref]


def test_ball_query_ties_across_the_cut():
    cloud = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 0]])
    g = ball_query(np.zeros((1, 3)), cloud, 2.0, 3)
    assert g[0].tolist() == [4, 0, 1]


def test_pad_groups():
    out = pad_groups([np.array([3, 1]), np.array([2])], 3)
    assert out.tolist() == [[3, 1, 3], [2, 2, 2]]


def test_interpolation_hand_case():
    src = FeatureSet(np.array([[1.0, 0, 0], [-2.0, 0, 0]]), np.array([[0.0], [3.0]]))
    out = fp_interpolate(np.zeros((1, 3)), src, k=2)
    assert out[0, 0] == pytest.approx(0.6, abs=1e-12)


def test_interpolation_exact_match_passthrough():
    rng = np.random.default_rng(0)
    src = FeatureSet(rng.normal(size=(6, 3)), rng.normal(size=(6, 4)))
    assert np.array_equal(fp_interpolate(src.coords[[2]], src), src.features[[2]])


def test_interpolation_equidistant_mean():
    src = FeatureSet(np.array([[1.0, 0, 0], [-1.0, 0, 0]]), np.array([[2.0, 4.0], [6.0, 0.0]]))
    assert np.allclose(fp_interpolate(np.zeros((1, 3)), src, k=2), [[4.0, 2.0]])


@given(st.integers(0, 2000))
def test_interpolation_convex(seed):
    rng = np.random.default_rng(seed)
    src = FeatureSet(rng.normal(size=(10, 3)), rng.normal(size=(10, 3)))
    q = rng.normal(size=(7, 3))
    idx, w = interpolation_weights(q, src.coords)
    assert np.all(w >= 0)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
    out = fp_interpolate(q, src)
    nb = src.features[idx]
    assert np.all(out >= nb.min(axis=1) - 1e-12) and np.all(out <= nb.max(axis=1) + 1e-12)
    for qi, row in zip(q, out):
        assert np.allclose(row, idw_hand(qi, src.coords, src.features), atol=1e-10)


def test_sa_degenerate_global_max():
    rng = np.random.default_rng(0)
    fs = FeatureSet(rng.normal(size=(8, 3)), rng.normal(size=(8, 2)))
    cfg = SAConfig(8, 1e6, 8, (5,), "d-fps")
    layer = identity_sa(2, cfg)
    out = layer.forward(fs)[0]
    # feature columns (after the 3 relative-coordinate columns) are the global max
    assert np.allclose(out.features[:, 3:], np.tile(fs.features.max(axis=0), (8, 1)))


def test_sa_single_point():
    fs = FeatureSet(np.array([[1.0, 2.0, 3.0]]), np.array([[0.7]]))
    layer = SALayer(1, SAConfig(1, 0.5, 4, (3,)), np.random.default_rng(0))
    out = layer.forward(fs)[0]
    ref = layer.mlp.forward(np.array([[0.0, 0.0, 0.0, 0.7]]))[0]
    assert np.allclose(out.features, ref) and np.array_equal(out.coords, fs.coords)


def test_sa_matches_composed_oracle():
    rng = np.random.default_rng(3)
    fs = FeatureSet(rng.uniform(-1, 1, size=(32, 3)), rng.normal(size=(32, 2)))
    cfg = SAConfig(8, 0.6, 6, (4, 5))
    layer = SALayer(2, cfg, rng)
    out = layer.forward(fs)[0]
    from roifusion.sampling import fps_euclidean
    idx = fps_euclidean(fs.coords, 8).indices
    groups = ball_query(fs.coords[idx], fs.coords, 0.6, 6)
    for row, (i, g) in enumerate(zip(idx, groups)):
        g = np.r_[g, np.full(6 - len(g), g[0])]
        x = np.column_stack([fs.coords[g] - fs.coords[i], fs.features[g]])
        h = x
        for d in layer.mlp.layers():
            h = d.forward(h)[0]
        assert np.allclose(out.features[row], set_maxpool(h)[0])
    assert np.array_equal(sa_layer(fs, cfg, layer).features, out.features)


def test_sa_permutation_invariance():
    rng = np.random.default_rng(5)
    coords, feats = rng.uniform(-1, 1, size=(30, 3)), rng.normal(size=(30, 2))
    layer = SALayer(2, SAConfig(6, 0.7, 30, (4,)), rng)
    perm = rng.permutation(30)
    inv = np.argsort(perm)
    fs = FeatureSet(coords, feats)
    fsp = FeatureSet(coords[perm], feats[perm])
    # pin the sampled centers to the same physical points
    idx, _ = layer.plan(fs)
    a = layer.forward(fs, layer.plan(fs, idx))[0]
    b = layer.forward(fsp, layer.plan(fsp, inv[idx]))[0]
    assert np.allclose(a.features, b.features)


def test_fp_identity_skip_concat():
    rng = np.random.default_rng(0)
    fs = FeatureSet(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)))
    layer = FPLayer(2, 2, (4,))
    d = layer.mlp.layers()[0]
    d.activation, d.W[...], d.b[...] = None, np.eye(4), 0.0
    out = layer.forward(fs, fs)[0]
    assert np.allclose(out.features, np.hstack([fs.features, fs.features]))


def test_fp_single_source_broadcast():
    rng = np.random.default_rng(0)
    q = FeatureSet(rng.normal(size=(6, 3)), rng.normal(size=(6, 1)))
    src = FeatureSet(np.zeros((1, 3)), np.array([[2.5, -1.0]]))
    layer = FPLayer(2, 1, (3,), rng=rng)
    ref = layer.mlp.forward(np.hstack([np.tile(src.features, (6, 1)), q.features]))[0]
    assert np.allclose(fp_layer(q, src, (3,), layer).features, ref)


def test_fp_matches_composed_oracle():
    rng = np.random.default_rng(1)
    q = FeatureSet(rng.normal(size=(12, 3)), rng.normal(size=(12, 2)))
    src = FeatureSet(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    layer = FPLayer(3, 2, (4,), rng=rng)
    interp = np.array([idw_hand(c, src.coords, src.features) for c in q.coords])
    ref = layer.mlp.layers()[0].forward(np.hstack([interp, q.features]))[0]
    assert np.allclose(layer.forward(q, src)[0].features, ref)
    with pytest.raises(ShapeMismatch):
        layer.forward(src, q)


def small_backbone(rng, samplers=("d-fps", "fused")):
    cfgs = [SAConfig(16, 0.6, 8, (6, 8), samplers[0]), SAConfig(4, 1.2, 8, (8,), samplers[1])]
    return Backbone(1, cfgs, [(8,), (6,)], rng=rng)


def test_backbone_round_trip_restores_point_count():
    rng = np.random.default_rng(0)
    xyz = rng.uniform(-1, 1, size=(64, 3))
    bb = small_backbone(rng)
    out, _ = bb.forward(xyz, rng.uniform(size=(64, 1)))
    assert out.point_features.features.shape == (64, 6)
    assert out.keypoints.coords.shape == (4, 3)
    assert np.array_equal(xyz[out.keypoint_indices], out.keypoints.coords)


def test_backbone_static_plan_and_row_subset_agree():
    rng = np.random.default_rng(1)
    xyz, f = rng.uniform(-1, 1, size=(64, 3)), rng.uniform(size=(64, 1))
    bb = small_backbone(rng)
    full, _ = bb.forward(xyz, f)
    planned, _ = bb.forward(xyz, f, bb.static_plan(xyz, f))
    rows = np.array([3, 10, 40])
    sub, _ = bb.forward(xyz, f, bb.static_plan(xyz, f), point_rows=rows)
    assert np.allclose(full.point_features.features, planned.point_features.features)
    assert np.allclose(sub.point_features.features, full.point_features.features[rows])


class _BackboneNet:
    """Adapter exposing a backbone with a fixed cloud under the grad-check protocol."""

    def __init__(self, bb, xyz, rows):
        self.bb, self.xyz, self.rows = bb, xyz, rows

    def forward(self, x):
        out, cache = self.bb.forward(self.xyz, x, point_rows=self.rows)
        return np.concatenate([out.keypoints.features.ravel(), out.point_features.features.ravel()]), \
            (cache, out.keypoints.features.shape)

    def backward(self, dy, cache):
        cache, kshape = cache
        n = int(np.prod(kshape))
        return self.bb.backward(dy[:n].reshape(kshape), dy[n:].reshape(len(self.rows), -1), cache)

    def parameters(self):
        return self.bb.parameters()

    def gradients(self):
        return self.bb.gradients()

    def zero_grad(self):
        self.bb.zero_grad()


def test_backbone_gradients_fd():
    rng = np.random.default_rng(2)
    xyz, f = rng.uniform(-1, 1, size=(40, 3)), rng.uniform(size=(40, 1))
    bb = small_backbone(rng, ("d-fps", "d-fps"))
    net = _BackboneNet(bb, xyz, np.arange(0, 40, 3))
    target = rng.normal(size=net.forward(f)[0].shape)
    assert grad_check(net, f, lambda y: squared_error(y, target), max_entries=6) < 1e-4
    # input gradient
    y, cache = net.forward(f)
    bb.zero_grad()
    dx = net.backward(y - target, cache)
    from oracles import finite_difference
    num = finite_difference(lambda x: squared_error(net.forward(x)[0], target)[0], f)
    assert np.allclose(dx, num, atol=1e-6)
