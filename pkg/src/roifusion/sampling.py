"""Farthest point sampling in coordinate space, feature space, and both."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .validation import check_count, check_coords, check_features

D_FPS = "D-FPS"
F_FPS = "F-FPS"
FUSED = "Fused"


@dataclass(frozen=True)
class SampleSelection:
    indices: np.ndarray
    strategy: str

    def __len__(self):
        return len(self.indices)


def _resolve_seed(seed_index, n, random_state):
    if seed_index == "random":
        return int(check_random_state(random_state).randint(n))
    seed_index = int(seed_index)
    if not 0 <= seed_index < n:
        raise IndexError(f"seed_index {seed_index} out of range for {n} points")
    return seed_index


def _greedy_maxmin(X, count, seed, extra=None, extra_weight=0.0):
    """Greedy max-min selection over squared distances; ties go to the lowest index."""
    n = len(X)
    selected = np.empty(count, dtype=np.intp)
    min_d = np.full(n, np.inf)
    cur = seed
    for i in range(count):
        selected[i] = cur
        d = X - X[cur]
        dist = np.einsum("ij,ij->i", d, d)
        if extra is not None and extra_weight:
            g = extra - extra[cur]
            dist = dist + extra_weight * np.einsum("ij,ij->i", g, g)
        np.minimum(min_d, dist, out=min_d)
        min_d[cur] = -np.inf
        cur = int(np.argmax(min_d))
    return selected


def fps_euclidean(coords, count, seed_index=0, random_state=None):
    """D-FPS: farthest point sampling on 3D coordinates.

    Parameters
    ----------
    coords : array-like of shape (n, >=3)
        Only the first three columns are used.
    count : int
        Number of points to select, ``1 <= count <= n``.
    seed_index : int or "random"
        Index of the first selected point.
    """
    X = check_coords(coords, dims=3)[:, :3]
    count = check_count(count, len(X))
    seed = _resolve_seed(seed_index, len(X), random_state)
    return SampleSelection(_greedy_maxmin(X, count, seed), D_FPS)


def fps_feature(features, count, seed_index=0, coords=None, geo_weight=0.0,
                random_state=None):
    """F-FPS: farthest point sampling on feature vectors.

    With ``geo_weight > 0`` the distance becomes
    ``|f_i - f_j|^2 + geo_weight * |x_i - x_j|^2`` (needs ``coords``).
    """
    F = check_features(features)
    if F.shape[0] == 0:
        raise ValueError("no features to sample from")
    count = check_count(count, len(F))
    seed = _resolve_seed(seed_index, len(F), random_state)
    extra = None
    if geo_weight:
        if coords is None:
            raise ValueError("geo_weight needs coords")
        extra = check_coords(coords)[:, :3]
    return SampleSelection(_greedy_maxmin(F, count, seed, extra, geo_weight), F_FPS)


def fps_fused(coords, features, count, seed_index=0, geo_weight=0.0):
    """Half D-FPS, half F-FPS.

    ``ceil(count / 2)`` indices come from D-FPS and ``floor(count / 2)`` from
    F-FPS.  F-FPS candidates already chosen by D-FPS are skipped in favour of
    the next F-FPS candidate, so the result always holds ``count`` unique
    indices: the D-FPS block first, then the F-FPS block.
    """
    X = check_coords(coords)[:, :3]
    F = check_features(features, n_rows=len(X))
    count = check_count(count, len(X))
    n_geo = (count + 1) // 2
    n_feat = count - n_geo
    geo = fps_euclidean(X, n_geo, seed_index).indices
    if n_feat == 0:
        return SampleSelection(geo, FUSED)
    # at most n_geo collisions, so this many candidates always suffices
    n_cand = min(len(X), n_geo + n_feat)
    cand = fps_feature(F, n_cand, seed_index, coords=X, geo_weight=geo_weight).indices
    taken = set(geo.tolist())
    extra = [i for i in cand.tolist() if i not in taken][:n_feat]
    return SampleSelection(np.concatenate([geo, np.asarray(extra, dtype=np.intp)]), FUSED)


class FarthestPointSampler(TransformerMixin, BaseEstimator):
    """Select a farthest-point subset of rows.

    ``fit`` records the selected indices in ``indices_``; ``transform``
    returns the selected rows of ``X``.
    """

    def __init__(self, n_samples=256, strategy="d-fps", seed_index=0, geo_weight=0.0,
                 n_coord_columns=3):
        self.n_samples = n_samples
        self.strategy = strategy
        self.seed_index = seed_index
        self.geo_weight = geo_weight
        self.n_coord_columns = n_coord_columns

    def fit(self, X, y=None):
        X = check_coords(X, dims=self.n_coord_columns)
        k = min(self.n_samples, len(X))
        coords, feats = X[:, :self.n_coord_columns], X[:, self.n_coord_columns:]
        if self.strategy == "d-fps":
            sel = fps_euclidean(coords, k, self.seed_index)
        elif self.strategy == "f-fps":
            sel = fps_feature(feats if feats.shape[1] else coords, k, self.seed_index,
                              coords=coords, geo_weight=self.geo_weight)
        elif self.strategy == "fused":
            sel = fps_fused(coords, feats if feats.shape[1] else coords, k, self.seed_index,
                            geo_weight=self.geo_weight)
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        self.indices_ = sel.indices
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "indices_")
        X = np.asarray(X)
        return X[self.indices_]
