"""Global Moran's I, Getis-Ord Gi*, and LISA over gridded topic intensity.

Spatial units are cells of a regular lat/lon grid over the corpus bounding
box. Moran/LISA use zero-diagonal contiguity weights (row-standardized by
default); Gi* uses the self-inclusive variant. Significance comes from
seeded permutation tests: global Moran permutes the whole surface per
replicate (two-sided), LISA runs conditional permutations per unit
(one-sided), each drawn from its own derived seed so results are independent
of execution order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .corpus_io import Corpus

LISA_CLASSES = ("HH", "LL", "HL", "LH", "not_significant")


@dataclass
class GridSpec:
    """Regular lat/lon grid definition in degrees."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    cell_deg: float = 0.1

    def __post_init__(self):
        if self.cell_deg <= 0:
            raise ValueError("cell size must be positive")
        if self.lat_max <= self.lat_min or self.lon_max <= self.lon_min:
            raise ValueError("degenerate (zero-area) bounding box")

    @property
    def n_rows(self) -> int:
        return max(1, int(np.ceil((self.lat_max - self.lat_min) / self.cell_deg - 1e-9)))

    @property
    def n_cols(self) -> int:
        return max(1, int(np.ceil((self.lon_max - self.lon_min) / self.cell_deg - 1e-9)))

    @property
    def m(self) -> int:
        return self.n_rows * self.n_cols

    def cell_of(self, lat: float, lon: float) -> Optional[int]:
        """Cell id for a point, or None when it falls outside the box."""
        if not (self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max):
            return None
        r = min(int((lat - self.lat_min) / self.cell_deg), self.n_rows - 1)
        c = min(int((lon - self.lon_min) / self.cell_deg), self.n_cols - 1)
        return r * self.n_cols + c

    def cell_polygon(self, u: int) -> list:
        """Closed GeoJSON ring of cell u, (lon, lat) order."""
        r, c = divmod(u, self.n_cols)
        lat0 = self.lat_min + r * self.cell_deg
        lon0 = self.lon_min + c * self.cell_deg
        lat1 = min(lat0 + self.cell_deg, self.lat_max)
        lon1 = min(lon0 + self.cell_deg, self.lon_max)
        return [[lon0, lat0], [lon1, lat0], [lon1, lat1], [lon0, lat1], [lon0, lat0]]

    def centroids(self) -> np.ndarray:
        r = np.arange(self.n_rows)
        c = np.arange(self.n_cols)
        lat = self.lat_min + (r + 0.5) * self.cell_deg
        lon = self.lon_min + (c + 0.5) * self.cell_deg
        grid_lat, grid_lon = np.meshgrid(lat, lon, indexing="ij")
        return np.column_stack([grid_lat.ravel(), grid_lon.ravel()])


@dataclass
class SpatialUnitGrid:
    """A grid plus one value per cell (e.g. per-topic post counts)."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.m,):
            raise ValueError("value vector length must equal the cell count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cell values must be finite")


def grid_from_corpus(corpus: Corpus, cell_deg: float = 0.1) -> GridSpec:
    """Bounding-box grid covering all posts (degenerate boxes padded to one cell)."""
    coords = corpus.coords
    lat_min, lon_min = coords.min(axis=0)
    lat_max, lon_max = coords.max(axis=0)
    if lat_max - lat_min < cell_deg:
        pad = (cell_deg - (lat_max - lat_min)) / 2.0
        lat_min, lat_max = lat_min - pad, lat_max + pad
    if lon_max - lon_min < cell_deg:
        pad = (cell_deg - (lon_max - lon_min)) / 2.0
        lon_min, lon_max = lon_min + -pad, lon_max + pad
    return GridSpec(lat_min=lat_min, lat_max=lat_max,
                    lon_min=lon_min, lon_max=lon_max, cell_deg=cell_deg)


def bin_topic_counts(corpus: Corpus, assignment, topic: int, spec: GridSpec,
                     clip: bool = True):
    """Per-cell count of posts labeled `topic`; returns (grid, dropped_count)."""
    values = np.zeros(spec.m)
    dropped = 0
    for post, label in zip(corpus.posts, assignment):
        if int(label) != topic:
            continue
        cell = spec.cell_of(post.coord.lat, post.coord.lon)
        if cell is None:
            if not clip:
                raise ValueError(f"post {post.id!r} falls outside the grid")
            dropped += 1
            continue
        values[cell] += 1.0
    return SpatialUnitGrid(spec=spec, values=values), dropped


# --- weights ------------------------------------------------------------------


@dataclass
class SpatialWeights:
    """Sparse spatial weights: symmetric non-negative base matrix plus flags.

    Row standardization (applied by `effective()`) intentionally breaks
    symmetry; the symmetry requirement holds for the base weights. The
    diagonal must be zero unless `include_self` is set (Gi* variant).
    """

    m: int
    base: sp.csr_matrix
    row_standardized: bool = False
    include_self: bool = False

    def __post_init__(self):
        if self.base.shape != (self.m, self.m):
            raise ValueError("weight matrix shape must be (m, m)")
        if self.base.nnz and self.base.min() < 0:
            raise ValueError("weights must be non-negative")
        asym = abs(self.base - self.base.T)
        if asym.nnz and asym.max() > 1e-12:
            raise ValueError("base weights must be symmetric")
        diag = self.base.diagonal()
        if not self.include_self and np.any(diag != 0):
            raise ValueError("zero diagonal required unless include_self is set")

    def effective(self) -> sp.csr_matrix:
        if not self.row_standardized:
            return self.base
        row_sums = np.asarray(self.base.sum(axis=1)).ravel()
        inv = np.divide(1.0, row_sums, out=np.zeros_like(row_sums), where=row_sums > 0)
        return (sp.diags(inv) @ self.base).tocsr()


def _contiguity(n_rows: int, n_cols: int, offsets, include_self: bool) -> sp.csr_matrix:
    rows, cols = [], []
    for r in range(n_rows):
        for c in range(n_cols):
            u = r * n_cols + c
            if include_self:
                rows.append(u)
                cols.append(u)
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < n_rows and 0 <= cc < n_cols:
                    rows.append(u)
                    cols.append(rr * n_cols + cc)
    data = np.ones(len(rows))
    return sp.coo_matrix((data, (rows, cols)), shape=(n_rows * n_cols,) * 2).tocsr()


_QUEEN = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_ROOK = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def queen_weights(n_rows: int, n_cols: int, row_standardize: bool = True,
                  include_self: bool = False) -> SpatialWeights:
    base = _contiguity(n_rows, n_cols, _QUEEN, include_self)
    return SpatialWeights(m=n_rows * n_cols, base=base,
                          row_standardized=row_standardize, include_self=include_self)


def rook_weights(n_rows: int, n_cols: int, row_standardize: bool = False,
                 include_self: bool = False) -> SpatialWeights:
    base = _contiguity(n_rows, n_cols, _ROOK, include_self)
    return SpatialWeights(m=n_rows * n_cols, base=base,
                          row_standardized=row_standardize, include_self=include_self)


def gi_star_weights(n_rows: int, n_cols: int) -> SpatialWeights:
    """Binary queen contiguity including self, the conventional Gi* weights."""
    return queen_weights(n_rows, n_cols, row_standardize=False, include_self=True)


# --- statistics ----------------------------------------------------------------


def _check_variance(values: np.ndarray) -> None:
    if np.allclose(values, values[0]):
        raise ValueError("zero variance: constant surface")


def _moran_value(z: np.ndarray, w: sp.csr_matrix, s0: float) -> float:
    return float(len(z) / s0 * (z @ (w @ z)) / (z @ z))


def morans_i(values, weights: SpatialWeights, permutations: int = 999,
             seed: int = 0) -> dict:
    """Global Moran's I with a two-sided permutation pseudo p-value."""
    x = np.asarray(values, dtype=np.float64)
    _check_variance(x)
    w = weights.effective()
    s0 = float(w.sum())
    z = x - x.mean()
    i_obs = _moran_value(z, w, s0)
    count = 0
    for rep in range(permutations):
        rng = np.random.default_rng([seed, rep])
        zp = z[rng.permutation(len(z))]
        if abs(_moran_value(zp, w, s0)) >= abs(i_obs):
            count += 1
    p = (1.0 + count) / (1.0 + permutations)
    return {"i": i_obs, "p": p, "permutations": permutations}


def getis_ord_gi_star(values, weights: SpatialWeights) -> np.ndarray:
    """Per-unit Gi* z-scores (analytical standardization, self-inclusive weights).

    A constant surface has no deviation anywhere, so all z-scores are 0; the
    same convention applies per unit when its denominator vanishes.
    """
    x = np.asarray(values, dtype=np.float64)
    m = len(x)
    if m < 3:
        raise ValueError("Gi* needs at least 3 units")
    w = weights.effective()
    mean = x.mean()
    s = np.sqrt((x ** 2).mean() - mean ** 2)
    if s == 0.0:
        return np.zeros(m)
    w_sums = np.asarray(w.sum(axis=1)).ravel()
    w_sq_sums = np.asarray(w.multiply(w).sum(axis=1)).ravel()
    num = np.asarray(w @ x).ravel() - mean * w_sums
    inner = (m * w_sq_sums - w_sums ** 2) / (m - 1)
    den = s * np.sqrt(np.maximum(inner, 0.0))
    return np.divide(num, den, out=np.zeros(m), where=den > 0)


def lisa(values, weights: SpatialWeights, permutations: int = 999, seed: int = 0,
         alpha: float = 0.05) -> dict:
    """Local Moran I_u = z_u * lag_u with conditional permutation p-values.

    Each unit's permutation stream is seeded by (seed, unit), so replicates
    are independent of execution order. One-sided p: the tail matching the
    observed statistic's side of the permutation mean. Classification uses
    the signs of (z_u, lag_u) gated by p < alpha.
    """
    x = np.asarray(values, dtype=np.float64)
    _check_variance(x)
    m = len(x)
    w = weights.effective()
    z = x - x.mean()
    lag = np.asarray(w @ z).ravel()
    i_obs = z * lag
    quadrants = []
    for u in range(m):
        if z[u] > 0:
            quadrants.append("HH" if lag[u] > 0 else "HL")
        else:
            quadrants.append("LH" if lag[u] > 0 else "LL")
    p = np.ones(m)
    if permutations < 1:
        return {"i": i_obs, "p": p, "classes": ["not_significant"] * m,
                "quadrants": quadrants, "lag": lag}
    classes = []
    indptr, indices, data = w.indptr, w.indices, w.data
    for u in range(m):
        row_idx = indices[indptr[u]:indptr[u + 1]]
        row_w = data[indptr[u]:indptr[u + 1]]
        nbr_w = row_w[row_idx != u]
        deg = int(nbr_w.size)
        if deg == 0:
            classes.append("not_significant")
            continue
        others = np.delete(z, u)
        rng = np.random.default_rng([seed, u])
        pick = _distinct_draws(rng, others.size, permutations, deg)
        i_perm = z[u] * (others[pick] @ nbr_w)
        greater = (1.0 + np.count_nonzero(i_perm >= i_obs[u])) / (1.0 + permutations)
        lesser = (1.0 + np.count_nonzero(i_perm <= i_obs[u])) / (1.0 + permutations)
        p[u] = greater if i_obs[u] >= i_perm.mean() else lesser
        classes.append(quadrants[u] if p[u] < alpha else "not_significant")
    return {"i": i_obs, "p": p, "classes": classes, "quadrants": quadrants, "lag": lag}


def _distinct_draws(rng: np.random.Generator, pool: int, rows: int, k: int) -> np.ndarray:
    """(rows, k) indices into a pool, distinct within each row, uniform.

    Rejection sampling keeps the cost at O(rows * k) since k (neighbor count)
    is tiny compared to the pool.
    """
    if k > pool:
        raise ValueError("cannot draw more distinct values than the pool holds")
    pick = rng.integers(0, pool, size=(rows, k))
    while True:
        srt = np.sort(pick, axis=1)
        dup = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        if not dup.any():
            return pick
        pick[dup] = rng.integers(0, pool, size=(int(dup.sum()), k))


# --- exports --------------------------------------------------------------------


def topic_feature_collection(grid: SpatialUnitGrid, gi_z: np.ndarray,
                             lisa_result: dict) -> dict:
    """GeoJSON FeatureCollection: one polygon per cell with all statistics."""
    features = []
    for u in range(grid.spec.m):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [grid.spec.cell_polygon(u)]},
            "properties": {
                "cell": u,
                "count": float(grid.values[u]),
                "gi_z": float(gi_z[u]),
                "lisa_class": lisa_result["classes"][u],
                "lisa_p": float(lisa_result["p"][u]),
            },
        })
    return {"type": "FeatureCollection", "features": features}


def write_moran_summary_csv(path: str, rows: list) -> None:
    """Rows of (topic, morans_i, p_value)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic", "morans_i", "p_value"])
        for topic, i_val, p_val in rows:
            writer.writerow([topic, repr(float(i_val)), repr(float(p_val))])
