"""Sparse nearest-neighbor Gaussian process machinery.

Builds the ordered site list, per-site neighbor sets among predecessors,
and the conditional factors (regression weights ``b`` and conditional
variances ``f``) that define the sparse GP joint density. Also provides
the conditional factors used to krige process values at new locations.

Coordinates must be planar (pre-projected); distances are Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import math
import numpy as np
from numba import njit

from .errors import DataError, NumericalError

__all__ = [
    "CovarianceParams",
    "CoordinateSet",
    "NngpStructure",
    "exp_cov",
    "build_neighbor_sets",
    "fill_conditional_factors",
    "nngp_log_density",
    "predict_factors",
    "prediction_neighbors",
]

DEFAULT_NUM_NEIGHBORS = 15


@dataclass(frozen=True)
class CovarianceParams:
    """Exponential covariance parameters: variance and decay."""

    sigma_sq: float
    phi: float

    def __post_init__(self):
        if not (self.sigma_sq > 0.0 and math.isfinite(self.sigma_sq)):
            raise ValueError(f"sigma_sq must be positive, got {self.sigma_sq}")
        if not (self.phi > 0.0 and math.isfinite(self.phi)):
            raise ValueError(f"phi must be positive, got {self.phi}")


def exp_cov(distance, params: CovarianceParams):
    """Exponential covariance sigma_sq * exp(-phi * distance)."""
    d = np.asarray(distance, dtype=np.float64)
    if np.any(d < 0.0) or np.any(~np.isfinite(d)):
        raise ValueError("distances must be finite and non-negative")
    out = params.sigma_sq * np.exp(-params.phi * d)
    return float(out) if out.ndim == 0 else out


class CoordinateSet:
    """Planar site coordinates plus the fitting order of the sparse GP.

    Sites are ordered ascending by the horizontal coordinate, with ties
    broken by the vertical coordinate and then by original index. Exact
    duplicate coordinates are rejected unless a jitter epsilon is given,
    in which case duplicates after the first occurrence are perturbed
    uniformly on (-eps, eps) with a deterministic generator.
    """

    def __init__(self, coords, duplicate_jitter: float | None = None):
        coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DataError(f"coords must have shape (J, 2), got {coords.shape}")
        if coords.shape[0] < 1:
            raise DataError("at least one site is required")
        if not np.all(np.isfinite(coords)):
            bad = np.where(~np.isfinite(coords).all(axis=1))[0]
            raise DataError(f"non-finite coordinates at site rows {bad.tolist()[:10]}")

        dup_rows = _duplicate_rows(coords)
        if dup_rows.size:
            if duplicate_jitter is None:
                raise DataError(
                    "duplicate coordinates at site rows "
                    f"{dup_rows.tolist()[:10]}; pass a jitter epsilon to perturb them"
                )
            if duplicate_jitter <= 0:
                raise DataError("duplicate_jitter must be positive")
            gen = np.random.Generator(np.random.Philox(key=0xC0C0))
            coords = coords.copy()
            coords[dup_rows] += gen.uniform(
                -duplicate_jitter, duplicate_jitter, size=(dup_rows.size, 2)
            )
            if _duplicate_rows(coords).size:
                raise DataError("coordinates still duplicated after jitter")

        self.coords = coords
        self.n_sites = coords.shape[0]
        # order[k] = original index of the k-th site in the fitting order
        self.order = np.lexsort((np.arange(self.n_sites), coords[:, 1], coords[:, 0]))
        self.inverse = np.empty(self.n_sites, dtype=np.int64)
        self.inverse[self.order] = np.arange(self.n_sites)
        self.ordered_coords = coords[self.order]

    def __len__(self):
        return self.n_sites


def _duplicate_rows(coords: np.ndarray) -> np.ndarray:
    """Row indices of coordinates that repeat an earlier row."""
    _, first = np.unique(coords, axis=0, return_index=True)
    mask = np.ones(coords.shape[0], dtype=bool)
    mask[first] = False
    return np.where(mask)[0]


@dataclass(frozen=True)
class NngpStructure:
    """Neighbor topology and, once filled, the conditional factors.

    All site indices are positions in the fitting order. ``nbr_idx`` is
    padded with -1 beyond ``nbr_count``. The child arrays index, for each
    site, the later sites whose neighbor sets contain it (CSR layout);
    they are what the sequential Gibbs update of the process needs.
    """

    m: int
    coords: CoordinateSet
    nbr_idx: np.ndarray  # (J, m) int64
    nbr_count: np.ndarray  # (J,) int64
    nbr_dist: np.ndarray  # (J, m)
    nbr_nbr_dist: np.ndarray  # (J, m, m)
    child_ptr: np.ndarray  # (J + 1,) int64
    child_site: np.ndarray  # (nnz,) int64
    child_pos: np.ndarray  # (nnz,) int64
    b: np.ndarray | None = None  # (J, m), zero-padded
    f: np.ndarray | None = None  # (J,)
    params: CovarianceParams | None = None

    @property
    def n_sites(self) -> int:
        return self.coords.n_sites

    @property
    def filled(self) -> bool:
        return self.b is not None


def build_neighbor_sets(coords: CoordinateSet, m: int) -> NngpStructure:
    """Neighbor sets of at most ``m`` nearest predecessors per ordered site.

    Ties in distance resolve to the lower ordered index, so the topology
    is deterministic. ``m >= n_sites`` clamps each set to all predecessors.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    pts = coords.ordered_coords
    J = coords.n_sites
    m_eff = min(m, max(J - 1, 1))

    nbr_idx = np.full((J, m_eff), -1, dtype=np.int64)
    nbr_count = np.zeros(J, dtype=np.int64)
    nbr_dist = np.zeros((J, m_eff))
    nbr_nbr_dist = np.zeros((J, m_eff, m_eff))

    for j in range(1, J):
        d = np.hypot(pts[:j, 0] - pts[j, 0], pts[:j, 1] - pts[j, 1])
        k = min(j, m_eff)
        chosen = np.lexsort((np.arange(j), d))[:k]
        nbr_idx[j, :k] = chosen
        nbr_count[j] = k
        nbr_dist[j, :k] = d[chosen]
        sub = pts[chosen]
        diff = sub[:, None, :] - sub[None, :, :]
        nbr_nbr_dist[j, :k, :k] = np.hypot(diff[..., 0], diff[..., 1])

    child_ptr, child_site, child_pos = _build_children(nbr_idx, nbr_count)
    return NngpStructure(
        m=m_eff,
        coords=coords,
        nbr_idx=nbr_idx,
        nbr_count=nbr_count,
        nbr_dist=nbr_dist,
        nbr_nbr_dist=nbr_nbr_dist,
        child_ptr=child_ptr,
        child_site=child_site,
        child_pos=child_pos,
    )


def _build_children(nbr_idx, nbr_count):
    J = nbr_idx.shape[0]
    counts = np.zeros(J, dtype=np.int64)
    for j in range(J):
        for pos in range(nbr_count[j]):
            counts[nbr_idx[j, pos]] += 1
    child_ptr = np.zeros(J + 1, dtype=np.int64)
    np.cumsum(counts, out=child_ptr[1:])
    child_site = np.empty(child_ptr[-1], dtype=np.int64)
    child_pos = np.empty(child_ptr[-1], dtype=np.int64)
    cursor = child_ptr[:-1].copy()
    for j in range(J):
        for pos in range(nbr_count[j]):
            parent = nbr_idx[j, pos]
            child_site[cursor[parent]] = j
            child_pos[cursor[parent]] = pos
            cursor[parent] += 1
    return child_ptr, child_site, child_pos


@njit(cache=True)
def _chol_solve_small(A, rhs, out):
    """In-place Cholesky solve for a small SPD system; returns False if
    a pivot is non-positive."""
    k = A.shape[0]
    for i in range(k):
        for j in range(i + 1):
            acc = A[i, j]
            for t in range(j):
                acc -= A[i, t] * A[j, t]
            if i == j:
                if acc <= 0.0:
                    return False
                A[i, i] = math.sqrt(acc)
            else:
                A[i, j] = acc / A[j, j]
    # forward then backward substitution on the lower factor
    for i in range(k):
        acc = rhs[i]
        for t in range(i):
            acc -= A[i, t] * out[t]
        out[i] = acc / A[i, i]
    for i in range(k - 1, -1, -1):
        acc = out[i]
        for t in range(i + 1, k):
            acc -= A[t, i] * out[t]
        out[i] = acc / A[i, i]
    return True


@njit(cache=True)
def _fill_bf(nbr_count, nbr_dist, nbr_nbr_dist, sigma_sq, phi, b_out, f_out):
    """Conditional factors for every site; returns -1 or the ordered index
    of the first site whose neighbor covariance is singular."""
    J = nbr_count.shape[0]
    mmax = nbr_dist.shape[1]
    A = np.empty((mmax, mmax))
    rhs = np.empty(mmax)
    sol = np.empty(mmax)
    for j in range(J):
        k = nbr_count[j]
        if k == 0:
            f_out[j] = sigma_sq
            continue
        for a in range(k):
            rhs[a] = sigma_sq * math.exp(-phi * nbr_dist[j, a])
            for c in range(a + 1):
                A[a, c] = sigma_sq * math.exp(-phi * nbr_nbr_dist[j, a, c])
        ok = _chol_solve_small(A[:k, :k], rhs[:k], sol[:k])
        if not ok:
            return j
        acc = sigma_sq
        for a in range(k):
            b_out[j, a] = sol[a]
            acc -= sol[a] * sigma_sq * math.exp(-phi * nbr_dist[j, a])
        if acc <= 0.0:
            acc = 1e-12 * sigma_sq
        f_out[j] = acc
    return -1


def fill_conditional_factors(
    structure: NngpStructure, params: CovarianceParams
) -> NngpStructure:
    """Return a copy of ``structure`` with factors computed under ``params``."""
    b = np.zeros((structure.n_sites, structure.m))
    f = np.empty(structure.n_sites)
    bad = _fill_bf(
        structure.nbr_count,
        structure.nbr_dist,
        structure.nbr_nbr_dist,
        params.sigma_sq,
        params.phi,
        b,
        f,
    )
    if bad >= 0:
        orig = structure.coords.order[bad]
        raise NumericalError(
            f"singular neighbor covariance at ordered site {bad} "
            f"(original site {orig}); check for near-duplicate coordinates"
        )
    return replace(structure, b=b, f=f, params=params)


@njit(cache=True)
def _log_density_ordered(w, nbr_idx, nbr_count, b, f):
    total = 0.0
    for j in range(w.shape[0]):
        mean = 0.0
        for a in range(nbr_count[j]):
            mean += b[j, a] * w[nbr_idx[j, a]]
        r = w[j] - mean
        total += -0.5 * (math.log(2.0 * math.pi * f[j]) + r * r / f[j])
    return total


@njit(cache=True)
def _resid_quad_ordered(w, nbr_idx, nbr_count, b, f):
    """Sum of squared conditional residuals scaled by 1/f."""
    total = 0.0
    for j in range(w.shape[0]):
        mean = 0.0
        for a in range(nbr_count[j]):
            mean += b[j, a] * w[nbr_idx[j, a]]
        r = w[j] - mean
        total += r * r / f[j]
    return total


def nngp_log_density(w: np.ndarray, structure: NngpStructure) -> float:
    """Joint log density of the sparse GP at ``w`` (original site order)."""
    if not structure.filled:
        raise ValueError("structure factors are unfilled; call fill_conditional_factors")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (structure.n_sites,):
        raise ValueError(
            f"w must have length {structure.n_sites}, got shape {w.shape}"
        )
    w_ord = np.ascontiguousarray(w[structure.coords.order])
    return float(
        _log_density_ordered(
            w_ord, structure.nbr_idx, structure.nbr_count, structure.b, structure.f
        )
    )


def prediction_neighbors(
    new_coords: np.ndarray, observed: CoordinateSet, m: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest observed sites for each new location, without ordering
    restriction. Returns (neighbor original indices (n0, k), distances to
    the site (n0, k), pairwise neighbor distances (n0, k, k))."""
    new_coords = np.atleast_2d(np.asarray(new_coords, dtype=np.float64))
    if new_coords.shape[1] != 2:
        raise ValueError("new coordinates must have shape (n0, 2)")
    if not np.all(np.isfinite(new_coords)):
        raise ValueError("new coordinates must be finite")
    k = min(m, observed.n_sites)
    n0 = new_coords.shape[0]
    obs = observed.coords
    nbr = np.empty((n0, k), dtype=np.int64)
    dist = np.empty((n0, k))
    nbr_nbr = np.empty((n0, k, k))
    for i in range(n0):
        d = np.hypot(obs[:, 0] - new_coords[i, 0], obs[:, 1] - new_coords[i, 1])
        chosen = np.lexsort((np.arange(observed.n_sites), d))[:k]
        nbr[i] = chosen
        dist[i] = d[chosen]
        sub = obs[chosen]
        diff = sub[:, None, :] - sub[None, :, :]
        nbr_nbr[i] = np.hypot(diff[..., 0], diff[..., 1])
    return nbr, dist, nbr_nbr


@njit(cache=True)
def _predict_bf(dist, nbr_nbr, sigma_sq, phi, b_out, f_out):
    n0, k = dist.shape
    A = np.empty((k, k))
    rhs = np.empty(k)
    sol = np.empty(k)
    for i in range(n0):
        for a in range(k):
            rhs[a] = sigma_sq * math.exp(-phi * dist[i, a])
            for c in range(a + 1):
                A[a, c] = sigma_sq * math.exp(-phi * nbr_nbr[i, a, c])
        ok = _chol_solve_small(A, rhs, sol)
        if not ok:
            return i
        acc = sigma_sq
        for a in range(k):
            b_out[i, a] = sol[a]
            acc -= sol[a] * sigma_sq * math.exp(-phi * dist[i, a])
        f_out[i] = acc if acc > 0.0 else 0.0
    return -1


def predict_factors(
    s0,
    observed: CoordinateSet,
    params: CovarianceParams,
    m: int,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Kriging factors (b0, f0, neighbor indices) for one new location.

    Neighbors are the ``m`` nearest observed sites; b0 and f0 follow the
    same conditional formulas as the fitted factors, evaluated at s0.
    """
    s0 = np.asarray(s0, dtype=np.float64).reshape(1, 2)
    nbr, dist, nbr_nbr = prediction_neighbors(s0, observed, m)
    b0 = np.zeros((1, nbr.shape[1]))
    f0 = np.empty(1)
    bad = _predict_bf(dist, nbr_nbr, params.sigma_sq, params.phi, b0, f0)
    if bad >= 0:
        raise NumericalError(
            f"singular neighbor covariance predicting at {s0.ravel().tolist()}; "
            f"neighbors {nbr[0].tolist()}"
        )
    return b0[0], float(f0[0]), nbr[0]
