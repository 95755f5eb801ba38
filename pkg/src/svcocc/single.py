"""Single-species occupancy model with spatially-varying coefficients.

The latent occupancy state follows a Bernoulli-logit regression whose
coefficients optionally carry sparse-GP spatial adjustments; detection is
a second Bernoulli-logit layer over replicate surveys, conditional on
occupancy and with no false positives. Both logit likelihoods are
augmented with Polya-Gamma variables so every update except the spatial
decay is a closed-form Gibbs draw; decay parameters use an adaptive
random-walk Metropolis step on a transformed scale.

Update order within one iteration is fixed: omega -> beta -> alpha ->
w -> theta -> z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.special import expit

from . import __version__
from .archive import PosteriorArchive
from .errors import DataError
from .kernels import RngStream, mvn_conditional_draw, pg_draw_array
from .nngp import (
    DEFAULT_NUM_NEIGHBORS,
    CoordinateSet,
    CovarianceParams,
    NngpStructure,
    _fill_bf,
    _log_density_ordered,
    _resid_quad_ordered,
    build_neighbor_sets,
    fill_conditional_factors,
)

__all__ = [
    "OccupancyDataset",
    "SvcFlags",
    "GaussianPrior",
    "InverseGammaPrior",
    "UniformPrior",
    "PriorSpec",
    "ResolvedPriors",
    "McmcControls",
    "SingleState",
    "init_state",
    "update_omega",
    "update_beta",
    "update_alpha",
    "update_w",
    "update_theta",
    "update_z",
    "fit_single",
    "resolve_priors",
    "pairwise_distance_range",
]

DEFAULT_COEF_VARIANCE = 2.72
DEFAULT_SIGMA_SQ_SHAPE = 2.0
DEFAULT_SIGMA_SQ_SCALE = 1.0
ADAPT_BATCH_LENGTH = 25
TARGET_ACCEPTANCE = 0.43


class OccupancyDataset:
    """Detection histories with ragged replicates plus design matrices.

    ``y`` is sites x replicates with entries 0, 1, or NaN for replicates
    that were not surveyed; every site needs at least one surveyed
    replicate. ``X`` is the occurrence design (first column all ones);
    ``V`` the detection design per site-replicate (defaults to an
    intercept-only design).
    """

    def __init__(
        self,
        coords,
        y,
        X,
        V=None,
        covariate_names=None,
        detection_names=None,
        duplicate_jitter=None,
        site_ids=None,
    ):
        if not isinstance(coords, CoordinateSet):
            coords = CoordinateSet(coords, duplicate_jitter=duplicate_jitter)
        self.coords = coords
        J = coords.n_sites

        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != J:
            raise DataError(f"y has {y.shape[0]} site rows, expected {J}")
        observed = ~np.isnan(y)
        vals = y[observed]
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise DataError("detections must be coded 0, 1, or NaN for missing")
        if not np.all(observed.any(axis=1)):
            bad = np.where(~observed.any(axis=1))[0]
            raise DataError(f"sites with no surveyed replicate: {bad.tolist()[:10]}")

        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != J or X.shape[1] < 1:
            raise DataError(f"X must be (J, H) with H >= 1, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("occurrence design contains non-finite values")
        if not np.allclose(X[:, 0], 1.0):
            raise DataError("first occurrence design column must be the intercept")

        K = y.shape[1]
        if V is None:
            V = np.ones((J, K, 1))
        V = np.asarray(V, dtype=np.float64)
        if V.shape[:2] != (J, K):
            raise DataError(f"V must be (J, K, P) = ({J}, {K}, P), got {V.shape}")
        if not np.all(np.isfinite(V[observed])):
            raise DataError("detection design non-finite at surveyed replicates")
        V = np.where(observed[:, :, None], V, 0.0)

        self.y = np.nan_to_num(y, nan=0.0).astype(np.int8)
        self.obs_mask = observed
        self.X = X
        self.V = V
        self.n_sites = J
        self.n_replicates = K
        self.n_occ_covs = X.shape[1]
        self.n_det_covs = V.shape[2]
        self.ever_detected = (self.y == 1).any(axis=1)
        self.covariate_names = list(
            covariate_names
            if covariate_names is not None
            else ["intercept"] + [f"x{h}" for h in range(1, X.shape[1])]
        )
        self.detection_names = list(
            detection_names
            if detection_names is not None
            else ["intercept"] + [f"v{p}" for p in range(1, V.shape[2])]
        )
        if len(self.covariate_names) != X.shape[1]:
            raise DataError("covariate_names length must match X columns")
        if len(self.detection_names) != V.shape[2]:
            raise DataError("detection_names length must match V pages")
        self.site_ids = (
            [str(s) for s in site_ids]
            if site_ids is not None
            else [str(i) for i in range(J)]
        )
        if len(self.site_ids) != J:
            raise DataError("site_ids length must match site count")


@dataclass(frozen=True)
class SvcFlags:
    """Indicator per occurrence covariate of a spatially-varying effect."""

    delta: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.int8)
        if d.ndim != 1 or not np.all((d == 0) | (d == 1)):
            raise ValueError("delta must be a 1-d vector of 0/1 indicators")
        object.__setattr__(self, "delta", d)

    @property
    def n_svc(self) -> int:
        return int(self.delta.sum())

    @property
    def svc_indices(self) -> np.ndarray:
        return np.where(self.delta == 1)[0]


@dataclass(frozen=True)
class GaussianPrior:
    mean: float = 0.0
    var: float = DEFAULT_COEF_VARIANCE

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("Gaussian prior variance must be positive")


@dataclass(frozen=True)
class InverseGammaPrior:
    shape: float = DEFAULT_SIGMA_SQ_SHAPE
    scale: float = DEFAULT_SIGMA_SQ_SCALE

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("inverse-Gamma shape and scale must be positive")


@dataclass(frozen=True)
class UniformPrior:
    lower: float
    upper: float

    def __post_init__(self):
        if not (0 < self.lower < self.upper):
            raise ValueError("uniform support must satisfy 0 < lower < upper")


@dataclass
class PriorSpec:
    """User-facing prior choices; ``None`` selects package defaults."""

    beta: GaussianPrior | None = None
    alpha: GaussianPrior | None = None
    sigma_sq: InverseGammaPrior | None = None
    phi: UniformPrior | None = None


@dataclass(frozen=True)
class ResolvedPriors:
    beta_mean: np.ndarray
    beta_var: np.ndarray
    alpha_mean: np.ndarray
    alpha_var: np.ndarray
    sigma_shape: np.ndarray
    sigma_scale: np.ndarray
    phi_lower: np.ndarray
    phi_upper: np.ndarray

    def describe(self) -> dict:
        return {
            "beta": {"mean": self.beta_mean.tolist(), "var": self.beta_var.tolist()},
            "alpha": {"mean": self.alpha_mean.tolist(), "var": self.alpha_var.tolist()},
            "sigma_sq": {
                "shape": self.sigma_shape.tolist(),
                "scale": self.sigma_scale.tolist(),
            },
            "phi": {"lower": self.phi_lower.tolist(), "upper": self.phi_upper.tolist()},
        }


@dataclass
class McmcControls:
    """Chain length, thinning, neighbor count, and the seed."""

    n_iterations: int
    burn_in: int
    thin: int = 1
    n_chains: int = 1
    m: int = DEFAULT_NUM_NEIGHBORS
    seed: int = 0
    phi_proposal_sd: float = 1.0

    def __post_init__(self):
        if self.n_iterations < 1 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("iteration counts must be positive")
        if self.burn_in >= self.n_iterations:
            raise ValueError("burn_in must be smaller than n_iterations")
        if (self.n_iterations - self.burn_in) % self.thin != 0:
            raise ValueError("thin must divide the retained span")
        if self.n_chains < 1 or self.m < 1:
            raise ValueError("n_chains and m must be at least 1")
        if self.phi_proposal_sd <= 0:
            raise ValueError("phi_proposal_sd must be positive")

    @property
    def n_draws(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin

    def describe(self) -> dict:
        return {
            "n_iterations": self.n_iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "n_chains": self.n_chains,
            "m": self.m,
            "seed": self.seed,
            "phi_proposal_sd": self.phi_proposal_sd,
        }


def pairwise_distance_range(coords: CoordinateSet) -> tuple[float, float]:
    """Smallest and largest inter-site distance, chunked to bound memory."""
    pts = coords.coords
    J = pts.shape[0]
    if J < 2:
        raise DataError("need at least two sites to compute distance range")
    dmin, dmax = np.inf, 0.0
    step = max(1, int(4e6) // max(J, 1))
    for start in range(0, J, step):
        block = pts[start : start + step]
        d = np.hypot(
            block[:, None, 0] - pts[None, :, 0], block[:, None, 1] - pts[None, :, 1]
        )
        np.fill_diagonal(d[:, start : start + block.shape[0]], np.inf)
        dmin = min(dmin, float(d.min()))
        d[~np.isfinite(d)] = 0.0
        dmax = max(dmax, float(d.max()))
    return dmin, dmax


def resolve_priors(
    data: OccupancyDataset, flags: SvcFlags, priors: PriorSpec | None
) -> ResolvedPriors:
    """Fill unspecified priors with defaults.

    Coefficients get Normal(0, 2.72) (close to uniform on the probability
    scale), spatial variances IG(2, 1), and decay parameters a uniform
    prior spanning effective ranges from the maximum down to the minimum
    inter-site distance.
    """
    priors = priors or PriorSpec()
    H, P, n_svc = data.n_occ_covs, data.n_det_covs, flags.n_svc
    beta = priors.beta or GaussianPrior()
    alpha = priors.alpha or GaussianPrior()
    sigma = priors.sigma_sq or InverseGammaPrior()
    if n_svc > 0:
        if priors.phi is None:
            dmin, dmax = pairwise_distance_range(data.coords)
            phi = UniformPrior(3.0 / dmax, 3.0 / dmin)
        else:
            phi = priors.phi
        phi_lower = np.full(n_svc, phi.lower)
        phi_upper = np.full(n_svc, phi.upper)
    else:
        phi_lower = np.zeros(0)
        phi_upper = np.zeros(0)
    return ResolvedPriors(
        beta_mean=np.full(H, beta.mean),
        beta_var=np.full(H, beta.var),
        alpha_mean=np.full(P, alpha.mean),
        alpha_var=np.full(P, alpha.var),
        sigma_shape=np.full(n_svc, sigma.shape),
        sigma_scale=np.full(n_svc, sigma.scale),
        phi_lower=phi_lower,
        phi_upper=phi_upper,
    )


@dataclass
class SingleState:
    """Mutable sampler state, all site-indexed arrays in fitting order."""

    beta: np.ndarray
    alpha: np.ndarray
    w: np.ndarray  # (n_svc, J)
    sigma_sq: np.ndarray
    phi: np.ndarray
    z: np.ndarray  # int8
    kappa: np.ndarray
    omega_psi: np.ndarray
    omega_p: np.ndarray  # (J, K)
    eta: np.ndarray
    structures: list[NngpStructure]
    proposal_lsd: np.ndarray
    batch_accepts: np.ndarray
    total_accepts: np.ndarray
    total_proposals: int = 0
    batch_iter: int = 0
    batch_index: int = 0
    adapting: bool = True


class _FitData:
    """Dataset views re-indexed into the fitting order."""

    def __init__(self, data: OccupancyDataset, flags: SvcFlags):
        order = data.coords.order
        self.X = np.ascontiguousarray(data.X[order])
        self.V = np.ascontiguousarray(data.V[order])
        self.y = np.ascontiguousarray(data.y[order])
        self.mask = np.ascontiguousarray(data.obs_mask[order])
        self.ever = np.ascontiguousarray(data.ever_detected[order])
        self.xt = np.ascontiguousarray(self.X[:, flags.svc_indices])
        self.n_sites = data.n_sites


def init_state(
    data: OccupancyDataset,
    flags: SvcFlags,
    priors: ResolvedPriors,
    controls: McmcControls,
    topology: NngpStructure | None,
) -> SingleState:
    """Deterministic starting point: coefficients at zero, latent state at
    the observed detections, variances at one, decay at mid-support."""
    fd = _FitData(data, flags)
    J, H, P = data.n_sites, data.n_occ_covs, data.n_det_covs
    n_svc = flags.n_svc
    sigma_sq = np.ones(n_svc)
    phi = 0.5 * (priors.phi_lower + priors.phi_upper)
    structures = [
        fill_conditional_factors(topology, CovarianceParams(sigma_sq[h], phi[h]))
        for h in range(n_svc)
    ]
    z = fd.ever.astype(np.int8)
    return SingleState(
        beta=np.zeros(H),
        alpha=np.zeros(P),
        w=np.zeros((n_svc, J)),
        sigma_sq=sigma_sq,
        phi=phi,
        z=z,
        kappa=z.astype(np.float64) - 0.5,
        omega_psi=np.full(J, 0.25),
        omega_p=np.full((J, data.n_replicates), 0.25),
        eta=np.zeros(J),
        structures=structures,
        proposal_lsd=np.full(n_svc, math.log(controls.phi_proposal_sd)),
        batch_accepts=np.zeros(n_svc),
        total_accepts=np.zeros(n_svc),
    )


def _occupancy_eta(state: SingleState, fd: _FitData) -> np.ndarray:
    eta = fd.X @ state.beta
    if state.w.shape[0]:
        eta = eta + np.einsum("jh,hj->j", fd.xt, state.w)
    return eta


def update_omega(state: SingleState, fd: _FitData, rng: RngStream) -> SingleState:
    """Draw the augmentation variables: occupancy ones at every site,
    detection ones only at surveyed replicates of currently-occupied sites."""
    state.eta = _occupancy_eta(state, fd)
    state.omega_psi = pg_draw_array(rng, state.eta)
    active = fd.mask & (state.z[:, None] == 1)
    if active.any():
        tilts = np.einsum("jkp,p->jk", fd.V, state.alpha)[active]
        state.omega_p[active] = pg_draw_array(rng, tilts)
    return state


def update_beta(
    state: SingleState, fd: _FitData, priors: ResolvedPriors, rng: RngStream
) -> SingleState:
    offset = state.eta - fd.X @ state.beta
    om = state.omega_psi
    prec = fd.X.T @ (om[:, None] * fd.X) + np.diag(1.0 / priors.beta_var)
    lin = fd.X.T @ (state.kappa - om * offset) + priors.beta_mean / priors.beta_var
    state.beta = mvn_conditional_draw(rng, prec, lin, context="beta update")
    state.eta = fd.X @ state.beta + offset
    return state


def update_alpha(
    state: SingleState, fd: _FitData, priors: ResolvedPriors, rng: RngStream
) -> SingleState:
    active = fd.mask & (state.z[:, None] == 1)
    prior_prec = np.diag(1.0 / priors.alpha_var)
    prior_lin = priors.alpha_mean / priors.alpha_var
    if not active.any():
        state.alpha = mvn_conditional_draw(rng, prior_prec, prior_lin, "alpha prior")
        return state
    Va = fd.V[active]
    om = state.omega_p[active]
    kappa = fd.y[active].astype(np.float64) - 0.5
    prec = Va.T @ (om[:, None] * Va) + prior_prec
    lin = Va.T @ kappa + prior_lin
    state.alpha = mvn_conditional_draw(rng, prec, lin, context="alpha update")
    return state


@njit(cache=True)
def _gibbs_scan_w(
    gen,
    w,
    eta,
    xt,
    omega,
    kappa,
    nbr_idx,
    nbr_count,
    b,
    f,
    child_ptr,
    child_site,
    child_pos,
):
    """Sequential per-site draw of one spatial surface from its Gaussian
    full conditional; the site's own conditional plus every term where it
    appears in a later site's neighbor set, plus the augmented likelihood."""
    J = w.shape[0]
    for j in range(J):
        prec = omega[j] * xt[j] * xt[j] + 1.0 / f[j]
        lin = xt[j] * (kappa[j] - omega[j] * (eta[j] - xt[j] * w[j]))
        mean_j = 0.0
        for a in range(nbr_count[j]):
            mean_j += b[j, a] * w[nbr_idx[j, a]]
        lin += mean_j / f[j]
        for cix in range(child_ptr[j], child_ptr[j + 1]):
            c = child_site[cix]
            pos = child_pos[cix]
            resid = w[c]
            for a in range(nbr_count[c]):
                if a != pos:
                    resid -= b[c, a] * w[nbr_idx[c, a]]
            lin += b[c, pos] * resid / f[c]
            prec += b[c, pos] * b[c, pos] / f[c]
        new = lin / prec + gen.standard_normal() / math.sqrt(prec)
        eta[j] += xt[j] * (new - w[j])
        w[j] = new


def update_w(state: SingleState, fd: _FitData, rng: RngStream) -> SingleState:
    for h, st in enumerate(state.structures):
        _gibbs_scan_w(
            rng.generator,
            state.w[h],
            state.eta,
            fd.xt[:, h],
            state.omega_psi,
            state.kappa,
            st.nbr_idx,
            st.nbr_count,
            st.b,
            st.f,
            st.child_ptr,
            st.child_site,
            st.child_pos,
        )
    return state


def _metropolis_phi(
    w_row: np.ndarray,
    st: NngpStructure,
    sigma_sq: float,
    phi: float,
    lower: float,
    upper: float,
    lsd: float,
    rng: RngStream,
) -> tuple[float, NngpStructure, bool]:
    """One random-walk step for the decay parameter on the logit of its
    uniform support; factors are refilled only on acceptance."""
    g = (phi - lower) / (upper - lower)
    t = math.log(g) - math.log1p(-g)
    t_prop = t + math.exp(lsd) * rng.generator.standard_normal()
    g_prop = expit(t_prop)
    if g_prop <= 0.0 or g_prop >= 1.0:
        return phi, st, False
    phi_prop = lower + (upper - lower) * g_prop

    b_prop = np.zeros_like(st.b)
    f_prop = np.empty_like(st.f)
    bad = _fill_bf(
        st.nbr_count, st.nbr_dist, st.nbr_nbr_dist, sigma_sq, phi_prop, b_prop, f_prop
    )
    if bad >= 0:
        return phi, st, False
    ld_cur = _log_density_ordered(w_row, st.nbr_idx, st.nbr_count, st.b, st.f)
    ld_prop = _log_density_ordered(w_row, st.nbr_idx, st.nbr_count, b_prop, f_prop)
    log_ratio = (
        ld_prop
        - ld_cur
        + math.log(g_prop)
        + math.log1p(-g_prop)
        - math.log(g)
        - math.log1p(-g)
    )
    if math.log(rng.generator.random()) < log_ratio:
        st = replace(
            st, b=b_prop, f=f_prop, params=CovarianceParams(sigma_sq, phi_prop)
        )
        return phi_prop, st, True
    return phi, st, False


def update_theta(
    state: SingleState, priors: ResolvedPriors, rng: RngStream
) -> SingleState:
    """Conjugate draw of each spatial variance, then a Metropolis step on
    each decay with batch adaptation of the proposal scale."""
    J = state.eta.shape[0]
    for h, st in enumerate(state.structures):
        quad_unit = state.sigma_sq[h] * _resid_quad_ordered(
            state.w[h], st.nbr_idx, st.nbr_count, st.b, st.f
        )
        shape_post = priors.sigma_shape[h] + 0.5 * J
        scale_post = priors.sigma_scale[h] + 0.5 * quad_unit
        new_sig = scale_post / rng.generator.gamma(shape_post)
        st = replace(
            st,
            f=st.f * (new_sig / state.sigma_sq[h]),
            params=CovarianceParams(new_sig, state.phi[h]),
        )
        state.sigma_sq[h] = new_sig

        state.phi[h], st, accepted = _metropolis_phi(
            state.w[h],
            st,
            new_sig,
            state.phi[h],
            priors.phi_lower[h],
            priors.phi_upper[h],
            state.proposal_lsd[h],
            rng,
        )
        if accepted:
            state.batch_accepts[h] += 1
            state.total_accepts[h] += 1
        state.structures[h] = st

    state.total_proposals += 1
    state.batch_iter += 1
    if state.adapting and state.batch_iter == ADAPT_BATCH_LENGTH:
        state.batch_index += 1
        step = min(0.1, 1.0 / math.sqrt(state.batch_index))
        rates = state.batch_accepts / ADAPT_BATCH_LENGTH
        state.proposal_lsd += np.where(rates > TARGET_ACCEPTANCE, step, -step)
        state.batch_accepts[:] = 0
        state.batch_iter = 0
    return state


def update_z(state: SingleState, fd: _FitData, rng: RngStream) -> SingleState:
    """Occupancy indicator: detections force presence; otherwise a
    Bernoulli draw with odds shrunk by the miss probability of every
    surveyed replicate."""
    psi = expit(state.eta)
    p = expit(np.einsum("jkp,p->jk", fd.V, state.alpha))
    miss = np.where(fd.mask, 1.0 - p, 1.0).prod(axis=1)
    pz = psi * miss
    den = pz + (1.0 - psi)
    prob = np.where(den > 0, pz / np.where(den > 0, den, 1.0), 1.0)
    draws = (rng.generator.random(fd.n_sites) < prob).astype(np.int8)
    state.z = np.where(fd.ever, np.int8(1), draws).astype(np.int8)
    state.kappa = state.z.astype(np.float64) - 0.5
    return state


def _run_chain(
    data: OccupancyDataset,
    flags: SvcFlags,
    priors: ResolvedPriors,
    controls: McmcControls,
    topology: NngpStructure | None,
    chain: int,
):
    fd = _FitData(data, flags)
    rng = RngStream(controls.seed, chain)
    state = init_state(data, flags, priors, controls, topology)
    n_svc = flags.n_svc
    J = data.n_sites
    L = controls.n_draws
    inv = data.coords.inverse

    out = {
        "beta": np.empty((L, data.n_occ_covs)),
        "alpha": np.empty((L, data.n_det_covs)),
        "sigma_sq": np.empty((L, n_svc)),
        "phi": np.empty((L, n_svc)),
        "w": np.empty((L, n_svc, J)),
        "z": np.empty((L, J), dtype=np.int8),
        "psi": np.empty((L, J)),
    }

    store = 0
    for it in range(controls.n_iterations):
        update_omega(state, fd, rng)
        update_beta(state, fd, priors, rng)
        update_alpha(state, fd, priors, rng)
        if n_svc:
            update_w(state, fd, rng)
            update_theta(state, priors, rng)
        update_z(state, fd, rng)
        if it + 1 == controls.burn_in:
            state.adapting = False
        if it >= controls.burn_in and (it - controls.burn_in) % controls.thin == 0:
            out["beta"][store] = state.beta
            out["alpha"][store] = state.alpha
            out["sigma_sq"][store] = state.sigma_sq
            out["phi"][store] = state.phi
            out["w"][store] = state.w[:, inv]
            out["z"][store] = state.z[inv]
            out["psi"][store] = expit(state.eta)[inv]
            store += 1

    acceptance = (
        (state.total_accepts / max(state.total_proposals, 1)).tolist()
        if n_svc
        else []
    )
    return out, acceptance


def fit_single(
    data: OccupancyDataset,
    flags: SvcFlags,
    controls: McmcControls,
    priors: PriorSpec | None = None,
) -> PosteriorArchive:
    """Run the full Gibbs sampler and assemble the posterior archive.

    Chains are seeded (seed, chain_id) so results are reproducible and
    chain-order independent. Site-indexed draws in the archive are in the
    original site order of ``data``.
    """
    flags = flags if isinstance(flags, SvcFlags) else SvcFlags(np.asarray(flags))
    if flags.delta.shape[0] != data.n_occ_covs:
        raise DataError(
            f"delta has length {flags.delta.shape[0]}, "
            f"expected one flag per occurrence covariate ({data.n_occ_covs})"
        )
    resolved = resolve_priors(data, flags, priors)
    topology = (
        build_neighbor_sets(data.coords, controls.m) if flags.n_svc else None
    )

    chains = []
    acceptance = []
    for chain in range(controls.n_chains):
        draws, acc = _run_chain(data, flags, resolved, controls, topology, chain)
        chains.append(draws)
        acceptance.append(acc)

    arrays = {
        name: np.stack([c[name] for c in chains]) for name in chains[0]
    }
    arrays["coords"] = data.coords.coords.copy()

    svc_names = [data.covariate_names[i] for i in flags.svc_indices]
    manifest = {
        "model": "single",
        "package_version": __version__,
        "seed": controls.seed,
        "n_chains": controls.n_chains,
        "n_iterations": controls.n_iterations,
        "burn_in": controls.burn_in,
        "thin": controls.thin,
        "n_draws_per_chain": controls.n_draws,
        "m": controls.m,
        "delta": flags.delta.tolist(),
        "covariate_names": data.covariate_names,
        "detection_names": data.detection_names,
        "svc_names": svc_names,
        "site_ids": data.site_ids,
        "priors": resolved.describe(),
        "phi_acceptance": acceptance,
        "static": ["coords"],
    }
    return PosteriorArchive(manifest=manifest, arrays=arrays)
