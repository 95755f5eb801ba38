"""Multi-species occupancy model with spatial factor dimension reduction.

Each species' spatially-varying effect is a species-specific linear
combination (factor loadings) of a small number of shared latent spatial
factors, one set per spatially-varying covariate. Non-spatial occurrence
and detection coefficients are drawn hierarchically from community-level
distributions. A binary range mask can exclude species-site pairs from
the process model entirely; masked pairs are never computed or stored.

Identifiability: each loadings matrix has unit diagonal and zero upper
triangle, and the latent factor processes have unit variance, so only
their decay parameters are sampled.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy.special import expit

from . import __version__
from .archive import PosteriorArchive
from .errors import DataError
from .kernels import RngStream, mvn_conditional_draw, pg_draw_array
from .nngp import (
    CoordinateSet,
    CovarianceParams,
    NngpStructure,
    _fill_bf,
    build_neighbor_sets,
    fill_conditional_factors,
)
from .single import (
    ADAPT_BATCH_LENGTH,
    TARGET_ACCEPTANCE,
    GaussianPrior,
    InverseGammaPrior,
    McmcControls,
    OccupancyDataset,
    SvcFlags,
    UniformPrior,
    _metropolis_phi,
    pairwise_distance_range,
)

__all__ = [
    "MultiSpeciesDataset",
    "MultiPriorSpec",
    "ResolvedMultiPriors",
    "MultiState",
    "species_svc",
    "init_multi_state",
    "update_omega_multi",
    "update_species_coefs",
    "update_community",
    "update_factors",
    "update_lambda",
    "update_factor_phi",
    "update_z_multi",
    "fit_multi",
    "resolve_multi_priors",
]


class MultiSpeciesDataset:
    """Detection histories for N species over shared sites and designs.

    ``y`` is species x sites x replicates with NaN for unsurveyed
    replicates. ``range_mask`` (species x sites, binary) restricts each
    species' process model to its known range; detections outside a
    species' range are a data error. ``X_species`` optionally carries a
    per-species occurrence design (used when covariates are standardized
    within each species' range); otherwise ``X`` is shared.
    """

    def __init__(
        self,
        coords,
        y,
        X,
        V=None,
        range_mask=None,
        species_names=None,
        covariate_names=None,
        detection_names=None,
        duplicate_jitter=None,
        site_ids=None,
        X_species=None,
    ):
        if not isinstance(coords, CoordinateSet):
            coords = CoordinateSet(coords, duplicate_jitter=duplicate_jitter)
        self.coords = coords
        J = coords.n_sites

        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 3 or y.shape[1] != J:
            raise DataError(f"y must be (N, {J}, K), got {y.shape}")
        N, _, K = y.shape
        observed = ~np.isnan(y)
        vals = y[observed]
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise DataError("detections must be coded 0, 1, or NaN for missing")

        X = np.asarray(X, dtype=np.float64)
        if X.shape != (J, X.shape[1]) or X.shape[1] < 1:
            raise DataError(f"X must be (J, H), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("occurrence design contains non-finite values")
        if not np.allclose(X[:, 0], 1.0):
            raise DataError("first occurrence design column must be the intercept")
        if X_species is not None:
            X_species = np.asarray(X_species, dtype=np.float64)
            if X_species.shape != (N, J, X.shape[1]):
                raise DataError(
                    f"X_species must be (N, J, H) = ({N}, {J}, {X.shape[1]})"
                )
            if not np.all(np.isfinite(X_species)):
                raise DataError("per-species design contains non-finite values")
            if not np.allclose(X_species[:, :, 0], 1.0):
                raise DataError("per-species design must keep the intercept column")

        if V is None:
            V = np.ones((J, K, 1))
        V = np.asarray(V, dtype=np.float64)
        if V.shape[:2] != (J, K):
            raise DataError(f"V must be ({J}, {K}, P), got {V.shape}")
        any_observed = observed.any(axis=0)
        if not np.all(np.isfinite(V[any_observed])):
            raise DataError("detection design non-finite at surveyed replicates")
        V = np.where(any_observed[:, :, None], V, 0.0)

        if range_mask is None:
            range_mask = np.ones((N, J), dtype=np.int8)
        range_mask = np.asarray(range_mask)
        if range_mask.shape != (N, J):
            raise DataError(f"range mask must be (N, J) = ({N}, {J})")
        if not np.all((range_mask == 0) | (range_mask == 1)):
            raise DataError("range mask must be binary")
        range_mask = range_mask.astype(np.int8)

        detected = np.nan_to_num(y, nan=0.0) == 1.0
        bad = detected.any(axis=2) & (range_mask == 0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataError(
                f"species {i} detected at site {j} which its range mask excludes"
            )
        surveyed_in_range = (observed.any(axis=2)) & (range_mask == 1)
        if not np.all(surveyed_in_range.any(axis=1)):
            empty = np.where(~surveyed_in_range.any(axis=1))[0]
            raise DataError(
                f"species with no surveyed in-range site: {empty.tolist()}"
            )
        if not np.all(observed.any(axis=(0, 2))):
            dead = np.where(~observed.any(axis=(0, 2)))[0]
            raise DataError(f"sites never surveyed for any species: {dead.tolist()[:10]}")

        self.y = np.nan_to_num(y, nan=0.0).astype(np.int8)
        self.obs_mask = observed
        self.X = X
        self.X_species = X_species
        self.V = V
        self.range_mask = range_mask
        self.n_species = N
        self.n_sites = J
        self.n_replicates = K
        self.n_occ_covs = X.shape[1]
        self.n_det_covs = V.shape[2]
        self.ever_detected = detected.any(axis=2)
        self.species_names = list(
            species_names if species_names is not None else [f"sp{i}" for i in range(N)]
        )
        if len(self.species_names) != N:
            raise DataError("species_names length must match species count")
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


@dataclass
class MultiPriorSpec:
    """Hyperpriors for the community model; ``None`` selects defaults.

    Community means get Gaussian hyperpriors, community variances
    inverse-Gamma ones; loadings have standard Gaussian priors on their
    free elements (fixed, not configurable); factor decays share a
    uniform prior.
    """

    mu_beta: GaussianPrior | None = None
    mu_alpha: GaussianPrior | None = None
    tau_sq_beta: InverseGammaPrior | None = None
    tau_sq_alpha: InverseGammaPrior | None = None
    phi: UniformPrior | None = None


DEFAULT_TAU_SQ_SHAPE = 0.1
DEFAULT_TAU_SQ_SCALE = 0.1


@dataclass(frozen=True)
class ResolvedMultiPriors:
    mu_beta_mean: np.ndarray
    mu_beta_var: np.ndarray
    mu_alpha_mean: np.ndarray
    mu_alpha_var: np.ndarray
    tau_beta_shape: np.ndarray
    tau_beta_scale: np.ndarray
    tau_alpha_shape: np.ndarray
    tau_alpha_scale: np.ndarray
    phi_lower: float
    phi_upper: float

    def describe(self) -> dict:
        return {
            "mu_beta": {
                "mean": self.mu_beta_mean.tolist(),
                "var": self.mu_beta_var.tolist(),
            },
            "mu_alpha": {
                "mean": self.mu_alpha_mean.tolist(),
                "var": self.mu_alpha_var.tolist(),
            },
            "tau_sq_beta": {
                "shape": self.tau_beta_shape.tolist(),
                "scale": self.tau_beta_scale.tolist(),
            },
            "tau_sq_alpha": {
                "shape": self.tau_alpha_shape.tolist(),
                "scale": self.tau_alpha_scale.tolist(),
            },
            "phi": {"lower": self.phi_lower, "upper": self.phi_upper},
            "lambda": "standard normal on free elements",
        }


def resolve_multi_priors(
    data: MultiSpeciesDataset, flags: SvcFlags, priors: MultiPriorSpec | None
) -> ResolvedMultiPriors:
    priors = priors or MultiPriorSpec()
    H, P = data.n_occ_covs, data.n_det_covs
    mu_b = priors.mu_beta or GaussianPrior()
    mu_a = priors.mu_alpha or GaussianPrior()
    tau_b = priors.tau_sq_beta or InverseGammaPrior(
        DEFAULT_TAU_SQ_SHAPE, DEFAULT_TAU_SQ_SCALE
    )
    tau_a = priors.tau_sq_alpha or InverseGammaPrior(
        DEFAULT_TAU_SQ_SHAPE, DEFAULT_TAU_SQ_SCALE
    )
    if flags.n_svc > 0:
        if priors.phi is None:
            dmin, dmax = pairwise_distance_range(data.coords)
            phi = UniformPrior(3.0 / dmax, 3.0 / dmin)
        else:
            phi = priors.phi
        lo, hi = phi.lower, phi.upper
    else:
        lo, hi = 1.0, 2.0  # unused
    return ResolvedMultiPriors(
        mu_beta_mean=np.full(H, mu_b.mean),
        mu_beta_var=np.full(H, mu_b.var),
        mu_alpha_mean=np.full(P, mu_a.mean),
        mu_alpha_var=np.full(P, mu_a.var),
        tau_beta_shape=np.full(H, tau_b.shape),
        tau_beta_scale=np.full(H, tau_b.scale),
        tau_alpha_shape=np.full(P, tau_a.shape),
        tau_alpha_scale=np.full(P, tau_a.scale),
        phi_lower=lo,
        phi_upper=hi,
    )


def species_svc(loadings_row: np.ndarray, factors_at_site: np.ndarray) -> float:
    """Species-level spatial adjustment: loadings dotted with the latent
    factors at one site."""
    loadings_row = np.asarray(loadings_row, dtype=np.float64)
    factors_at_site = np.asarray(factors_at_site, dtype=np.float64)
    if loadings_row.shape != factors_at_site.shape:
        raise ValueError("loadings row and factor vector must have equal length")
    return float(loadings_row @ factors_at_site)


def constrained_loadings(n_species: int, q: int) -> np.ndarray:
    """Initial loadings: unit diagonal, zero elsewhere."""
    lam = np.zeros((n_species, q))
    for r in range(min(n_species, q)):
        lam[r, r] = 1.0
    return lam


def free_loading_indices(i: int, q: int) -> np.ndarray:
    """Columns of loadings row ``i`` that are sampled (strict lower triangle)."""
    return np.arange(min(i, q))


@dataclass
class MultiState:
    """Mutable sampler state; site-indexed arrays are in fitting order."""

    beta: np.ndarray  # (N, H)
    alpha: np.ndarray  # (N, P)
    mu_beta: np.ndarray
    tau_beta: np.ndarray
    mu_alpha: np.ndarray
    tau_alpha: np.ndarray
    loadings: np.ndarray  # (n_svc, N, q)
    w: np.ndarray  # (n_svc, q, J)
    phi: np.ndarray  # (n_svc, q)
    z: np.ndarray  # (N, J) int8
    kappa: np.ndarray  # (N, J)
    omega_psi: np.ndarray  # (N, J)
    omega_p: np.ndarray  # (N, J, K)
    eta: np.ndarray  # (N, J)
    structures: list[list[NngpStructure]]  # [h][r]
    proposal_lsd: np.ndarray  # (n_svc, q)
    batch_accepts: np.ndarray
    total_accepts: np.ndarray
    total_proposals: int = 0
    batch_iter: int = 0
    batch_index: int = 0
    adapting: bool = True


class _MultiFitData:
    """Dataset views re-indexed into the fitting order."""

    def __init__(self, data: MultiSpeciesDataset, flags: SvcFlags, q: int):
        order = data.coords.order
        self.X = np.ascontiguousarray(data.X[order])
        if data.X_species is not None:
            self.X_sp = np.ascontiguousarray(data.X_species[:, order])
        else:
            self.X_sp = None
        self.V = np.ascontiguousarray(data.V[order])
        self.y = np.ascontiguousarray(data.y[:, order])
        self.mask = np.ascontiguousarray(data.obs_mask[:, order])
        self.ever = np.ascontiguousarray(data.ever_detected[:, order])
        self.in_range = np.ascontiguousarray(data.range_mask[:, order] == 1)
        self.range_idx = [np.where(self.in_range[i])[0] for i in range(data.n_species)]
        self.n_species = data.n_species
        self.n_sites = data.n_sites
        self.q = q
        svc = flags.svc_indices
        self.xt = np.ascontiguousarray(self.X[:, svc])
        if self.X_sp is not None:
            self.xt_sp = np.ascontiguousarray(self.X_sp[:, :, svc])
        else:
            self.xt_sp = None

    def design(self, i: int) -> np.ndarray:
        return self.X if self.X_sp is None else self.X_sp[i]

    def svc_design(self, i: int) -> np.ndarray:
        return self.xt if self.xt_sp is None else self.xt_sp[i]


def init_multi_state(
    data: MultiSpeciesDataset,
    flags: SvcFlags,
    priors: ResolvedMultiPriors,
    controls: McmcControls,
    q: int,
    topology: NngpStructure | None,
) -> MultiState:
    fd = _MultiFitData(data, flags, q)
    N, J, K = data.n_species, data.n_sites, data.n_replicates
    H, P, n_svc = data.n_occ_covs, data.n_det_covs, flags.n_svc
    phi0 = 0.5 * (priors.phi_lower + priors.phi_upper)
    structures = [
        [
            fill_conditional_factors(topology, CovarianceParams(1.0, phi0))
            for _ in range(q)
        ]
        for _ in range(n_svc)
    ]
    z = np.where(fd.in_range, fd.ever, False).astype(np.int8)
    return MultiState(
        beta=np.zeros((N, H)),
        alpha=np.zeros((N, P)),
        mu_beta=np.zeros(H),
        tau_beta=np.ones(H),
        mu_alpha=np.zeros(P),
        tau_alpha=np.ones(P),
        loadings=np.stack([constrained_loadings(N, q) for _ in range(n_svc)])
        if n_svc
        else np.zeros((0, N, q)),
        w=np.zeros((n_svc, q, J)),
        phi=np.full((n_svc, q), phi0),
        z=z,
        kappa=z.astype(np.float64) - 0.5,
        omega_psi=np.full((N, J), 0.25),
        omega_p=np.full((N, J, K), 0.25),
        eta=np.zeros((N, J)),
        structures=structures,
        proposal_lsd=np.full((n_svc, q), math.log(controls.phi_proposal_sd)),
        batch_accepts=np.zeros((n_svc, q)),
        total_accepts=np.zeros((n_svc, q)),
    )


def _species_eta(state: MultiState, fd: _MultiFitData, i: int) -> np.ndarray:
    """Occupancy linear predictor for species i at its in-range sites."""
    idx = fd.range_idx[i]
    eta = fd.design(i)[idx] @ state.beta[i]
    if state.w.shape[0]:
        # w*_{i,h} = loadings_i . factors at each site, per SVC
        wstar = np.einsum("hq,hqj->hj", state.loadings[:, i, :], state.w[:, :, idx])
        eta = eta + np.einsum("jh,hj->j", fd.svc_design(i)[idx], wstar)
    return eta


def update_omega_multi(
    state: MultiState, fd: _MultiFitData, rng: RngStream
) -> MultiState:
    """Augmentation draws per species: occupancy at in-range sites,
    detection only at surveyed replicates of currently-occupied sites."""
    for i in range(fd.n_species):
        idx = fd.range_idx[i]
        eta = _species_eta(state, fd, i)
        state.eta[i, idx] = eta
        state.omega_psi[i, idx] = pg_draw_array(rng, eta)
        active = fd.mask[i] & (state.z[i][:, None] == 1)
        if active.any():
            tilts = np.einsum("jkp,p->jk", fd.V, state.alpha[i])[active]
            state.omega_p[i][active] = pg_draw_array(rng, tilts)
    return state


def update_species_coefs(
    state: MultiState, fd: _MultiFitData, rng: RngStream
) -> MultiState:
    """Per-species occurrence and detection coefficients, with the current
    community distributions as priors."""
    for i in range(fd.n_species):
        idx = fd.range_idx[i]
        Xi = fd.design(i)[idx]
        om = state.omega_psi[i, idx]
        offset = state.eta[i, idx] - Xi @ state.beta[i]
        prec = Xi.T @ (om[:, None] * Xi) + np.diag(1.0 / state.tau_beta)
        lin = Xi.T @ (state.kappa[i, idx] - om * offset) + state.mu_beta / state.tau_beta
        state.beta[i] = mvn_conditional_draw(rng, prec, lin, f"beta species {i}")
        state.eta[i, idx] = Xi @ state.beta[i] + offset

        active = fd.mask[i] & (state.z[i][:, None] == 1)
        prior_prec = np.diag(1.0 / state.tau_alpha)
        prior_lin = state.mu_alpha / state.tau_alpha
        if active.any():
            Va = fd.V[active]
            omp = state.omega_p[i][active]
            kap = fd.y[i][active].astype(np.float64) - 0.5
            prec_a = Va.T @ (omp[:, None] * Va) + prior_prec
            lin_a = Va.T @ kap + prior_lin
            state.alpha[i] = mvn_conditional_draw(rng, prec_a, lin_a, f"alpha sp {i}")
        else:
            state.alpha[i] = mvn_conditional_draw(rng, prior_prec, prior_lin, "alpha")
    return state


def _community_step(values, mu, tau, mu_mean, mu_var, tau_shape, tau_scale, rng):
    """Conjugate updates of one community mean/variance pair across species."""
    n = values.shape[0]
    for h in range(values.shape[1]):
        prec = n / tau[h] + 1.0 / mu_var[h]
        lin = values[:, h].sum() / tau[h] + mu_mean[h] / mu_var[h]
        mu[h] = lin / prec + rng.generator.standard_normal() / math.sqrt(prec)
        resid = values[:, h] - mu[h]
        shape_post = tau_shape[h] + 0.5 * n
        scale_post = tau_scale[h] + 0.5 * float(resid @ resid)
        tau[h] = scale_post / rng.generator.gamma(shape_post)


def update_community(
    state: MultiState, priors: ResolvedMultiPriors, rng: RngStream
) -> MultiState:
    _community_step(
        state.beta,
        state.mu_beta,
        state.tau_beta,
        priors.mu_beta_mean,
        priors.mu_beta_var,
        priors.tau_beta_shape,
        priors.tau_beta_scale,
        rng,
    )
    _community_step(
        state.alpha,
        state.mu_alpha,
        state.tau_alpha,
        priors.mu_alpha_mean,
        priors.mu_alpha_var,
        priors.tau_alpha_shape,
        priors.tau_alpha_scale,
        rng,
    )
    return state


@njit(cache=True)
def _gibbs_scan_factor(
    gen,
    w,  # (J,) one factor of one SVC
    eta,  # (N, J)
    coef,  # (N, J): per-species likelihood coefficient at each site
    in_range,  # (N, J) bool
    omega,  # (N, J)
    kappa,  # (N, J)
    nbr_idx,
    nbr_count,
    b,
    f,
    child_ptr,
    child_site,
    child_pos,
):
    """Sequential per-site factor draw pooling evidence over in-range
    species; mirrors the single-species scan with a species loop."""
    N, J = eta.shape
    for j in range(J):
        prec = 1.0 / f[j]
        mean_j = 0.0
        for a in range(nbr_count[j]):
            mean_j += b[j, a] * w[nbr_idx[j, a]]
        lin = mean_j / f[j]
        for cix in range(child_ptr[j], child_ptr[j + 1]):
            c = child_site[cix]
            pos = child_pos[cix]
            resid = w[c]
            for a in range(nbr_count[c]):
                if a != pos:
                    resid -= b[c, a] * w[nbr_idx[c, a]]
            lin += b[c, pos] * resid / f[c]
            prec += b[c, pos] * b[c, pos] / f[c]
        for i in range(N):
            if in_range[i, j]:
                a_i = coef[i, j]
                prec += omega[i, j] * a_i * a_i
                lin += a_i * (kappa[i, j] - omega[i, j] * (eta[i, j] - a_i * w[j]))
        new = lin / prec + gen.standard_normal() / math.sqrt(prec)
        delta = new - w[j]
        for i in range(N):
            if in_range[i, j]:
                eta[i, j] += coef[i, j] * delta
        w[j] = new


def _svc_site_coef(state: MultiState, fd: _MultiFitData, h: int, r: int) -> np.ndarray:
    """(N, J) coefficient of factor (h, r) in each species-site predictor."""
    if fd.xt_sp is None:
        return state.loadings[h, :, r][:, None] * fd.xt[:, h][None, :]
    return state.loadings[h, :, r][:, None] * fd.xt_sp[:, :, h]


def update_factors(state: MultiState, fd: _MultiFitData, rng: RngStream) -> MultiState:
    for h in range(state.w.shape[0]):
        for r in range(fd.q):
            st = state.structures[h][r]
            _gibbs_scan_factor(
                rng.generator,
                state.w[h, r],
                state.eta,
                _svc_site_coef(state, fd, h, r),
                fd.in_range,
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


def update_lambda(state: MultiState, fd: _MultiFitData, rng: RngStream) -> MultiState:
    """Free (strictly lower-triangular) loadings from their Gaussian full
    conditionals; constrained elements are never touched."""
    n_svc, N, q = state.loadings.shape
    for h in range(n_svc):
        for i in range(N):
            free = free_loading_indices(i, q)
            if free.size == 0:
                continue
            idx = fd.range_idx[i]
            xth = fd.svc_design(i)[idx, h]
            u = xth[:, None] * state.w[h][free][:, idx].T  # (n_sites_i, n_free)
            lam_free = state.loadings[h, i, free]
            offset = state.eta[i, idx] - u @ lam_free
            om = state.omega_psi[i, idx]
            prec = u.T @ (om[:, None] * u) + np.eye(free.size)
            lin = u.T @ (state.kappa[i, idx] - om * offset)
            lam_new = mvn_conditional_draw(rng, prec, lin, f"loadings sp {i} svc {h}")
            state.loadings[h, i, free] = lam_new
            state.eta[i, idx] = offset + u @ lam_new
    return state


def update_factor_phi(
    state: MultiState, priors: ResolvedMultiPriors, rng: RngStream
) -> MultiState:
    """Metropolis step for every factor's decay (unit process variance)."""
    n_svc, q = state.phi.shape
    for h in range(n_svc):
        for r in range(q):
            st = state.structures[h][r]
            state.phi[h, r], st, accepted = _metropolis_phi(
                state.w[h, r],
                st,
                1.0,
                state.phi[h, r],
                priors.phi_lower,
                priors.phi_upper,
                state.proposal_lsd[h, r],
                rng,
            )
            if accepted:
                state.batch_accepts[h, r] += 1
                state.total_accepts[h, r] += 1
            state.structures[h][r] = st

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


def update_z_multi(state: MultiState, fd: _MultiFitData, rng: RngStream) -> MultiState:
    det_p = expit(np.einsum("jkp,np->njk", fd.V, state.alpha))
    for i in range(fd.n_species):
        idx = fd.range_idx[i]
        psi = expit(state.eta[i, idx])
        miss = np.where(fd.mask[i, idx], 1.0 - det_p[i, idx], 1.0).prod(axis=1)
        pz = psi * miss
        den = pz + (1.0 - psi)
        prob = np.where(den > 0, pz / np.where(den > 0, den, 1.0), 1.0)
        draws = (rng.generator.random(idx.size) < prob).astype(np.int8)
        state.z[i, idx] = np.where(fd.ever[i, idx], np.int8(1), draws)
    state.kappa = state.z.astype(np.float64) - 0.5
    return state


def _run_chain_multi(data, flags, priors, controls, q, topology, chain):
    fd = _MultiFitData(data, flags, q)
    rng = RngStream(controls.seed, chain)
    state = init_multi_state(data, flags, priors, controls, q, topology)
    n_svc = flags.n_svc
    N, J = data.n_species, data.n_sites
    L = controls.n_draws
    inv = data.coords.inverse
    in_range_orig = data.range_mask == 1

    out = {
        "beta": np.empty((L, N, data.n_occ_covs)),
        "alpha": np.empty((L, N, data.n_det_covs)),
        "mu_beta": np.empty((L, data.n_occ_covs)),
        "tau_sq_beta": np.empty((L, data.n_occ_covs)),
        "mu_alpha": np.empty((L, data.n_det_covs)),
        "tau_sq_alpha": np.empty((L, data.n_det_covs)),
        "loadings": np.empty((L, n_svc, N, q)),
        "w": np.empty((L, n_svc, q, J)),
        "phi": np.empty((L, n_svc, q)),
        "z": np.empty((L, N, J), dtype=np.int8),
        "psi": np.empty((L, N, J)),
        "sigma_inter": np.empty((L, n_svc, N, N)),
    }

    store = 0
    for it in range(controls.n_iterations):
        update_omega_multi(state, fd, rng)
        update_species_coefs(state, fd, rng)
        update_community(state, priors, rng)
        if n_svc:
            update_factors(state, fd, rng)
            update_lambda(state, fd, rng)
            update_factor_phi(state, priors, rng)
        update_z_multi(state, fd, rng)
        if it + 1 == controls.burn_in:
            state.adapting = False
        if it >= controls.burn_in and (it - controls.burn_in) % controls.thin == 0:
            out["beta"][store] = state.beta
            out["alpha"][store] = state.alpha
            out["mu_beta"][store] = state.mu_beta
            out["tau_sq_beta"][store] = state.tau_beta
            out["mu_alpha"][store] = state.mu_alpha
            out["tau_sq_alpha"][store] = state.tau_alpha
            out["loadings"][store] = state.loadings
            out["w"][store] = state.w[:, :, inv]
            out["phi"][store] = state.phi
            z_orig = state.z[:, inv]
            psi_orig = expit(state.eta)[:, inv]
            out["z"][store] = np.where(in_range_orig, z_orig, np.int8(-1))
            out["psi"][store] = np.where(in_range_orig, psi_orig, np.nan)
            for h in range(n_svc):
                lam = state.loadings[h]
                out["sigma_inter"][store, h] = lam @ lam.T
            store += 1

    acceptance = (
        (state.total_accepts / max(state.total_proposals, 1)).tolist()
        if n_svc
        else []
    )
    return out, acceptance


def fit_multi(
    data: MultiSpeciesDataset,
    flags: SvcFlags,
    controls: McmcControls,
    q: int,
    priors: MultiPriorSpec | None = None,
) -> PosteriorArchive:
    """Fit the joint model and return the posterior archive.

    The first ``q`` species (dataset order) anchor the latent factors via
    the triangular loadings constraints, so species ordering matters:
    put widespread, data-rich species first.
    """
    flags = flags if isinstance(flags, SvcFlags) else SvcFlags(np.asarray(flags))
    if flags.delta.shape[0] != data.n_occ_covs:
        raise DataError(
            f"delta has length {flags.delta.shape[0]}, expected {data.n_occ_covs}"
        )
    if not (1 <= q <= data.n_species):
        raise DataError(f"factor count q={q} must be in 1..N={data.n_species}")
    no_detections = ~data.ever_detected.any(axis=1)
    if no_detections.any():
        names = [data.species_names[i] for i in np.where(no_detections)[0]]
        warnings.warn(
            f"species with no in-range detections: {names}; "
            "their effects will follow the community prior",
            stacklevel=2,
        )

    priors_r = resolve_multi_priors(data, flags, priors)
    topology = build_neighbor_sets(data.coords, controls.m) if flags.n_svc else None

    chains = []
    acceptance = []
    for chain in range(controls.n_chains):
        draws, acc = _run_chain_multi(
            data, flags, priors_r, controls, q, topology, chain
        )
        chains.append(draws)
        acceptance.append(acc)

    arrays = {name: np.stack([c[name] for c in chains]) for name in chains[0]}
    arrays["coords"] = data.coords.coords.copy()
    arrays["range_mask"] = data.range_mask.copy()

    svc_names = [data.covariate_names[i] for i in flags.svc_indices]
    manifest = {
        "model": "multi",
        "package_version": __version__,
        "seed": controls.seed,
        "n_chains": controls.n_chains,
        "n_iterations": controls.n_iterations,
        "burn_in": controls.burn_in,
        "thin": controls.thin,
        "n_draws_per_chain": controls.n_draws,
        "m": controls.m,
        "q": q,
        "delta": flags.delta.tolist(),
        "covariate_names": data.covariate_names,
        "detection_names": data.detection_names,
        "svc_names": svc_names,
        "species_names": data.species_names,
        "site_ids": data.site_ids,
        "priors": priors_r.describe(),
        "phi_acceptance": acceptance,
        "static": ["coords", "range_mask"],
    }
    return PosteriorArchive(manifest=manifest, arrays=arrays)
