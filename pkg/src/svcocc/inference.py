"""Posterior prediction and model comparison.

Prediction at new locations conditions each retained draw's latent
surfaces on their nearest fitted sites and propagates all uncertainty,
including fresh conditional noise per draw. Model comparison covers
WAIC (site-level likelihood with the latent occupancy state marginalized
analytically), k-fold cross-validation deviance, rank-based AUC, and
split-chain R-hat with an autocorrelation-based effective sample size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit, logsumexp

from .archive import PosteriorArchive
from .errors import DataError
from .kernels import RngStream
from .nngp import CoordinateSet, _predict_bf, prediction_neighbors
from .single import McmcControls, OccupancyDataset, PriorSpec, SvcFlags, fit_single

__all__ = [
    "PredictionGrid",
    "PredictionResult",
    "predict",
    "effect_direction_summary",
    "EFFECT_CATEGORIES",
    "WaicResult",
    "waic",
    "CvResult",
    "kfold_cv",
    "auc",
    "rhat_ess",
    "svc_effect_draws",
    "summary_table",
]


@dataclass
class PredictionGrid:
    """New locations with their occurrence design and optional range mask."""

    coords: np.ndarray
    X0: np.ndarray
    range_mask: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        self.X0 = np.atleast_2d(np.asarray(self.X0, dtype=np.float64))
        if self.coords.shape[1] != 2:
            raise DataError("grid coords must be (n0, 2)")
        if self.X0.shape[0] != self.coords.shape[0]:
            raise DataError("grid design rows must match grid coords")
        if not (np.all(np.isfinite(self.coords)) and np.all(np.isfinite(self.X0))):
            raise DataError("grid coords and design must be finite")
        if self.range_mask is not None:
            self.range_mask = np.asarray(self.range_mask, dtype=np.int8)
            if self.range_mask.shape[-1] != self.coords.shape[0]:
                raise DataError("grid range mask must have one column per location")


@dataclass
class PredictionResult:
    """Per-draw SVC surfaces, occupancy probabilities, and states at the
    grid. Single-species arrays are (draws, ...); multi-species carry a
    species axis. Masked species-locations hold NaN / -1."""

    coords: np.ndarray
    svc_names: list
    svc: np.ndarray  # (T, n_svc, n0) or (T, N, n_svc, n0)
    psi: np.ndarray  # (T, n0) or (T, N, n0)
    z: np.ndarray  # int8
    species_names: list | None = None

    @property
    def n_locations(self) -> int:
        return self.coords.shape[0]

    def svc_index(self, svc) -> int:
        if isinstance(svc, str):
            if svc not in self.svc_names:
                raise KeyError(f"no SVC named {svc!r}; have {self.svc_names}")
            return self.svc_names.index(svc)
        return int(svc)

    def svc_summary(self, svc) -> pd.DataFrame:
        """Median, central 95% interval, and P(effect > 0) per location."""
        h = self.svc_index(svc)
        draws = self.svc[:, h] if self.species_names is None else self.svc[:, :, h]
        return self._summarize(draws, prob_positive=True)

    def psi_summary(self) -> pd.DataFrame:
        return self._summarize(self.psi, prob_positive=False)

    def _summarize(self, draws, prob_positive) -> pd.DataFrame:
        def table(values, extra):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                lo, med, hi = np.nanpercentile(values, [2.5, 50.0, 97.5], axis=0)
                cols = dict(extra)
                cols.update(
                    x=self.coords[:, 0],
                    y=self.coords[:, 1],
                    median=med,
                    lower=lo,
                    upper=hi,
                )
                if prob_positive:
                    cols["prob_positive"] = np.nanmean(values > 0, axis=0)
            return pd.DataFrame(cols)

        if self.species_names is None:
            return table(draws, {})
        frames = [
            table(draws[:, i], {"species": name})
            for i, name in enumerate(self.species_names)
        ]
        return pd.concat(frames, ignore_index=True)


EFFECT_CATEGORIES = (
    "Strong Negative",
    "Moderate Negative",
    "No effect",
    "Moderate Positive",
    "Strong Positive",
)
_EFFECT_CUTS = np.array([0.2, 0.4, 0.6, 0.8])


def effect_direction_summary(result: PredictionResult, svc) -> np.ndarray:
    """Classify each location by P(effect > 0) into the five direction and
    strength buckets with cut points 0.2/0.4/0.6/0.8 (right-closed)."""
    h = result.svc_index(svc)
    draws = (
        result.svc[:, h] if result.species_names is None else result.svc[:, :, h]
    )
    prob = np.nanmean(draws > 0, axis=0)
    idx = np.searchsorted(_EFFECT_CUTS, prob, side="left")
    cats = np.asarray(EFFECT_CATEGORIES, dtype=object)[idx]
    if np.isnan(prob).any():
        cats = np.where(np.isnan(prob), None, cats)
    return cats


def _chain_flat(archive: PosteriorArchive, name: str) -> np.ndarray:
    return archive.stacked(name)


def predict(
    archive: PosteriorArchive, grid: PredictionGrid, seed: int = 0
) -> PredictionResult:
    """Posterior predictive SVC surfaces, occupancy probability, and
    occupancy state at every grid location for every retained draw.

    Each draw's latent surfaces are conditioned on the nearest fitted
    sites under that draw's covariance parameters, with fresh conditional
    noise, then combined with the draw's coefficients.
    """
    H = len(archive.manifest["covariate_names"])
    if grid.X0.shape[1] != H:
        raise DataError(
            f"grid design has {grid.X0.shape[1]} columns, fitted model has {H}"
        )
    if archive.model == "single":
        return _predict_single(archive, grid, seed)
    return _predict_multi(archive, grid, seed)


def _prediction_setup(archive, grid):
    fitted = CoordinateSet(archive.param("coords"))
    m = int(archive.manifest["m"])
    nbr, dist, nbr_nbr = prediction_neighbors(grid.coords, fitted, m)
    delta = np.asarray(archive.manifest["delta"])
    svc_cols = np.where(delta == 1)[0]
    return nbr, dist, nbr_nbr, svc_cols


def _conditional_surface(w_at_nbr, dist, nbr_nbr, sigma_sq, phi, gen):
    """One draw of a latent surface at the grid: kriging mean plus fresh
    conditional noise."""
    n0, k = dist.shape
    b0 = np.zeros((n0, k))
    f0 = np.empty(n0)
    _predict_bf(dist, nbr_nbr, sigma_sq, phi, b0, f0)
    return (b0 * w_at_nbr).sum(axis=1) + np.sqrt(f0) * gen.standard_normal(n0)


def _predict_single(archive, grid, seed):
    nbr, dist, nbr_nbr, svc_cols = _prediction_setup(archive, grid)
    beta = _chain_flat(archive, "beta")
    w = _chain_flat(archive, "w")
    sigma_sq = _chain_flat(archive, "sigma_sq")
    phi = _chain_flat(archive, "phi")
    T, n_svc = sigma_sq.shape
    n0 = grid.coords.shape[0]
    rng = RngStream(seed, 0)
    gen = rng.generator

    svc_draws = np.empty((T, n_svc, n0))
    psi = np.empty((T, n0))
    z = np.empty((T, n0), dtype=np.int8)
    xt0 = grid.X0[:, svc_cols]
    for t in range(T):
        eta0 = grid.X0 @ beta[t]
        for h in range(n_svc):
            w0 = _conditional_surface(
                w[t, h][nbr], dist, nbr_nbr, sigma_sq[t, h], phi[t, h], gen
            )
            svc_draws[t, h] = beta[t, svc_cols[h]] + w0
            eta0 = eta0 + xt0[:, h] * w0
        psi[t] = expit(eta0)
        z[t] = gen.random(n0) < psi[t]
    return PredictionResult(
        coords=grid.coords,
        svc_names=list(archive.manifest["svc_names"]),
        svc=svc_draws,
        psi=psi,
        z=z,
    )


def _predict_multi(archive, grid, seed):
    nbr, dist, nbr_nbr, svc_cols = _prediction_setup(archive, grid)
    beta = _chain_flat(archive, "beta")  # (T, N, H)
    w = _chain_flat(archive, "w")  # (T, n_svc, q, J)
    phi = _chain_flat(archive, "phi")  # (T, n_svc, q)
    loadings = _chain_flat(archive, "loadings")  # (T, n_svc, N, q)
    T, n_svc, q, _ = w.shape
    N = beta.shape[1]
    n0 = grid.coords.shape[0]
    rng = RngStream(seed, 0)
    gen = rng.generator

    if grid.range_mask is not None and grid.range_mask.shape != (N, n0):
        raise DataError(f"grid range mask must be (N, n0) = ({N}, {n0})")
    in_range = (
        np.ones((N, n0), dtype=bool)
        if grid.range_mask is None
        else grid.range_mask == 1
    )

    svc_draws = np.empty((T, N, n_svc, n0))
    psi = np.empty((T, N, n0))
    z = np.empty((T, N, n0), dtype=np.int8)
    xt0 = grid.X0[:, svc_cols]
    for t in range(T):
        w0 = np.empty((n_svc, q, n0))
        for h in range(n_svc):
            for r in range(q):
                w0[h, r] = _conditional_surface(
                    w[t, h, r][nbr], dist, nbr_nbr, 1.0, phi[t, h, r], gen
                )
        # species adjustments and linear predictors
        wstar = np.einsum("hnq,hqg->nhg", loadings[t], w0)
        eta0 = beta[t] @ grid.X0.T + np.einsum("gh,nhg->ng", xt0, wstar)
        svc_draws[t] = beta[t][:, svc_cols][:, :, None] + wstar
        psi_t = expit(eta0)
        z_t = (gen.random((N, n0)) < psi_t).astype(np.int8)
        psi[t] = np.where(in_range, psi_t, np.nan)
        z[t] = np.where(in_range, z_t, np.int8(-1))
    svc_draws = np.where(in_range[None, :, None, :], svc_draws, np.nan)
    return PredictionResult(
        coords=grid.coords,
        svc_names=list(archive.manifest["svc_names"]),
        svc=svc_draws,
        psi=psi,
        z=z,
        species_names=list(archive.manifest["species_names"]),
    )


@dataclass
class WaicResult:
    waic: float
    lppd: float
    p_waic: float
    per_species: pd.DataFrame | None = None


def _site_log_likelihood(psi_draws, alpha_draws, y, mask, V):
    """(T, J) log of the site-level likelihood with the occupancy state
    summed out: psi * prod Bern(y | p) + (1 - psi) * [no detections]."""
    T = psi_draws.shape[0]
    J = y.shape[0]
    none_detected = ~(y == 1).any(axis=1)
    log_l = np.empty((T, J))
    y = y.astype(np.float64)
    for t in range(T):
        tilt = V @ alpha_draws[t]
        log_p = log_expit(tilt)
        log_q = log_expit(-tilt)
        log_bern = np.where(mask, y * log_p + (1.0 - y) * log_q, 0.0).sum(axis=1)
        with np.errstate(divide="ignore"):
            t1 = np.log(psi_draws[t]) + log_bern
            t2 = np.where(none_detected, np.log1p(-psi_draws[t]), -np.inf)
        log_l[t] = np.logaddexp(t1, t2)
    return log_l


def _waic_terms(log_l):
    T = log_l.shape[0]
    lppd_sites = logsumexp(log_l, axis=0) - np.log(T)
    p_sites = log_l.var(axis=0, ddof=1) if T > 1 else np.zeros(log_l.shape[1])
    return lppd_sites, p_sites


def waic(archive: PosteriorArchive, data) -> WaicResult:
    """WAIC from the archive's occupancy probabilities and detection
    coefficient draws; per species and totalled for multi-species fits."""
    if archive.model == "single":
        log_l = _site_log_likelihood(
            _chain_flat(archive, "psi"),
            _chain_flat(archive, "alpha"),
            data.y,
            data.obs_mask,
            data.V,
        )
        lppd_sites, p_sites = _waic_terms(log_l)
        lppd, p_waic = float(lppd_sites.sum()), float(p_sites.sum())
        return WaicResult(waic=-2.0 * (lppd - p_waic), lppd=lppd, p_waic=p_waic)

    psi = _chain_flat(archive, "psi")
    alpha = _chain_flat(archive, "alpha")
    rows = []
    for i, name in enumerate(archive.manifest["species_names"]):
        sites = np.where(data.range_mask[i] == 1)[0]
        log_l = _site_log_likelihood(
            psi[:, i, sites],
            alpha[:, i],
            data.y[i, sites],
            data.obs_mask[i, sites],
            data.V[sites],
        )
        lppd_sites, p_sites = _waic_terms(log_l)
        lppd, p_waic = float(lppd_sites.sum()), float(p_sites.sum())
        rows.append(
            {
                "species": name,
                "waic": -2.0 * (lppd - p_waic),
                "lppd": lppd,
                "p_waic": p_waic,
                "n_sites": sites.size,
            }
        )
    table = pd.DataFrame(rows)
    return WaicResult(
        waic=float(table["waic"].sum()),
        lppd=float(table["lppd"].sum()),
        p_waic=float(table["p_waic"].sum()),
        per_species=table,
    )


@dataclass
class CvResult:
    deviance: float
    fold_deviances: list
    n_folds: int
    partition_seed: int


def _subset_single(data: OccupancyDataset, sites: np.ndarray) -> OccupancyDataset:
    return OccupancyDataset(
        coords=data.coords.coords[sites],
        y=np.where(data.obs_mask[sites], data.y[sites], np.nan),
        X=data.X[sites],
        V=data.V[sites],
        covariate_names=data.covariate_names,
        detection_names=data.detection_names,
        site_ids=[data.site_ids[s] for s in sites],
    )


def _subset_multi(data, sites: np.ndarray):
    from .multi import MultiSpeciesDataset

    return MultiSpeciesDataset(
        coords=data.coords.coords[sites],
        y=np.where(data.obs_mask[:, sites], data.y[:, sites], np.nan),
        X=data.X[sites],
        V=data.V[sites],
        range_mask=data.range_mask[:, sites],
        species_names=data.species_names,
        covariate_names=data.covariate_names,
        detection_names=data.detection_names,
        site_ids=[data.site_ids[s] for s in sites],
        X_species=None if data.X_species is None else data.X_species[:, sites],
    )


def kfold_cv(
    data,
    flags: SvcFlags,
    controls: McmcControls,
    folds: int = 4,
    priors=None,
    q: int | None = None,
    partition_seed: int = 0,
    prediction_seed: int = 0,
) -> CvResult:
    """Held-out deviance under a seeded site-level partition.

    Each fold refits on the complement and scores held-out sites with the
    predictive occupancy probabilities and the fitted detection
    coefficients, using the same marginalized site likelihood as WAIC.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    J = data.n_sites
    if folds > J:
        raise ValueError("more folds than sites")
    perm = np.random.Generator(np.random.Philox(key=(partition_seed, 0xF01D))).permutation(J)
    assignments = np.array_split(perm, folds)

    multi = hasattr(data, "n_species")
    fold_dev = []
    for fold, held in enumerate(assignments):
        held = np.sort(held)
        train = np.setdiff1d(np.arange(J), held)
        if multi:
            train_data = _subset_multi(data, train)
            detections = train_data.ever_detected.any(axis=1)
            if not detections.all():
                missing = [
                    train_data.species_names[i]
                    for i in np.where(~detections)[0]
                ]
                warnings.warn(
                    f"fold {fold}: no detections for species {missing}",
                    stacklevel=2,
                )
            from .multi import fit_multi

            arch = fit_multi(train_data, flags, controls, q=q, priors=priors)
        else:
            train_data = _subset_single(data, train)
            arch = fit_single(train_data, flags, controls, priors=priors)

        grid = PredictionGrid(
            coords=data.coords.coords[held],
            X0=data.X[held],
            range_mask=data.range_mask[:, held] if multi else None,
        )
        pred = predict(arch, grid, seed=prediction_seed + fold)
        alpha = _chain_flat(arch, "alpha")
        total = 0.0
        if multi:
            for i in range(data.n_species):
                sites = np.where(data.range_mask[i, held] == 1)[0]
                if sites.size == 0:
                    continue
                log_l = _site_log_likelihood(
                    pred.psi[:, i, sites],
                    alpha[:, i],
                    data.y[i, held][sites],
                    data.obs_mask[i, held][sites],
                    data.V[held][sites],
                )
                total += float(
                    (logsumexp(log_l, axis=0) - np.log(log_l.shape[0])).sum()
                )
        else:
            log_l = _site_log_likelihood(
                pred.psi,
                alpha,
                data.y[held],
                data.obs_mask[held],
                data.V[held],
            )
            total = float((logsumexp(log_l, axis=0) - np.log(log_l.shape[0])).sum())
        fold_dev.append(-2.0 * total)

    return CvResult(
        deviance=float(np.sum(fold_dev)),
        fold_deviances=fold_dev,
        n_folds=folds,
        partition_seed=partition_seed,
    )


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative")
    from scipy.stats import rankdata

    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _split_chains(draws: np.ndarray) -> np.ndarray:
    """(C, L) -> (2C, L//2), dropping one draw per chain when L is odd."""
    C, L = draws.shape
    half = L // 2
    return np.concatenate([draws[:, :half], draws[:, L - half :]], axis=0)


def _rhat_scalar(draws: np.ndarray) -> float:
    chains = _split_chains(draws)
    M, N = chains.shape
    if N < 2:
        return np.nan
    means = chains.mean(axis=1)
    s_sq = chains.var(axis=1, ddof=1)
    W = s_sq.mean()
    B = N * means.var(ddof=1)
    if W <= 0:
        return np.nan
    var_plus = (N - 1) / N * W + B / N
    return float(np.sqrt(var_plus / W))


def _ess_scalar(draws: np.ndarray) -> float:
    chains = _split_chains(draws)
    M, N = chains.shape
    if N < 4:
        return np.nan
    centered = chains - chains.mean(axis=1, keepdims=True)
    s_sq = chains.var(axis=1, ddof=1)
    W = s_sq.mean()
    if W <= 0:
        return np.nan
    B = N * chains.mean(axis=1).var(ddof=1)
    var_plus = (N - 1) / N * W + B / N

    # biased (1/N) autocovariances per split chain, via FFT
    size = 2 ** int(np.ceil(np.log2(2 * N)))
    fft = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(fft * np.conj(fft), n=size, axis=1)[:, :N].real / N
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer initial monotone positive sequence over lag pairs
    max_pairs = (N - 1) // 2
    tau = -1.0
    prev = np.inf
    for k in range(max_pairs):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    tau = max(tau, 1e-3)
    return float(M * N / tau)


def rhat_ess(archive: PosteriorArchive, names=None) -> dict:
    """Split-chain potential scale reduction and effective sample size for
    each requested parameter; returns arrays over the parameter's trailing
    dimensions. Constant chains yield NaN."""
    if archive.n_chains < 2:
        raise ValueError("need at least 2 chains for convergence diagnostics")
    if archive.n_draws < 10:
        raise ValueError("need at least 10 retained draws per chain")
    if names is None:
        names = [
            k
            for k, arr in archive.arrays.items()
            if k not in archive.manifest["static"]
            and np.issubdtype(arr.dtype, np.floating)
        ]
    elif isinstance(names, str):
        names = [names]
    out = {}
    for name in names:
        arr = archive.param(name)
        C, L = arr.shape[:2]
        flat = arr.reshape(C, L, -1)
        D = flat.shape[2]
        rhat = np.empty(D)
        ess = np.empty(D)
        for d in range(D):
            draws = flat[:, :, d]
            if np.isnan(draws).any():
                rhat[d], ess[d] = np.nan, np.nan
                continue
            rhat[d] = _rhat_scalar(draws)
            ess[d] = _ess_scalar(draws)
        out[name] = (rhat.reshape(arr.shape[2:]), ess.reshape(arr.shape[2:]))
    return out


def svc_effect_draws(archive: PosteriorArchive, svc) -> np.ndarray:
    """Draws of the full spatially-varying effect (constant part plus
    spatial adjustment) at the fitted sites, in original site order."""
    svc_names = archive.manifest["svc_names"]
    h = svc_names.index(svc) if isinstance(svc, str) else int(svc)
    delta = np.asarray(archive.manifest["delta"])
    col = np.where(delta == 1)[0][h]
    beta = _chain_flat(archive, "beta")
    if archive.model == "single":
        w = _chain_flat(archive, "w")[:, h]
        return beta[:, col][:, None] + w
    w = _chain_flat(archive, "w")[:, h]  # (T, q, J)
    lam = _chain_flat(archive, "loadings")[:, h]  # (T, N, q)
    wstar = np.einsum("tnq,tqj->tnj", lam, w)
    effect = beta[:, :, col][:, :, None] + wstar
    mask = archive.param("range_mask") == 1
    return np.where(mask[None], effect, np.nan)


def _param_labels(archive: PosteriorArchive, name: str, shape: tuple) -> list:
    man = archive.manifest
    axes = []
    if name in ("beta", "alpha") and archive.model == "multi":
        axes.append(man["species_names"])
    if name in ("beta", "mu_beta", "tau_sq_beta"):
        axes.append(man["covariate_names"])
    elif name in ("alpha", "mu_alpha", "tau_sq_alpha"):
        axes.append(man["detection_names"])
    elif name in ("sigma_sq", "phi") and archive.model == "single":
        axes.append(man["svc_names"])

    def label(idx_tuple):
        parts = []
        for axis, i in enumerate(idx_tuple):
            if axis < len(axes) and i < len(axes[axis]):
                parts.append(str(axes[axis][i]))
            else:
                parts.append(str(i))
        return "[" + ",".join(parts) + "]" if parts else ""

    return [label(t) for t in np.ndindex(shape)]


def summary_table(archive: PosteriorArchive, names=None) -> pd.DataFrame:
    """Posterior summary (mean, sd, quantiles, R-hat, ESS) per scalar
    component of the requested parameters."""
    if names is None:
        names = [
            k
            for k in ("beta", "alpha", "mu_beta", "tau_sq_beta", "mu_alpha",
                      "tau_sq_alpha", "sigma_sq", "phi", "loadings")
            if k in archive.arrays
        ]
    diag = (
        rhat_ess(archive, names)
        if archive.n_chains >= 2 and archive.n_draws >= 10
        else None
    )
    rows = []
    for name in names:
        arr = archive.param(name)
        flat = archive.stacked(name).reshape(arr.shape[0] * arr.shape[1], -1)
        labels = _param_labels(archive, name, arr.shape[2:])
        for d in range(flat.shape[1]):
            col = flat[:, d]
            q = np.percentile(col, [2.5, 50.0, 97.5])
            row = {
                "parameter": f"{name}{labels[d]}",
                "mean": col.mean(),
                "sd": col.std(ddof=1) if col.size > 1 else 0.0,
                "q2.5": q[0],
                "median": q[1],
                "q97.5": q[2],
            }
            if diag is not None:
                row["rhat"] = diag[name][0].ravel()[d]
                row["ess"] = diag[name][1].ravel()[d]
            rows.append(row)
    return pd.DataFrame(rows)
