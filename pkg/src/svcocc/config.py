"""Run configuration: a single YAML file per command.

The file is plain key-value with nesting; see the README for the full
schema. Parsing is strict about types and required keys and raises
ConfigError with the offending key path, so the CLI can exit with the
configuration error code before touching any data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .simulate import SimScenario
from .single import (
    GaussianPrior,
    InverseGammaPrior,
    McmcControls,
    PriorSpec,
    UniformPrior,
)
from .multi import MultiPriorSpec

__all__ = [
    "load_config",
    "config_hash",
    "FitConfig",
    "parse_fit_config",
    "parse_scenario",
    "scenario_to_config",
    "parse_mcmc",
]


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping at top level")
    return raw


def config_hash(cfg: dict) -> str:
    """Stable hash of a config mapping (key order independent)."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _get(cfg: dict, key: str, kind, default=..., path=""):
    where = f"{path}.{key}" if path else key
    if key not in cfg or cfg[key] is None:
        if default is ...:
            raise ConfigError(f"missing required config key {where!r}")
        return default
    value = cfg[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(
            f"config key {where!r} must be {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}"
        )
    return value


def parse_mcmc(cfg: dict, seed: int, path="mcmc") -> McmcControls:
    try:
        return McmcControls(
            n_iterations=_get(cfg, "n_iterations", int, path=path),
            burn_in=_get(cfg, "burn_in", int, path=path),
            thin=_get(cfg, "thin", int, 1, path=path),
            n_chains=_get(cfg, "n_chains", int, 1, path=path),
            m=_get(cfg, "m", int, 15, path=path),
            seed=seed,
            phi_proposal_sd=_get(cfg, "phi_proposal_sd", float, 1.0, path=path),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid mcmc controls: {exc}") from exc


def _parse_gaussian(cfg, key, path):
    sub = _get(cfg, key, dict, None, path=path)
    if sub is None:
        return None
    try:
        return GaussianPrior(
            mean=_get(sub, "mean", float, 0.0, path=f"{path}.{key}"),
            var=_get(sub, "var", float, path=f"{path}.{key}"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid prior {path}.{key}: {exc}") from exc


def _parse_invgamma(cfg, key, path):
    sub = _get(cfg, key, dict, None, path=path)
    if sub is None:
        return None
    try:
        return InverseGammaPrior(
            shape=_get(sub, "shape", float, path=f"{path}.{key}"),
            scale=_get(sub, "scale", float, path=f"{path}.{key}"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid prior {path}.{key}: {exc}") from exc


def _parse_uniform(cfg, key, path):
    sub = _get(cfg, key, dict, None, path=path)
    if sub is None:
        return None
    try:
        return UniformPrior(
            lower=_get(sub, "lower", float, path=f"{path}.{key}"),
            upper=_get(sub, "upper", float, path=f"{path}.{key}"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid prior {path}.{key}: {exc}") from exc


@dataclass
class FitConfig:
    """Everything a fit needs, resolved from one YAML mapping."""

    model: str
    seed: int
    output: Path
    coordinates: Path
    detections: Path
    occurrence_covariates: Path | None
    detection_covariates: Path | None
    range_mask: Path | None
    occurrence_names: list
    detection_names: list
    svc_names: list
    species: str | None
    species_order: list | None
    standardize: bool
    allow_geographic: bool
    duplicate_jitter: float | None
    q: int
    controls: McmcControls
    priors_single: PriorSpec
    priors_multi: MultiPriorSpec
    raw: dict = field(repr=False, default_factory=dict)

    def delta(self) -> list:
        names = ["intercept"] + self.occurrence_names
        unknown = [s for s in self.svc_names if s not in names]
        if unknown:
            raise ConfigError(
                f"svc names {unknown} do not match any occurrence covariate "
                f"(available: {names})"
            )
        return [1 if n in self.svc_names else 0 for n in names]


def parse_fit_config(cfg: dict, base_dir: Path | None = None) -> FitConfig:
    base = Path(base_dir) if base_dir is not None else Path(".")

    def respath(value):
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    model = _get(cfg, "model", str)
    if model not in ("single", "multi"):
        raise ConfigError(f"model must be 'single' or 'multi', got {model!r}")
    data = _get(cfg, "data", dict)
    priors_cfg = _get(cfg, "priors", dict, {})
    svc = _get(cfg, "svc", list, [])
    occurrence = _get(cfg, "occurrence", list, [])
    detection = _get(cfg, "detection", list, [])

    priors_single = PriorSpec(
        beta=_parse_gaussian(priors_cfg, "beta", "priors"),
        alpha=_parse_gaussian(priors_cfg, "alpha", "priors"),
        sigma_sq=_parse_invgamma(priors_cfg, "sigma_sq", "priors"),
        phi=_parse_uniform(priors_cfg, "phi", "priors"),
    )
    priors_multi = MultiPriorSpec(
        mu_beta=_parse_gaussian(priors_cfg, "mu_beta", "priors"),
        mu_alpha=_parse_gaussian(priors_cfg, "mu_alpha", "priors"),
        tau_sq_beta=_parse_invgamma(priors_cfg, "tau_sq_beta", "priors"),
        tau_sq_alpha=_parse_invgamma(priors_cfg, "tau_sq_alpha", "priors"),
        phi=_parse_uniform(priors_cfg, "phi", "priors"),
    )

    seed = _get(cfg, "seed", int, 0)
    q = _get(cfg, "factors", int, 1)
    if model == "multi" and q < 1:
        raise ConfigError("factors must be at least 1 for multi-species fits")

    return FitConfig(
        model=model,
        seed=seed,
        output=respath(_get(cfg, "output", str)),
        coordinates=respath(_get(data, "coordinates", str, path="data")),
        detections=respath(_get(data, "detections", str, path="data")),
        occurrence_covariates=respath(
            _get(data, "occurrence_covariates", str, None, path="data")
        ),
        detection_covariates=respath(
            _get(data, "detection_covariates", str, None, path="data")
        ),
        range_mask=respath(_get(data, "range_mask", str, None, path="data")),
        occurrence_names=[str(s) for s in occurrence],
        detection_names=[str(s) for s in detection],
        svc_names=[str(s) for s in svc],
        species=_get(data, "species", str, None, path="data"),
        species_order=_get(data, "species_order", list, None, path="data"),
        standardize=_get(data, "standardize", bool, False, path="data"),
        allow_geographic=_get(data, "allow_geographic", bool, False, path="data"),
        duplicate_jitter=_get(data, "duplicate_jitter", float, None, path="data"),
        q=q,
        controls=parse_mcmc(_get(cfg, "mcmc", dict), seed),
        priors_single=priors_single,
        priors_multi=priors_multi,
        raw=cfg,
    )

    # occurrence covariates are required when names are given
    # (checked lazily by ingestion, which knows the files)


def parse_scenario(cfg: dict, path="simulate.scenario") -> SimScenario:
    """Nested scenario config -> SimScenario. Either ``phi`` or
    ``effective_range`` (decay = 3 / range) specifies each process."""

    def process(key):
        sub = _get(cfg, key, dict, None, path=path)
        if sub is None:
            return None, None
        s2 = _get(sub, "sigma_sq", float, 0.0, path=f"{path}.{key}")
        if "phi" in sub and sub["phi"] is not None:
            phi = _get(sub, "phi", float, path=f"{path}.{key}")
        else:
            rng_ = _get(sub, "effective_range", float, None, path=f"{path}.{key}")
            phi = None if rng_ is None else 3.0 / rng_
        if s2 > 0 and phi is None:
            raise ConfigError(
                f"{path}.{key} needs 'phi' or 'effective_range' when sigma_sq > 0"
            )
        return (s2 if s2 > 0 else None), phi

    det = _get(cfg, "detection", dict, {}, path=path)
    int_s2, int_phi = process("intercept_process")
    cov_s2, cov_phi = process("covariate_process")
    try:
        return SimScenario(
            n_sites=_get(cfg, "n_sites", int, 400, path=path),
            n_replicates=_get(cfg, "n_replicates", int, 5, path=path),
            beta_intercept=_get(cfg, "beta_intercept", float, 0.0, path=path),
            beta_covariate=_get(cfg, "beta_covariate", float, 0.0, path=path),
            intercept_sigma_sq=int_s2 if int_s2 is not None else 0.0,
            intercept_phi=int_phi if int_phi is not None else 3.0 / 0.8,
            covariate_sigma_sq=cov_s2,
            covariate_phi=cov_phi,
            det_slope=_get(det, "slope", float, 0.4, path=f"{path}.detection"),
            mean_detection=_get(det, "mean", float, 0.45, path=f"{path}.detection"),
            det_intercept=_get(det, "intercept", float, None, path=f"{path}.detection"),
            n_datasets=_get(cfg, "n_datasets", int, 1, path=path),
            seed=_get(cfg, "seed", int, 0, path=path),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def scenario_to_config(scenario: SimScenario) -> dict:
    """Inverse of parse_scenario; round-trips exactly."""
    cfg = {
        "n_sites": scenario.n_sites,
        "n_replicates": scenario.n_replicates,
        "beta_intercept": scenario.beta_intercept,
        "beta_covariate": scenario.beta_covariate,
        "intercept_process": (
            {"sigma_sq": scenario.intercept_sigma_sq, "phi": scenario.intercept_phi}
            if scenario.intercept_sigma_sq
            else None
        ),
        "covariate_process": (
            {"sigma_sq": scenario.covariate_sigma_sq, "phi": scenario.covariate_phi}
            if scenario.covariate_sigma_sq
            else None
        ),
        "detection": {
            "slope": scenario.det_slope,
            "mean": scenario.mean_detection,
            "intercept": scenario.det_intercept,
        },
        "n_datasets": scenario.n_datasets,
        "seed": scenario.seed,
    }
    return cfg
