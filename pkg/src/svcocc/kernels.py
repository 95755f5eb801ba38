"""Random-number and distribution kernels used by the Gibbs samplers.

Provides counter-based RNG streams (one per chain), exact Polya-Gamma
PG(1, c) sampling, multivariate normal draws parameterized by precision,
and logit-scale helpers. The PG sampler is the alternating-series
rejection method for shape 1, so draws are exact up to the documented
series truncation of that scheme (no moment-matching approximations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit as _expit
from scipy.special import logit as _logit

from .errors import NumericalError

__all__ = [
    "RngStream",
    "pg_draw",
    "pg_draw_array",
    "mvn_conditional_draw",
    "logit",
    "ilogit",
    "pg_mean",
    "pg_var",
]

# Truncation point of the alternating-series sampler; the classic choice
# that balances the inverse-Gaussian and exponential proposal regions.
_TRUNC = 0.64
_TRUNC_RECIP = 1.0 / _TRUNC


@dataclass
class RngStream:
    """Counter-based random stream, one per chain/worker.

    Identical ``(seed, stream_id)`` pairs reproduce identical draw
    sequences; distinct ``stream_id`` values give streams that are
    independent by construction (distinct Philox keys).
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        key = (np.uint64(self.seed), np.uint64(self.stream_id))
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_id: int) -> "RngStream":
        """New independent stream under the same seed."""
        return RngStream(self.seed, stream_id)


def logit(p):
    """Log-odds of ``p``; requires 0 < p < 1 elementwise."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("logit requires probabilities strictly inside (0, 1)")
    out = _logit(p)
    return float(out) if out.ndim == 0 else out


def ilogit(x):
    """Inverse logit, numerically stable across the full double range."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)):
        raise ValueError("ilogit received NaN input")
    out = _expit(x)
    return float(out) if out.ndim == 0 else out


def pg_mean(c: float) -> float:
    """Analytic mean of PG(1, c): tanh(c/2) / (2c), -> 1/4 as c -> 0."""
    c = abs(c)
    if c < 1e-8:
        return 0.25
    return math.tanh(c / 2.0) / (2.0 * c)


def pg_var(c: float) -> float:
    """Analytic variance of PG(1, c), -> 1/24 as c -> 0."""
    c = abs(c)
    if c < 1e-4:
        return 1.0 / 24.0
    sech_sq = 1.0 / math.cosh(c / 2.0) ** 2
    return sech_sq * (math.sinh(c) - c) / (4.0 * c**3)


@njit(cache=True, inline="always")
def _a_coef(n, x):
    # n-th coefficient of the alternating series for the Jacobi density,
    # piecewise around the truncation point.
    d = n + 0.5
    if x > _TRUNC:
        return math.pi * d * math.exp(-0.5 * d * d * math.pi * math.pi * x)
    return math.pi * d * (2.0 / (math.pi * x)) ** 1.5 * math.exp(-2.0 * d * d / x)


@njit(cache=True, inline="always")
def _mass_texpon(z):
    # P(proposal falls in the exponential right-tail region), i.e.
    # p / (p + q) for the two-part proposal.
    fz = 0.125 * math.pi * math.pi + 0.5 * z * z
    b = math.sqrt(_TRUNC_RECIP) * (_TRUNC * z - 1.0)
    a = -math.sqrt(_TRUNC_RECIP) * (_TRUNC * z + 1.0)
    x0 = math.log(fz) + fz * _TRUNC
    # log Phi via erfc; guard hard underflow of the far tail
    eb = math.erfc(-b / math.sqrt(2.0))
    ea = math.erfc(-a / math.sqrt(2.0))
    xb = x0 - z + math.log(0.5 * eb) if eb > 0.0 else -np.inf
    xa = x0 + z + math.log(0.5 * ea) if ea > 0.0 else -np.inf
    qdivp = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@njit(cache=True)
def _rtigauss(gen, z):
    # Inverse-Gaussian(1/z, 1) truncated to (0, TRUNC].
    x = _TRUNC + 1.0
    if _TRUNC_RECIP > z:
        # mean beyond the truncation point: one-sided stable style rejection
        alpha = 0.0
        while gen.random() > alpha:
            e1 = gen.standard_exponential()
            e2 = gen.standard_exponential()
            while e1 * e1 > 2.0 * e2 / _TRUNC:
                e1 = gen.standard_exponential()
                e2 = gen.standard_exponential()
            x = _TRUNC / ((1.0 + _TRUNC * e1) * (1.0 + _TRUNC * e1))
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > _TRUNC:
            y = gen.standard_normal()
            y = y * y
            mu_y = mu * y
            x = mu + 0.5 * mu * mu_y - 0.5 * mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if gen.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@njit(cache=True)
def _pg_draw_scalar(gen, tilt):
    # Exact PG(1, tilt) draw: sample the Jacobi J*(1, |tilt|/2) variable by
    # alternating-series rejection, then rescale by 1/4.
    z = 0.5 * abs(tilt)
    fz = 0.125 * math.pi * math.pi + 0.5 * z * z
    p_right = _mass_texpon(z)
    while True:
        if gen.random() < p_right:
            x = _TRUNC + gen.standard_exponential() / fz
        else:
            x = _rtigauss(gen, z)
        s = _a_coef(0, x)
        y = gen.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _a_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _a_coef(n, x)
                if y > s:
                    break


@njit(cache=True)
def _pg_draw_fill(gen, tilts, out):
    for i in range(tilts.shape[0]):
        out[i] = _pg_draw_scalar(gen, tilts[i])


def pg_draw(rng: RngStream, tilt: float) -> float:
    """One exact draw from PG(1, tilt)."""
    if not math.isfinite(tilt):
        raise ValueError(f"PG tilt must be finite, got {tilt!r}")
    return float(_pg_draw_scalar(rng.generator, float(tilt)))


def pg_draw_array(rng: RngStream, tilts: np.ndarray) -> np.ndarray:
    """Elementwise exact PG(1, tilt) draws for an array of tilts."""
    tilts = np.ascontiguousarray(tilts, dtype=np.float64)
    if not np.all(np.isfinite(tilts)):
        raise ValueError("PG tilts must all be finite")
    out = np.empty_like(tilts)
    _pg_draw_fill(rng.generator, tilts.ravel(), out.ravel())
    return out


def mvn_conditional_draw(
    rng: RngStream,
    precision: np.ndarray,
    linear_term: np.ndarray,
    context: str = "",
) -> np.ndarray:
    """Draw from Normal(precision^-1 @ linear_term, precision^-1).

    Uses a single Cholesky factorization; no explicit inverse is formed.
    On factorization failure, 1e-6 times the mean diagonal is added once
    and the factorization retried before raising NumericalError.
    """
    precision = np.asarray(precision, dtype=np.float64)
    linear_term = np.asarray(linear_term, dtype=np.float64)
    if precision.ndim != 2 or precision.shape[0] != precision.shape[1]:
        raise ValueError("precision must be a square matrix")
    if linear_term.shape != (precision.shape[0],):
        raise ValueError("linear_term length must match precision dimension")

    try:
        lower = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        jitter = 1e-6 * np.mean(np.diag(precision))
        try:
            lower = np.linalg.cholesky(precision + jitter * np.eye(precision.shape[0]))
        except np.linalg.LinAlgError as exc:
            where = f" ({context})" if context else ""
            raise NumericalError(
                f"precision matrix not positive definite after jitter{where}"
            ) from exc
    # mean = P^-1 b via the factor; draw = mean + L^-T eps
    u = np.linalg.solve(lower, linear_term)
    mean = np.linalg.solve(lower.T, u)
    eps = rng.generator.standard_normal(precision.shape[0])
    return mean + np.linalg.solve(lower.T, eps)
