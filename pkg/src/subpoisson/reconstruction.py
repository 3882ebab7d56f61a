"""Detector inversion by expectation-maximization and intensity quasi-distributions.

The EM iteration is the standard multiplicative maximum-likelihood update for
a linear Poisson/multinomial model ``f = T p``::

    p'(n) = p(n) * sum_c f(c) T(c, n) / (T p)(c)

The quasi-distribution of an s-ordered intensity is written as the law of a
Poissonian field with the same s-ordered mean plus a declination built from
an exponentially weighted Laguerre series whose coefficients are fixed by the
moment ratios ``r^(l) = <W^l>_s / <W>_s^l - 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln, ive

from .detector import DetectionMatrix
from .distributions import PhotonNumberDistribution
from .errors import DimensionError, ModelMismatchError, NumericalError, ParameterDomainError
from .moments import SOrderedMomentSet, s_ordered_moments, thermal_noise_mean

__all__ = [
    "EMConfig",
    "EMDiagnostics",
    "loglikelihood",
    "em_step",
    "em_run",
    "default_n_max",
    "laguerre",
    "quasi_coefficients",
    "quasi_delta",
    "laguerre_argument_sign",
    "poisson_quasi",
    "QuasiDistribution",
    "quasi_distribution",
]

# allowed round-off in the per-step likelihood comparison
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class EMConfig:
    max_iters: int = 20000
    tol: float = 1e-9
    floor: float = 1e-12

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterDomainError("EM tolerance must be positive")
        if self.floor < 0:
            raise ParameterDomainError("EM probability floor must be nonnegative")
        if self.max_iters < 0:
            raise ParameterDomainError("max_iters must be nonnegative")


@dataclass
class EMDiagnostics:
    iterations: int
    loglik: float
    converged: bool
    monotone: bool = True
    history: list = field(default_factory=list)

    @property
    def unconverged(self) -> bool:
        return not self.converged

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "loglik": self.loglik,
                "converged": self.converged, "monotone": self.monotone}


def _prepare(hist, mat: DetectionMatrix) -> np.ndarray:
    f = np.asarray(hist, dtype=float)
    if f.ndim != 1 or np.any(f < 0):
        raise ParameterDomainError("photocount histogram must be a nonnegative vector")
    total = f.sum()
    if not total > 0:
        raise ModelMismatchError("empty photocount histogram")
    f = f / total
    rows = mat.c_max + 1
    if f.size > rows:
        if np.any(f[rows:] > 0):
            raise ModelMismatchError(
                f"histogram has counts above the matrix photocount bound c_max={mat.c_max}")
        f = f[:rows]
    elif f.size < rows:
        f = np.pad(f, (0, rows - f.size))
    return f


def _probs(current, n_max: int) -> np.ndarray:
    p = current.probs if isinstance(current, PhotonNumberDistribution) else np.asarray(current, float)
    if p.size != n_max + 1:
        raise DimensionError(f"distribution length {p.size} does not match matrix n_max={n_max}")
    return p


def loglikelihood(p, hist, mat: DetectionMatrix) -> float:
    """Per-shot log-likelihood ``sum_c f(c) log (T p)(c)`` of normalized data."""
    f = _prepare(hist, mat)
    q = mat.T @ _probs(p, mat.n_max)
    mask = f > 0
    if np.any(q[mask] <= 0):
        return -math.inf
    return float(np.dot(f[mask], np.log(q[mask])))


def _update(p: np.ndarray, f: np.ndarray, T: np.ndarray, floor: float):
    q = T @ p
    mask = f > 0
    if np.any(q[mask] <= 0):
        bad = np.nonzero(mask & (q <= 0))[0].tolist()
        raise ModelMismatchError(f"model gives zero probability to observed photocounts {bad}")
    ratio = np.zeros_like(f)
    ratio[mask] = f[mask] / q[mask]
    new = p * (T.T @ ratio)
    if floor > 0:
        new = np.maximum(new, floor)
    new /= new.sum()
    ll = float(np.dot(f[mask], np.log(q[mask])))
    return new, ll


def em_step(current, hist, mat: DetectionMatrix, floor: float = 1e-12) -> PhotonNumberDistribution:
    """One multiplicative EM update; the result is normalized."""
    f = _prepare(hist, mat)
    p = _probs(current, mat.n_max)
    new, _ = _update(p, f, mat.T, floor)
    return PhotonNumberDistribution(new)


def default_n_max(hist, eta: float, factor: float = 4.0, minimum: int = 10) -> int:
    """Reconstruction support ``factor * <c> / eta`` (never below the histogram support)."""
    f = np.asarray(hist, dtype=float)
    f = f / f.sum()
    mean_c = float(np.dot(np.arange(f.size), f))
    support = int(np.max(np.nonzero(f)[0])) if np.any(f > 0) else 0
    guess = int(math.ceil(factor * mean_c / eta)) if eta > 0 else support
    return max(guess, support, minimum)


def em_run(start, hist, mat: DetectionMatrix, config: EMConfig | None = None,
           keep_history: bool = False):
    """Iterate the EM update to a steady state.

    ``start`` may be ``None`` for a uniform start over ``0..mat.n_max``.
    Stops when the relative change of the log-likelihood drops below
    ``config.tol`` or after ``config.max_iters`` steps.  A likelihood decrease
    beyond round-off raises :class:`NumericalError`; the EM update cannot
    decrease it, so such a step means the inputs are corrupt.

    Returns ``(PhotonNumberDistribution, EMDiagnostics)``.
    """
    config = config or EMConfig()
    f = _prepare(hist, mat)
    if start is None:
        p = np.full(mat.n_max + 1, 1.0 / (mat.n_max + 1))
    else:
        p = _probs(start, mat.n_max).astype(float)
        if config.floor > 0:
            p = np.maximum(p, config.floor)
        p = p / p.sum()
    T = mat.T
    history = []
    prev = None
    converged = False
    it = 0
    while it < config.max_iters:
        new, ll = _update(p, f, T, config.floor)
        if keep_history:
            history.append(ll)
        if prev is not None:
            slack = MONOTONE_SLACK * max(1.0, abs(prev))
            if ll < prev - slack:
                raise NumericalError(
                    f"EM log-likelihood decreased at iteration {it}: {prev!r} -> {ll!r}")
            if abs(ll - prev) <= config.tol * max(1.0, abs(ll)):
                converged = True
                break
        prev = ll
        p = new
        it += 1
    if config.max_iters == 0:
        converged = False
    final_ll = loglikelihood(p, f, mat)
    diag = EMDiagnostics(it, final_ll, converged, True, history)
    return PhotonNumberDistribution(p), diag


# --------------------------------------------------------------------------- #
# quasi-distributions


def laguerre(j_max: int, x, alpha: float = 0.0) -> np.ndarray:
    """``L_j^alpha(x)`` for ``j = 0..j_max`` by the three-term recurrence; shape ``(j_max+1, len(x))``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((j_max + 1,) + x.shape)
    out[0] = 1.0
    if j_max >= 1:
        out[1] = 1.0 + alpha - x
    for j in range(1, j_max):
        out[j + 1] = ((2 * j + 1 + alpha - x) * out[j] - (j + alpha) * out[j - 1]) / (j + 1)
    return out


def quasi_coefficients(ratios, mean_s: float) -> np.ndarray:
    """Series coefficients ``c_j = (j!/a) sum_l (-1)^l r^(l) / ((l!)^2 (j-l)!)``."""
    r = np.asarray(ratios, dtype=float)
    J = r.size - 1
    c = np.zeros(J + 1)
    for j in range(J + 1):
        l = np.arange(j + 1)
        logw = gammaln(j + 1) - 2 * gammaln(l + 1) - gammaln(j - l + 1)
        c[j] = np.sum((-1.0) ** l * r[: j + 1] * np.exp(logw)) / mean_s
    return c


REFERENCES = ("poisson", "literal")


def _ratios(moments_s: SOrderedMomentSet, J: int, reference: str = "poisson") -> np.ndarray:
    """Scaled moment declinations ``r^(l)`` for ``l = 0..J``.

    ``"poisson"`` subtracts the s-ordered moments of the Poissonian field with
    the same mean, so the series is exactly ``P - P_Pois`` in its first ``J``
    moments and vanishes for Poissonian input.  ``"literal"`` uses
    ``<W^l>_s / <W>_s^l - 1``, i.e. a declination from a point mass at
    ``<W>_s``; the two coincide at ``s = 1``.
    """
    if reference not in REFERENCES:
        raise ValueError(f"reference must be one of {REFERENCES}")
    m = np.asarray(moments_s.moments, dtype=float)
    if m.size <= J:
        raise ParameterDomainError(
            f"series order J={J} needs s-ordered moments up to order {J}, have {m.size - 1}")
    a = m[1]
    if not a > 0:
        raise ParameterDomainError("quasi-distribution needs a positive s-ordered mean")
    l = np.arange(J + 1)
    if reference == "literal":
        ref = a ** l
    else:
        m0 = moments_s.normal_mean
        ref = s_ordered_moments(m0 ** l.astype(float), moments_s.s,
                                noise_modes=moments_s.noise_modes,
                                ordering=moments_s.ordering).moments
    r = (m[: J + 1] - ref) / a ** l
    r[:2] = 0.0
    return r


def _delta(r: np.ndarray, a: float, grid: np.ndarray, sign: int) -> np.ndarray:
    c = quasi_coefficients(r, a)
    x = grid / a
    L = laguerre(r.size - 1, sign * x)
    return np.exp(-x) * (c @ L)


@lru_cache(maxsize=1)
def laguerre_argument_sign() -> int:
    """Sign of the Laguerre argument that makes the declination integrate to zero.

    The two candidates ``L_j(+W/a)`` and ``L_j(-W/a)`` are integrated on a long
    fine grid for a test field; exactly one must satisfy the zero-integral
    property.  The result is cached for the process.
    """
    # sub-Poissonian test field: binomial(6, 1/2), moments at s = 1/2
    p = np.array([math.comb(6, n) for n in range(7)], dtype=float) / 64.0
    ms = s_ordered_moments(PhotonNumberDistribution(p), 0.5, k_max=8)
    r = _ratios(ms, 8, "literal")
    a = ms.mean
    grid = np.linspace(0.0, 120.0 * a, 300001)
    scores = {}
    for sign in (1, -1):
        d = _delta(r, a, grid, sign)
        scores[sign] = abs(trapezoid(d, grid)) / trapezoid(np.abs(d), grid)
    good = [s for s, v in scores.items() if v < 1e-6]
    if len(good) != 1:
        raise NumericalError(f"Laguerre sign resolution is ambiguous: {scores}")
    return good[0]


def quasi_delta(moments_s: SOrderedMomentSet, grid, J: int = 10, sign: int | None = None,
                reference: str = "poisson") -> np.ndarray:
    """Declination ``dP(W; s)`` on ``grid`` from s-ordered moments up to order ``J``."""
    if J < 0:
        raise ParameterDomainError("series order J must be nonnegative")
    r = _ratios(moments_s, J, reference)
    if sign is None:
        sign = laguerre_argument_sign()
    return _delta(r, moments_s.mean, np.asarray(grid, dtype=float), sign)


def poisson_quasi(mean: float, s: float, M: float = 1.0, grid=None,
                  ordering: str = "amplitude") -> np.ndarray:
    """s-ordered intensity quasi-distribution of a Poissonian field.

    A point intensity ``mean`` blurred by ``M``-mode thermal noise of mean
    ``mu = (1-s)/2`` per mode.  With ``ordering="amplitude"`` this is the
    noncentral chi-squared (Rician) law; with ``"intensity"`` the noise
    shifts a gamma law by ``mean``.
    """
    if s >= 1:
        raise ParameterDomainError("at s = 1 the Poissonian quasi-distribution is a delta function")
    if s < -1:
        raise ParameterDomainError("ordering parameter s must lie in [-1, 1]")
    if mean < 0 or M <= 0:
        raise ParameterDomainError("mean must be nonnegative and M positive")
    W = np.asarray(grid, dtype=float)
    mu = thermal_noise_mean(s)

    def gamma_pdf(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp((M - 1) * np.log(x[pos] / mu) - x[pos] / mu - gammaln(M)) / mu
        if M == 1:
            out[x == 0] = 1.0 / mu
        elif M < 1:
            out[x == 0] = np.inf
        return out

    if ordering == "intensity":
        return gamma_pdf(W - mean)
    if ordering != "amplitude":
        raise ValueError(f"unknown ordering {ordering!r}")
    if mean == 0:
        return gamma_pdf(W)
    out = np.zeros_like(W)
    pos = W > 0
    Wp = W[pos]
    with np.errstate(divide="ignore"):
        x = 2.0 * np.sqrt(Wp * mean) / mu
        logv = (0.5 * (M - 1) * np.log(Wp / mean) - (np.sqrt(Wp) - np.sqrt(mean)) ** 2 / mu
                + np.log(ive(M - 1, x)) - np.log(mu))
    out[pos] = np.exp(logv)
    zero = W == 0
    if np.any(zero):
        out[zero] = (np.exp(-mean / mu) / mu if M == 1 else (0.0 if M > 1 else np.inf))
    return out


@dataclass
class QuasiDistribution:
    grid: np.ndarray
    values: np.ndarray
    delta: np.ndarray
    poisson: np.ndarray
    s: float
    J: int
    mean_s: float
    sign: int
    tolerance: float
    reference: str = "poisson"

    @property
    def min_value(self) -> float:
        return float(self.values.min())

    @property
    def min_location(self) -> float:
        return float(self.grid[int(np.argmin(self.values))])

    @property
    def negative(self) -> bool:
        return self.min_value < -self.tolerance

    def metadata(self) -> dict:
        return {
            "s": self.s,
            "J": self.J,
            "mean_s": self.mean_s,
            "laguerre_argument": "+W/<W>_s" if self.sign > 0 else "-W/<W>_s",
            "reference": self.reference,
            "min_value": self.min_value,
            "min_location": self.min_location,
            "negative": self.negative,
            "tolerance": self.tolerance,
            "grid": [float(self.grid[0]), float(self.grid[-1]), int(self.grid.size)],
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("W,P,dP,P_pois\n")
            for w, v, d, pp in zip(self.grid, self.values, self.delta, self.poisson):
                fh.write(f"{float(w)!r},{float(v)!r},{float(d)!r},{float(pp)!r}\n")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2)


def quasi_distribution(dist, s: float, grid=None, J: int = 10, noise_modes: float = 1.0,
                       points: int = 2000, span: float = 5.0,
                       tolerance: float = 1e-6, reference: str = "poisson") -> QuasiDistribution:
    """``P(W; s) = P_Pois(W; s) + dP(W; s)`` on ``grid`` (default ``0..span*<W>_s``).

    ``dist`` is a photon-number distribution or a vector of normally-ordered
    intensity moments.  The Poissonian reference has the same normally-ordered
    mean, hence the same s-ordered mean.
    """
    ms = s_ordered_moments(dist, s, k_max=max(J, 1), noise_modes=noise_modes)
    if grid is None:
        grid = np.linspace(0.0, span * ms.mean, points)
    grid = np.asarray(grid, dtype=float)
    sign = laguerre_argument_sign()
    d = quasi_delta(ms, grid, J, sign, reference)
    pp = poisson_quasi(ms.normal_mean, s, noise_modes, grid)
    return QuasiDistribution(grid, pp + d, d, pp, float(s), int(J), float(ms.mean), sign,
                             tolerance, reference)
