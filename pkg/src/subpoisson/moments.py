"""Moment algebra of photon-number and integrated-intensity statistics.

Conventions used throughout: moment arrays are indexed by order, so
``W[k]`` is ``<W^k>`` with ``W[0] == 1``.  Intensity moments ``<W^k>`` are the
normally-ordered (factorial) moments ``<n (n-1) ... (n-k+1)>``.

s-ordered moments come in two flavours selected by ``ordering``:

``"amplitude"`` (default)
    thermal noise of mean ``mu = (1-s)/2`` per mode is added to the complex
    field amplitude; ``<W^k>_s = k! mu^k <L_k^(M-1)(-W/mu)>``.  At ``s=-1`` this
    reproduces the antinormally-ordered moments ``<(n+1)...(n+k)>``.
``"intensity"``
    thermal photons are added incoherently, so ``<W^k>_s`` is the binomial
    convolution of ``<W^j>`` with the thermal moments ``mu^r Gamma(M+r)/Gamma(M)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import gammaln

from .distributions import PhotonNumberDistribution
from .errors import ParameterDomainError, UndefinedValueError

__all__ = [
    "MAX_ORDER",
    "MomentSet",
    "SOrderedMomentSet",
    "TruncationWarning",
    "stirling2",
    "stirling_table",
    "factorial_moments",
    "raw_moments",
    "stirling_transform",
    "central_from_raw",
    "central_moments",
    "poisson_reference",
    "fano",
    "thermal_noise_mean",
    "s_ordered_moments",
    "s_ordered_laguerre",
    "mandel_transform",
]

MAX_ORDER = 10
ORDERINGS = ("amplitude", "intensity")


class TruncationWarning(UserWarning):
    """A moment order is not supported by the truncated distribution."""


@lru_cache(maxsize=None)
def _stirling_rows(k_max: int) -> tuple:
    rows = [[1]]  # S_0^0 = 1
    for k in range(k_max):
        prev = rows[-1] + [0]
        row = [0] * (k + 2)
        for l in range(1, k + 2):
            row[l] = l * prev[l] + prev[l - 1]
        rows.append(row)
    return tuple(tuple(r) for r in rows)


def stirling2(k: int, l: int) -> int:
    """Stirling number of the second kind ``S_k^l`` for ``1 <= l <= k``."""
    if not (1 <= l <= k):
        raise ParameterDomainError(f"stirling2 needs 1 <= l <= k, got k={k}, l={l}")
    return _stirling_rows(k)[k][l]


def stirling_table(k_max: int) -> np.ndarray:
    rows = _stirling_rows(k_max)
    S = np.zeros((k_max + 1, k_max + 1))
    for k, r in enumerate(rows):
        S[k, : len(r)] = r
    return S


def _falling(n: np.ndarray, k_max: int) -> np.ndarray:
    out = np.ones((k_max + 1, n.size))
    for k in range(1, k_max + 1):
        out[k] = out[k - 1] * (n - k + 1)
    return out


def factorial_moments(dist: PhotonNumberDistribution, k_max: int) -> np.ndarray:
    """Intensity moments ``<W^k> = sum_n n!/(n-k)! p(n)`` for ``k = 0..k_max``."""
    if k_max < 0:
        raise ParameterDomainError("k_max must be nonnegative")
    if k_max > dist.n_max and dist.tail > 0:
        warnings.warn(
            f"order {k_max} exceeds support n_max={dist.n_max}; higher intensity "
            f"moments of the truncated vector are biased by up to the tail mass {dist.tail:.1e}",
            TruncationWarning, stacklevel=2)
    return _falling(dist.support.astype(float), k_max) @ dist.probs


def raw_moments(dist: PhotonNumberDistribution, k_max: int) -> np.ndarray:
    n = dist.support.astype(float)
    return np.vander(n, k_max + 1, increasing=True).T @ dist.probs


def stirling_transform(W) -> np.ndarray:
    """Raw moments ``<n^k> = sum_l S_k^l <W^l>`` from intensity moments ``W[0..K]``."""
    W = np.asarray(W, dtype=float)
    S = stirling_table(W.size - 1)
    return S @ W


def central_from_raw(raw) -> np.ndarray:
    """Central moments from raw moments ``raw[0..K]`` (``raw[0] = 1``)."""
    raw = np.asarray(raw, dtype=float)
    m = raw[1] if raw.size > 1 else 0.0
    out = np.zeros_like(raw)
    for k in range(raw.size):
        out[k] = sum(comb(k, j) * raw[j] * (-m) ** (k - j) for j in range(k + 1))
    if out.size > 1:
        out[1] = 0.0
    return out


def central_moments(data, k_max: int | None = None) -> np.ndarray:
    """Central moments of a distribution, or of a raw-moment array."""
    if isinstance(data, PhotonNumberDistribution):
        if k_max is None:
            raise ParameterDomainError("k_max is required for a distribution")
        n = data.support.astype(float)
        d = n - data.mean
        out = np.vander(d, k_max + 1, increasing=True).T @ data.probs
        if k_max >= 1:
            out[1] = 0.0
        return out
    raw = np.asarray(data, dtype=float)
    if k_max is not None:
        raw = raw[: k_max + 1]
    return central_from_raw(raw)


def poisson_reference(mean: float, k_max: int):
    """Raw and central moments of a Poissonian field with the given mean.

    Returns ``(raw, central)`` arrays over ``k = 0..k_max``.
    """
    if mean < 0:
        raise ParameterDomainError("mean must be nonnegative")
    W = mean ** np.arange(k_max + 1, dtype=float)
    raw = stirling_transform(W)
    return raw, central_from_raw(raw)


def fano(dist: PhotonNumberDistribution) -> float:
    m = dist.mean
    if m <= 0:
        raise UndefinedValueError("Fano factor undefined for a zero-mean distribution")
    var = central_moments(dist, 2)[2]
    return float(var / m)


@dataclass
class MomentSet:
    """Intensity, raw and central moments of one field up to ``k_max``."""

    intensity: np.ndarray
    raw: np.ndarray = field(default=None)
    central_n: np.ndarray = field(default=None)
    central_W: np.ndarray = field(default=None)

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.raw is None:
            self.raw = stirling_transform(self.intensity)
        if self.central_n is None:
            self.central_n = central_from_raw(self.raw)
        if self.central_W is None:
            self.central_W = central_from_raw(self.intensity)

    @property
    def k_max(self) -> int:
        return self.intensity.size - 1

    @property
    def mean(self) -> float:
        return float(self.intensity[1])

    @classmethod
    def from_distribution(cls, dist: PhotonNumberDistribution, k_max: int = MAX_ORDER) -> "MomentSet":
        W = factorial_moments(dist, k_max)
        return cls(W, raw_moments(dist, k_max), central_moments(dist, k_max))

    @classmethod
    def from_intensity(cls, W) -> "MomentSet":
        return cls(np.asarray(W, dtype=float))

    def scaled(self, factor: float) -> "MomentSet":
        """Moments of ``W -> factor * W`` (e.g. ``1/eta`` efficiency correction)."""
        k = np.arange(self.intensity.size)
        return MomentSet.from_intensity(self.intensity * factor ** k)

    def to_json(self) -> list:
        return [
            {"k": int(k), "W": float(self.intensity[k]), "n": float(self.raw[k]),
             "dn": float(self.central_n[k]), "dW": float(self.central_W[k])}
            for k in range(self.intensity.size)
        ]

    @classmethod
    def from_json(cls, rows: list) -> "MomentSet":
        rows = sorted(rows, key=lambda r: r["k"])
        get = lambda key: np.array([r[key] for r in rows], dtype=float)  # noqa: E731
        return cls(get("W"), get("n"), get("dn"), get("dW"))


@dataclass
class SOrderedMomentSet:
    s: float
    moments: np.ndarray
    noise_modes: float = 1.0
    ordering: str = "amplitude"

    @property
    def mu(self) -> float:
        return thermal_noise_mean(self.s)

    @property
    def mean(self) -> float:
        return float(self.moments[1])

    @property
    def normal_mean(self) -> float:
        """Mean of the field before noise was added (``s = 1`` mean)."""
        return self.mean - self.noise_modes * self.mu


def thermal_noise_mean(s: float) -> float:
    """Mean thermal photon number per mode equivalent to ordering ``s``."""
    return (1.0 - s) / 2.0


def _check_s(s):
    if not -1.0 <= s <= 1.0:
        raise ParameterDomainError(f"ordering parameter s must lie in [-1, 1], got {s}")


@lru_cache(maxsize=256)
def _ordering_kernel(k_max: int, noise_modes: float, ordering: str) -> np.ndarray:
    """``K[k, j]`` with ``<W^k>_s = sum_j K[k, j] mu^(k-j) <W^j>``."""
    a = noise_modes
    K = np.zeros((k_max + 1, k_max + 1))
    for k in range(k_max + 1):
        for j in range(k + 1):
            if ordering == "amplitude":
                # k!/j! * binom(k + a - 1, k - j)
                K[k, j] = np.exp(gammaln(k + 1) - gammaln(j + 1) + gammaln(k + a)
                                 - gammaln(k - j + 1) - gammaln(j + a))
            else:
                # binom(k, j) * Gamma(a + k - j) / Gamma(a)
                K[k, j] = comb(k, j) * np.exp(gammaln(a + k - j) - gammaln(a))
    return K


def s_ordered_moments(data, s: float, k_max: int | None = None, noise_modes: float = 1.0,
                      ordering: str = "amplitude") -> SOrderedMomentSet:
    """s-ordered intensity moments ``<W^k>_s`` for ``k = 0..k_max``.

    ``data`` is a :class:`PhotonNumberDistribution` or an array of
    normally-ordered moments.  ``s = 1`` returns the input moments unchanged.
    """
    _check_s(s)
    if ordering not in ORDERINGS:
        raise ValueError(f"ordering must be one of {ORDERINGS}")
    if noise_modes <= 0:
        raise ParameterDomainError("noise_modes must be positive")
    if isinstance(data, PhotonNumberDistribution):
        W = factorial_moments(data, MAX_ORDER if k_max is None else k_max)
    else:
        W = np.asarray(data, dtype=float)
        if k_max is not None:
            W = W[: k_max + 1]
    mu = thermal_noise_mean(s)
    if mu == 0.0:
        return SOrderedMomentSet(s, W.copy(), noise_modes, ordering)
    K = _ordering_kernel(W.size - 1, float(noise_modes), ordering)
    k = np.arange(W.size)
    powers = mu ** np.clip(k[:, None] - k[None, :], 0, None)
    moments = (np.tril(K * powers)) @ W
    return SOrderedMomentSet(s, moments, noise_modes, ordering)


def _laguerre_coefficients(k: int, alpha: float) -> np.ndarray:
    """Power-series coefficients of the generalised Laguerre polynomial ``L_k^alpha``."""
    j = np.arange(k + 1)
    mag = np.exp(gammaln(k + alpha + 1) - gammaln(k - j + 1) - gammaln(j + alpha + 1)
                 - gammaln(j + 1))
    return mag * (-1.0) ** j


def s_ordered_laguerre(W, s: float, noise_modes: float = 1.0) -> np.ndarray:
    """Closed Laguerre form ``<W^k>_s = k! mu^k <L_k^(M-1)(-W/mu)>``.

    Evaluated by expanding each Laguerre polynomial in powers of ``W`` and
    averaging with the normally-ordered moments.  Cross-check for the
    ``"amplitude"`` ordering; ``s = 1`` is excluded (``mu = 0``).
    """
    _check_s(s)
    mu = thermal_noise_mean(s)
    if mu == 0.0:
        raise ParameterDomainError("Laguerre form is singular at s = 1")
    W = np.asarray(W, dtype=float)
    out = np.zeros_like(W)
    for k in range(W.size):
        coeff = _laguerre_coefficients(k, noise_modes - 1.0)
        j = np.arange(k + 1)
        # L_k(-x) expectation with x = W/mu
        avg = np.sum(coeff * (-1.0) ** j * W[: k + 1] / mu ** j)
        out[k] = np.exp(gammaln(k + 1)) * mu ** k * avg
    return out


def mandel_transform(grid, P, k):
    """Photon-number elements ``p(k) = int W^k e^-W P(W) / k! dW`` by quadrature.

    ``P`` is an intensity distribution sampled on ``grid`` (trapezoid rule);
    ``k`` may be an int or an array of ints.
    """
    from scipy.integrate import trapezoid

    grid = np.asarray(grid, dtype=float)
    P = np.asarray(P, dtype=float)
    if np.any(P < 0):
        raise ParameterDomainError("intensity distribution must be nonnegative")
    ks = np.atleast_1d(np.asarray(k))
    with np.errstate(divide="ignore"):
        logW = np.log(grid)
    out = []
    for kk in ks:
        if kk == 0:
            kernel = np.exp(-grid)
        else:
            kernel = np.exp(kk * logW - grid - gammaln(kk + 1))
        out.append(trapezoid(kernel * P, grid))
    out = np.array(out)
    return out if np.ndim(k) else float(out[0])
