"""Photon-number laws of multimode chaotic fields and of the twin beam.

A twin beam is modelled as three independent chaotic components: photon
pairs shared by signal and idler, noise photons in the signal arm and noise
photons in the idler arm.  Each component follows the Mandel-Rice law
(a negative binomial with real shape ``M`` and per-mode mean ``B``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import nbinom

from .errors import DimensionError, ParameterDomainError, TruncationError

__all__ = [
    "DEFAULT_TAIL",
    "PhotonNumberDistribution",
    "JointPhotonDistribution",
    "TwinBeamParams",
    "mandel_rice_pmf",
    "mandel_rice_sample",
    "truncation_bound",
    "twb_joint_pmf",
    "sample_twb",
    "poisson_pmf",
    "fock_state",
    "thermal_pmf",
]

DEFAULT_TAIL = 1e-12
DEFAULT_CAP = 5000


@dataclass
class PhotonNumberDistribution:
    """Truncated probability vector over counts ``n = 0..n_max``.

    Used both for photon numbers and for photocounts; the algebra is the
    same.  ``tail`` is an upper estimate of the probability mass discarded
    by truncation (0 when the support is exact).
    """

    probs: np.ndarray
    tail: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise DimensionError("probability vector must be 1-D and non-empty")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ParameterDomainError("probabilities must be finite and nonnegative")
        self.probs = p

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.probs.size)

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    def total(self) -> float:
        return float(self.probs.sum())

    def normalized(self) -> "PhotonNumberDistribution":
        s = self.total()
        if s <= 0:
            raise ParameterDomainError("cannot normalise an all-zero vector")
        return PhotonNumberDistribution(self.probs / s, self.tail)

    def padded(self, n_max: int) -> "PhotonNumberDistribution":
        """Zero-pad (never truncate) to a larger support."""
        if n_max < self.n_max:
            raise DimensionError(f"cannot pad n_max={self.n_max} down to {n_max}")
        p = np.zeros(n_max + 1)
        p[: self.probs.size] = self.probs
        return PhotonNumberDistribution(p, self.tail)

    @classmethod
    def from_counts(cls, counts) -> "PhotonNumberDistribution":
        c = np.asarray(counts, dtype=float)
        return cls(c).normalized()


@dataclass
class JointPhotonDistribution:
    """Probabilities ``probs[n_s, n_i]`` of a two-arm field."""

    probs: np.ndarray
    tail: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise DimensionError("joint distribution must be 2-D")
        if np.any(p < 0):
            raise ParameterDomainError("probabilities must be nonnegative")
        self.probs = p

    @property
    def n_max_s(self) -> int:
        return self.probs.shape[0] - 1

    @property
    def n_max_i(self) -> int:
        return self.probs.shape[1] - 1

    def marginal_signal(self) -> PhotonNumberDistribution:
        return PhotonNumberDistribution(self.probs.sum(axis=1), self.tail)

    def marginal_idler(self) -> PhotonNumberDistribution:
        return PhotonNumberDistribution(self.probs.sum(axis=0), self.tail)


@dataclass(frozen=True)
class TwinBeamParams:
    """Mode numbers ``M*`` and per-mode means ``B*`` of the pair (p),
    signal-noise (s) and idler-noise (i) components."""

    Mp: float
    Bp: float
    Ms: float = 1.0
    Bs: float = 0.0
    Mi: float = 1.0
    Bi: float = 0.0

    KEYS = ("Mp", "Bp", "Ms", "Bs", "Mi", "Bi")

    def __post_init__(self):
        for name in ("Mp", "Ms", "Mi"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ParameterDomainError(f"{name} must be positive, got {v}")
        for name in ("Bp", "Bs", "Bi"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ParameterDomainError(f"{name} must be nonnegative, got {v}")

    @property
    def pair_mean(self) -> float:
        return self.Mp * self.Bp

    @property
    def signal_mean(self) -> float:
        return self.Mp * self.Bp + self.Ms * self.Bs

    @property
    def idler_mean(self) -> float:
        return self.Mp * self.Bp + self.Mi * self.Bi

    def components(self):
        return {"p": (self.Mp, self.Bp), "s": (self.Ms, self.Bs), "i": (self.Mi, self.Bi)}

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> "TwinBeamParams":
        missing = [k for k in cls.KEYS if k not in d]
        if missing:
            raise ParameterDomainError(f"twin-beam parameters missing keys: {missing}")
        extra = sorted(set(d) - set(cls.KEYS))
        if extra:
            raise ParameterDomainError(f"unknown twin-beam parameter keys: {extra}")
        try:
            return cls(**{k: float(d[k]) for k in cls.KEYS})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParameterDomainError):
                raise
            raise ParameterDomainError(f"non-numeric twin-beam parameter: {exc}") from exc


def _check_mandel_rice(M, B):
    if not np.isfinite(M) or M <= 0:
        raise ParameterDomainError(f"mode number M must be positive, got {M}")
    if not np.isfinite(B) or B < 0:
        raise ParameterDomainError(f"mean per mode B must be nonnegative, got {B}")


def truncation_bound(M: float, B: float, tail: float = DEFAULT_TAIL,
                     cap: int = DEFAULT_CAP) -> int:
    """Smallest ``n`` whose Mandel-Rice cumulative mass reaches ``1 - tail``."""
    _check_mandel_rice(M, B)
    if B == 0:
        return 0
    n = nbinom.isf(tail, M, 1.0 / (1.0 + B))
    if not np.isfinite(n):
        return cap
    return int(min(max(n, 0), cap))


def mandel_rice_pmf(M: float, B: float, n_max: int | None = None,
                    tail: float = DEFAULT_TAIL) -> PhotonNumberDistribution:
    """Mandel-Rice photon-number distribution of an ``M``-mode chaotic field.

    ``p(n) = Gamma(n+M) / (n! Gamma(M)) * B**n / (1+B)**(n+M)``, evaluated in
    log space.  ``M=1`` gives the geometric (single-mode thermal) law.

    Parameters
    ----------
    M : float
        Number of modes, any positive real.
    B : float
        Mean photon number per mode.
    n_max : int, optional
        Truncation bound.  Chosen adaptively from ``tail`` when omitted.
    """
    _check_mandel_rice(M, B)
    if n_max is None:
        n_max = truncation_bound(M, B, tail)
    if n_max < 0:
        raise ParameterDomainError("n_max must be nonnegative")
    p = np.zeros(n_max + 1)
    if B == 0:
        p[0] = 1.0
        return PhotonNumberDistribution(p, 0.0)
    n = np.arange(n_max + 1)
    logp = (gammaln(n + M) - gammaln(n + 1) - gammaln(M)
            + n * np.log(B) - (n + M) * np.log1p(B))
    p = np.exp(logp)
    tail_mass = float(nbinom.sf(n_max, M, 1.0 / (1.0 + B)))
    return PhotonNumberDistribution(p, tail_mass)


def poisson_pmf(mean: float, n_max: int | None = None,
                tail: float = DEFAULT_TAIL) -> PhotonNumberDistribution:
    from scipy.stats import poisson

    if mean < 0:
        raise ParameterDomainError("Poisson mean must be nonnegative")
    if n_max is None:
        n_max = 0 if mean == 0 else int(poisson.isf(tail, mean))
    n = np.arange(n_max + 1)
    return PhotonNumberDistribution(poisson.pmf(n, mean), float(poisson.sf(n_max, mean)))


def fock_state(n: int, n_max: int | None = None) -> PhotonNumberDistribution:
    n_max = n if n_max is None else n_max
    p = np.zeros(n_max + 1)
    p[n] = 1.0
    return PhotonNumberDistribution(p)


def thermal_pmf(mean: float, n_max: int | None = None,
                tail: float = DEFAULT_TAIL) -> PhotonNumberDistribution:
    """Single-mode thermal (Bose-Einstein) law."""
    return mandel_rice_pmf(1.0, mean, n_max, tail)


def _convolved_bound(a: np.ndarray, b: np.ndarray, tail: float) -> int:
    conv = np.convolve(a, b)
    sf = np.cumsum(conv[::-1])[::-1]  # sf[n] = P(X >= n)
    above = np.nonzero(sf[1:] <= tail)[0]
    return int(above[0]) if above.size else conv.size - 1


def twb_joint_pmf(params: TwinBeamParams, n_max_s: int | None = None,
                  n_max_i: int | None = None, tail: float = DEFAULT_TAIL,
                  check: bool = True) -> JointPhotonDistribution:
    """Joint photon-number distribution of the three-component twin beam.

    ``p_si(ns, ni) = sum_n p(ns-n; Ms, Bs) p(ni-n; Mi, Bi) p(n; Mp, Bp)``.

    Bounds not given are chosen so that each marginal loses at most
    ``tail/2``.  With ``check`` set, explicit bounds that lose more than
    ``tail`` raise :class:`TruncationError` carrying a suggested bound.
    """
    comp_tail = tail * 1e-3
    pp = mandel_rice_pmf(params.Mp, params.Bp, tail=comp_tail).probs
    ps = mandel_rice_pmf(params.Ms, params.Bs, tail=comp_tail).probs
    pi = mandel_rice_pmf(params.Mi, params.Bi, tail=comp_tail).probs
    need_s = _convolved_bound(pp, ps, tail / 2)
    need_i = _convolved_bound(pp, pi, tail / 2)
    ns = need_s if n_max_s is None else int(n_max_s)
    ni = need_i if n_max_i is None else int(n_max_i)
    if ns < 0 or ni < 0:
        raise ParameterDomainError("truncation bounds must be nonnegative")

    pp = _fit(pp, min(ns, ni) + 1)
    ps = _fit(ps, ns + 1)
    pi = _fit(pi, ni + 1)
    joint = np.zeros((ns + 1, ni + 1))
    for n in range(min(ns, ni) + 1):
        if pp[n] == 0.0:
            continue
        joint[n:, n:] += pp[n] * np.outer(ps[: ns + 1 - n], pi[: ni + 1 - n])
    lost = max(0.0, 1.0 - float(joint.sum()))
    if check and lost > tail:
        raise TruncationError(
            f"bounds (n_max_s={ns}, n_max_i={ni}) lose mass {lost:.3e} > {tail:.1e}; "
            f"use at least n_max_s={need_s}, n_max_i={need_i}",
            suggested_bound=(need_s, need_i),
        )
    return JointPhotonDistribution(joint, lost)


def _fit(p: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros(length)
    m = min(length, p.size)
    out[:m] = p[:m]
    return out


def mandel_rice_sample(M: float, B: float, size, rng: np.random.Generator) -> np.ndarray:
    """Draw Mandel-Rice counts as a gamma-Poisson mixture (valid for real ``M``)."""
    _check_mandel_rice(M, B)
    if B == 0:
        return np.zeros(size, dtype=np.int64)
    intensity = rng.gamma(M, B, size=size)
    return rng.poisson(intensity).astype(np.int64)


def sample_twb(params: TwinBeamParams, shots: int, seed: int | np.random.Generator | None = None):
    """Monte Carlo photon numbers ``(n_s, n_i)`` for ``shots`` twin-beam pulses.

    Returns two int64 arrays.  Deterministic for a given integer seed.
    """
    if shots < 0:
        raise ParameterDomainError("shots must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pairs = mandel_rice_sample(params.Mp, params.Bp, shots, rng)
    noise_s = mandel_rice_sample(params.Ms, params.Bs, shots, rng)
    noise_i = mandel_rice_sample(params.Mi, params.Bi, shots, rng)
    return pairs + noise_s, pairs + noise_i
