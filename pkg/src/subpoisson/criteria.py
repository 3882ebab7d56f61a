"""Higher-order sub-Poissonian nonclassicality criteria.

Five families are evaluated for orders ``k >= 2``:

====  =====================================================  ==============
I     ``<W^k> / <W>^k - 1``                                  intensity
II    ``<n^k> / <n^k>_Pois - 1``                             photon number
III   ``<(dW)^k> / <W>^k``                                   even ``k`` only
IV    ``<(dn)^k> / <(dn)^k>_Pois - 1``                       see below
V     ``pt(k) / pt(1)^k - 1`` with ``pt(k) = k! p(k)/p(0)``  elements
====  =====================================================  ==============

A negative value flags nonclassicality.  Family IV is established for
``k = 2, 4`` and for ``k = 3`` only when ``<W> < 3``; higher orders are
reported but marked ``unestablished``.  Family I also carries the
nonclassicality depth ``tau = (1 - s_th)/2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy.optimize import bisect

from .distributions import PhotonNumberDistribution
from .errors import InapplicableCriterionError, UndefinedValueError
from .moments import (MomentSet, _ordering_kernel, factorial_moments, poisson_reference,
                      thermal_noise_mean)

__all__ = [
    "FAMILIES",
    "Verdict",
    "Applicability",
    "CriterionResult",
    "CriteriaReport",
    "DepthResult",
    "DepthWarning",
    "criterion_I",
    "criterion_II",
    "criterion_III",
    "criterion_IV",
    "criterion_V",
    "nonclassicality_depth",
    "depth_details",
    "criteria_values",
    "full_report",
    "decide",
]

FAMILIES = ("I", "II", "III", "IV", "V")
ELEMENT_FLOOR = 1e-12
S_TOL = 1e-6
S_MAX_ITER = 200
# values this close to zero are round-off, not evidence
VERDICT_ATOL = 1e-9


class Verdict(str, Enum):
    NONCLASSICAL = "nonclassical"
    CLASSICAL = "classical"
    INAPPLICABLE = "inapplicable"
    UNESTABLISHED = "unestablished"


class Applicability(str, Enum):
    APPLICABLE = "applicable"
    INAPPLICABLE = "inapplicable"
    UNESTABLISHED = "unestablished"


class DepthWarning(UserWarning):
    """The depth condition changes sign more than once on ``s in [-1, 1]``."""


def _moments(data, k) -> MomentSet:
    if isinstance(data, MomentSet):
        if data.k_max < k:
            raise UndefinedValueError(f"moment set only reaches order {data.k_max} < {k}")
        return data
    if isinstance(data, PhotonNumberDistribution):
        return MomentSet.from_distribution(data, max(k, 2))
    return MomentSet.from_intensity(data)


def _mean(m: MomentSet) -> float:
    mean = m.mean
    if not mean > 0:
        raise UndefinedValueError("criterion undefined for a zero-mean field")
    return mean


def criterion_I(moments, k: int) -> float:
    m = _moments(moments, k)
    mean = _mean(m)
    return float(m.intensity[k] / mean ** k - 1.0)


def criterion_II(moments, k: int) -> float:
    m = _moments(moments, k)
    mean = _mean(m)
    raw_pois, _ = poisson_reference(mean, k)
    return float(m.raw[k] / raw_pois[k] - 1.0)


def criterion_III(moments, k: int):
    """Returns ``(value, applicable)``; odd orders are never applicable."""
    m = _moments(moments, k)
    mean = _mean(m)
    return float(m.central_W[k] / mean ** k), k % 2 == 0


def criterion_IV(moments, k: int):
    """Returns ``(value, Applicability)``."""
    m = _moments(moments, k)
    mean = _mean(m)
    _, central_pois = poisson_reference(mean, k)
    value = float(m.central_n[k] / central_pois[k] - 1.0)
    if k in (2, 4):
        app = Applicability.APPLICABLE
    elif k == 3:
        app = Applicability.APPLICABLE if mean < 3.0 else Applicability.INAPPLICABLE
    else:
        app = Applicability.UNESTABLISHED
    return value, app


def criterion_V(dist, k: int, floor: float = ELEMENT_FLOOR) -> float:
    """Element criterion ``k! p(k) p(0)^(k-1) / p(1)^k - 1``."""
    p = dist.probs if isinstance(dist, PhotonNumberDistribution) else np.asarray(dist, float)
    p0 = p[0]
    p1 = p[1] if p.size > 1 else 0.0
    if not (p0 > floor and p1 > floor):
        raise InapplicableCriterionError(
            f"p(0)={p0:.3e} or p(1)={p1:.3e} below floor {floor:g}")
    pk = p[k] if k < p.size else 0.0
    if pk <= 0:
        return -1.0
    log_ratio = (math.lgamma(k + 1) + math.log(pk) + (k - 1) * math.log(p0)
                 - k * math.log(p1))
    return math.expm1(log_ratio)


@dataclass
class DepthResult:
    tau: float
    s_threshold: float
    roots: tuple = ()

    @property
    def multiple_roots(self) -> bool:
        return len(self.roots) > 1


def _gap_polynomial(W, k, noise_modes, ordering) -> np.ndarray:
    """Coefficients (highest power first) of ``<W^k>_s - <W>_s^k`` as a polynomial in ``mu``."""
    K = _ordering_kernel(k, float(noise_modes), ordering)
    # <W^k>_s = sum_j K[k, j] W_j mu^(k-j)
    high = np.array([K[k, j] * W[j] for j in range(k + 1)])
    # <W>_s = a*mu + <W>, so <W>_s^k = sum_i C(k, i) a^i <W>^(k-i) mu^i
    a, m = K[1, 0], W[1]
    i = np.arange(k, -1, -1)
    mean_pow = np.array([math.comb(k, int(j)) for j in i]) * a ** i * m ** (k - i)
    return high - mean_pow


def depth_details(data, k: int, ordering: str = "amplitude", noise_modes: float = 1.0,
                  tol: float = S_TOL, max_iter: int = S_MAX_ITER, scan: int = 400) -> DepthResult:
    """Threshold ordering ``s_th`` where ``<W^k>_s = <W>_s^k`` and ``tau = (1-s_th)/2``.

    The sign of the gap is scanned from ``s = 1`` towards ``s = -1``; the first
    crossing (smallest added noise) is refined by bisection on ``s``.
    """
    if isinstance(data, PhotonNumberDistribution):
        W = factorial_moments(data, k)
    elif isinstance(data, MomentSet):
        W = data.intensity[: k + 1]
    else:
        W = np.asarray(data, dtype=float)[: k + 1]
    if W.size <= k:
        raise UndefinedValueError(f"moments up to order {k} required")
    if not W[1] > 0:
        raise UndefinedValueError("depth undefined for a zero-mean field")
    coeffs = _gap_polynomial(W, k, noise_modes, ordering)
    gap = lambda s: np.polyval(coeffs, thermal_noise_mean(s))  # noqa: E731
    # r_W within rounding of zero (e.g. Poisson input) counts as classical
    if gap(1.0) >= -VERDICT_ATOL * W[1] ** k:
        return DepthResult(0.0, 1.0, ())
    grid = np.linspace(1.0, -1.0, scan + 1)
    signs = gap(grid) >= 0
    changes = np.nonzero(signs[1:] != signs[:-1])[0]
    if changes.size == 0:
        return DepthResult(1.0, -1.0, ())
    roots = []
    for i in changes:
        hi, lo = grid[i], grid[i + 1]
        roots.append(bisect(gap, lo, hi, xtol=tol, maxiter=max_iter))
    if len(roots) > 1:
        warnings.warn(
            f"order-{k} depth condition changes sign {len(roots)} times; "
            "using the smallest-noise root", DepthWarning, stacklevel=2)
    s_th = roots[0]
    return DepthResult((1.0 - s_th) / 2.0, s_th, tuple(roots))


def nonclassicality_depth(data, k: int, ordering: str = "amplitude",
                          noise_modes: float = 1.0) -> float:
    """k-th order nonclassicality depth in ``[0, 1]``."""
    return depth_details(data, k, ordering, noise_modes).tau


def decide(value, std_error=None, applicability=Applicability.APPLICABLE, z: float = 1.0,
           atol: float = VERDICT_ATOL) -> Verdict:
    if applicability == Applicability.INAPPLICABLE or value is None or not np.isfinite(value):
        return Verdict.INAPPLICABLE
    if applicability == Applicability.UNESTABLISHED:
        return Verdict.UNESTABLISHED
    if value < -atol and (std_error is None or not np.isfinite(std_error) or value + z * std_error < 0):
        return Verdict.NONCLASSICAL
    return Verdict.CLASSICAL


def criteria_values(data, k_max: int = 9, families=FAMILIES, depth: bool = True,
                    ordering: str = "amplitude", noise_modes: float = 1.0) -> dict:
    """Flat ``{(family, k): (value, applicability)}`` map; depth under key ``("tau", k)``.

    ``data`` is a distribution (all families) or a :class:`MomentSet`
    (families I-IV only).  Undefined values come back as NaN.
    """
    out = {}
    dist = data if isinstance(data, PhotonNumberDistribution) else None
    try:
        m = _moments(data, k_max)
        _mean(m)
    except UndefinedValueError:
        m = None
    ks = range(2, k_max + 1)
    nan = (float("nan"), Applicability.INAPPLICABLE)
    for k in ks:
        if "I" in families:
            out[("I", k)] = (criterion_I(m, k), Applicability.APPLICABLE) if m else nan
        if "II" in families:
            out[("II", k)] = (criterion_II(m, k), Applicability.APPLICABLE) if m else nan
        if "III" in families:
            if m:
                v, ok = criterion_III(m, k)
                out[("III", k)] = (v, Applicability.APPLICABLE if ok else Applicability.INAPPLICABLE)
            else:
                out[("III", k)] = nan
        if "IV" in families:
            out[("IV", k)] = criterion_IV(m, k) if m else nan
        if "V" in families and dist is not None:
            try:
                out[("V", k)] = (criterion_V(dist, k), Applicability.APPLICABLE)
            except InapplicableCriterionError:
                out[("V", k)] = nan
        if depth and "I" in families:
            if m:
                tau = depth_details(m, k, ordering, noise_modes).tau
                out[("tau", k)] = (tau, Applicability.APPLICABLE)
            else:
                out[("tau", k)] = nan
    return out


@dataclass
class CriterionResult:
    family: str
    k: int
    value: float
    std_error: float | None = None
    verdict: Verdict = Verdict.CLASSICAL
    applicability: Applicability = Applicability.APPLICABLE
    depth: float | None = None
    depth_error: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        d["applicability"] = self.applicability.value
        for key in ("value", "std_error", "depth", "depth_error"):
            v = d[key]
            d[key] = None if v is None or not np.isfinite(v) else float(v)
        return d


@dataclass
class CriteriaReport:
    """Per-family, per-order values, bootstrap errors and verdicts."""

    entries: list
    z: float = 1.0

    def get(self, family: str, k: int) -> CriterionResult:
        for e in self.entries:
            if e.family == family and e.k == k:
                return e
        raise KeyError((family, k))

    def value(self, family: str, k: int) -> float:
        return self.get(family, k).value

    def family(self, family: str) -> list:
        return [e for e in self.entries if e.family == family]

    def depths(self) -> dict:
        return {e.k: e.depth for e in self.family("I")}

    def orders(self, family: str) -> list:
        return [e.k for e in self.family(family)]

    def to_dict(self) -> dict:
        out = {"z": self.z, "families": {}}
        for fam in FAMILIES:
            rows = [e.to_dict() for e in self.family(fam)]
            if rows:
                out["families"][fam] = rows
        return out

    def rows(self) -> list:
        """CSV-ready rows ``(family, k, value, err, verdict)``."""
        return [
            {"family": e.family, "k": e.k, "value": e.value,
             "err": e.std_error, "verdict": e.verdict.value}
            for e in self.entries
        ]

    @classmethod
    def from_values(cls, values: dict, std_errors: dict | None = None, z: float = 1.0) -> "CriteriaReport":
        std_errors = std_errors or {}
        entries = []
        for (fam, k), (v, app) in values.items():
            if fam == "tau":
                continue
            err = std_errors.get((fam, k))
            e = CriterionResult(fam, k, v, err, decide(v, err, app, z), app)
            if fam == "I" and ("tau", k) in values:
                e.depth = values[("tau", k)][0]
                e.depth_error = std_errors.get(("tau", k))
            entries.append(e)
        entries.sort(key=lambda e: (FAMILIES.index(e.family), e.k))
        return cls(entries, z)


def full_report(data, k_max: int = 9, std_errors: dict | None = None, z: float = 1.0,
                depth: bool = True, ordering: str = "amplitude",
                noise_modes: float = 1.0, families=FAMILIES) -> CriteriaReport:
    """Evaluate every family for ``k = 2..k_max``.

    ``std_errors`` maps ``(family, k)`` (and ``("tau", k)``) to standard errors,
    typically from :func:`subpoisson.pipeline.bootstrap_errors`.
    """
    values = criteria_values(data, k_max, families, depth, ordering, noise_modes)
    return CriteriaReport.from_values(values, std_errors, z)
