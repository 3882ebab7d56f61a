"""Pixelated (iCCD-like) binary-click detector.

A field of ``n`` photons hits a detector of ``N`` equal pixels.  Each photon
is registered with probability ``eta`` in a uniformly chosen pixel, and each
pixel independently fires a dark event with probability ``D``.  The output
photocount ``c`` is the number of pixels that fired.

The closed-form response is an alternating binomial sum which cancels
catastrophically once ``c`` exceeds a handful of counts.  The production path
therefore builds the same matrix from an equivalent positive recursion
(photon loss -> pixel occupancy -> dark counts on idle pixels).  The
alternating form is kept as ``method="alternating"`` with an explicit
accuracy check, mostly for small detectors and for cross-checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.special import gammaln, xlog1py, xlogy
from scipy.stats import binom

from .distributions import JointPhotonDistribution, PhotonNumberDistribution
from .errors import ConditioningError, DimensionError, NumericalError, ParameterDomainError

__all__ = [
    "DetectorParams",
    "DetectionMatrix",
    "detection_matrix",
    "mc_detect",
    "mc_sample_detection",
    "forward_photocount",
    "signal_photocount_theo",
    "conditional_theoretical",
]

COLUMN_TAIL = 1e-10
CONDITION_FLOOR = 1e-300


@dataclass(frozen=True)
class DetectorParams:
    """Active pixels ``N``, efficiency ``eta`` and per-pixel dark probability ``D``."""

    N: int
    eta: float
    D: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ParameterDomainError(f"pixel count N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterDomainError(f"efficiency eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.D < 1.0:
            raise ParameterDomainError(f"dark-count probability D must lie in [0, 1), got {self.D}")

    @property
    def dark_mean(self) -> float:
        return self.N * self.D

    def to_dict(self) -> dict:
        return {"N": self.N, "eta": float(self.eta), "D": float(self.D)}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorParams":
        """Accepts ``D`` (per pixel) or ``d`` (per detector, ``D = d/N``); ``D`` wins."""
        try:
            N = d["N"]
            eta = float(d["eta"])
        except KeyError as exc:
            raise ParameterDomainError(f"detector config missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ParameterDomainError(f"non-numeric detector parameter: {exc}") from None
        extra = sorted(set(d) - {"N", "eta", "D", "d"})
        if extra:
            raise ParameterDomainError(f"unknown detector keys: {extra}")
        if not isinstance(N, (int, float)) or isinstance(N, bool):
            raise ParameterDomainError(f"pixel count N must be numeric, got {N!r}")
        if "D" in d:
            D = float(d["D"])
        elif "d" in d:
            D = float(d["d"]) / N
        else:
            D = 0.0
        return cls(N, eta, D)


@dataclass
class DetectionMatrix:
    """``T[c, n]``: probability of ``c`` photocounts given ``n`` photons.

    ``params`` is ``None`` for the conceptual identity detector.
    """

    T: np.ndarray
    params: DetectorParams | None = None

    @property
    def c_max(self) -> int:
        return self.T.shape[0] - 1

    @property
    def n_max(self) -> int:
        return self.T.shape[1] - 1

    def column_sums(self) -> np.ndarray:
        return self.T.sum(axis=0)

    def rows(self, c_max: int) -> "DetectionMatrix":
        """Restrict (or zero-extend) the photocount axis to ``0..c_max``."""
        if c_max <= self.c_max:
            return DetectionMatrix(self.T[: c_max + 1], self.params)
        T = np.zeros((c_max + 1, self.T.shape[1]))
        T[: self.T.shape[0]] = self.T
        return DetectionMatrix(T, self.params)

    @classmethod
    def identity(cls, n_max: int) -> "DetectionMatrix":
        return cls(np.eye(n_max + 1), None)

    def to_csv(self, path) -> None:
        """Rows are photocounts ``c``, columns photon numbers ``n``."""
        with open(path, "w", newline="") as fh:
            fh.write("c," + ",".join(f"n{n}" for n in range(self.n_max + 1)) + "\n")
            for c, row in enumerate(self.T):
                fh.write(f"{c}," + ",".join(repr(float(v)) for v in row) + "\n")


def _default_c_max(params: DetectorParams, n_max: int) -> int:
    if params.D == 0:
        extra = 0
    else:
        extra = int(binom.isf(COLUMN_TAIL * 1e-2, params.N, params.D)) + 1
    return min(params.N, n_max + extra)


def _occupancy(N: int, m_max: int, k_max: int) -> np.ndarray:
    """``occ[m, k]``: ``m`` balls thrown into ``N`` bins occupy exactly ``k`` bins."""
    occ = np.zeros((m_max + 1, k_max + 1))
    occ[0, 0] = 1.0
    k = np.arange(k_max + 1)
    stay = k / N
    move = (N - k[:-1]) / N
    for m in range(m_max):
        row = occ[m] * stay
        row[1:] += occ[m, :-1] * move
        occ[m + 1] = row
    return occ


def _binom_pmf(k, n, p: float) -> np.ndarray:
    """scipy's binomial pmf, with a log-space fallback where it overflows (p near 2.2e-308)."""
    try:
        return binom.pmf(k, n, p)
    except OverflowError:
        pass
    k, n = np.broadcast_arrays(np.asarray(k, float), np.asarray(n, float))
    ok = (k >= 0) & (k <= n)
    kk, nn = np.where(ok, k, 0.0), np.where(ok, n, 0.0)
    logp = (gammaln(nn + 1) - gammaln(kk + 1) - gammaln(nn - kk + 1)
            + xlogy(kk, p) + xlog1py(nn - kk, -p))
    return np.where(ok, np.exp(logp), 0.0)


def _matrix_recursion(p: DetectorParams, c_max: int, n_max: int) -> np.ndarray:
    k_max = min(c_max, n_max)
    occ = _occupancy(p.N, n_max, k_max)
    m = np.arange(n_max + 1)
    loss = _binom_pmf(m[:, None], m[None, :], p.eta)  # loss[m, n]
    occupied = occ.T @ loss  # occupied[k, n]
    T = np.zeros((c_max + 1, n_max + 1))
    if p.D == 0:
        T[: k_max + 1] = occupied
        return T
    for k in range(k_max + 1):
        j = np.arange(c_max + 1 - k)
        dark = _binom_pmf(j, p.N - k, p.D)
        T[k:] += np.outer(dark, occupied[k])
    return T


def _entry_alternating(p: DetectorParams, c: int, n: int) -> float:
    N, eta, D = p.N, p.eta, p.D
    log_front = (gammaln(N + 1) - gammaln(c + 1) - gammaln(N - c + 1)
                 + N * math.log1p(-D))
    logs, signs = [], []
    for l in range(c + 1):
        # (1-eta)^n (1 + l/N * eta/(1-eta))^n == (1 - eta*(N-l)/N)^n
        base = 1.0 - eta * (N - l) / N
        if base <= 0.0:
            if n > 0:
                continue
            lb = 0.0
        else:
            lb = n * math.log(base)
        lt = (gammaln(c + 1) - gammaln(l + 1) - gammaln(c - l + 1)
              - l * math.log1p(-D) + lb)
        logs.append(lt)
        signs.append(-1.0 if (c + l) % 2 else 1.0)
    if not logs:
        return 0.0
    shift = max(logs)
    terms = [s * math.exp(lt - shift) for s, lt in zip(signs, logs)]
    scale = math.exp(log_front + shift)
    value = math.fsum(terms) * scale
    bound = sum(abs(t) for t in terms) * scale * (len(terms) + 1) * 2.0 ** -52
    if bound > 1e-10:
        raise NumericalError(
            f"alternating sum for T({c},{n}) cancels beyond double precision "
            f"(error bound {bound:.2e}); use method='recursion'"
        )
    if value < -1e-10 or value > 1 + 1e-10:
        raise NumericalError(f"T({c},{n}) = {value} outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def detection_matrix(params: DetectorParams, n_max: int, c_max: int | None = None,
                     method: str = "recursion") -> DetectionMatrix:
    """Photocount-given-photon-number matrix of a pixelated detector.

    Parameters
    ----------
    params : DetectorParams
    n_max : int
        Largest photon number (column index).
    c_max : int, optional
        Largest photocount (row index).  Defaults to the smallest bound that
        keeps every column's lost mass below 1e-10, capped at ``N``.
    method : {"recursion", "alternating"}
        ``"alternating"`` evaluates the closed-form binomial sum term by term
        and raises :class:`NumericalError` where it cannot be trusted.
    """
    if n_max < 0:
        raise ParameterDomainError("n_max must be nonnegative")
    if c_max is None:
        c_max = _default_c_max(params, n_max)
    if c_max < 0:
        raise ParameterDomainError("c_max must be nonnegative")
    if c_max > params.N:
        raise ParameterDomainError(
            f"c_max={c_max} exceeds the number of pixels N={params.N}")
    if method == "recursion":
        T = _matrix_recursion(params, c_max, n_max)
    elif method == "alternating":
        T = np.array([[_entry_alternating(params, c, n) for n in range(n_max + 1)]
                      for c in range(c_max + 1)])
    else:
        raise ValueError(f"unknown method {method!r}")
    return DetectionMatrix(T, params)


def mc_detect(params: DetectorParams, photons, rng: np.random.Generator) -> np.ndarray:
    """Pixel-level simulation of one detection per entry of ``photons``."""
    photons = np.asarray(photons, dtype=np.int64)
    shots = photons.size
    registered = rng.binomial(photons, params.eta) if params.eta > 0 else np.zeros(shots, np.int64)
    total = int(registered.sum())
    if total:
        pixel = rng.integers(0, params.N, size=total, dtype=np.int64)
        shot = np.repeat(np.arange(shots, dtype=np.int64), registered)
        hit = np.unique(shot * params.N + pixel)
        occupied = np.bincount(hit // params.N, minlength=shots)
    else:
        occupied = np.zeros(shots, dtype=np.int64)
    if params.D > 0:
        # dark events on pixels that hold no photon; fired pixels count once
        occupied = occupied + rng.binomial(params.N - occupied, params.D)
    return occupied.astype(np.int64)


def mc_sample_detection(params: DetectorParams, n: int, shots: int,
                        seed: int | None = None) -> np.ndarray:
    """Empirical photocount histogram (counts per ``c``) for ``n`` photons."""
    if shots < 1:
        raise ParameterDomainError("shots must be at least 1")
    rng = np.random.default_rng(seed)
    c = mc_detect(params, np.full(shots, n, dtype=np.int64), rng)
    return np.bincount(c)


def forward_photocount(dist: PhotonNumberDistribution, mat: DetectionMatrix) -> PhotonNumberDistribution:
    """Photocount distribution ``f(c) = sum_n T(c, n) p(n)``."""
    if dist.n_max > mat.n_max:
        raise DimensionError(
            f"distribution support n_max={dist.n_max} exceeds matrix n_max={mat.n_max}")
    f = mat.T[:, : dist.n_max + 1] @ dist.probs
    return PhotonNumberDistribution(np.clip(f, 0.0, None), dist.tail)


def _signal_weighted(joint: JointPhotonDistribution, mat_s: DetectionMatrix) -> np.ndarray:
    if joint.n_max_s > mat_s.n_max:
        raise DimensionError(
            f"joint signal support {joint.n_max_s} exceeds matrix n_max={mat_s.n_max}")
    return mat_s.T[:, : joint.n_max_s + 1] @ joint.probs  # [c_s, n_i]


def signal_photocount_theo(joint: JointPhotonDistribution, mat_s: DetectionMatrix) -> np.ndarray:
    """Expected signal photocount distribution ``f_s^theo(c_s)``."""
    return _signal_weighted(joint, mat_s).sum(axis=1)


def conditional_theoretical(joint: JointPhotonDistribution, mat_s: DetectionMatrix,
                            c_s: int) -> PhotonNumberDistribution:
    """Idler photon-number distribution post-selected on ``c_s`` signal photocounts."""
    if c_s < 0 or c_s > mat_s.c_max:
        raise ConditioningError(f"c_s={c_s} outside matrix rows 0..{mat_s.c_max}", c_s)
    row = mat_s.T[c_s, : joint.n_max_s + 1] @ joint.probs
    f = float(row.sum())
    if not f > CONDITION_FLOOR:
        raise ConditioningError(f"signal photocount c_s={c_s} has probability {f:.3e}", c_s)
    return PhotonNumberDistribution(row / f, joint.tail)
