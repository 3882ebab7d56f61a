"""End-to-end post-selection experiment: simulate, fit, sweep and export.

Four analysis tracks are produced for each post-selecting signal photocount
``c_s``:

``photocount``  criteria evaluated directly on the conditional idler photocounts
``ml``          criteria of the EM-reconstructed idler photon-number distribution
``model``       criteria of the twin-beam model prediction (needs parameters)
``naive``       photocount intensity moments rescaled as ``<W^k> / eta^k``

Uncertainties come from multinomial bootstrap resampling of the joint
histogram.  Every replica draws from its own child of one ``SeedSequence``,
so results do not depend on how replicas are spread across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import toeplitz
from scipy.optimize import minimize

from .criteria import FAMILIES, CriteriaReport, criteria_values
from .detector import (DetectionMatrix, DetectorParams, conditional_theoretical,
                       detection_matrix, mc_detect, signal_photocount_theo)
from .distributions import (PhotonNumberDistribution, TwinBeamParams, mandel_rice_pmf,
                            poisson_pmf, sample_twb, twb_joint_pmf)
from .errors import ConditioningError, FitFailure, ParameterDomainError
from .moments import MomentSet, factorial_moments
from .reconstruction import EMConfig, default_n_max, em_run, quasi_distribution

__all__ = [
    "TRACKS",
    "FIGURES",
    "JointHistogram",
    "simulate_joint",
    "condition_histogram",
    "joint_photocount_theo",
    "FitResult",
    "fit_twb",
    "bootstrap_errors",
    "SweepConfig",
    "SliceResult",
    "SweepResult",
    "sweep_postselect",
    "emit_figure_data",
]

TRACKS = ("photocount", "ml", "model", "naive")
FIGURES = ("fig2a", "fig2b", "fig3", "fig4", "fig5", "fig6", "fig7a", "fig7b", "fig8")
CHUNK = 200_000
LOW_STATISTICS = 100
MIN_FIT_SHOTS = 10_000


@dataclass
class JointHistogram:
    """Counts ``counts[c_s, c_i]`` of joint signal/idler photocounts."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ParameterDomainError("joint histogram must be two-dimensional")
        if np.any(c < 0):
            raise ParameterDomainError("joint histogram counts must be nonnegative")
        if not np.all(np.asarray(c) == np.round(c)):
            raise ParameterDomainError("joint histogram counts must be integers")
        self.counts = c.astype(np.int64)

    @property
    def shots(self) -> int:
        return int(self.counts.sum())

    @property
    def c_max_s(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def c_max_i(self) -> int:
        return self.counts.shape[1] - 1

    def marginal_signal(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def marginal_idler(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def mean_signal(self) -> float:
        m = self.marginal_signal()
        return float(np.arange(m.size) @ m / m.sum())

    def mean_idler(self) -> float:
        m = self.marginal_idler()
        return float(np.arange(m.size) @ m / m.sum())

    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.shots, 1)

    @classmethod
    def from_pairs(cls, cs, ci) -> "JointHistogram":
        cs = np.asarray(cs, dtype=np.int64)
        ci = np.asarray(ci, dtype=np.int64)
        if cs.size == 0:
            return cls(np.zeros((1, 1), dtype=np.int64))
        shape = (int(cs.max()) + 1, int(ci.max()) + 1)
        flat = np.bincount(cs * shape[1] + ci, minlength=shape[0] * shape[1])
        return cls(flat.reshape(shape))

    def resized(self, c_max_s: int, c_max_i: int) -> "JointHistogram":
        """Zero-pad to at least the given bounds (counts are never dropped)."""
        rows = max(c_max_s + 1, self.counts.shape[0])
        cols = max(c_max_i + 1, self.counts.shape[1])
        out = np.zeros((rows, cols), dtype=np.int64)
        out[: self.counts.shape[0], : self.counts.shape[1]] = self.counts
        return JointHistogram(out)


# --------------------------------------------------------------------------- #
# simulation


def _simulate_chunk(args):
    params, det_s, det_i, shots, seq = args
    rng = np.random.default_rng(seq)
    ns, ni = sample_twb(params, shots, rng)
    cs = mc_detect(det_s, ns, rng)
    ci = mc_detect(det_i, ni, rng)
    return cs, ci


def simulate_joint(params: TwinBeamParams, det_s: DetectorParams, det_i: DetectorParams,
                   shots: int, seed: int = 0, threads: int = 1,
                   chunk: int = CHUNK) -> JointHistogram:
    """Monte Carlo joint photocount histogram of ``shots`` twin-beam pulses.

    Shots are split in fixed chunks of ``chunk`` pulses, each driven by its own
    spawned seed, so the histogram depends on ``seed`` only (not ``threads``).
    """
    if shots < 0:
        raise ParameterDomainError("shots must be nonnegative")
    if shots == 0:
        return JointHistogram(np.zeros((1, 1), dtype=np.int64))
    n_chunks = -(-shots // chunk)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [chunk] * (n_chunks - 1) + [shots - chunk * (n_chunks - 1)]
    jobs = [(params, det_s, det_i, n, s) for n, s in zip(sizes, seqs)]
    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    cs = np.concatenate([p[0] for p in parts])
    ci = np.concatenate([p[1] for p in parts])
    return JointHistogram.from_pairs(cs, ci)


def condition_histogram(joint: JointHistogram, c_s: int):
    """Conditional idler photocount frequencies ``f_i(c_i; c_s)`` and the slice shot count."""
    if c_s < 0 or c_s > joint.c_max_s:
        raise ConditioningError(f"no shots with signal photocount c_s={c_s}", c_s)
    row = joint.counts[c_s].astype(float)
    shots = int(row.sum())
    if shots == 0:
        raise ConditioningError(f"no shots with signal photocount c_s={c_s}", c_s)
    return row / shots, shots


# --------------------------------------------------------------------------- #
# parametric fit


def _arm_matrix(pp_len: int, noise: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``U[c, n] = sum_m T(c, n+m) p_noise(m)``: photocounts given ``n`` pairs."""
    size = T.shape[1]
    col = np.zeros(size)
    col[: min(size, noise.size)] = noise[:size]
    conv = toeplitz(col, np.zeros(pp_len))  # conv[k, n] = p_noise(k - n)
    return T @ conv


def _joint_from_components(pp, ps, pi, T_s, T_i) -> np.ndarray:
    n_p = min(pp.size, T_s.shape[1], T_i.shape[1])
    U_s = _arm_matrix(n_p, ps, T_s)
    U_i = _arm_matrix(n_p, pi, T_i)
    return (U_s * pp[:n_p]) @ U_i.T


def joint_photocount_theo(params: TwinBeamParams, det_s: DetectorParams, det_i: DetectorParams,
                          c_max_s: int, c_max_i: int, n_max: int | None = None) -> np.ndarray:
    """Model joint photocount probabilities ``F[c_s, c_i]`` for ``c <= c_max``.

    ``F = U_s diag(p_pair) U_i^T`` where ``U`` folds the arm noise into the
    detector response.  Truncation of the photon axis at ``n_max`` (default:
    the model's own 1e-12 bound) only removes probability; it never adds any.
    """
    if n_max is None:
        joint_bounds = twb_joint_pmf(params, check=False)
        n_s, n_i = joint_bounds.n_max_s, joint_bounds.n_max_i
    else:
        n_s = n_i = int(n_max)
    T_s = detection_matrix(det_s, n_s, min(c_max_s, det_s.N)).T
    T_i = detection_matrix(det_i, n_i, min(c_max_i, det_i.N)).T
    ps = mandel_rice_pmf(params.Ms, params.Bs, n_max=n_s).probs
    pi = mandel_rice_pmf(params.Mi, params.Bi, n_max=n_i).probs
    pp = mandel_rice_pmf(params.Mp, params.Bp, n_max=min(n_s, n_i)).probs
    F = _joint_from_components(pp, ps, pi, T_s, T_i)
    out = np.zeros((c_max_s + 1, c_max_i + 1))
    out[: F.shape[0], : F.shape[1]] = F
    return out


@dataclass
class FitResult:
    params: TwinBeamParams
    loglik: float
    starts: list = field(default_factory=list)
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "loglik": self.loglik,
                "evaluations": self.evaluations, "starts": self.starts}


_LOG_BOUNDS = (-30.0, 12.0)


def _moment_start(joint: JointHistogram, det_s: DetectorParams, det_i: DetectorParams) -> np.ndarray:
    f = joint.frequencies()
    c_s = np.arange(f.shape[0])[:, None]
    c_i = np.arange(f.shape[1])[None, :]
    m_s, m_i = float((f * c_s).sum()), float((f * c_i).sum())
    v_s = float((f * (c_s - m_s) ** 2).sum())
    v_i = float((f * (c_i - m_i) ** 2).sum())
    cov = float((f * (c_s - m_s) * (c_i - m_i)).sum())
    n_s = max((m_s - det_s.dark_mean) / max(det_s.eta, 1e-6), 1e-3)
    n_i = max((m_i - det_i.dark_mean) / max(det_i.eta, 1e-6), 1e-3)
    var_p = max(cov / max(det_s.eta * det_i.eta, 1e-12), 1e-3)
    mean_p = 0.9 * min(n_s, n_i)
    Bp = max(var_p / mean_p - 1.0, 1e-3)
    out = [mean_p / Bp, Bp]
    for n, v, det in ((n_s, v_s, det_s), (n_i, v_i, det_i)):
        noise_mean = max(n - mean_p, 1e-3)
        var_n = (v - det.eta * (1 - det.eta) * n) / max(det.eta ** 2, 1e-12)
        B = max((var_n - var_p) / noise_mean - 1.0, 1e-2)
        out += [noise_mean / B, B]
    return np.log(np.array(out))


def _random_start(rng, joint, det_s, det_i) -> np.ndarray:
    n_s = max(joint.mean_signal() / max(det_s.eta, 1e-6), 1e-2)
    n_i = max(joint.mean_idler() / max(det_i.eta, 1e-6), 1e-2)
    n = min(n_s, n_i)
    Mp = math.exp(rng.uniform(math.log(5.0), math.log(2000.0)))
    mean_p = rng.uniform(0.5, 0.99) * n
    out = [Mp, mean_p / Mp]
    for arm in (n_s, n_i):
        M = math.exp(rng.uniform(math.log(1e-3), math.log(1.0)))
        out += [M, max(arm - mean_p, 1e-2) / M]
    return np.log(np.array(out))


def fit_twb(joint: JointHistogram, det_s: DetectorParams, det_i: DetectorParams,
            starts: int = 8, seed: int = 0, max_evals: int = 3000,
            n_max: int | None = None, min_shots: int = MIN_FIT_SHOTS) -> FitResult:
    """Maximum-likelihood twin-beam parameters from a joint photocount histogram.

    Nelder-Mead on the logarithms of ``(Mp, Bp, Ms, Bs, Mi, Bi)`` from
    ``starts`` points: one moment-based guess, the rest log-uniform draws.
    The objective is the multinomial log-likelihood of the observed counts
    under :func:`joint_photocount_theo`.
    """
    if joint.shots < min_shots:
        raise ParameterDomainError(f"fit needs at least {min_shots} shots, got {joint.shots}")
    counts = joint.counts.astype(float)
    cs_max, ci_max = joint.c_max_s, joint.c_max_i
    if n_max is None:
        eta = max(min(det_s.eta, det_i.eta), 1e-3)
        n_max = int(min(max(60, 3 * (max(cs_max, ci_max) + 1) / eta + 20), 1500))
    T_s = detection_matrix(det_s, n_max, min(cs_max, det_s.N)).T
    T_i = detection_matrix(det_i, n_max, min(ci_max, det_i.N)).T
    mask = counts > 0
    evals = [0]

    def negll(x):
        evals[0] += 1
        x = np.clip(x, *_LOG_BOUNDS)
        Mp, Bp, Ms, Bs, Mi, Bi = np.exp(x)
        pp = mandel_rice_pmf(Mp, Bp, n_max=n_max).probs
        ps = mandel_rice_pmf(Ms, Bs, n_max=n_max).probs
        pi = mandel_rice_pmf(Mi, Bi, n_max=n_max).probs
        F = _joint_from_components(pp, ps, pi, T_s, T_i)
        Fm = np.zeros_like(counts)
        Fm[: F.shape[0], : F.shape[1]] = F
        q = Fm[mask]
        if np.any(q <= 0) or not np.all(np.isfinite(q)):
            return 1e300
        return -float(counts[mask] @ np.log(q))

    rng = np.random.default_rng(seed)
    points = [_moment_start(joint, det_s, det_i)]
    points += [_random_start(rng, joint, det_s, det_i) for _ in range(max(starts - 1, 0))]
    best = None
    log = []
    for x0 in points:
        res = minimize(negll, x0, method="Nelder-Mead",
                       options={"maxfev": max_evals, "xatol": 1e-6, "fatol": 1e-6,
                                "adaptive": True})
        ll = -float(res.fun)
        log.append({"start": np.exp(x0).tolist(), "loglik": ll, "success": bool(res.success)})
        if np.isfinite(ll) and ll > -1e299 and (best is None or ll > best[1]):
            best = (np.exp(np.clip(res.x, *_LOG_BOUNDS)), ll)
    if best is None:
        raise FitFailure("twin-beam fit failed from every start", {"starts": log})
    params = TwinBeamParams(*best[0].tolist())
    return FitResult(params, best[1], log, evals[0])


# --------------------------------------------------------------------------- #
# bootstrap


def _resample(joint: JointHistogram, rng) -> JointHistogram:
    p = joint.frequencies().ravel()
    counts = rng.multinomial(joint.shots, p).reshape(joint.counts.shape)
    return JointHistogram(counts)


def bootstrap_errors(joint: JointHistogram, analysis, replicas: int, seed: int = 0,
                     workers: int = 1):
    """Bootstrap standard errors of ``analysis(joint)``.

    ``analysis`` maps a :class:`JointHistogram` to a float, an array, or a dict
    of floats.  Each replica is a multinomial resample at the original shot
    count.  The result has the same shape; NaN replica values are ignored.
    """
    if replicas < 2:
        raise ParameterDomainError("bootstrap needs at least 2 replicas")
    seqs = np.random.SeedSequence(seed).spawn(replicas)

    def one(seq):
        return analysis(_resample(joint, np.random.default_rng(seq)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, seqs))
    else:
        results = [one(s) for s in seqs]
    first = results[0]
    if isinstance(first, dict):
        keys = set().union(*[r.keys() for r in results])
        out = {}
        for key in keys:
            vals = np.array([r.get(key, np.nan) for r in results], dtype=float)
            out[key] = _nanstd(vals)
        return out
    arr = np.array(results, dtype=float)
    err = _nanstd(arr)
    return float(err) if np.ndim(first) == 0 else err


def _nanstd(vals: np.ndarray):
    finite = np.isfinite(vals)
    n = finite.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(finite, vals, 0.0).sum(axis=0) / np.maximum(n, 1)
        dev = np.where(finite, vals - mean, 0.0)
        var = (dev ** 2).sum(axis=0) / np.maximum(n - 1, 1)
    std = np.sqrt(var)
    return np.where(n >= 2, std, np.nan)


# --------------------------------------------------------------------------- #
# post-selection sweep


@dataclass
class SweepConfig:
    c_s_values: tuple | None = None
    c_s_limit: int = 10
    k_max: int = 9
    bootstrap: int = 0
    em_bootstrap: int = 20
    seed: int = 0
    z: float = 1.0
    tracks: tuple = TRACKS
    em: EMConfig = field(default_factory=EMConfig)
    ordering: str = "amplitude"
    noise_modes: float = 1.0
    depth: bool = True
    workers: int = 1
    low_statistics: int = LOW_STATISTICS
    quasi_cs: int = 5
    quasi_s: tuple = (0.9, 0.0)
    quasi_J: int = 10

    def to_dict(self) -> dict:
        return {
            "c_s_values": None if self.c_s_values is None else list(self.c_s_values),
            "c_s_limit": self.c_s_limit, "k_max": self.k_max, "bootstrap": self.bootstrap,
            "em_bootstrap": self.em_bootstrap, "seed": self.seed, "z": self.z,
            "tracks": list(self.tracks), "em": asdict(self.em),
            "ordering": self.ordering, "noise_modes": self.noise_modes, "depth": self.depth,
            "workers": self.workers, "low_statistics": self.low_statistics,
            "quasi_cs": self.quasi_cs, "quasi_s": list(self.quasi_s), "quasi_J": self.quasi_J,
        }


@dataclass
class SliceResult:
    c_s: int
    shots: int
    f_s: float
    f_s_theo: float | None
    low_statistics: bool
    reports: dict = field(default_factory=dict)
    means: dict = field(default_factory=dict)
    mean_errors: dict = field(default_factory=dict)
    distributions: dict = field(default_factory=dict)
    em: object = None
    photocount_theo: np.ndarray | None = None


@dataclass
class SweepResult:
    slices: list
    f_s: np.ndarray
    f_s_theo: np.ndarray | None
    config: SweepConfig
    det_i: DetectorParams
    params: TwinBeamParams | None = None
    error_method: str = "bootstrap"

    def slice(self, c_s: int) -> SliceResult:
        for s in self.slices:
            if s.c_s == c_s:
                return s
        raise KeyError(c_s)

    @property
    def c_s_values(self) -> list:
        return [s.c_s for s in self.slices]


class _Analyzer:
    """Per-slice statistics shared by the point estimate and bootstrap replicas."""

    def __init__(self, det_i: DetectorParams, cfg: SweepConfig, c_values):
        self.det_i = det_i
        self.cfg = cfg
        self.c_values = list(c_values)
        self._matrix = None

    # photocount and naive tracks
    def light(self, joint: JointHistogram) -> dict:
        out = {}
        for c in self.c_values:
            try:
                f, _ = condition_histogram(joint, c)
            except ConditioningError:
                continue
            out.update(self._light_slice(c, f))
        return out

    def _criteria(self, data, track, c) -> dict:
        fams = FAMILIES if isinstance(data, PhotonNumberDistribution) else ("I", "II", "III", "IV")
        vals = criteria_values(data, self.cfg.k_max, fams, self.cfg.depth,
                               self.cfg.ordering, self.cfg.noise_modes)
        return {(track, c, fam, k): v for (fam, k), (v, _) in vals.items()}

    def _light_slice(self, c, f) -> dict:
        out = {}
        dist = PhotonNumberDistribution(f)
        if "photocount" in self.cfg.tracks:
            out.update(self._criteria(dist, "photocount", c))
            out[("photocount", c, "mean", 0)] = dist.mean
        if "naive" in self.cfg.tracks:
            m = self.naive_moments(dist)
            out.update(self._criteria(m, "naive", c))
            out[("naive", c, "mean", 0)] = m.mean
        return out

    def naive_moments(self, dist: PhotonNumberDistribution) -> MomentSet:
        W = factorial_moments(dist, self.cfg.k_max)
        return MomentSet.from_intensity(W / self.det_i.eta ** np.arange(W.size))

    # ML track
    def matrix(self, n_max: int) -> DetectionMatrix:
        if self._matrix is None or self._matrix.n_max < n_max:
            grow = 0 if self._matrix is None else 2 * self._matrix.n_max
            self._matrix = detection_matrix(self.det_i, max(n_max, grow))
        T = self._matrix.T[:, : n_max + 1]
        return DetectionMatrix(T, self.det_i)

    def reconstruct(self, f):
        n_max = default_n_max(f, self.det_i.eta)
        mat = self.matrix(n_max)
        return em_run(None, f, mat, self.cfg.em)

    def ml(self, joint: JointHistogram) -> dict:
        out = {}
        for c in self.c_values:
            try:
                f, _ = condition_histogram(joint, c)
            except ConditioningError:
                continue
            p, _ = self.reconstruct(f)
            out.update(self._criteria(p, "ml", c))
            out[("ml", c, "mean", 0)] = p.mean
        return out


def _slice_errors(values: dict, errors: dict, track: str, c: int) -> dict:
    errs = {}
    for (t, cc, fam, k) in values:
        if t == track and cc == c and fam != "mean" and (t, cc, fam, k) in errors:
            errs[(fam, k)] = float(errors[(t, cc, fam, k)])
    return errs


def _applicability_report(data, cfg: SweepConfig, errors: dict) -> CriteriaReport:
    fams = FAMILIES if isinstance(data, PhotonNumberDistribution) else ("I", "II", "III", "IV")
    values = criteria_values(data, cfg.k_max, fams, cfg.depth, cfg.ordering, cfg.noise_modes)
    return CriteriaReport.from_values(values, errors, cfg.z)


def sweep_postselect(joint: JointHistogram, det_i: DetectorParams, config: SweepConfig | None = None,
                     params: TwinBeamParams | None = None,
                     det_s: DetectorParams | None = None) -> SweepResult:
    """Post-select the idler on each signal photocount and evaluate every track.

    Slices with fewer than ``config.low_statistics`` shots are computed and
    flagged.  Requested slices without any shots raise
    :class:`ConditioningError` listing every offending ``c_s``.
    """
    cfg = config or SweepConfig()
    if joint.shots == 0:
        raise ConditioningError("joint histogram holds no shots", [])
    if cfg.c_s_values is None:
        c_values = list(range(1, min(cfg.c_s_limit, joint.c_max_s) + 1))
    else:
        c_values = [int(c) for c in cfg.c_s_values]
    if not c_values:
        raise ConditioningError("no signal photocount values to post-select on", [])
    marg = joint.marginal_signal()
    empty = [c for c in c_values if c > joint.c_max_s or c < 0 or marg[c] == 0]
    if empty:
        raise ConditioningError(f"empty post-selection slices at c_s = {empty}", empty)

    tracks = tuple(t for t in cfg.tracks if t in TRACKS)
    want_model = "model" in tracks and params is not None and det_s is not None
    an = _Analyzer(det_i, cfg, c_values)
    light_vals = an.light(joint)
    light_err = {}
    if cfg.bootstrap >= 2 and any(t in tracks for t in ("photocount", "naive")):
        light_err = bootstrap_errors(joint, an.light, cfg.bootstrap, cfg.seed, cfg.workers)
    ml_vals, ml_err, em_diag, ml_dists = {}, {}, {}, {}
    if "ml" in tracks:
        for c in c_values:
            f, _ = condition_histogram(joint, c)
            p, diag = an.reconstruct(f)
            ml_dists[c], em_diag[c] = p, diag
            ml_vals.update(an._criteria(p, "ml", c))
            ml_vals[("ml", c, "mean", 0)] = p.mean
        if cfg.em_bootstrap >= 2:
            seed = np.random.SeedSequence([cfg.seed, 1]).generate_state(1)[0]
            ml_err = bootstrap_errors(joint, an.ml, cfg.em_bootstrap, int(seed), cfg.workers)

    f_s = marg / marg.sum()
    f_s_theo = None
    model_joint = mat_s = None
    if want_model:
        model_joint = twb_joint_pmf(params)
        mat_s = detection_matrix(det_s, model_joint.n_max_s)
        f_s_theo = signal_photocount_theo(model_joint, mat_s)
        mat_i = detection_matrix(det_i, model_joint.n_max_i)

    slices = []
    for c in c_values:
        f, shots = condition_histogram(joint, c)
        sl = SliceResult(c, shots, float(f_s[c]),
                         None if f_s_theo is None or c >= f_s_theo.size else float(f_s_theo[c]),
                         shots < cfg.low_statistics)
        dist = PhotonNumberDistribution(f)
        sl.distributions["photocount"] = dist
        if "photocount" in tracks:
            errs = _slice_errors(light_vals, light_err, "photocount", c)
            sl.reports["photocount"] = _applicability_report(dist, cfg, errs)
            sl.means["photocount"] = dist.mean
            sl.mean_errors["photocount"] = light_err.get(("photocount", c, "mean", 0))
        if "naive" in tracks:
            errs = _slice_errors(light_vals, light_err, "naive", c)
            m = an.naive_moments(dist)
            sl.reports["naive"] = _applicability_report(m, cfg, errs)
            sl.means["naive"] = m.mean
            sl.mean_errors["naive"] = light_err.get(("naive", c, "mean", 0))
        if "ml" in tracks:
            errs = _slice_errors(ml_vals, ml_err, "ml", c)
            sl.reports["ml"] = _applicability_report(ml_dists[c], cfg, errs)
            sl.means["ml"] = ml_dists[c].mean
            sl.mean_errors["ml"] = ml_err.get(("ml", c, "mean", 0))
            sl.distributions["ml"] = ml_dists[c]
            sl.em = em_diag[c]
        if want_model and c <= mat_s.c_max:
            try:
                p_model = conditional_theoretical(model_joint, mat_s, c)
            except ConditioningError:
                p_model = None
            if p_model is not None:
                sl.reports["model"] = _applicability_report(p_model, cfg, {})
                sl.means["model"] = p_model.mean
                sl.mean_errors["model"] = None
                sl.distributions["model"] = p_model
                sl.photocount_theo = (mat_i.T @ p_model.probs)
        slices.append(sl)
    return SweepResult(slices, f_s, f_s_theo, cfg, det_i, params if want_model else None)


# --------------------------------------------------------------------------- #
# figure datasets


def _criteria_rows(sweep: SweepResult, families) -> list:
    rows = []
    for sl in sweep.slices:
        for track, rep in sl.reports.items():
            for e in rep.entries:
                if e.family in families:
                    rows.append({"c_s": sl.c_s, "k": e.k, "family": e.family, "value": e.value,
                                 "err": e.std_error, "verdict": e.verdict.value, "track": track,
                                 "low_statistics": sl.low_statistics})
    return rows


def emit_figure_data(sweep: SweepResult, figure_id: str):
    """Flatten a sweep into ``(columns, rows)`` for one figure dataset.

    ``rows`` is a list of dicts keyed by ``columns``.
    """
    fig = figure_id.lower()
    if fig == "fig2a":
        cols = ["c_s", "f_s", "f_s_theo"]
        rows = []
        for c in range(sweep.f_s.size):
            theo = None
            if sweep.f_s_theo is not None and c < sweep.f_s_theo.size:
                theo = float(sweep.f_s_theo[c])
            rows.append({"c_s": c, "f_s": float(sweep.f_s[c]), "f_s_theo": theo})
        return cols, rows
    if fig == "fig2b":
        cols = ["c_s", "track", "mean", "mean_err", "low_statistics"]
        rows = [{"c_s": sl.c_s, "track": t, "mean": m, "mean_err": sl.mean_errors.get(t),
                 "low_statistics": sl.low_statistics}
                for sl in sweep.slices for t, m in sl.means.items()]
        return cols, rows
    crit_cols = ["c_s", "k", "family", "value", "err", "verdict", "track", "low_statistics"]
    if fig == "fig3":
        return crit_cols, _criteria_rows(sweep, ("I", "II"))
    if fig == "fig4":
        cols = ["c_s", "k", "tau", "tau_err", "track"]
        rows = []
        for sl in sweep.slices:
            for track, rep in sl.reports.items():
                for e in rep.family("I"):
                    rows.append({"c_s": sl.c_s, "k": e.k, "tau": e.depth,
                                 "tau_err": e.depth_error, "track": track})
        return cols, rows
    if fig == "fig5":
        return crit_cols, _criteria_rows(sweep, ("III", "IV"))
    if fig == "fig6":
        rows = [r for r in _criteria_rows(sweep, ("V",)) if r["track"] == "photocount"]
        return crit_cols, rows
    if fig in ("fig7a", "fig7b", "fig8"):
        c = sweep.config.quasi_cs
        try:
            sl = sweep.slice(c)
        except KeyError:
            raise ConditioningError(f"figure {fig} needs the c_s={c} slice", [c]) from None
        if fig == "fig7a":
            cols = ["c_i", "f_i", "f_i_theo", "f_i_pois"]
            f = sl.distributions["photocount"].probs
            theo = sl.photocount_theo
            size = f.size if theo is None else max(f.size, min(theo.size, 4 * f.size))
            pois = poisson_pmf(float(np.arange(f.size) @ f), n_max=size - 1).probs
            rows = [{"c_i": n, "f_i": float(f[n]) if n < f.size else 0.0,
                     "f_i_theo": None if theo is None or n >= theo.size else float(theo[n]),
                     "f_i_pois": float(pois[n])} for n in range(size)]
            return cols, rows
        if fig == "fig7b":
            cols = ["n_i", "track", "p", "p_pois"]
            rows = []
            for track in ("ml", "model"):
                p = sl.distributions.get(track)
                if p is None:
                    continue
                pois = poisson_pmf(p.mean, n_max=p.n_max).probs
                rows += [{"n_i": n, "track": track, "p": float(p.probs[n]), "p_pois": float(pois[n])}
                         for n in range(p.n_max + 1)]
            return cols, rows
        cols = ["s", "track", "W", "P", "dP", "P_pois"]
        rows = []
        for track in ("ml", "model"):
            p = sl.distributions.get(track)
            if p is None:
                continue
            for s in sweep.config.quasi_s:
                q = quasi_distribution(p, s, J=sweep.config.quasi_J,
                                       noise_modes=sweep.config.noise_modes)
                rows += [{"s": s, "track": track, "W": float(w), "P": float(v), "dP": float(d),
                          "P_pois": float(pp)}
                         for w, v, d, pp in zip(q.grid, q.values, q.delta, q.poisson)]
        return cols, rows
    raise ParameterDomainError(f"unknown figure id {figure_id!r}; choose from {FIGURES}")
