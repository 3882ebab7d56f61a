import numpy as np
import pytest
from scipy.stats import poisson

from conftest import DET_I, DET_S, REF_PARAMS
from subpoisson.criteria import Verdict
from subpoisson.detector import DetectorParams, detection_matrix, mc_detect
from subpoisson.distributions import TwinBeamParams, sample_twb, twb_joint_pmf
from subpoisson.errors import ConditioningError, ParameterDomainError
from subpoisson.pipeline import (FIGURES, JointHistogram, SweepConfig, bootstrap_errors,
                                 condition_histogram, emit_figure_data, fit_twb,
                                 joint_photocount_theo, simulate_joint, sweep_postselect)


@pytest.fixture(scope="module")
def ref_sweep(ref_simulation):
    joint, _ = ref_simulation
    cfg = SweepConfig(bootstrap=0, em_bootstrap=0)
    return sweep_postselect(joint, DET_I, cfg, params=REF_PARAMS, det_s=DET_S)


@pytest.fixture(scope="module")
def small_sweep():
    joint = simulate_joint(REF_PARAMS, DET_S, DET_I, 60_000, seed=9)
    cfg = SweepConfig(c_s_values=(3, 4, 5), bootstrap=5, em_bootstrap=2, k_max=9)
    return sweep_postselect(joint, DET_I, cfg, params=REF_PARAMS, det_s=DET_S)


class TestJointHistogram:
    def test_invariants(self):
        j = JointHistogram(np.array([[1, 2], [3, 4]]))
        assert j.shots == 10 and j.c_max_s == 1 and j.c_max_i == 1
        assert j.mean_signal() == pytest.approx(0.7)
        with pytest.raises(ParameterDomainError):
            JointHistogram(np.array([[1, -1]]))
        with pytest.raises(ParameterDomainError):
            JointHistogram(np.array([[0.5, 1.0]]))
        with pytest.raises(ParameterDomainError):
            JointHistogram(np.array([1, 2]))

    def test_from_pairs_and_resize(self):
        j = JointHistogram.from_pairs([0, 1, 1, 2], [3, 0, 0, 1])
        assert j.counts[1, 0] == 2 and j.counts.shape == (3, 4)
        r = j.resized(5, 2)
        assert r.counts.shape == (6, 4) and r.shots == 4


class TestConditioning:
    def test_single_column(self):
        j = JointHistogram(np.array([[0, 0], [2, 6]]))
        f, shots = condition_histogram(j, 1)
        np.testing.assert_allclose(f, [0.25, 0.75])
        assert shots == 8

    def test_product_structure(self):
        a = np.array([10, 20, 30, 40])
        b = np.array([5, 1, 4])
        j = JointHistogram(np.outer(a, b))
        refs = [condition_histogram(j, c)[0] for c in range(4)]
        for f in refs:
            np.testing.assert_allclose(f, b / b.sum())

    def test_empty_slice(self):
        j = JointHistogram(np.array([[1, 1], [0, 0]]))
        with pytest.raises(ConditioningError) as exc:
            condition_histogram(j, 1)
        assert exc.value.condition == 1
        with pytest.raises(ConditioningError):
            condition_histogram(j, 7)

    def test_sparse_slices_inflate_errors(self, ref_simulation):
        joint, _ = ref_simulation
        shots = {c: condition_histogram(joint, c)[1] for c in (3, 8, 9, 10)}
        assert shots[8] < shots[3] / 5 and shots[10] < shots[9] < shots[8]

        def mean_at(j, c):
            try:
                f, _ = condition_histogram(j, c)
            except ConditioningError:
                return np.nan
            return float(np.arange(f.size) @ f)

        cs = (3, 8, 9)
        err = bootstrap_errors(joint, lambda j: np.array([mean_at(j, c) for c in cs]), 300, seed=1)
        for e, c in zip(err, cs):
            f, _ = condition_histogram(joint, c)
            c_i = np.arange(f.size)
            sd = np.sqrt(f @ (c_i - c_i @ f) ** 2)
            assert e == pytest.approx(sd / np.sqrt(shots[c]), rel=0.15)
        assert err[2] > err[1] > err[0]

    def test_mixture_consistency(self, ref_simulation):
        joint, _ = ref_simulation
        f_s = joint.marginal_signal() / joint.shots
        mix = np.zeros(joint.c_max_i + 1)
        for c in range(joint.c_max_s + 1):
            if f_s[c] > 0:
                mix += f_s[c] * condition_histogram(joint, c)[0]
        np.testing.assert_allclose(mix, joint.marginal_idler() / joint.shots, rtol=0, atol=1e-15)


class TestSimulation:
    def test_deterministic(self):
        a = simulate_joint(REF_PARAMS, DET_S, DET_I, 30_000, seed=4, chunk=7000)
        b = simulate_joint(REF_PARAMS, DET_S, DET_I, 30_000, seed=4, chunk=7000, threads=3)
        assert np.array_equal(a.counts, b.counts) and a.shots == 30_000
        c = simulate_joint(REF_PARAMS, DET_S, DET_I, 30_000, seed=5, chunk=7000)
        assert c.counts.shape != a.counts.shape or not np.array_equal(a.counts, c.counts)

    def test_zero_shots(self):
        j = simulate_joint(REF_PARAMS, DET_S, DET_I, 0)
        assert j.shots == 0

    def test_theory_matches_direct_product(self):
        params = TwinBeamParams(3, 0.8, 0.5, 1.0, 1.2, 0.3)
        det_s, det_i = DetectorParams(40, 0.5, 0.005), DetectorParams(30, 0.4, 0.01)
        jp = twb_joint_pmf(params)
        T_s = detection_matrix(det_s, jp.n_max_s, 30).T
        T_i = detection_matrix(det_i, jp.n_max_i, 30).T
        direct = T_s @ jp.probs @ T_i.T
        F = joint_photocount_theo(params, det_s, det_i, 30, 30)
        assert np.abs(F - direct).max() < 1e-12

    def test_theory_matches_monte_carlo(self):
        params = TwinBeamParams(3, 0.8, 0.5, 1.0, 1.2, 0.3)
        det_s, det_i = DetectorParams(40, 0.5, 0.005), DetectorParams(30, 0.4, 0.01)
        sim = simulate_joint(params, det_s, det_i, 400_000, seed=2)
        F = joint_photocount_theo(params, det_s, det_i, sim.c_max_s, sim.c_max_i)
        assert 0.5 * np.abs(sim.frequencies() - F).sum() < 0.01


class TestFit:
    @pytest.mark.slow
    def test_recovers_reference_parameters(self, ref_simulation):
        joint, _ = ref_simulation
        fit = fit_twb(joint, DET_S, DET_I, starts=8, seed=0)
        p = fit.params
        assert p.Mp == pytest.approx(270, rel=0.10) and p.Bp == pytest.approx(0.032, rel=0.10)
        for got, want in ((p.Ms, 0.01), (p.Bs, 7.6), (p.Mi, 0.026), (p.Bi, 5.3)):
            assert got == pytest.approx(want, rel=0.5)

    @pytest.mark.slow
    def test_noiseless_pairs(self):
        joint = simulate_joint(TwinBeamParams(270, 0.032, 1.0, 0.0, 1.0, 0.0), DET_S, DET_I, 200_000, seed=2)
        p = fit_twb(joint, DET_S, DET_I, starts=8, seed=0).params
        assert p.Bs < 1e-3 and p.Bi < 1e-3
        assert p.Ms * p.Bs < 0.05 and p.Mi * p.Bi < 0.05

    @pytest.mark.slow
    def test_swapped_detectors_fit_worse(self):
        joint = simulate_joint(REF_PARAMS, DET_S, DET_I, 200_000, seed=5)
        good = fit_twb(joint, DET_S, DET_I, starts=4, seed=0)
        bad = fit_twb(joint, DET_I, DET_S, starts=4, seed=0)
        assert bad.loglik < good.loglik

    def test_needs_enough_shots(self):
        with pytest.raises(ParameterDomainError):
            fit_twb(JointHistogram(np.ones((3, 3), dtype=int)), DET_S, DET_I)


class TestBootstrap:
    def test_constant_statistic(self):
        j = JointHistogram(np.array([[5, 3], [2, 7]]))
        assert bootstrap_errors(j, lambda _: 1.5, 20) == 0.0

    def test_shapes(self):
        j = JointHistogram(np.array([[5, 3], [2, 7]]))
        e = bootstrap_errors(j, lambda h: {"a": h.mean_signal(), "b": 2.0}, 10)
        assert set(e) == {"a", "b"} and e["b"] == 0.0 and e["a"] > 0
        v = bootstrap_errors(j, lambda h: np.array([h.mean_signal(), h.mean_idler()]), 10)
        assert v.shape == (2,)
        with pytest.raises(ParameterDomainError):
            bootstrap_errors(j, lambda h: 0.0, 1)

    def test_inverse_sqrt_scaling(self):
        ns, ni = sample_twb(REF_PARAMS, 1_000_000, seed=4)
        cs = mc_detect(DET_S, ns, np.random.default_rng(0))
        ci = mc_detect(DET_I, ni, np.random.default_rng(1))
        errs = {}
        for n in (10_000, 100_000, 1_000_000):
            j = JointHistogram.from_pairs(cs[:n], ci[:n])
            errs[n] = bootstrap_errors(j, JointHistogram.mean_signal, 300, seed=3)
        for n in (100_000, 1_000_000):
            assert errs[n] * np.sqrt(n) == pytest.approx(errs[10_000] * 100, rel=0.2)

    def test_replica_stability(self, ref_simulation):
        joint, _ = ref_simulation
        stat = lambda j: np.array([j.mean_signal(), j.mean_idler()])  # noqa: E731
        a = bootstrap_errors(joint, stat, 500, seed=7)
        b = bootstrap_errors(joint, stat, 1000, seed=8)
        assert np.all(np.abs(a / b - 1) < 0.1)

    def test_independent_of_workers(self):
        j = simulate_joint(REF_PARAMS, DET_S, DET_I, 20_000, seed=1)
        a = bootstrap_errors(j, JointHistogram.mean_idler, 16, seed=2, workers=1)
        b = bootstrap_errors(j, JointHistogram.mean_idler, 16, seed=2, workers=4)
        assert a == b


class TestSweep:
    def test_poissonian_joint_all_classical(self):
        # exact expected counts of two independent coherent fields behind ideal detectors
        n = np.arange(60)
        F = np.outer(poisson.pmf(n, 3.0), poisson.pmf(n, 5.0))
        joint = JointHistogram(np.round(F * 1e18).astype(np.int64))
        det = DetectorParams(10 ** 9, 1.0, 0.0)
        cfg = SweepConfig(c_s_values=tuple(range(1, 8)), tracks=("photocount", "ml", "naive"),
                          bootstrap=0, em_bootstrap=0)
        sweep = sweep_postselect(joint, det, cfg)
        for sl in sweep.slices:
            for track, rep in sl.reports.items():
                for e in rep.entries:
                    assert e.verdict != Verdict.NONCLASSICAL, (track, sl.c_s, e.family, e.k, e.value)

    def test_empty_slices_listed(self):
        joint = JointHistogram(np.array([[3, 1], [0, 0], [2, 2]]))
        with pytest.raises(ConditioningError) as exc:
            sweep_postselect(joint, DET_I, SweepConfig(c_s_values=(1, 2, 5), tracks=("photocount",)))
        assert exc.value.condition == [1, 5]

    def test_signal_distribution_normalized(self, ref_sweep):
        assert ref_sweep.f_s.sum() == pytest.approx(1.0, abs=1e-12)
        assert ref_sweep.c_s_values == list(range(1, 11))

    def test_low_statistics_flag(self, small_sweep):
        for sl in small_sweep.slices:
            assert sl.low_statistics == (sl.shots < 100)
        flagged = sweep_postselect(JointHistogram(np.array([[50, 10], [20, 30]])), DetectorParams(100, 0.5),
                                   SweepConfig(c_s_values=(1,), tracks=("photocount",)))
        assert flagged.slices[0].low_statistics

    def test_ml_at_least_as_negative(self, ref_sweep):
        for c in range(3, 8):
            sl = ref_sweep.slice(c)
            for k in (2, 3):
                assert sl.reports["ml"].value("I", k) <= sl.reports["photocount"].value("I", k)

    def test_tracks_agree_at_second_order(self, ref_sweep):
        for c in range(3, 8):
            sl = ref_sweep.slice(c)
            verdicts = {sl.reports[t].get("I", 2).verdict for t in ("photocount", "ml", "model")}
            assert verdicts == {Verdict.NONCLASSICAL}

    def test_model_predicted_criteria(self, ref_sweep):
        for c in range(3, 8):
            rep = ref_sweep.slice(c).reports["model"]
            assert rep.value("I", 2) < 0 and rep.value("I", 3) < 0

    def test_em_diagnostics_recorded(self, ref_sweep):
        for sl in ref_sweep.slices:
            assert sl.em is not None and sl.em.iterations > 0

    def test_fano_of_ml_slice(self, ref_sweep):
        from subpoisson.moments import fano
        assert fano(ref_sweep.slice(5).distributions["ml"]) < 1.0

    def test_bootstrap_errors_attached(self, small_sweep):
        sl = small_sweep.slice(4)
        assert sl.reports["photocount"].get("I", 2).std_error > 0
        assert sl.reports["ml"].get("I", 2).std_error is not None
        assert sl.reports["model"].get("I", 2).std_error is None
        assert sl.mean_errors["photocount"] > 0


class TestFigures:
    def test_fig2a(self, small_sweep):
        cols, rows = emit_figure_data(small_sweep, "fig2a")
        assert cols == ["c_s", "f_s", "f_s_theo"]
        assert sum(r["f_s"] for r in rows) == pytest.approx(1.0)

    def test_fig4(self, small_sweep):
        cols, rows = emit_figure_data(small_sweep, "fig4")
        assert cols == ["c_s", "k", "tau", "tau_err", "track"]
        assert {r["track"] for r in rows} >= {"photocount", "ml", "model"}

    def test_fig6_orders(self, small_sweep):
        cols, rows = emit_figure_data(small_sweep, "fig6")
        assert sorted({r["k"] for r in rows}) == list(range(2, 10))
        assert {r["track"] for r in rows} == {"photocount"}

    @pytest.mark.parametrize("fig", FIGURES)
    def test_every_figure_has_rows(self, small_sweep, fig):
        sweep = small_sweep
        sweep.config.quasi_cs = 5
        cols, rows = emit_figure_data(sweep, fig)
        assert rows and all(set(r) == set(cols) for r in rows)

    def test_unknown(self, small_sweep):
        with pytest.raises(ParameterDomainError):
            emit_figure_data(small_sweep, "fig9")
