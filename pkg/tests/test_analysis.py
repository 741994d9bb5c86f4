import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtsfem.analysis import (
    PerturbationSpec,
    alpha_max,
    critical_dt,
    measure_drift,
    perturbation_probe,
    predict_drift_baumgarte,
    predict_drift_dcontinuity,
    rate_energy,
    stability_report,
)
from mtsfem.mts_core import (
    CouplingConfig,
    MonolithicSolver,
    initial_state,
    run,
)
from mtsfem.problems import hemker_2d_problem, sdof_problem, singular_1d_problem


class TestCriticalDt:
    def test_implicit_leaning_is_unconditional(self):
        assert critical_dt(np.eye(2), np.eye(2), 0.5) == math.inf
        assert critical_dt(np.eye(2), np.eye(2), 1.0) == math.inf

    def test_scalar_formula(self):
        assert critical_dt(np.eye(3), 100.0 * np.eye(3), 0.0) == \
            pytest.approx(0.02)

    def test_split_dof_stiff_subdomain(self):
        # omega = k/m = 100 for the stiff side, so dt_crit = 0.02 at theta=0
        assert critical_dt(np.array([[1.0]]), np.array([[100.0]]), 0.0) == \
            pytest.approx(0.02)

    def test_zero_transport_is_unconditional(self):
        assert critical_dt(np.eye(2), np.zeros((2, 2)), 0.0) == math.inf

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.0, 0.49), st.floats(0.0, 0.49))
    def test_monotone_in_theta(self, t1, t2):
        lo, hi = sorted((t1, t2))
        M = np.eye(2)
        K = np.diag([3.0, 7.0])
        assert critical_dt(M, K, lo) <= critical_dt(M, K, hi) + 1e-15

    def test_bad_theta(self):
        with pytest.raises(ValueError):
            critical_dt(np.eye(1), np.eye(1), 1.5)


class TestAlphaMax:
    def test_all_implicit_leaning(self):
        assert alpha_max([(0.5, 1), (1.0, 3)]) == math.inf

    def test_single_explicit(self):
        assert alpha_max([(0.0, 1)]) == pytest.approx(2.0)

    def test_min_over_subdomains(self):
        assert alpha_max([(0.0, 5), (0.25, 1)]) == pytest.approx(4.0)

    def test_infinite_iff_all_implicit_leaning(self):
        assert math.isinf(alpha_max([(0.5, 1), (0.75, 2)]))
        assert not math.isinf(alpha_max([(0.49, 10), (1.0, 1)]))


class TestDriftPredictions:
    def test_implicit_euler_kills_rate_drift(self):
        out = predict_drift_dcontinuity(np.array([0.3, -0.2]), 1.0)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_midpoint_oscillates(self):
        out = predict_drift_dcontinuity(np.array([1.0]), 0.5)
        np.testing.assert_array_equal(out, [-1.0])

    def test_theta_zero_rejected(self):
        with pytest.raises(ValueError):
            predict_drift_dcontinuity(np.ones(1), 0.0)

    def test_baumgarte_fixed_point(self):
        d, v = predict_drift_baumgarte(np.zeros(2), np.zeros(2), 0.5, 1.0, 0.1)
        np.testing.assert_array_equal(d, 0.0)
        np.testing.assert_array_equal(v, 0.0)

    def test_large_alpha_suppresses_value_drift(self):
        d, _ = predict_drift_baumgarte(np.array([1.0]), np.array([0.0]),
                                       1.0, 1e9, 0.1)
        assert abs(d[0]) < 2e-9

    @given(st.floats(0.01, 1.0), st.floats(0.1, 50.0), st.floats(0.01, 1.0))
    def test_baumgarte_next_rate_is_scaled_value(self, theta, alpha, dt):
        # the new rate drift always equals -(alpha/dt) times the new value
        # drift, because the constraint couples them exactly
        d0, v0 = np.array([0.37]), np.array([-1.4])
        d1, v1 = predict_drift_baumgarte(d0, v0, theta, alpha, dt)
        np.testing.assert_allclose(v1, -(alpha / dt) * d1, rtol=1e-12)


def seeded_run(method, theta, alpha, dt, steps, seed_v=1e-2, seed_d=0.0):
    """Uniform-theta, no-subcycling run with an interface-incompatible seed.

    Consistent initialization makes the drift identically zero, so the
    recursion oracles need a deliberately incompatible start.
    """
    pd = singular_1d_problem(element_counts=(8, 8, 8))
    cfg = CouplingConfig(method=method, dt_system=dt, n_steps=steps,
                         alpha=alpha)
    pd = pd.with_overrides(thetas=(theta,) * 3, dt_subs=(dt,) * 3, config=cfg)
    ap = pd.assemble()
    state = initial_state(ap)
    state.v[0][-1] += seed_v
    if seed_d:
        state.d[0][-1] += seed_d
    solver = MonolithicSolver(ap.systems, ap.constraints, cfg)
    trajectory = [state.copy()]
    for _ in range(steps):
        state, _ = solver.step(state)
        trajectory.append(state.copy())
    return ap, trajectory


class TestDriftRecursionOracles:
    @pytest.mark.parametrize("theta", [0.5, 0.75])
    def test_dcontinuity_recursion_matches_measured_run(self, theta):
        ap, trajectory = seeded_run("d_continuity", theta, None, 0.05, 7)
        drifts = [ap.constraints.apply(s.v) for s in trajectory]
        for n in range(2, len(drifts) - 1):
            predicted = predict_drift_dcontinuity(drifts[n], theta)
            scale = max(float(np.abs(drifts[n]).max()), 1e-30)
            rel = float(np.abs(drifts[n + 1] - predicted).max()) / scale
            assert rel <= 1e-8

    def test_dcontinuity_implicit_euler_zero_drift(self):
        ap, trajectory = seeded_run("d_continuity", 1.0, None, 0.05, 5)
        drifts = [ap.constraints.apply(s.v) for s in trajectory]
        # seeded drift is wiped out from the first accepted step onwards
        for d in drifts[1:]:
            assert float(np.abs(d).max()) <= 1e-10

    @pytest.mark.parametrize("theta,alpha", [(0.5, 1.0), (0.5, 10.0),
                                             (1.0, 1.0), (1.0, 10.0)])
    def test_baumgarte_recursion_matches_measured_run(self, theta, alpha):
        dt = 0.05
        ap, trajectory = seeded_run("baumgarte", theta, alpha, dt, 6,
                                    seed_v=1e-2, seed_d=1e-3)
        dd = [ap.constraints.apply(s.d) for s in trajectory]
        vv = [ap.constraints.apply(s.v) for s in trajectory]
        for n in range(2, len(dd) - 1):
            pred_d, pred_v = predict_drift_baumgarte(dd[n], vv[n], theta,
                                                     alpha, dt)
            scale = max(float(np.abs(dd[n]).max()),
                        float(np.abs(vv[n]).max()), 1e-30)
            err = max(float(np.abs(dd[n + 1] - pred_d).max()),
                      float(np.abs(vv[n + 1] - pred_v).max()))
            if scale <= 1e-11:      # drift decayed to solver noise
                assert err <= 1e-10
            else:
                assert err / scale <= 1e-8


class TestMeasureDrift:
    def test_dcontinuity_zero_value_drift(self):
        pd = sdof_problem()
        trajectory, _ = run(pd.assemble(), pd.default_config)
        report = measure_drift(trajectory, pd.assemble().constraints)
        assert report.d_norm_inf.max() <= 1e-10

    def test_single_subdomain_empty_drift(self):
        from mtsfem.decomposition import ConstraintMap
        from mtsfem.mts_core import AssembledProblem
        import scipy.sparse as sp
        from mtsfem.assembly import SubdomainSystem

        system = SubdomainSystem(
            M_gal=sp.identity(2, format="csr"), M_stab=sp.csr_matrix((2, 2)),
            K=sp.identity(2, format="csr"), forcing=lambda t: np.zeros(2),
            theta=1.0, dt_sub=0.1, eta=1, formulation=None)
        ap = AssembledProblem(systems=[system],
                              constraints=ConstraintMap(rows=[], n_subdomains=1),
                              d0=[np.ones(2)])
        cfg = CouplingConfig(method="d_continuity", dt_system=0.1, n_steps=2)
        trajectory, report = run(ap, cfg)
        assert report.d_norm_inf.max() == 0.0
        assert all(v.size == 0 for v in report.d_drift)


class TestStabilityReport:
    def test_split_dof_report(self):
        pd = sdof_problem().with_overrides(
            thetas=(0.5, 0.0), dt_subs=(0.1, 0.02),
            config=CouplingConfig(method="baumgarte", dt_system=0.1,
                                  n_steps=1, alpha=1.0))
        ap = pd.assemble()
        report = stability_report(ap.systems, pd.default_config)
        assert report.subdomains[1].omega == pytest.approx(100.0)
        assert report.subdomains[1].dt_critical == pytest.approx(0.02)
        assert report.alpha_max == pytest.approx(10.0)  # 2*eta/(1-0), eta=5
        assert report.alpha_ok
        assert report.theorem_scope_ok

    def test_all_implicit_alpha_max_infinite(self):
        pd = sdof_problem()
        ap = pd.assemble()
        report = stability_report(ap.systems, pd.default_config)
        assert math.isinf(report.alpha_max)
        assert report.stable

    def test_advective_transport_flagged(self):
        pd = hemker_2d_problem()
        ap = pd.assemble()
        report = stability_report(ap.systems, pd.default_config)
        assert not report.theorem_scope_ok
        assert "symmetric transport" in report.scope_note()


class TestRateEnergy:
    def test_energy_is_quadratic_form(self):
        pd = sdof_problem()
        ap = pd.assemble()
        state = initial_state(ap)
        # Q_i = M_i + 2 (theta_i - 1/2) dt_i sym(K_i); v0 = -1 in both
        q1 = 100.0 + 2 * 0.5 * 0.05 * 1.0
        q2 = 1.0
        expected = q1 * 1.0 + q2 * 1.0
        assert rate_energy(ap.systems, state, method="d_continuity") == \
            pytest.approx(expected, rel=1e-12)

    def test_baumgarte_energy_requires_alpha(self):
        pd = sdof_problem()
        ap = pd.assemble()
        state = initial_state(ap)
        with pytest.raises(ValueError):
            rate_energy(ap.systems, state, method="baumgarte")


class TestPerturbationProbe:
    def test_zero_perturbation_gives_zero_deltas(self):
        pd = sdof_problem()
        probe = perturbation_probe(pd.assemble(), pd.default_config,
                                   PerturbationSpec())
        assert probe.delta_d == 0.0
        assert probe.delta_v == 0.0
        assert probe.delta_lambda == 0.0

    def test_linearity_in_magnitude(self):
        pd = sdof_problem()
        spec1 = PerturbationSpec(eps_d=1e-3, eps_lambda=1e-4,
                                 delta_lambda=1e-4, seed=7)
        spec2 = PerturbationSpec(eps_d=5e-4, eps_lambda=5e-5,
                                 delta_lambda=5e-5, seed=7)
        p1 = perturbation_probe(pd.assemble(), pd.default_config, spec1)
        p2 = perturbation_probe(pd.assemble(), pd.default_config, spec2)
        assert p2.delta_d == pytest.approx(0.5 * p1.delta_d, rel=1e-9)
        assert p2.delta_v == pytest.approx(0.5 * p1.delta_v, rel=1e-9)
        assert p2.delta_lambda == pytest.approx(0.5 * p1.delta_lambda,
                                                rel=1e-9)

    def test_split_dof_growth_factors_bounded(self):
        # magnitudes follow the analysis scaling: eps_d = O(dt_i),
        # eps_lambda = O(dt^2), delta_lambda = O(dt)
        pd = sdof_problem()
        dt = pd.default_config.dt_system
        h = 1e-6
        spec = PerturbationSpec(eps_d=h * 0.05, eps_lambda=h * dt**2,
                                delta_lambda=h * dt, seed=3)
        probe = perturbation_probe(pd.assemble(), pd.default_config, spec)
        assert probe.bounded(cap=100.0)
        assert probe.input_scale == pytest.approx(h * dt)
