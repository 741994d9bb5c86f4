"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Three checks are known-red and kept red deliberately (see the "Known
acceptance deviations" section of the README):

* 1b/1c - the split-dof case-3 targets (5e-3 on the concentration, 5e-1
  on the multiplier) are not attainable by this coupling scheme: the
  implemented method measures 0.0087 / 0.89, cross-checked against an
  independently hand-assembled dense saddle-point solve, and matches the
  backward-Euler truncation constant of the dominant subdomain.
* 6b - GLS transport matrices on advective problems are not positive
  semidefinite in their symmetric part when the stabilization parameter
  varies across elements; a uniform-tau control experiment recovers
  semidefiniteness, isolating the cause.

Criterion 7 evaluates the steady-state match at t = 6, where the unit
decay rate has actually settled (remnant exp(-6) < 1e-2); at t = 1 the
transient remnant is exp(-1) = 0.37 for any correct solver, asserted
below as a cross-check.

Full-scale runs execute only when MTS_FULL_FIXTURES=1 is set; the
regular suite uses the desk-scale fixtures throughout.
"""

import math
import os
from dataclasses import replace

import numpy as np
import pytest

from mtsfem import analysis, mts_core
from mtsfem.analysis import (
    PerturbationSpec,
    alpha_max,
    critical_dt,
    perturbation_probe,
    predict_drift_baumgarte,
    predict_drift_dcontinuity,
    rate_energy,
)
from mtsfem.assembly import check_symmetric_part
from mtsfem.cli import main as cli_main
from mtsfem.mts_core import (
    CouplingConfig,
    MonolithicSolver,
    initial_state,
    run,
)
from mtsfem.problems import (
    advective_bimolecular_problem,
    boundary_layer_steady,
    diffusion_bimolecular_problem,
    hemker_2d_problem,
    invariants_transform,
    recover_species,
    run_scenario,
    sdof_problem,
    singular_1d_problem,
)

from conftest import reference_trapezoidal

FULL_FIXTURES = os.environ.get("MTS_FULL_FIXTURES") == "1"


def report(criterion: str, passed: bool, detail: str) -> bool:
    print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
    return passed


def sdof_case(case: int):
    table = {
        1: (0.5, (0.25, 0.5), 2),
        2: (0.5, (0.05, 0.1), 2),
        3: (0.1, (0.05, 0.1), 10),
    }
    dt, dts, steps = table[case]
    pd = sdof_problem().with_overrides(
        thetas=(1.0, 0.5), dt_subs=dts,
        config=CouplingConfig(method="d_continuity", dt_system=dt,
                              n_steps=steps))
    return pd


def sdof_errors(pd):
    trajectory, drift = run(pd.assemble(), pd.default_config)
    exact = pd.reference
    err_c = max(float(np.abs(np.concatenate(s.d)
                             - exact.concentration(s.time)).max())
                for s in trajectory)
    err_lam = max(float(np.abs(s.lam - exact.multiplier(s.time)).max())
                  for s in trajectory)
    return err_c, err_lam, drift


class TestCriterion1SplitDofExactness:
    def test_1a_cases_track_exact_solution(self):
        errs = {case: sdof_errors(sdof_case(case))[0] for case in (1, 2)}
        ok = errs[1] < 5e-2 and errs[2] < 5e-3
        assert report("1a", ok,
                      f"cases 1-2 track exp(-t): errors {errs[1]:.2e}, "
                      f"{errs[2]:.2e}")

    def test_1b_case3_concentration_bound(self):
        err_c, _, _ = sdof_errors(sdof_case(3))
        ok = err_c <= 5e-3
        report("1b", ok, f"case 3 max |c - exp(-t)| = {err_c:.4e} "
                         "(target 5e-3; known-red, see README)")
        assert ok, ("the implemented scheme yields 8.7e-3 here, verified "
                    "against an independent dense solve; the 5e-3 target "
                    "is not attainable (README: known acceptance "
                    "deviations)")

    def test_1c_case3_multiplier_bound(self):
        _, err_lam, _ = sdof_errors(sdof_case(3))
        ok = err_lam <= 5e-1
        report("1c", ok, f"case 3 max |lam + 99 exp(-t)| = {err_lam:.4e} "
                         "(target 5e-1; known-red, see README)")
        assert ok, ("the implemented scheme yields 0.89 here, verified "
                    "against an independent dense solve; the 5e-1 target "
                    "is not attainable (README: known acceptance "
                    "deviations)")


class TestCriterion2ZeroDrift:
    def test_value_continuity_runs_are_drift_free(self):
        worst = 0.0
        runs = []
        for case in (1, 2, 3):
            pd = sdof_case(case)
            _, _, drift = sdof_errors(pd)
            worst = max(worst, float(drift.d_norm_inf.max()))
            runs.append(f"sdof case {case}")
        pd = singular_1d_problem()
        _, drift = run(pd.assemble(), pd.default_config)
        worst = max(worst, float(drift.d_norm_inf.max()))
        runs.append("singular_1d")
        hem = hemker_2d_problem()
        cfg = replace(hem.default_config, n_steps=10)
        _, drift = run(hem.assemble(cfg), cfg)
        worst = max(worst, float(drift.d_norm_inf.max()))
        runs.append("hemker_2d")
        scen = advective_bimolecular_problem()
        cfg = CouplingConfig(method="d_continuity", dt_system=0.1, n_steps=3)
        result = run_scenario(scen, cfg)
        for traj in result.invariants.values():
            d = analysis.measure_drift(traj, result.constraints)
            worst = max(worst, float(d.d_norm_inf.max()))
        runs.append("bimolecular_advection F/G")
        ok = worst <= 1e-10
        assert report("2", ok, f"max value drift over {len(runs)} "
                               f"d-continuity runs = {worst:.2e}")


class TestCriterion3ConvergenceOrder:
    def test_midpoint_sweep_second_order(self):
        pd = sdof_problem()
        errors = []
        for dt in (0.4, 0.2, 0.1, 0.05):
            steps = int(round(1.0 / dt))
            p = pd.with_overrides(
                thetas=(0.5, 0.5), dt_subs=(0.01, 0.01),
                config=CouplingConfig(method="baumgarte", alpha=1.0,
                                      dt_system=dt, n_steps=steps))
            trajectory, _ = run(p.assemble(), p.default_config)
            final = trajectory[-1]
            errors.append((dt, float(np.abs(np.concatenate(final.d)
                          - pd.reference.concentration(final.time)).max())))
        order = float(np.polyfit(np.log([e[0] for e in errors]),
                                 np.log([e[1] for e in errors]), 1)[0])
        ok = 1.7 <= order <= 2.2
        assert report("3", ok, f"observed order {order:.3f} over dt sweep "
                               f"{[e[0] for e in errors]}")


def seeded_uniform_run(method, theta, alpha, dt, steps, seed_v, seed_d=0.0):
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


class TestCriterion4DriftRecursions:
    def test_value_continuity_recursion(self):
        worst = 0.0
        for theta in (0.5, 0.75, 1.0):
            ap, traj = seeded_uniform_run("d_continuity", theta, None,
                                          0.05, 7, seed_v=1e-2)
            drifts = [ap.constraints.apply(s.v) for s in traj]
            if theta == 1.0:
                # implicit Euler zeroes the rate drift at system levels
                worst = max(worst, max(float(np.abs(d).max())
                                       for d in drifts[2:]) / 1e-2)
                continue
            for n in range(2, len(drifts) - 1):
                pred = predict_drift_dcontinuity(drifts[n], theta)
                scale = max(float(np.abs(drifts[n]).max()), 1e-30)
                worst = max(worst,
                            float(np.abs(drifts[n + 1] - pred).max()) / scale)
        ok = worst <= 1e-8
        assert report("4a", ok,
                      f"value-continuity rate-drift recursion stepwise "
                      f"relative error {worst:.2e}")

    def test_baumgarte_recursion(self):
        dt = 0.05
        worst = 0.0
        for theta in (0.5, 1.0):
            for alpha in (1.0, 10.0):
                ap, traj = seeded_uniform_run("baumgarte", theta, alpha, dt,
                                              6, seed_v=1e-2, seed_d=1e-3)
                dd = [ap.constraints.apply(s.d) for s in traj]
                vv = [ap.constraints.apply(s.v) for s in traj]
                for n in range(2, len(dd) - 1):
                    pd_, pv_ = predict_drift_baumgarte(dd[n], vv[n], theta,
                                                       alpha, dt)
                    scale = max(float(np.abs(dd[n]).max()),
                                float(np.abs(vv[n]).max()))
                    err = max(float(np.abs(dd[n + 1] - pd_).max()),
                              float(np.abs(vv[n + 1] - pv_).max()))
                    if scale > 1e-11:
                        worst = max(worst, err / scale)
        ok = worst <= 1e-8
        assert report("4b", ok,
                      f"Baumgarte drift recursion stepwise relative error "
                      f"{worst:.2e}")


def diffusion_energy_problem():
    return singular_1d_problem(
        element_counts=(20, 20, 20), source=0.0,
        initial=lambda x: math.sin(math.pi * float(x[0])))


def monotone_violation(energies):
    worst = -math.inf
    for a, b in zip(energies[:-1], energies[1:]):
        worst = max(worst, b - a * (1.0 + 1e-12))
    return worst


class TestCriterion5StabilityBounds:
    def test_5a_value_continuity_energy_decay(self):
        pd = diffusion_energy_problem()
        cfg = CouplingConfig(method="d_continuity", dt_system=0.25,
                             n_steps=500)
        p = pd.with_overrides(thetas=(0.5, 1.0, 0.5),
                              dt_subs=(0.05, 0.25, 0.05), config=cfg)
        ap = p.assemble()
        trajectory, _ = run(ap, cfg)
        energies = [rate_energy(ap.systems, s, method="d_continuity")
                    for s in trajectory]
        viol = monotone_violation(energies)
        ok = viol <= 0.0
        assert report("5a", ok,
                      f"sum v'Qv non-increasing over 500 steps "
                      f"(worst increment {viol:.2e})")

    def test_5b_baumgarte_energy_decay_within_bounds(self):
        pd = diffusion_energy_problem()
        probe = pd.with_overrides(
            thetas=(0.0,) * 3, dt_subs=(0.1,) * 3,
            config=CouplingConfig(method="d_continuity", dt_system=0.1,
                                  n_steps=1)).assemble()
        crits = [critical_dt(s.M, s.K, 0.0) for s in probe.systems]
        targets = [0.5 * c for c in crits]
        dt = max(targets)
        etas = [math.ceil(dt / t - 1e-12) for t in targets]
        dts = [dt / e for e in etas]
        assert all(d <= t * (1 + 1e-12) for d, t in zip(dts, targets))
        amax = alpha_max([(0.0, e) for e in etas])
        cfg = CouplingConfig(method="baumgarte", alpha=0.5 * amax,
                             dt_system=dt, n_steps=500)
        p = pd.with_overrides(thetas=(0.0,) * 3, dt_subs=dts, config=cfg)
        ap = p.assemble()
        trajectory, _ = run(ap, cfg)
        energies = [rate_energy(ap.systems, s, method="baumgarte",
                                alpha=cfg.alpha) for s in trajectory]
        viol = monotone_violation(energies)
        ok = viol <= 0.0
        assert report("5b", ok,
                      f"sum v'Uv non-increasing at dt_i = dt_crit/2, "
                      f"alpha = alpha_max/2 (worst increment {viol:.2e})")

    def test_5c_overdriven_alpha_grows(self):
        # without subcycling the drift recursion amplifies by |1 - alpha|
        # per step, so alpha = 4 alpha_max is a genuine instability witness
        pd = diffusion_energy_problem()
        probe = pd.with_overrides(
            thetas=(0.0,) * 3, dt_subs=(0.1,) * 3,
            config=CouplingConfig(method="d_continuity", dt_system=0.1,
                                  n_steps=1)).assemble()
        crits = [critical_dt(s.M, s.K, 0.0) for s in probe.systems]
        dt = 0.5 * min(crits)
        amax = alpha_max([(0.0, 1)] * 3)
        cfg = CouplingConfig(method="baumgarte", alpha=4 * amax,
                             dt_system=dt, n_steps=500, check_finite=False)
        p = pd.with_overrides(thetas=(0.0,) * 3, dt_subs=(dt,) * 3,
                              config=cfg)
        ap = p.assemble()
        solver = MonolithicSolver(ap.systems, ap.constraints, cfg)
        state = initial_state(ap)
        e0 = rate_energy(ap.systems, state, method="baumgarte",
                         alpha=cfg.alpha)
        growth = 0.0
        steps_taken = 0
        for steps_taken in range(1, 501):
            state, _ = solver.step(state)
            energy = rate_energy(ap.systems, state, method="baumgarte",
                                 alpha=cfg.alpha)
            growth = math.inf if not math.isfinite(energy) \
                else max(growth, energy / e0)
            if growth >= 10.0:
                break
        ok = growth >= 10.0
        assert report("5c", ok,
                      f"alpha = 4 alpha_max grows energy {growth:.3g}x "
                      f"within {steps_taken} steps")


def _whole_domain_matrices(formulation):
    """Each shipped problem assembled as one domain under ``formulation``.

    Whole-domain assembly is the semidefiniteness statement's natural
    scope: the weighting functions vanish on the Dirichlet boundary there,
    while subdomain matrices of advective problems necessarily pick up a
    negative inflow term at interfaces (which the coupled solve
    compensates through the multipliers).
    """
    from mtsfem.assembly import assemble_subdomain
    from mtsfem.mesh import PartitionMap

    problems = [
        ("singular_1d", singular_1d_problem(element_counts=(20, 20, 20)), 0.05),
        ("hemker_2d", hemker_2d_problem(), 0.05),
        ("bimolecular_diffusion",
         diffusion_bimolecular_problem().invariant_F, 1e-3),
        ("bimolecular_advection",
         advective_bimolecular_problem().invariant_F, 0.01),
    ]
    out = []
    for name, pd, dt_sub in problems:
        part = PartitionMap(np.ones(pd.mesh.n_elements, dtype=int),
                            subdomain_count=1)
        system = assemble_subdomain(pd.mesh, part, 1, pd.coefficients,
                                    formulation, (1.0, dt_sub, 1), bc=pd.bc)
        out.append((name, system))
    return out


class TestCriterion6TransportLemma:
    def test_6a_galerkin_symmetric_parts_semidefinite(self):
        failures = []
        for name, system in _whole_domain_matrices("galerkin"):
            min_eig, ok = check_symmetric_part(system.K)
            if not ok:
                failures.append((name, min_eig))
        ok = not failures
        assert report("6a", ok,
                      "Galerkin sym(K) positive semidefinite for all four "
                      "shipped problems" +
                      (f"; failures: {failures}" if failures else ""))

    def test_6b_gls_symmetric_parts_semidefinite(self):
        # The element-varying stabilization parameter breaks the
        # interior-facet telescoping of the (tau/dt)(w ; v.grad c) term, so
        # GLS semidefiniteness genuinely fails on graded or variable-speed
        # advective problems (verified by a uniform-tau control experiment).
        # Asserted regardless; known-red, see README.
        failures = []
        for name, system in _whole_domain_matrices("gls"):
            min_eig, ok = check_symmetric_part(system.K)
            if not ok:
                failures.append((name, round(min_eig, 6)))
        ok = not failures
        report("6b", ok,
               "GLS sym(K) positive semidefinite for all four shipped "
               "problems" + (f"; failures: {failures}" if failures else ""))
        assert ok, ("GLS semidefiniteness fails with the element-varying "
                    "stabilization parameter on advective problems; a "
                    "uniform-tau control recovers it (README: known "
                    "acceptance deviations)")


class TestCriterion7SingularPerturbation:
    def test_settled_state_matches_steady_solution(self):
        # decay rate 1 => remnant exp(-t); at t = 1 the remnant is 0.37
        # for any correct solver (cross-checked below), so the
        # steady-state comparison runs once the transient has settled
        pd = singular_1d_problem()
        cfg = CouplingConfig(method="d_continuity", dt_system=0.25,
                             n_steps=24)
        ap = pd.assemble(cfg)
        trajectory, _ = run(ap, cfg)

        def rel_l2(state):
            num = den = 0.0
            for system, values in zip(ap.systems, state.d):
                xs = pd.mesh.nodes[system.dof_map.free_nodes_global][:, 0]
                ref = boundary_layer_steady(xs)
                num += float(np.sum((values - ref) ** 2))
                den += float(np.sum(ref**2))
            return math.sqrt(num / den)

        at_t1 = rel_l2(trajectory[4])     # t = 1.0
        at_t6 = rel_l2(trajectory[-1])    # t = 6.0
        ok = at_t6 < 1e-2
        assert report("7a", ok,
                      f"rel L2 vs steady: {at_t6:.2e} at t=6 "
                      f"(transient remnant at t=1 is {at_t1:.2f}, "
                      f"matching exp(-1))")
        assert 0.3 < at_t1 < 0.45

    def test_refined_subdomains_have_smaller_errors(self):
        pd = singular_1d_problem()
        cfg = CouplingConfig(method="d_continuity", dt_system=0.25, n_steps=4)
        p = pd.with_overrides(thetas=(0.5, 1.0, 0.5),
                              dt_subs=(0.05, 0.25, 0.05), config=cfg)
        ap = p.assemble()
        trajectory, _ = run(ap, cfg)

        cfg_ref = CouplingConfig(method="d_continuity", dt_system=0.005,
                                 n_steps=200)
        p_ref = pd.with_overrides(thetas=(0.5,) * 3, dt_subs=(0.005,) * 3,
                                  config=cfg_ref)
        ap_ref = p_ref.assemble()
        ref, _ = run(ap_ref, cfg_ref)

        errs = [float(np.sqrt(np.mean((trajectory[-1].d[i]
                                       - ref[-1].d[i]) ** 2)))
                for i in range(3)]
        ok = max(errs[0], errs[2]) < errs[1]
        assert report("7b", ok,
                      f"time-refined layer subdomains beat the coarse "
                      f"middle: RMS errors {errs[0]:.2e}/{errs[1]:.2e}/"
                      f"{errs[2]:.2e}")


class TestCriterion8HemkerBands:
    def run_min(self, plan, reduced=True):
        pd = hemker_2d_problem(formulation_plan=plan, reduced=reduced)
        cfg = pd.default_config   # dt = 0.1, 50 steps -> t = 5
        ap = pd.assemble(cfg)
        trajectory, _ = run(ap, cfg)
        return min(float(d.min()) for d in trajectory[-1].d)

    def test_galerkin_undershoot(self):
        mn = self.run_min(("galerkin",) * 3)
        ok = mn < -0.2
        assert report("8a", ok, f"all-Galerkin min nodal value {mn:.3f} "
                                "(band: < -0.2; the exact depth is "
                                "mesh-dependent)")

    def test_stabilized_split_controls_undershoot(self):
        mn = self.run_min(("gls", "supg", "galerkin"))
        ok = mn > -0.15
        assert report("8b", ok, f"GLS/SUPG/Galerkin split min nodal value "
                                f"{mn:.3f} (band: > -0.15)")

    @pytest.mark.skipif(not FULL_FIXTURES,
                        reason="full-scale fixture is opt-in "
                               "(set MTS_FULL_FIXTURES=1)")
    def test_full_fixture_bands(self):
        mn_gal = self.run_min(("galerkin",) * 3, reduced=False)
        mn_mix = self.run_min(("gls", "supg", "galerkin"), reduced=False)
        ok = mn_gal < -0.2 and mn_mix > -0.15
        assert report("8c", ok,
                      f"full fixture: Galerkin {mn_gal:.3f}, split "
                      f"{mn_mix:.3f}")


class TestCriterion9Bimolecular:
    def test_species_properties_and_drift_trend(self):
        scen = diffusion_bimolecular_problem()
        cfg = CouplingConfig(method="baumgarte", dt_system=1e-3, n_steps=40,
                             alpha=100.0)
        result = run_scenario(scen, cfg)

        min_species = min(
            float(v.min()) for fields in result.species
            for parts in fields for v in parts)
        max_product_overlap = max(
            float(np.max(a * b)) if a.size else 0.0
            for c_a, c_b, _ in result.species
            for a, b in zip(c_a, c_b))
        ok1 = min_species >= 0.0 and max_product_overlap == 0.0
        report("9a", ok1,
               f"species nonnegative (min {min_species:.2e}) and "
               f"complementary (max A*B = {max_product_overlap:.2e})")
        assert ok1

        worst_roundtrip = 0.0
        state_f = result.invariants["F"][-1]
        state_g = result.invariants["G"][-1]
        for f_i, g_i in zip(state_f.d, state_g.d):
            a, b, c = recover_species(scen, f_i, g_i)
            f2, g2 = invariants_transform(scen, a, b, c)
            worst_roundtrip = max(worst_roundtrip,
                                  float(np.abs(f2 - f_i).max()),
                                  float(np.abs(g2 - g_i).max()))
        ok2 = worst_roundtrip <= 1e-12
        report("9b", ok2,
               f"transform . recover identity to {worst_roundtrip:.2e}")
        assert ok2

        halved = diffusion_bimolecular_problem()
        for invariant in (halved.invariant_F, halved.invariant_G):
            for setup in invariant.subdomains:
                setup.dt_sub /= 2.0
        cfg_half = CouplingConfig(method="baumgarte", dt_system=5e-4,
                                  n_steps=80, alpha=100.0)
        result_half = run_scenario(halved, cfg_half)
        d_full = float(result.drift_c_inf[-1])
        d_half = float(result_half.drift_c_inf[-1])
        ok3 = d_half < d_full
        report("9c", ok3,
               f"terminal product drift decreases when dt halves: "
               f"{d_full:.3e} -> {d_half:.3e}")
        assert ok3


class TestCriterion10Oracles:
    def test_single_domain_equivalence(self):
        from mtsfem.assembly import (
            BoundaryConditions,
            TransportCoefficients,
            assemble_subdomain,
        )
        from mtsfem.decomposition import build_constraints, build_dof_maps
        from mtsfem.mesh import build_interval_mesh
        from mtsfem.mts_core import AssembledProblem

        # coarse enough that theta = 0 stays inside its stability limit;
        # otherwise roundoff differences between the two code paths amplify
        mesh, part = build_interval_mesh([1.0], [10])
        coeffs = TransportCoefficients(velocity=[0.0], diffusivity=0.05,
                                       decay=1.0, source=1.0)
        bc = BoundaryConditions(dirichlet={"left": 0.0, "right": 0.0})
        maps = build_dof_maps(mesh, part, ("left", "right"))
        con = build_constraints(maps)
        worst = 0.0
        for theta in (0.0, 0.5, 1.0):
            system = assemble_subdomain(mesh, part, 1, coeffs, "galerkin",
                                        (theta, 0.02, 1), bc=bc,
                                        dof_map=maps[1])
            ap = AssembledProblem(systems=[system], constraints=con,
                                  d0=[np.zeros(system.n_dofs)])
            cfg = CouplingConfig(method="d_continuity", dt_system=0.02,
                                 n_steps=25)
            trajectory, _ = run(ap, cfg)
            oracle = reference_trapezoidal(system.M_gal, system.K,
                                           system.forcing,
                                           np.zeros(system.n_dofs),
                                           theta, 0.02, 25)
            for state, (t, d_ref, v_ref) in zip(trajectory, oracle):
                worst = max(worst, float(np.abs(state.d[0] - d_ref).max()),
                            float(np.abs(state.v[0] - v_ref).max()))
        ok = worst <= 1e-12
        assert report("10a", ok,
                      f"single-domain trajectory matches the standalone "
                      f"integrator to {worst:.2e} for theta in (0, 1/2, 1)")

    def test_monolithic_matches_dense_kkt(self):
        m1, k1, m2, k2 = 100.0, 1.0, 1.0, 100.0
        pd = sdof_case(3)
        ap = pd.assemble()
        cfg = pd.default_config
        solver = MonolithicSolver(ap.systems, ap.constraints, cfg)
        state = initial_state(ap)
        new, _ = solver.step(state)

        lam = float(state.lam[0])
        d1, d2 = float(state.d[0][0]), float(state.d[1][0])
        v2 = float(state.v[1][0])
        A = np.zeros((7, 7))
        b = np.zeros(7)
        A[0, 0] = m1; A[0, 1] = k1; A[0, 6] = -0.5; b[0] = lam
        A[1, 1] = 1.0; A[1, 0] = -0.05; b[1] = d1
        A[2, 2] = m1; A[2, 3] = k1; A[2, 6] = -1.0; b[2] = lam
        A[3, 3] = 1.0; A[3, 2] = -0.05; A[3, 1] = -1.0
        A[4, 4] = m2; A[4, 5] = k2; A[4, 6] = +1.0; b[4] = -lam
        A[5, 5] = 1.0; A[5, 4] = -0.05; b[5] = d2 + 0.05 * v2
        A[6, 3] = 1.0; A[6, 5] = -1.0
        x = np.linalg.solve(A, b)
        worst = max(abs(new.d[0][0] - x[3]), abs(new.v[0][0] - x[2]),
                    abs(new.d[1][0] - x[5]), abs(new.v[1][0] - x[4]),
                    abs(new.lam[0] - (lam + x[6])))
        ok = worst <= 1e-12
        assert report("10b", ok,
                      f"monolithic step equals hand-assembled dense "
                      f"saddle-point solve to {worst:.2e}")

    def test_perturbation_probe_bounded(self):
        # empirical companion of the perturbation analysis: scaled inputs
        # propagate with a bounded factor (the constants themselves are
        # not computable)
        pd = sdof_problem()
        dt = pd.default_config.dt_system
        spec = PerturbationSpec(eps_d=1e-6 * 0.05, eps_lambda=1e-6 * dt**2,
                                delta_lambda=1e-6 * dt, seed=11)
        probe = perturbation_probe(pd.assemble(), pd.default_config, spec)
        ok = probe.bounded(cap=100.0)
        assert report("10c", ok,
                      f"one-step perturbation growth factors "
                      f"{tuple(f'{g:.2f}' for g in probe.growth_factors)} "
                      f"< 100")


class TestCriterion11Determinism:
    CFG = (
        "[problem]\nname = singular_1d\n"
        "[coupling]\nmethod = d_continuity\ndt = 0.25\nsteps = 4\n"
        "[output]\nsnapshots = 2\n"
    )

    def test_repeated_runs_byte_identical(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(self.CFG)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli_main(["run", str(cfg), "--out", str(out1)]) == 0
        assert cli_main(["run", str(cfg), "--out", str(out2)]) == 0
        names1 = sorted(p.name for p in out1.iterdir())
        names2 = sorted(p.name for p in out2.iterdir())
        identical = names1 == names2 and all(
            (out1 / n).read_bytes() == (out2 / n).read_bytes()
            for n in names1)
        assert report("11", identical,
                      f"repeated runs produced byte-identical outputs "
                      f"({len(names1)} files)")
