"""Stability limits, drift diagnostics and perturbation propagation.

Implements the coupling method's stability bookkeeping: the per-subdomain
critical time-step (from the largest generalized eigenvalue of the
capacity/transport pencil), the global cap on the Baumgarte parameter,
the discrete energy functionals whose monotonic decay certifies a stable
run, and the closed-form one-step drift recursions valid without
subcycling and with a uniform integrator parameter.  All of these are
pure functions over immutable inputs.

The energy/stability statements are proven for symmetric transport
matrices; reports carry a scope flag instead of refusing to answer when
advection makes the matrix nonsymmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .decomposition import ConstraintMap
from .mts_core import (
    METHOD_BAUMGARTE,
    AssembledProblem,
    CouplingConfig,
    MonolithicSolver,
    initial_state,
)

_DENSE_EIG_LIMIT = 1500


def _sym(K) -> sp.csr_matrix:
    Ks = sp.csr_matrix(K)
    return (0.5 * (Ks + Ks.T)).tocsr()


def _is_symmetric(K, rtol=1e-10) -> bool:
    Ks = sp.csr_matrix(K)
    diff = abs(Ks - Ks.T)
    scale = abs(Ks).max() if Ks.nnz else 0.0
    return diff.nnz == 0 or diff.max() <= rtol * max(scale, 1.0)


def max_generalized_eigenvalue(M, K, tol: float = 1e-8):
    """Largest real part of the spectrum of M^-1 K.

    Dense generalized eigensolve at desk scale; power iteration on
    ``M^-1 K`` above ``_DENSE_EIG_LIMIT`` unknowns (with a dense fallback
    if it stalls, e.g. when a complex pair dominates).  Returns
    ``(omega, spectrum_is_real)``.
    """
    n = M.shape[0]
    Ms = sp.csr_matrix(M)
    Ks = sp.csr_matrix(K)
    if n <= _DENSE_EIG_LIMIT:
        vals = scipy.linalg.eig(Ks.toarray(), Ms.toarray(), right=False)
        real = bool(np.abs(vals.imag).max(initial=0.0)
                    <= 1e-8 * max(np.abs(vals).max(initial=0.0), 1.0))
        return float(vals.real.max()), real
    lu = splu(Ms.tocsc())
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    omega = 0.0
    for _ in range(5000):
        y = lu.solve(Ks @ x)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, True
        y /= norm
        new = float(y @ lu.solve(Ks @ y))
        if abs(new - omega) <= tol * max(abs(new), 1.0):
            return new, True
        omega, x = new, y
    vals = scipy.linalg.eig(Ks.toarray(), Ms.toarray(), right=False)
    real = bool(np.abs(vals.imag).max(initial=0.0)
                <= 1e-8 * max(np.abs(vals).max(initial=0.0), 1.0))
    return float(vals.real.max()), real


def critical_dt(M, K, theta: float) -> float:
    """Largest stable subdomain step 2 / ((1 - 2 theta) omega).

    Unconditional (+inf) for theta >= 1/2 or when the pencil has no
    positive eigenvalue.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if theta >= 0.5:
        return math.inf
    omega, _ = max_generalized_eigenvalue(M, K)
    if omega <= 0.0:
        return math.inf
    return 2.0 / ((1.0 - 2.0 * theta) * omega)


def alpha_max(subdomain_params) -> float:
    """Upper bound on the Baumgarte parameter, min over explicit-leaning
    subdomains of 2 eta_i / (1 - 2 theta_i); +inf when all theta_i >= 1/2."""
    bounds = []
    for theta, eta in subdomain_params:
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if eta < 1:
            raise ValueError("eta must be >= 1")
        if theta < 0.5:
            bounds.append(2.0 * eta / (1.0 - 2.0 * theta))
    return min(bounds) if bounds else math.inf


def predict_drift_dcontinuity(v_drift_n, theta: float) -> np.ndarray:
    """One-step rate-drift recursion (1 - 1/theta) * v_drift.

    Valid without subcycling and with a uniform theta across subdomains;
    theta = 0 leaves the recursion undefined (and sits outside the
    method's stable regime anyway).
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("recursion requires theta in (0, 1]")
    return (1.0 - 1.0 / theta) * np.asarray(v_drift_n, dtype=float)


def predict_drift_baumgarte(d_drift_n, v_drift_n, theta: float,
                            alpha: float, dt: float):
    """One-step (value, rate) drift recursion under Baumgarte coupling."""
    if alpha <= 0.0 or dt <= 0.0:
        raise ValueError("alpha and dt must be positive")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    d_n = np.asarray(d_drift_n, dtype=float)
    v_n = np.asarray(v_drift_n, dtype=float)
    denom = 1.0 + alpha * theta
    d_next = d_n / denom + dt * (1.0 - theta) * v_n / denom
    v_next = -alpha * d_n / (dt * denom) - alpha * (1.0 - theta) * v_n / denom
    return d_next, v_next


@dataclass
class DriftReport:
    """Interface drift of a trajectory, per system step."""

    times: np.ndarray
    d_drift: list
    v_drift: list
    d_norm2: np.ndarray
    d_norm_inf: np.ndarray
    v_norm2: np.ndarray
    v_norm_inf: np.ndarray
    diagnostics: list = field(default_factory=list)

    def rows(self):
        for k in range(len(self.times)):
            yield (self.times[k], self.d_norm2[k], self.d_norm_inf[k],
                   self.v_norm2[k], self.v_norm_inf[k])


def measure_drift(trajectory, constraints: ConstraintMap) -> DriftReport:
    """Per-step drift vectors sum_i C_i d_i and sum_i C_i v_i plus norms."""
    times, dd, vv = [], [], []
    for state in trajectory:
        times.append(state.time)
        dd.append(constraints.apply(state.d))
        vv.append(constraints.apply(state.v))
    def norms(vectors, order):
        return np.array([
            float(np.linalg.norm(x, order)) if x.size else 0.0 for x in vectors
        ])
    return DriftReport(
        times=np.asarray(times),
        d_drift=dd,
        v_drift=vv,
        d_norm2=norms(dd, 2),
        d_norm_inf=norms(dd, np.inf),
        v_norm2=norms(vv, 2),
        v_norm_inf=norms(vv, np.inf),
    )


# ---------------------------------------------------------------------------
# stability report


@dataclass
class SubdomainStability:
    subdomain: int
    omega: float
    dt_critical: float
    theta: float
    dt_sub: float
    eta: int
    symmetric_transport: bool
    dt_ok: bool


@dataclass
class StabilityReport:
    subdomains: list
    alpha_max: float
    alpha: float | None
    method: str
    alpha_ok: bool
    all_implicit_leaning: bool
    theorem_scope_ok: bool  # False when any transport matrix is nonsymmetric

    @property
    def stable(self) -> bool:
        per = all(s.dt_ok for s in self.subdomains)
        if self.method == METHOD_BAUMGARTE:
            return per and self.alpha_ok
        return self.all_implicit_leaning

    def scope_note(self) -> str:
        if self.theorem_scope_ok:
            return ""
        return ("theorem scope: symmetric transport matrices only; "
                "advective terms make this report advisory")


def stability_report(systems, config: CouplingConfig) -> StabilityReport:
    """Critical steps, alpha bound and verdicts for a configured run."""
    rows = []
    for i, system in enumerate(systems, start=1):
        sym_ok = _is_symmetric(system.K)
        omega, _ = max_generalized_eigenvalue(system.M, system.K)
        crit = (math.inf if system.theta >= 0.5 or omega <= 0.0
                else 2.0 / ((1.0 - 2.0 * system.theta) * omega))
        rows.append(SubdomainStability(
            subdomain=i,
            omega=omega,
            dt_critical=crit,
            theta=system.theta,
            dt_sub=system.dt_sub,
            eta=system.eta,
            symmetric_transport=sym_ok,
            dt_ok=bool(system.dt_sub <= crit),
        ))
    amax = alpha_max([(s.theta, s.eta) for s in systems])
    alpha_ok = True
    if config.method == METHOD_BAUMGARTE:
        alpha_ok = bool(config.alpha <= amax)
    return StabilityReport(
        subdomains=rows,
        alpha_max=amax,
        alpha=config.alpha,
        method=config.method,
        alpha_ok=alpha_ok,
        all_implicit_leaning=all(s.theta >= 0.5 for s in rows),
        theorem_scope_ok=all(s.symmetric_transport for s in rows),
    )


def rate_energy(systems, state, method: str = METHOD_BAUMGARTE,
                alpha: float | None = None, dt_system: float | None = None):
    """Discrete rate energy whose decay the stability theorems certify.

    For the d-continuity method this is sum_i v_i^T Q_i v_i with
    ``Q_i = M_i + 2 (theta_i - 1/2) dt_i sym(K_i)``; for Baumgarte it is
    sum_i v_i^T U_i v_i with
    ``U_i = alpha M_i + dt_i (eta_i + 2 alpha (theta_i - 1/2)) sym(K_i)``.
    """
    total = 0.0
    for system, v in zip(systems, state.v):
        symK = _sym(system.K)
        if method == METHOD_BAUMGARTE:
            if alpha is None:
                raise ValueError("Baumgarte energy requires alpha")
            W = alpha * system.M + system.dt_sub * (
                system.eta + 2.0 * alpha * (system.theta - 0.5)) * symK
        else:
            W = system.M + 2.0 * (system.theta - 0.5) * system.dt_sub * symK
        total += float(v @ (W @ v))
    return total


# ---------------------------------------------------------------------------
# perturbation propagation (empirical)


@dataclass
class PerturbationSpec:
    """Magnitudes of the injected one-step perturbations.

    ``eps_d`` perturbs every sublevel trapezoidal update (scaled by the
    subdomain step), ``eps_lambda`` the interface constraint residual,
    ``delta_lambda`` the multiplier interpolation (scaled by the system
    step).  Directions are pseudo-random unit vectors drawn from ``seed``.
    """

    eps_d: float = 0.0
    eps_lambda: float = 0.0
    delta_lambda: float = 0.0
    seed: int = 0


@dataclass
class PerturbationProbe:
    delta_d: float
    delta_v: float
    delta_lambda: float
    input_scale: float

    @property
    def growth_factors(self) -> tuple:
        s = self.input_scale
        if s == 0.0:
            return (0.0, 0.0, 0.0)
        return (self.delta_d / s, self.delta_v / s, self.delta_lambda / s)

    def bounded(self, cap: float) -> bool:
        return all(math.isfinite(g) and g <= cap for g in self.growth_factors)


def perturbation_probe(problem: AssembledProblem, config: CouplingConfig,
                       spec: PerturbationSpec) -> PerturbationProbe:
    """Paired clean/perturbed single steps from the consistent start.

    Reports the output deltas relative to the injected magnitude; the
    propagation constants themselves are not computable, so callers
    assert boundedness (finite factors below a configured cap), nothing
    sharper.
    """
    solver = MonolithicSolver(problem.systems, problem.constraints, config)
    state = initial_state(problem)
    clean, _ = solver.step(state)
    rng = np.random.default_rng(spec.seed)

    def unit(size):
        if size == 0:
            return np.zeros(0)
        x = rng.standard_normal(size)
        norm = np.linalg.norm(x)
        return x / norm if norm else x

    extra = {}
    if spec.eps_d:
        extra["d_update"] = [spec.eps_d * unit(s.n_dofs) for s in problem.systems]
    if spec.delta_lambda:
        extra["lambda_interp"] = spec.delta_lambda * unit(solver.n_lambda)
    if spec.eps_lambda:
        extra["constraint"] = spec.eps_lambda * unit(solver.n_lambda)
    perturbed, _ = solver.step(state, rhs_extra=extra or None)

    def stacked_delta(a, b):
        if not a:
            return 0.0
        return float(max(np.abs(x - y).max(initial=0.0) for x, y in zip(a, b)))

    delta_lam = (float(np.abs(perturbed.lam - clean.lam).max(initial=0.0))
                 if clean.lam.size else 0.0)
    return PerturbationProbe(
        delta_d=stacked_delta(perturbed.d, clean.d),
        delta_v=stacked_delta(perturbed.v, clean.v),
        delta_lambda=delta_lam,
        input_scale=max(spec.eps_d, spec.eps_lambda, spec.delta_lambda),
    )
