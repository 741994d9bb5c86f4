"""Monolithic multi-time-step integration.

One system step advances every subdomain through its own subcycled
trapezoidal updates while interface constraints are enforced at the
system time-level, all inside a single saddle-point solve:

    [ A   C^T ] [ X        ]   [ F ]
    [ B   0   ] [ dlambda  ] = [ 0 ]

``A`` stacks, per subdomain, one bidiagonal chain of 2x2 blocks over the
subdomain's sublevels (rate equation and trapezoidal update); ``C``
carries the linear-in-time multiplier interpolation into every sublevel
rate equation; ``B`` applies the interface constraint to the final
sublevel (values only for the d-continuity method, rates plus
``alpha/dt`` times values for Baumgarte stabilization).  The multiplier
unknown is the increment over the previous system level.

The solve sits inside a Newton loop on the full sublevel vector; for the
linear transport model the Jacobian is constant, the matrix is factorized
once (as long as coefficients are steady) and the second iterate
reproduces the first to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .decomposition import ConstraintMap

METHOD_D_CONTINUITY = "d_continuity"
METHOD_BAUMGARTE = "baumgarte"


class ConfigurationError(ValueError):
    """A run configuration violates a structural requirement."""


class SolverError(RuntimeError):
    """The monolithic solve failed (singular matrix, divergence, overflow)."""


@dataclass(frozen=True)
class CouplingConfig:
    """Interface-coupling and stepping parameters for one run."""

    method: str
    dt_system: float
    n_steps: int
    alpha: float | None = None
    newton_max_iters: int = 50
    newton_abs_tol: float = 1e-12
    newton_rel_tol: float = 1e-10
    linear_solver: str = "direct"
    check_finite: bool = True

    def __post_init__(self):
        if self.method not in (METHOD_D_CONTINUITY, METHOD_BAUMGARTE):
            raise ConfigurationError(f"unknown coupling method {self.method!r}")
        if self.dt_system <= 0.0:
            raise ConfigurationError("system time-step must be positive")
        if self.n_steps < 0:
            raise ConfigurationError("step count must be >= 0")
        if self.method == METHOD_BAUMGARTE:
            if self.alpha is None or self.alpha <= 0.0:
                raise ConfigurationError(
                    "Baumgarte stabilization requires alpha > 0"
                )
        if self.linear_solver != "direct":
            raise ConfigurationError(
                f"unsupported linear solver {self.linear_solver!r}"
            )

    def validate_systems(self, systems) -> None:
        """Check the subcycle bookkeeping dt = eta_i * dt_i per subdomain."""
        for i, system in enumerate(systems, start=1):
            eta = self.dt_system / system.dt_sub
            if abs(eta - round(eta)) > 1e-9 * max(1.0, eta):
                raise ConfigurationError(
                    f"subdomain {i}: system step {self.dt_system} is not an "
                    f"integer multiple of subdomain step {system.dt_sub}"
                )
            if int(round(eta)) != system.eta:
                raise ConfigurationError(
                    f"subdomain {i}: declared subcycle count {system.eta} "
                    f"inconsistent with dt/dt_i = {eta:g}"
                )


@dataclass
class SystemState:
    """Per-subdomain values/rates plus interface multipliers at one level."""

    d: list
    v: list
    lam: np.ndarray
    time: float

    def copy(self) -> "SystemState":
        return SystemState(
            d=[x.copy() for x in self.d],
            v=[x.copy() for x in self.v],
            lam=self.lam.copy(),
            time=self.time,
        )

    def all_finite(self) -> bool:
        return (
            all(np.isfinite(x).all() for x in self.d)
            and all(np.isfinite(x).all() for x in self.v)
            and bool(np.isfinite(self.lam).all())
        )


@dataclass
class StepDiagnostics:
    newton_iterations: int
    increment_norm: float
    d_drift_inf: float
    v_drift_inf: float
    constraint_residual: float


@dataclass
class AssembledProblem:
    """A ready-to-run coupled problem: systems, constraints, initial values."""

    systems: list
    constraints: ConstraintMap
    d0: list
    clip: bool = False
    name: str = "problem"
    t0: float = 0.0


def clip_negative(d: np.ndarray) -> np.ndarray:
    """Entrywise max(d, 0); used by runs that enable concentration clipping."""
    return np.maximum(np.asarray(d), 0.0)


def interpolate_lambda(lam_n, lam_np1, j: int, eta: int) -> np.ndarray:
    """Linear multiplier interpolation at sublevel j+1 of eta."""
    if not 0 <= j + 1 <= eta:
        raise IndexError(f"sublevel {j + 1} out of range for eta={eta}")
    w = (j + 1) / eta
    return (1.0 - w) * np.asarray(lam_n) + w * np.asarray(lam_np1)


def initial_lambda(systems, constraints: ConstraintMap, d0, t0: float = 0.0):
    """Multipliers consistent with the initial data.

    Solves the capacity-weighted interface Schur system
    ``(sum_i C_i M_i^-1 C_i^T) lam = -sum_i C_i M_i^-1 h_i(d_i, t0)``.
    """
    n_lambda = constraints.n_lambda
    if n_lambda == 0:
        return np.zeros(0)
    sizes = [s.n_dofs for s in systems]
    S = np.zeros((n_lambda, n_lambda))
    rhs = np.zeros(n_lambda)
    for i, system in enumerate(systems):
        rows, dofs, signs = constraints.entries[i + 1]
        lu = splu(system.M.tocsc())
        h = system.h(np.asarray(d0[i]), t0)
        Minv_h = lu.solve(h)
        np.add.at(rhs, rows, -signs * Minv_h[dofs])
        if rows.size:
            B = np.zeros((sizes[i], rows.size))
            B[dofs, np.arange(rows.size)] = signs
            Y = lu.solve(B)
            S[np.ix_(rows, rows)] += B.T @ Y
    try:
        # S is nonsymmetric whenever a stabilized capacity matrix enters
        lam = scipy.linalg.solve(S, rhs)
    except scipy.linalg.LinAlgError as err:
        raise SolverError(f"singular interface Schur complement: {err}") from None
    residual = np.linalg.norm(S @ lam - rhs)
    if residual > 1e-10 * max(np.linalg.norm(rhs), 1.0):
        raise SolverError(
            f"interface Schur solve inaccurate (residual {residual:.3e}); "
            "constraints may be redundant"
        )
    return lam


def initial_rates(systems, d0, lam0, constraints: ConstraintMap, t0: float = 0.0):
    """Initial rates from M_i v_i = h_i(d_i, t0) + C_i^T lam0."""
    sizes = [s.n_dofs for s in systems]
    ct_lam = constraints.apply_transpose(lam0, sizes)
    rates = []
    for i, system in enumerate(systems):
        rhs = system.h(np.asarray(d0[i]), t0) + ct_lam[i]
        lu = splu(system.M.tocsc())
        v = lu.solve(rhs)
        residual = np.linalg.norm(system.M @ v - rhs)
        if residual > 1e-10 * max(np.linalg.norm(rhs), 1.0):
            raise SolverError(f"initial rate solve inaccurate in subdomain {i + 1}")
        rates.append(v)
    return rates


def initial_state(problem: AssembledProblem) -> SystemState:
    d0 = [np.asarray(x, dtype=float).copy() for x in problem.d0]
    lam0 = initial_lambda(problem.systems, problem.constraints, d0, problem.t0)
    v0 = initial_rates(problem.systems, d0, lam0, problem.constraints, problem.t0)
    return SystemState(d=d0, v=v0, lam=lam0, time=problem.t0)


@dataclass
class MonolithicSystem:
    """The assembled saddle-point operator and its layout bookkeeping."""

    matrix: sp.csc_matrix
    n_lambda: int
    size_x: int
    v_slices: dict = field(default_factory=dict)   # (i, sublevel) -> slice
    d_slices: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.size_x + self.n_lambda


class MonolithicSolver:
    """Builds, factorizes and advances the coupled block system."""

    def __init__(self, systems, constraints: ConstraintMap, config: CouplingConfig):
        config.validate_systems(systems)
        if constraints.n_subdomains != len(systems):
            raise ConfigurationError("constraint map and system list disagree")
        self.systems = list(systems)
        self.constraints = constraints
        self.config = config
        self.sizes = [s.n_dofs for s in self.systems]
        self._layout()
        self.time_varying = any(s.transport_at is not None for s in self.systems)
        self._lu = None
        self._mono = None
        if not self.time_varying:
            self._mono = self.assemble_matrix(t_n=0.0)
            self._lu = self._factorize(self._mono.matrix)

    def _layout(self):
        self.base = []
        offset = 0
        for system, n in zip(self.systems, self.sizes):
            self.base.append(offset)
            offset += 2 * system.eta * n
        self.size_x = offset
        self.n_lambda = self.constraints.n_lambda
        self.size = self.size_x + self.n_lambda

    def _v_offset(self, i: int, sublevel: int) -> int:
        return self.base[i] + (sublevel - 1) * 2 * self.sizes[i]

    def _d_offset(self, i: int, sublevel: int) -> int:
        return self._v_offset(i, sublevel) + self.sizes[i]

    def _factorize(self, matrix):
        try:
            return splu(matrix.tocsc())
        except RuntimeError as err:
            raise SolverError(f"singular monolithic matrix: {err}") from None

    def assemble_matrix(self, t_n: float) -> MonolithicSystem:
        """The block operator for the step starting at system time ``t_n``."""
        cfg = self.config
        blocks = []

        def put(block, r0, c0):
            coo = sp.coo_matrix(block)
            blocks.append((coo.row + r0, coo.col + c0, coo.data))

        v_slices, d_slices = {}, {}
        for i, system in enumerate(self.systems):
            n = self.sizes[i]
            eta = system.eta
            theta = system.theta
            eye = sp.identity(n, format="csr")
            for s in range(1, eta + 1):
                t_s = t_n + s * system.dt_sub
                if system.transport_at is not None:
                    M_gal, M_stab, K = system.transport_at(t_s)
                else:
                    M_gal, M_stab, K = system.M_gal, system.M_stab, system.K
                rv = self._v_offset(i, s)
                rd = self._d_offset(i, s)
                v_slices[(i, s)] = slice(rv, rv + n)
                d_slices[(i, s)] = slice(rd, rd + n)
                put(M_gal + theta * M_stab, rv, rv)
                put(K, rv, rd)
                put(-theta * system.dt_sub * eye, rd, rv)
                put(eye, rd, rd)
                if s > 1:
                    pv = self._v_offset(i, s - 1)
                    pd = self._d_offset(i, s - 1)
                    if M_stab.nnz:
                        put((1.0 - theta) * M_stab, rv, pv)
                    put(-(1.0 - theta) * system.dt_sub * eye, rd, pv)
                    put(-eye, rd, pd)
                rows, dofs, signs = self.constraints.entries[i + 1]
                if rows.size:
                    coeff = -s / eta
                    blocks.append(
                        (rv + dofs, self.size_x + rows, coeff * signs)
                    )
            # constraint row acts on the final sublevel
            rows, dofs, signs = self.constraints.entries[i + 1]
            if rows.size:
                rv = self._v_offset(i, eta)
                rd = self._d_offset(i, eta)
                if cfg.method == METHOD_D_CONTINUITY:
                    blocks.append((self.size_x + rows, rd + dofs, signs))
                else:
                    blocks.append((self.size_x + rows, rv + dofs, signs))
                    blocks.append(
                        (self.size_x + rows, rd + dofs,
                         (cfg.alpha / cfg.dt_system) * signs)
                    )
        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        data = np.concatenate([b[2] for b in blocks])
        matrix = sp.coo_matrix(
            (data, (rows, cols)), shape=(self.size, self.size)
        ).tocsc()
        return MonolithicSystem(
            matrix=matrix,
            n_lambda=self.n_lambda,
            size_x=self.size_x,
            v_slices=v_slices,
            d_slices=d_slices,
        )

    def assemble_rhs(self, state: SystemState, extra=None) -> np.ndarray:
        """The block right-hand side for the step leaving ``state``.

        ``extra`` optionally perturbs rows (used by the perturbation
        probe): a mapping with keys ``d_update``, ``lambda_interp``,
        ``constraint`` holding per-row additive terms.
        """
        rhs = np.zeros(self.size)
        ct_lam = self.constraints.apply_transpose(state.lam, self.sizes)
        for i, system in enumerate(self.systems):
            n = self.sizes[i]
            theta = system.theta
            for s in range(1, system.eta + 1):
                t_s = state.time + s * system.dt_sub
                rv = self._v_offset(i, s)
                rd = self._d_offset(i, s)
                rhs[rv:rv + n] = system.forcing(t_s) + ct_lam[i]
                if s == 1:
                    M_stab = (system.transport_at(t_s)[1]
                              if system.transport_at is not None
                              else system.M_stab)
                    if M_stab.nnz:
                        rhs[rv:rv + n] -= (1.0 - theta) * (M_stab @ state.v[i])
                    rhs[rd:rd + n] = (
                        state.d[i] + (1.0 - theta) * system.dt_sub * state.v[i]
                    )
        if extra:
            for i, system in enumerate(self.systems):
                n = self.sizes[i]
                for s in range(1, system.eta + 1):
                    rd = self._d_offset(i, s)
                    rv = self._v_offset(i, s)
                    if "d_update" in extra:
                        rhs[rd:rd + n] += system.dt_sub * extra["d_update"][i]
                    if "lambda_interp" in extra:
                        vec = self.constraints.apply_transpose(
                            self.config.dt_system * extra["lambda_interp"],
                            self.sizes,
                        )[i]
                        rhs[rv:rv + n] += vec
            if "constraint" in extra and self.n_lambda:
                scale = 1.0
                if self.config.method == METHOD_BAUMGARTE:
                    scale = 1.0 / self.config.dt_system
                rhs[self.size_x:] += scale * extra["constraint"]
        return rhs

    def step(self, state: SystemState, rhs_extra=None):
        """Advance one system step; returns ``(new_state, diagnostics)``."""
        cfg = self.config
        if self.time_varying:
            mono = self.assemble_matrix(state.time)
            lu = self._factorize(mono.matrix)
        else:
            mono, lu = self._mono, self._lu
        rhs = self.assemble_rhs(state, extra=rhs_extra)
        solution = None
        iterations = 0
        increment = np.inf
        # Newton loop on the full sublevel vector.  The transport model is
        # linear (constant Jacobian -K), so the residual linearization and
        # hence the right-hand side do not depend on the iterate; iteration
        # two must reproduce iteration one to roundoff.
        for iterations in range(1, cfg.newton_max_iters + 1):
            candidate = lu.solve(rhs)
            if not np.isfinite(candidate).all():
                solution = candidate
                increment = 0.0
                break
            if solution is not None:
                delta = candidate - solution
                increment = float(np.abs(delta).max()) if delta.size else 0.0
                scale = float(np.abs(candidate).max()) if candidate.size else 0.0
                solution = candidate
                if increment <= cfg.newton_abs_tol + cfg.newton_rel_tol * scale:
                    break
            else:
                solution = candidate
        else:
            raise SolverError(
                f"Newton did not converge in {cfg.newton_max_iters} iterations "
                f"(last increment {increment:.3e})"
            )
        new = SystemState(
            d=[solution[mono.d_slices[(i, self.systems[i].eta)]].copy()
               for i in range(len(self.systems))],
            v=[solution[mono.v_slices[(i, self.systems[i].eta)]].copy()
               for i in range(len(self.systems))],
            lam=state.lam + solution[self.size_x:],
            time=state.time + cfg.dt_system,
        )
        if cfg.check_finite and not new.all_finite():
            raise SolverError(
                f"non-finite state after step to t={new.time:g}"
            )
        d_drift = self.constraints.apply(new.d)
        v_drift = self.constraints.apply(new.v)
        if cfg.method == METHOD_BAUMGARTE:
            residual = v_drift + (cfg.alpha / cfg.dt_system) * d_drift
        else:
            residual = d_drift
        diag = StepDiagnostics(
            newton_iterations=iterations,
            increment_norm=0.0 if increment == np.inf else increment,
            d_drift_inf=float(np.abs(d_drift).max()) if d_drift.size else 0.0,
            v_drift_inf=float(np.abs(v_drift).max()) if v_drift.size else 0.0,
            constraint_residual=(
                float(np.abs(residual).max()) if residual.size else 0.0
            ),
        )
        return new, diag


def assemble_monolithic(systems, constraints, config, state) -> MonolithicSystem:
    """One-shot assembly of the block operator (layout per the solver)."""
    return MonolithicSolver(systems, constraints, config).assemble_matrix(state.time)


def step(state: SystemState, systems, constraints, config: CouplingConfig):
    """Single system step without solver reuse (convenience for tests)."""
    return MonolithicSolver(systems, constraints, config).step(state)


def run(problem: AssembledProblem, config: CouplingConfig, observers=()):
    """Time-march ``config.n_steps`` system steps from the consistent start.

    Returns ``(trajectory, drift_report)`` where the trajectory holds the
    initial state plus one state per accepted step; observers are called
    as ``observer(step_index, state, diagnostics)`` after each accepted
    step (index 0 announces the initial state with ``diagnostics=None``).
    The march is a pure function of its inputs: identical inputs give
    bitwise-identical trajectories.
    """
    solver = MonolithicSolver(problem.systems, problem.constraints, config)
    state = initial_state(problem)
    trajectory = [state.copy()]
    diagnostics = []
    for observer in observers:
        observer(0, trajectory[0], None)
    for n in range(1, config.n_steps + 1):
        state, diag = solver.step(state)
        if problem.clip:
            state = replace(state, d=[clip_negative(x) for x in state.d])
        trajectory.append(state.copy())
        diagnostics.append(diag)
        for observer in observers:
            observer(n, trajectory[-1], diag)
    from .analysis import measure_drift

    report = measure_drift(trajectory, problem.constraints)
    report.diagnostics = diagnostics
    return trajectory, report
