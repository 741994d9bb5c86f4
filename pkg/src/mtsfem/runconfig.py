"""Run configuration files.

INI-style text configs with one section per subdomain:

    [problem]
    name = singular_1d            ; builtin name or "custom"
    [coupling]
    method = d_continuity         ; or baumgarte (requires alpha)
    dt = 0.25
    steps = 4
    [subdomain 1]
    theta = 0.5
    dt = 0.05
    formulation = galerkin
    [output]
    snapshots = 2

Custom problems supply a mesh/partition pair plus coefficient fields as
expression strings in x, y and t (see :mod:`mtsfem.expressions`):

    [problem]
    name = custom
    mesh = channel.mesh
    partition = channel.part
    velocity = 1 - 0*x, 0
    diffusivity = 0.01
    decay = 0
    source = sin(pi*x)
    dirichlet = left: 0, right: 0
    initial = 0

Validation failures raise :class:`mtsfem.mts_core.ConfigurationError`
(CLI exit code 2).  Violations of the stability bounds are legitimate
runs and only produce warnings.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .assembly import BoundaryConditions, TransportCoefficients
from .expressions import Expression, ExpressionError
from .mesh import load_mesh, load_partition
from .mts_core import ConfigurationError, CouplingConfig
from .problems import (
    BUILTIN_PROBLEMS,
    BUILTIN_SCENARIOS,
    ProblemDefinition,
    SubdomainSetup,
)

_METHOD_ALIASES = {
    "d_continuity": "d_continuity",
    "d-continuity": "d_continuity",
    "dcontinuity": "d_continuity",
    "baumgarte": "baumgarte",
}


@dataclass
class OutputOptions:
    snapshots: int = 0
    plots: bool = False


@dataclass
class RunConfig:
    """Everything a CLI command needs: the problem, coupling, outputs."""

    problem_name: str
    coupling: CouplingConfig
    subdomain_overrides: dict = field(default_factory=dict)
    output: OutputOptions = field(default_factory=OutputOptions)
    reduced_fixtures: bool = True
    formulation_plan: tuple | None = None
    custom: dict | None = None
    end_time: float | None = None
    sweep_mode: str = "system"

    def build_problem(self):
        """Instantiate the problem or scenario with overrides applied."""
        if self.problem_name in BUILTIN_SCENARIOS:
            scenario = BUILTIN_SCENARIOS[self.problem_name](
                reduced=self.reduced_fixtures
            )
            for invariant in (scenario.invariant_F, scenario.invariant_G):
                self._apply_overrides(invariant)
            return scenario
        if self.problem_name in BUILTIN_PROBLEMS:
            if self.problem_name == "hemker_2d" and self.formulation_plan:
                problem = BUILTIN_PROBLEMS[self.problem_name](
                    formulation_plan=self.formulation_plan,
                    reduced=self.reduced_fixtures,
                )
            elif self.problem_name == "hemker_2d":
                problem = BUILTIN_PROBLEMS[self.problem_name](
                    reduced=self.reduced_fixtures
                )
            else:
                problem = BUILTIN_PROBLEMS[self.problem_name]()
            self._apply_overrides(problem)
            return problem
        if self.problem_name == "custom":
            problem = _build_custom(self.custom)
            self._apply_overrides(problem)
            return problem
        raise ConfigurationError(f"unknown problem {self.problem_name!r}")

    def _apply_overrides(self, problem: ProblemDefinition) -> None:
        problem.default_config = self.coupling
        for i, setup in enumerate(problem.subdomains, start=1):
            override = self.subdomain_overrides.get(i)
            if not override:
                continue
            if "theta" in override:
                setup.theta = override["theta"]
            if "dt" in override:
                setup.dt_sub = override["dt"]
            if "formulation" in override:
                from .assembly import FormulationTag

                setup.formulation = FormulationTag.parse(override["formulation"])


def _expression(raw: str, what: str) -> Expression:
    try:
        return Expression(raw)
    except ExpressionError as err:
        raise ConfigurationError(f"bad {what} expression: {err}") from None


def _build_custom(custom: dict) -> ProblemDefinition:
    if not custom:
        raise ConfigurationError("custom problem needs mesh/partition settings")
    try:
        mesh = load_mesh(custom["mesh"], format=custom.get("mesh_format", "native"))
    except KeyError:
        raise ConfigurationError("custom problem: 'mesh' is required") from None
    try:
        partition = load_partition(custom["partition"], mesh)
    except KeyError:
        raise ConfigurationError("custom problem: 'partition' is required") from None

    velocity_parts = [p.strip() for p in custom.get("velocity", "0").split(",")]
    if len(velocity_parts) != mesh.dimension:
        raise ConfigurationError(
            f"velocity needs {mesh.dimension} comma-separated components"
        )
    vel_exprs = [_expression(p, "velocity") for p in velocity_parts]
    diff_expr = _expression(custom.get("diffusivity", "1"), "diffusivity")
    source_expr = _expression(custom.get("source", "0"), "source")
    initial_expr = _expression(custom.get("initial", "0"), "initial")
    decay = float(custom.get("decay", "0"))

    import numpy as np

    def velocity(x, t):
        return np.array([e.at_point(x, t) for e in vel_exprs])

    def diffusivity(x):
        return diff_expr.at_point(x, 0.0) * np.eye(mesh.dimension)

    time_varying = any(e.time_dependent for e in vel_exprs)
    coeffs = TransportCoefficients(
        velocity=velocity,
        diffusivity=diffusivity,
        decay=decay,
        source=(lambda x, t: source_expr.at_point(x, t)),
        time_varying=time_varying,
    )

    def parse_bc(raw: str, what: str) -> dict:
        out = {}
        if not raw:
            return out
        for chunk in raw.split(","):
            if not chunk.strip():
                continue
            if ":" not in chunk:
                raise ConfigurationError(
                    f"{what} entries look like 'set: expression' (got {chunk!r})"
                )
            name, expr = chunk.split(":", 1)
            compiled = _expression(expr.strip(), what)
            if _is_constant(compiled):
                out[name.strip()] = compiled.at_point([0.0, 0.0], 0.0)
            else:
                out[name.strip()] = lambda x, t, e=compiled: e.at_point(x, t)
        return out

    bc = BoundaryConditions(
        dirichlet=parse_bc(custom.get("dirichlet", ""), "dirichlet"),
        neumann=parse_bc(custom.get("neumann", ""), "neumann"),
    )
    subdomains = [
        SubdomainSetup(theta=0.5, dt_sub=1.0)
        for _ in range(partition.subdomain_count)
    ]
    return ProblemDefinition(
        name=custom.get("label", "custom"),
        mesh=mesh,
        partition=partition,
        coefficients=coeffs,
        bc=bc,
        initial=lambda x: initial_expr.at_point(x, 0.0),
        subdomains=subdomains,
        default_config=CouplingConfig(
            method="d_continuity", dt_system=1.0, n_steps=0
        ),
    )


def _is_constant(expr: Expression) -> bool:
    import re

    return not re.search(r"\b[xyt]\b", expr.text)


def load_run_config(path) -> RunConfig:
    """Parse and validate a run configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as err:
        raise ConfigurationError(f"{path}: {err}") from None

    if "problem" not in parser:
        raise ConfigurationError(f"{path}: missing [problem] section")
    prob = parser["problem"]
    name = prob.get("name", "").strip()
    if not name:
        raise ConfigurationError(f"{path}: [problem] name is required")

    if "coupling" not in parser:
        raise ConfigurationError(f"{path}: missing [coupling] section")
    coup = parser["coupling"]
    method_raw = coup.get("method", "d_continuity").strip().lower()
    if method_raw not in _METHOD_ALIASES:
        raise ConfigurationError(f"{path}: unknown coupling method {method_raw!r}")
    method = _METHOD_ALIASES[method_raw]
    try:
        coupling = CouplingConfig(
            method=method,
            dt_system=coup.getfloat("dt"),
            n_steps=coup.getint("steps", 0),
            alpha=coup.getfloat("alpha", fallback=None),
            newton_max_iters=coup.getint("newton_max_iters", 50),
            newton_abs_tol=coup.getfloat("newton_abs_tol", 1e-12),
            newton_rel_tol=coup.getfloat("newton_rel_tol", 1e-10),
        )
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"{path}: [coupling] {err}") from None

    end_time = coup.getfloat("end_time", fallback=None)
    sweep_mode = coup.get("sweep", "system").strip().lower()
    if sweep_mode not in ("system", "proportional"):
        raise ConfigurationError(
            f"{path}: sweep must be 'system' (fixed subdomain steps) or "
            f"'proportional' (fixed subcycle counts), got {sweep_mode!r}"
        )

    overrides = {}
    for section in parser.sections():
        if not section.startswith("subdomain"):
            continue
        try:
            sid = int(section.split()[1])
        except (IndexError, ValueError):
            raise ConfigurationError(
                f"{path}: subdomain sections look like [subdomain 1]"
            ) from None
        sec = parser[section]
        entry = {}
        if "theta" in sec:
            entry["theta"] = _parse_theta(sec["theta"], path, sid)
        if "dt" in sec:
            entry["dt"] = sec.getfloat("dt")
        if "formulation" in sec:
            entry["formulation"] = sec["formulation"].strip()
        overrides[sid] = entry

    output = OutputOptions()
    if "output" in parser:
        out = parser["output"]
        output.snapshots = out.getint("snapshots", 0)

    formulation_plan = None
    if "formulations" in prob:
        formulation_plan = tuple(
            p.strip() for p in prob["formulations"].split(",") if p.strip()
        )

    custom = None
    if name == "custom":
        custom = {k: v for k, v in prob.items() if k != "name"}
        if "mesh" in custom:
            custom["mesh"] = str((path.parent / custom["mesh"]).resolve())
        if "partition" in custom:
            custom["partition"] = str((path.parent / custom["partition"]).resolve())

    return RunConfig(
        problem_name=name,
        coupling=coupling,
        subdomain_overrides=overrides,
        output=output,
        reduced_fixtures=prob.getboolean("reduced", True),
        formulation_plan=formulation_plan,
        custom=custom,
        end_time=end_time,
        sweep_mode=sweep_mode,
    )


def _parse_theta(raw: str, path, sid) -> float:
    raw = raw.strip()
    if "/" in raw:
        num, den = raw.split("/", 1)
        try:
            return float(num) / float(den)
        except ValueError:
            raise ConfigurationError(
                f"{path}: subdomain {sid}: bad theta {raw!r}"
            ) from None
    try:
        return float(raw)
    except ValueError:
        raise ConfigurationError(
            f"{path}: subdomain {sid}: bad theta {raw!r}"
        ) from None
