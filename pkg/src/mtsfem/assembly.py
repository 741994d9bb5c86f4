"""Per-subdomain finite element assembly.

Builds capacity and transport matrices and the forcing vector for the
transient advection-diffusion-decay operator

    dc/dt + div[v c - D(x) grad c] + beta c = f(x, t)

under the Galerkin weak form or one of two stabilized forms (SUPG, GLS).
Linear elements only (line2 / tri3 / quad4); quadrature is 2-point Gauss
on lines, 3-point on triangles and 2x2 on quads, which is exact for the
bilinear integrands with elementwise-constant coefficients.

Stabilized forms split the capacity contribution: ``M_gal`` is the plain
Galerkin mass, ``M_stab`` the tau-weighted coupling of the test operator
to dc/dt.  The time stepper applies M_stab at the theta-weighted level,
so both matrices are kept separate.  Second derivatives of the shape
functions are dropped from the stabilization operators (exact on
simplicial elements with elementwise-constant diffusivity).

Advection is assembled as (w; v . grad c) plus (w; div[v] c) when a
velocity divergence is supplied; all shipped velocity fields are
solenoidal, so the divergence defaults to zero.

Dirichlet rows/columns are eliminated symmetrically: constrained values
move into the forcing (lifting), so the reduced capacity matrix stays
positive definite and constraint rows never touch eliminated dofs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .decomposition import SubdomainDofMap, build_dof_maps
from .mesh import Mesh, PartitionMap

_SQRT3 = math.sqrt(3.0)


class FormulationTag(enum.Enum):
    GALERKIN = "galerkin"
    SUPG = "supg"
    GLS = "gls"

    @classmethod
    def parse(cls, name) -> "FormulationTag":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown formulation {name!r}") from None


def _as_vector_field(value, nd):
    """Normalize a velocity spec (constant or callable) to f(x, t) -> (nd,)."""
    if callable(value):
        return value, False
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size != nd:
        raise ValueError(f"velocity constant must have {nd} components")
    return (lambda x, t, _a=arr: _a), True


def _as_tensor_field(value, nd):
    if callable(value):
        return value, False
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(nd)
    if arr.shape != (nd, nd):
        raise ValueError(f"diffusivity constant must be scalar or {nd}x{nd}")
    return (lambda x, _a=arr: _a), True


def _as_scalar_field(value):
    if callable(value):
        return value, False
    c = float(value)
    return (lambda x, t, _c=c: _c), True


@dataclass
class TransportCoefficients:
    """Coefficient fields of the transport operator.

    ``velocity``/``diffusivity``/``source`` accept constants or callables
    (``v(x, t)``, ``D(x)``, ``f(x, t)``).  ``velocity_divergence`` may be
    given for non-solenoidal fields.  ``time_varying`` flags a velocity
    that changes in time, forcing transport-matrix reassembly per step.
    """

    velocity: object
    diffusivity: object
    decay: float
    source: object = 0.0
    velocity_divergence: object = None
    time_varying: bool = False

    def __post_init__(self):
        if self.decay < 0.0:
            raise ValueError(f"decay coefficient must be >= 0 (got {self.decay})")

    def bind(self, nd):
        vel, vel_const = _as_vector_field(self.velocity, nd)
        dif, dif_const = _as_tensor_field(self.diffusivity, nd)
        src, src_const = _as_scalar_field(self.source)
        if self.velocity_divergence is None:
            div, div_const = (lambda x, t: 0.0), True
        else:
            div, div_const = _as_scalar_field(self.velocity_divergence)
        return _BoundCoefficients(
            vel, dif, src, div, float(self.decay),
            steady_source=src_const,
            steady_velocity=(vel_const and div_const) or not self.time_varying,
        )


@dataclass
class _BoundCoefficients:
    velocity: object
    diffusivity: object
    source: object
    velocity_divergence: object
    decay: float
    steady_source: bool
    steady_velocity: bool

    def diffusivity_at(self, x):
        D = np.asarray(self.diffusivity(x), dtype=float)
        if D.ndim == 0:
            D = float(D) * np.eye(len(np.atleast_1d(x)))
        if not np.allclose(D, D.T, rtol=0.0, atol=1e-12):
            raise ValueError(f"diffusivity tensor not symmetric at x={x}")
        return D


@dataclass
class BoundaryConditions:
    """Boundary data keyed by boundary-set name.

    ``dirichlet`` maps a set name to a prescribed concentration (constant
    or ``g(x, t)``); ``dirichlet_rate`` optionally gives its time
    derivative (defaults to zero, which covers constant-in-time data).
    ``neumann`` maps a set name to the prescribed outward diffusive flux
    ``q(x, t)``; positive flux removes mass, entering the load vector with
    a minus sign.
    """

    dirichlet: dict = field(default_factory=dict)
    neumann: dict = field(default_factory=dict)
    dirichlet_rate: dict = field(default_factory=dict)

    def validate_against(self, mesh: Mesh) -> None:
        for name in list(self.dirichlet) + list(self.neumann) + list(self.dirichlet_rate):
            if name not in mesh.boundary_sets:
                raise KeyError(f"unknown boundary set {name!r}")


@dataclass
class SubdomainSystem:
    """Assembled matrices and integrator parameters for one subdomain.

    ``M_gal`` is SPD; ``M_stab`` is the stabilization capacity coupling
    (zero for Galerkin).  ``forcing(t)`` bundles the volumetric source,
    Neumann fluxes, stabilization source terms and Dirichlet lifting.
    """

    M_gal: sp.csr_matrix
    M_stab: sp.csr_matrix
    K: sp.csr_matrix
    forcing: object
    theta: float
    dt_sub: float
    eta: int
    formulation: FormulationTag
    dof_map: SubdomainDofMap | None = None
    dirichlet_values: object = None     # t -> values at eliminated local dofs
    measure: float = 0.0
    transport_at: object = None         # t -> (M_gal, M_stab, K); None if steady

    def __post_init__(self):
        if self.dt_sub <= 0.0:
            raise ValueError("subdomain time-step must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.eta < 1:
            raise ValueError("subcycle count must be >= 1")

    @property
    def n_dofs(self) -> int:
        return self.M_gal.shape[0]

    @property
    def M(self) -> sp.csr_matrix:
        return (self.M_gal + self.M_stab).tocsr()

    def h(self, d: np.ndarray, t: float) -> np.ndarray:
        """Right-hand side h(d, t) = forcing(t) - K d of the rate equation."""
        return self.forcing(t) - self.K @ d


# ---------------------------------------------------------------------------
# scalar helpers


def element_peclet(v_norm: float, h_e: float, D_char: float) -> float:
    """Element Peclet number h |v| / (2 D)."""
    if h_e <= 0.0:
        raise ValueError(f"element size must be positive (got {h_e})")
    if D_char <= 0.0:
        raise ValueError(f"characteristic diffusivity must be positive (got {D_char})")
    if v_norm < 0.0:
        raise ValueError("velocity norm must be >= 0")
    return h_e * v_norm / (2.0 * D_char)


_SERIES_SWITCH = 1e-3


def upwind_xi(chi: float) -> float:
    """coth(chi) - 1/chi, with a series branch near zero."""
    if chi < 0.0:
        raise ValueError("argument must be >= 0")
    if chi < _SERIES_SWITCH:
        return chi / 3.0 - chi**3 / 45.0
    return 1.0 / math.tanh(chi) - 1.0 / chi


def supg_tau(v_norm: float, h_e: float, peclet: float) -> float:
    """Stabilization parameter (h / 2|v|) * (coth Pe - 1/Pe).

    Total on the valid domain: returns 0 when the element Peclet number is
    zero (stagnant flow), using the series expansion of the upwind function
    to avoid the 0/0 in coth(chi) - 1/chi.  The GLS parameter equals the
    SUPG one by policy.
    """
    if h_e <= 0.0:
        raise ValueError(f"element size must be positive (got {h_e})")
    if v_norm < 0.0 or peclet < 0.0:
        raise ValueError("velocity norm and Peclet number must be >= 0")
    if v_norm == 0.0 or peclet == 0.0:
        return 0.0
    return h_e / (2.0 * v_norm) * upwind_xi(peclet)


def check_symmetric_part(K) -> tuple[float, bool]:
    """Smallest eigenvalue of (K + K^T)/2 and a positive-semidefinite flag.

    The flag tolerates -1e-10 * ||K||_inf of roundoff.
    """
    Ks = sp.csr_matrix(K) if not sp.issparse(K) else K.tocsr()
    if Ks.shape[0] != Ks.shape[1]:
        raise ValueError("matrix must be square")
    sym = 0.5 * (Ks + Ks.T)
    n = sym.shape[0]
    norm_inf = float(abs(Ks).sum(axis=1).max()) if Ks.nnz else 0.0
    if n <= 3000:
        w = np.linalg.eigvalsh(sym.toarray())
        min_eig = float(w[0])
    else:
        from scipy.sparse.linalg import eigsh

        try:
            w = eigsh(sym.tocsc(), k=1, which="SA", return_eigenvectors=False)
            min_eig = float(w[0])
        except Exception:
            w = np.linalg.eigvalsh(sym.toarray())
            min_eig = float(w[0])
    return min_eig, bool(min_eig >= -1e-10 * max(norm_inf, 1.0))


# ---------------------------------------------------------------------------
# element geometry and quadrature

_TRI_QP = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
_QUAD_QP = np.array(
    [[-1 / _SQRT3, -1 / _SQRT3], [1 / _SQRT3, -1 / _SQRT3],
     [1 / _SQRT3, 1 / _SQRT3], [-1 / _SQRT3, 1 / _SQRT3]]
)


def _quad_shape(xi, eta):
    N = 0.25 * np.array(
        [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)]
    )
    dN = 0.25 * np.array(
        [[-(1 - eta), -(1 - xi)], [(1 - eta), -(1 + xi)],
         [(1 + eta), (1 + xi)], [-(1 + eta), (1 - xi)]]
    )
    return N, dN


def element_quadrature(kind: str, coords: np.ndarray):
    """Quadrature data: list of (x_q, weight, N, dN_phys) per point."""
    if kind == "line2":
        h = float(abs(coords[1, 0] - coords[0, 0]))
        out = []
        for xi in (-1 / _SQRT3, 1 / _SQRT3):
            N = np.array([(1 - xi) / 2, (1 + xi) / 2])
            dN = np.array([[-1.0 / (coords[1, 0] - coords[0, 0])],
                           [1.0 / (coords[1, 0] - coords[0, 0])]])
            x = N @ coords
            out.append((x, h / 2.0, N, dN))
        return out
    if kind == "tri3":
        J = np.column_stack([coords[1] - coords[0], coords[2] - coords[0]])
        detJ = float(np.linalg.det(J))
        dN_ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        dN = np.linalg.solve(J.T, dN_ref.T).T
        out = []
        for xi, eta in _TRI_QP:
            N = np.array([1 - xi - eta, xi, eta])
            out.append((N @ coords, detJ / 6.0, N, dN))
        return out
    if kind == "quad4":
        out = []
        for xi, eta in _QUAD_QP:
            N, dN_ref = _quad_shape(xi, eta)
            J = dN_ref.T @ coords        # (2, 2): dx_m/dxi_n = sum_a dN_a x_am
            detJ = float(np.linalg.det(J))
            dN = np.linalg.solve(J, dN_ref.T).T
            out.append((N @ coords, detJ, N, dN))
        return out
    raise ValueError(f"unknown element kind {kind!r}")


def element_size(kind: str, coords: np.ndarray) -> float:
    """Stabilization length scale: circumscribed-circle diameter for tri3,
    max node distance for quad4 (exact circumdiameter on rectangles),
    element length for line2."""
    if kind == "line2":
        return float(abs(coords[1, 0] - coords[0, 0]))
    if kind == "tri3":
        a = np.linalg.norm(coords[1] - coords[0])
        b = np.linalg.norm(coords[2] - coords[1])
        c = np.linalg.norm(coords[0] - coords[2])
        area = abs(_tri_area(coords))
        return float(a * b * c / (2.0 * area))
    dmax = 0.0
    for i in range(len(coords)):
        for j in range(i + 1, len(coords)):
            dmax = max(dmax, float(np.linalg.norm(coords[i] - coords[j])))
    return dmax


def _tri_area(coords) -> float:
    return 0.5 * ((coords[1, 0] - coords[0, 0]) * (coords[2, 1] - coords[0, 1])
                  - (coords[2, 0] - coords[0, 0]) * (coords[1, 1] - coords[0, 1]))


def element_measure(kind: str, coords: np.ndarray) -> float:
    return sum(w for _, w, _, _ in element_quadrature(kind, coords))


def subdomain_measure(mesh: Mesh, partition: PartitionMap, subdomain_id: int) -> float:
    total = 0.0
    for e in partition.elements_of(subdomain_id):
        kind, conn = mesh.elements[e]
        total += element_measure(kind, mesh.nodes[list(conn)])
    return total


def _boundary_edges(mesh: Mesh):
    """Edges belonging to exactly one 2D element, as a set of sorted pairs."""
    count: dict[tuple[int, int], int] = {}
    for kind, conn in mesh.elements:
        if kind == "line2":
            continue
        k = len(conn)
        for a in range(k):
            edge = tuple(sorted((conn[a], conn[(a + 1) % k])))
            count[edge] = count.get(edge, 0) + 1
    return {e for e, c in count.items() if c == 1}


# ---------------------------------------------------------------------------
# assembly


def assemble_subdomain(
    mesh: Mesh,
    partition: PartitionMap,
    subdomain_id: int,
    coeffs: TransportCoefficients,
    formulation,
    integrator,
    bc: BoundaryConditions | None = None,
    dof_map: SubdomainDofMap | None = None,
    tau_fn=None,
) -> SubdomainSystem:
    """Assemble one subdomain into a :class:`SubdomainSystem`.

    ``integrator`` is ``(theta, dt_sub, eta)``.  ``dof_map`` should come
    from :func:`mtsfem.decomposition.build_dof_maps` when several
    subdomains must share consistent interface numbering; if omitted, a
    map for this subdomain alone is built (Dirichlet sets taken from
    ``bc``).  ``tau_fn(v_norm, h_e, peclet)`` overrides the stabilization
    parameter.
    """
    formulation = FormulationTag.parse(formulation)
    theta, dt_sub, eta = integrator
    bc = bc or BoundaryConditions()
    bc.validate_against(mesh)
    if subdomain_id < 1 or subdomain_id > partition.subdomain_count:
        raise ValueError(f"invalid subdomain id {subdomain_id}")
    if dof_map is None:
        dof_map = build_dof_maps(mesh, partition, tuple(bc.dirichlet))[subdomain_id]
    nd = mesh.dimension
    bound = coeffs.bind(nd)
    tau = tau_fn or supg_tau

    nodes = dof_map.nodes
    local_of = {int(g): k for k, g in enumerate(nodes)}
    n_local = nodes.size

    def build_matrices(t: float):
        rows_m, cols_m, vals_m = [], [], []
        rows_s, cols_s, vals_s = [], [], []
        rows_k, cols_k, vals_k = [], [], []
        for e in partition.elements_of(subdomain_id):
            kind, conn = mesh.elements[e]
            coords = mesh.nodes[list(conn)]
            loc = [local_of[c] for c in conn]
            qdata = element_quadrature(kind, coords)
            centroid = coords.mean(axis=0)
            tau_e = _element_tau(kind, coords, centroid, bound, t, tau)
            k = len(conn)
            Me = np.zeros((k, k))
            Se = np.zeros((k, k))
            Ke = np.zeros((k, k))
            for x, w, N, dN in qdata:
                v = np.atleast_1d(np.asarray(bound.velocity(x, t), dtype=float))
                D = bound.diffusivity_at(x)
                divv = float(bound.velocity_divergence(x, t))
                adv = dN @ v                      # v . grad N_b
                Me += w * np.outer(N, N)
                Ke += w * (np.outer(N, adv + divv * N)
                           + dN @ D @ dN.T
                           + bound.decay * np.outer(N, N))
                if formulation is not FormulationTag.GALERKIN and tau_e != 0.0:
                    test = _stab_test(formulation, tau_e, N, adv, divv,
                                      bound.decay, dt_sub)
                    op = adv + (divv + bound.decay) * N
                    Se += w * np.outer(test, N)
                    Ke += w * np.outer(test, op)
            for a in range(k):
                for b in range(k):
                    rows_m.append(loc[a]); cols_m.append(loc[b]); vals_m.append(Me[a, b])
                    rows_k.append(loc[a]); cols_k.append(loc[b]); vals_k.append(Ke[a, b])
                    if formulation is not FormulationTag.GALERKIN:
                        rows_s.append(loc[a]); cols_s.append(loc[b]); vals_s.append(Se[a, b])
        shape = (n_local, n_local)
        M_full = sp.coo_matrix((vals_m, (rows_m, cols_m)), shape=shape).tocsr()
        S_full = sp.coo_matrix((vals_s, (rows_s, cols_s)), shape=shape).tocsr()
        K_full = sp.coo_matrix((vals_k, (rows_k, cols_k)), shape=shape).tocsr()
        for matrix in (M_full, S_full, K_full):
            matrix.eliminate_zeros()
        return M_full, S_full, K_full

    def build_load(t: float) -> np.ndarray:
        F = np.zeros(n_local)
        for e in partition.elements_of(subdomain_id):
            kind, conn = mesh.elements[e]
            coords = mesh.nodes[list(conn)]
            loc = [local_of[c] for c in conn]
            centroid = coords.mean(axis=0)
            tau_e = _element_tau(kind, coords, centroid, bound, t, tau)
            for x, w, N, dN in element_quadrature(kind, coords):
                fval = float(bound.source(x, t))
                if fval != 0.0:
                    contrib = w * fval * N
                    if formulation is not FormulationTag.GALERKIN and tau_e != 0.0:
                        v = np.atleast_1d(np.asarray(bound.velocity(x, t), dtype=float))
                        adv = dN @ v
                        divv = float(bound.velocity_divergence(x, t))
                        contrib = contrib + w * fval * _stab_test(
                            formulation, tau_e, N, adv, divv, bound.decay, dt_sub)
                    for a, l in enumerate(loc):
                        F[l] += contrib[a]
        _add_neumann(F, mesh, partition, subdomain_id, bc, local_of, t)
        return F

    M_full, S_full, K_full = build_matrices(0.0)

    free = dof_map.node_to_free
    free_idx = np.nonzero(free >= 0)[0]
    dir_idx = dof_map.dirichlet_local

    def reduce(A):
        return A[free_idx][:, free_idx].tocsr(), A[free_idx][:, dir_idx].tocsr()

    M_ff, M_fd = reduce(M_full)
    S_ff, S_fd = reduce(S_full)
    K_ff, K_fd = reduce(K_full)

    g_fn, gdot_fn = _dirichlet_functions(mesh, bc, nodes, dir_idx)

    steady = bound.steady_source and bound.steady_velocity and _bc_steady(bc)
    cache = {}

    def forcing(t: float) -> np.ndarray:
        if steady and "F" in cache:
            return cache["F"]
        F = build_load(t)[free_idx]
        if dir_idx.size:
            F = F - K_fd @ g_fn(t) - (M_fd + S_fd) @ gdot_fn(t)
        if steady:
            cache["F"] = F
        return F

    transport_at = None
    if coeffs.time_varying:
        def transport_at(t: float):
            Mf, Sf, Kf = build_matrices(t)
            return (Mf[free_idx][:, free_idx].tocsr(),
                    Sf[free_idx][:, free_idx].tocsr(),
                    Kf[free_idx][:, free_idx].tocsr())

    return SubdomainSystem(
        M_gal=M_ff,
        M_stab=S_ff,
        K=K_ff,
        forcing=forcing,
        theta=float(theta),
        dt_sub=float(dt_sub),
        eta=int(eta),
        formulation=formulation,
        dof_map=dof_map,
        dirichlet_values=g_fn,
        measure=subdomain_measure(mesh, partition, subdomain_id),
        transport_at=transport_at,
    )


def _element_tau(kind, coords, centroid, bound, t, tau):
    h_e = element_size(kind, coords)
    v_c = np.atleast_1d(np.asarray(bound.velocity(centroid, t), dtype=float))
    v_norm = float(np.linalg.norm(v_c))
    D_c = bound.diffusivity_at(centroid)
    D_char = float(np.linalg.eigvalsh(D_c)[0])
    if D_char <= 0.0:
        raise ValueError(f"diffusivity tensor not positive definite at {centroid}")
    return tau(v_norm, h_e, element_peclet(v_norm, h_e, D_char))


def _stab_test(formulation, tau_e, N, adv, divv, decay, dt_sub):
    if formulation is FormulationTag.SUPG:
        return tau_e * adv
    # GLS: w/dt + div[v w] + beta w, second derivatives dropped
    return tau_e * (N / dt_sub + adv + (divv + decay) * N)


def _dirichlet_functions(mesh, bc, nodes, dir_idx):
    """Value/rate evaluators at the eliminated local dofs."""
    specs = []
    for k in dir_idx:
        gn = int(nodes[k])
        value, rate = 0.0, 0.0
        for name, val in bc.dirichlet.items():
            if gn in set(int(i) for i in mesh.boundary_sets[name]):
                value = val
                rate = bc.dirichlet_rate.get(name, 0.0)
        specs.append((mesh.nodes[gn], value, rate))

    def evaluate(t, which):
        out = np.empty(len(specs))
        for i, (x, value, rate) in enumerate(specs):
            v = value if which == 0 else rate
            out[i] = float(v(x, t)) if callable(v) else float(v)
        return out

    return (lambda t: evaluate(t, 0)), (lambda t: evaluate(t, 1))


def _bc_steady(bc: BoundaryConditions) -> bool:
    values = list(bc.dirichlet.values()) + list(bc.neumann.values())
    values += list(bc.dirichlet_rate.values())
    return not any(callable(v) for v in values)


def _add_neumann(F, mesh, partition, subdomain_id, bc, local_of, t):
    """Prescribed outward flux enters the load with a minus sign."""
    if not bc.neumann:
        return
    if mesh.dimension == 1:
        for name, q in bc.neumann.items():
            for gn in mesh.boundary_sets[name]:
                l = local_of.get(int(gn))
                if l is not None:
                    x = mesh.nodes[int(gn)]
                    F[l] -= float(q(x, t)) if callable(q) else float(q)
        return
    boundary = _boundary_edges(mesh)
    sets = {name: set(int(i) for i in mesh.boundary_sets[name]) for name in bc.neumann}
    seen = set()
    for e in partition.elements_of(subdomain_id):
        kind, conn = mesh.elements[e]
        if kind == "line2":
            continue
        k = len(conn)
        for a in range(k):
            pair = (conn[a], conn[(a + 1) % k])
            edge = tuple(sorted(pair))
            if edge not in boundary or edge in seen:
                continue
            for name, q in bc.neumann.items():
                if pair[0] in sets[name] and pair[1] in sets[name]:
                    seen.add(edge)
                    x0, x1 = mesh.nodes[pair[0]], mesh.nodes[pair[1]]
                    length = float(np.linalg.norm(x1 - x0))
                    for xi in (-1 / _SQRT3, 1 / _SQRT3):
                        N = np.array([(1 - xi) / 2, (1 + xi) / 2])
                        x = N[0] * x0 + N[1] * x1
                        qv = float(q(x, t)) if callable(q) else float(q)
                        w = length / 2.0
                        F[local_of[pair[0]]] -= w * qv * N[0]
                        F[local_of[pair[1]]] -= w * qv * N[1]
                    break
