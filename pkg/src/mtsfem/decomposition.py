"""Subdomain degree-of-freedom numbering and interface constraint maps.

Each subdomain numbers every node its elements touch; nodes shared between
subdomains are duplicated, one copy per subdomain.  Interface compatibility
is expressed through pairwise signed rows (+1 on the copy in the
lower-numbered subdomain, -1 on the higher): a node shared by k subdomains
yields k-1 chained rows, which keeps the constraint system full rank even
at cross-points.  Constraint maps are stored as index/sign triplets and
applied matrix-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, PartitionMap


@dataclass(frozen=True)
class SubdomainDofMap:
    """Local numbering for one subdomain.

    ``nodes`` lists the global node ids this subdomain touches (ascending).
    Free dofs are the non-Dirichlet nodes, numbered 0..n_free-1 in node
    order; ``node_to_free[local_node] == -1`` marks an eliminated node.
    """

    subdomain_id: int
    nodes: np.ndarray
    node_to_free: np.ndarray
    dirichlet_local: np.ndarray

    @property
    def n_free(self) -> int:
        return int((self.node_to_free >= 0).sum())

    @property
    def free_nodes_global(self) -> np.ndarray:
        return self.nodes[self.node_to_free >= 0]

    def local_index(self, global_node: int) -> int:
        idx = int(np.searchsorted(self.nodes, global_node))
        if idx >= self.nodes.size or self.nodes[idx] != global_node:
            raise KeyError(f"node {global_node} not in subdomain {self.subdomain_id}")
        return idx


@dataclass(frozen=True)
class DofMaps:
    """Per-subdomain dof maps plus shared-node bookkeeping."""

    subdomains: list
    interface_nodes: np.ndarray        # global ids shared by >= 2 subdomains
    owners: dict = field(default_factory=dict)  # node -> sorted subdomain ids

    def __getitem__(self, subdomain_id: int) -> SubdomainDofMap:
        return self.subdomains[subdomain_id - 1]

    def __len__(self) -> int:
        return len(self.subdomains)


def build_dof_maps(mesh: Mesh, partition: PartitionMap, dirichlet_sets=()) -> DofMaps:
    """Number subdomain dofs, duplicating interface nodes per subdomain.

    ``dirichlet_sets`` names boundary sets whose nodes are eliminated from
    every subdomain.  A Dirichlet node on the interface is eliminated
    everywhere and produces no constraint row (the prescribed value wins).
    """
    dirichlet_nodes = set()
    for name in dirichlet_sets:
        if name not in mesh.boundary_sets:
            raise KeyError(f"unknown boundary set {name!r}")
        dirichlet_nodes.update(int(n) for n in mesh.boundary_sets[name])

    touched: dict[int, set[int]] = {}
    for e, (_, conn) in enumerate(mesh.elements):
        sid = int(partition.element_to_subdomain[e])
        touched.setdefault(sid, set()).update(conn)

    subdomains = []
    for sid in range(1, partition.subdomain_count + 1):
        nodes = np.asarray(sorted(touched[sid]), dtype=int)
        node_to_free = np.full(nodes.size, -1, dtype=int)
        free = 0
        dirichlet_local = []
        for k, gn in enumerate(nodes):
            if int(gn) in dirichlet_nodes:
                dirichlet_local.append(k)
            else:
                node_to_free[k] = free
                free += 1
        subdomains.append(
            SubdomainDofMap(
                subdomain_id=sid,
                nodes=nodes,
                node_to_free=node_to_free,
                dirichlet_local=np.asarray(dirichlet_local, dtype=int),
            )
        )

    owners: dict[int, list[int]] = {}
    for sid in range(1, partition.subdomain_count + 1):
        for gn in touched[sid]:
            owners.setdefault(int(gn), []).append(sid)
    shared = sorted(n for n, sids in owners.items() if len(sids) > 1)
    return DofMaps(
        subdomains=subdomains,
        interface_nodes=np.asarray(shared, dtype=int),
        owners={n: sorted(s) for n, s in owners.items() if len(s) > 1},
    )


@dataclass(frozen=True)
class ConstraintMap:
    """Signed Boolean interface constraints in triplet form.

    ``rows[r]`` is ``((sid_a, dof_a, +1), (sid_b, dof_b, -1))``; the map is
    never materialized as a dense matrix.  ``entries[i]`` gives, for
    subdomain ``i+1``, aligned arrays (row index, local free dof, sign).
    """

    rows: list
    n_subdomains: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.entries:
            return
        per: dict[int, list[tuple[int, int, float]]] = {}
        for r, pair in enumerate(self.rows):
            for sid, dof, sign in pair:
                per.setdefault(sid, []).append((r, dof, sign))
        entries = {}
        for sid in range(1, self.n_subdomains + 1):
            trip = per.get(sid, [])
            entries[sid] = (
                np.asarray([t[0] for t in trip], dtype=int),
                np.asarray([t[1] for t in trip], dtype=int),
                np.asarray([t[2] for t in trip], dtype=float),
            )
        object.__setattr__(self, "entries", entries)

    @property
    def n_lambda(self) -> int:
        return len(self.rows)

    def apply(self, vectors) -> np.ndarray:
        """sum_i C_i x_i for per-subdomain vectors ``vectors``."""
        out = np.zeros(self.n_lambda)
        for sid in range(1, self.n_subdomains + 1):
            rows, dofs, signs = self.entries[sid]
            x = np.asarray(vectors[sid - 1])
            if rows.size:
                if dofs.size and dofs.max() >= x.size:
                    raise ValueError(f"subdomain {sid} vector too short")
                np.add.at(out, rows, signs * x[dofs])
        return out

    def apply_transpose(self, lam: np.ndarray, sizes) -> list:
        """{C_i^T lam}_i as a list of per-subdomain vectors."""
        lam = np.asarray(lam)
        if lam.size != self.n_lambda:
            raise ValueError(
                f"multiplier vector has size {lam.size}, expected {self.n_lambda}"
            )
        out = []
        for sid in range(1, self.n_subdomains + 1):
            rows, dofs, signs = self.entries[sid]
            vec = np.zeros(sizes[sid - 1])
            if rows.size:
                np.add.at(vec, dofs, signs * lam[rows])
            out.append(vec)
        return out

    def dump_rows(self) -> str:
        """Debug text: one ``row subdomain dof sign`` triplet per line."""
        out = []
        for r, pair in enumerate(self.rows):
            for sid, dof, sign in pair:
                out.append(f"{r} {sid} {dof} {int(sign):+d}")
        return "\n".join(out) + ("\n" if out else "")


def build_constraints(dof_maps: DofMaps) -> ConstraintMap:
    """Chained pairwise constraint rows for every shared interface node.

    Rows are ordered by global node id, then chain position, so the map is
    deterministic.  Dirichlet-eliminated nodes contribute no rows.
    """
    rows = []
    for gn in dof_maps.interface_nodes:
        sids = dof_maps.owners[int(gn)]
        locs = {}
        eliminated = False
        for sid in sids:
            dm = dof_maps[sid]
            free = dm.node_to_free[dm.local_index(int(gn))]
            if free < 0:
                eliminated = True
                break
            locs[sid] = int(free)
        if eliminated:
            continue
        for a, b in zip(sids[:-1], sids[1:]):
            rows.append(((a, locs[a], +1.0), (b, locs[b], -1.0)))
    return ConstraintMap(rows=rows, n_subdomains=len(dof_maps))


def apply_C(constraints: ConstraintMap, vectors) -> np.ndarray:
    return constraints.apply(vectors)


def apply_C_transpose(constraints: ConstraintMap, lam, sizes) -> list:
    return constraints.apply_transpose(lam, sizes)
