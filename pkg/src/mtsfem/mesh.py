"""Meshes, partitions, and their file formats.

Supports 1D interval meshes (two-node line elements) and 2D meshes made of
three-node triangles and/or four-node quadrilaterals, with named boundary
node sets.  Meshes are immutable after construction and validated eagerly:
out-of-range or repeated connectivity, clockwise 2D elements, and dangling
boundary-set entries are all rejected at load time.

Two file formats are understood:

* a line-oriented native text format (sections ``NODES`` / ``ELEMENTS`` /
  ``SETS``, ``#`` comments, 0-based node indices) chosen so test fixtures
  can be written by hand, and
* the Gmsh MSH 2.2 ASCII format, restricted to element types 1 (line2),
  2 (tri3) and 3 (quad4); physical groups of codimension-one elements are
  mapped to boundary sets.

Partitions are one-subdomain-id-per-element text files (``#`` comments
allowed); ids may start at 0 or 1 and are normalized to ``1..S``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ELEMENT_KINDS = ("line2", "tri3", "quad4")
_NODES_PER_ELEMENT = {"line2": 2, "tri3": 3, "quad4": 4}
_KIND_DIMENSION = {"line2": 1, "tri3": 2, "quad4": 2}


class MeshFormatError(ValueError):
    """A mesh or partition file could not be parsed."""


class MeshValidationError(ValueError):
    """Mesh/partition contents violate a structural invariant."""


@dataclass(frozen=True)
class Mesh:
    """An unstructured mesh with named boundary node sets.

    Attributes
    ----------
    nodes : (n_nodes, nd) float array of coordinates, nd in {1, 2}.
    elements : list of ``(kind, node_indices)`` with kind one of
        ``line2``/``tri3``/``quad4`` and 0-based node index tuples.
    boundary_sets : mapping from set name to a sorted int array of node ids.
    """

    nodes: np.ndarray
    elements: list
    boundary_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        object.__setattr__(self, "nodes", nodes)
        sets = {
            name: np.unique(np.asarray(ids, dtype=int))
            for name, ids in self.boundary_sets.items()
        }
        object.__setattr__(self, "boundary_sets", sets)
        _validate_mesh(self)

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def element_nodes(self, index: int) -> np.ndarray:
        return self.nodes[np.asarray(self.elements[index][1])]


@dataclass(frozen=True)
class PartitionMap:
    """Element-to-subdomain assignment.  Subdomain ids run from 1 to S."""

    element_to_subdomain: np.ndarray
    subdomain_count: int

    def __post_init__(self):
        ids = np.asarray(self.element_to_subdomain, dtype=int)
        object.__setattr__(self, "element_to_subdomain", ids)
        if ids.size and (ids.min() < 1 or ids.max() > self.subdomain_count):
            raise MeshValidationError(
                f"subdomain ids must lie in [1, {self.subdomain_count}]"
            )
        counts = np.bincount(ids, minlength=self.subdomain_count + 1)[1:]
        empty = np.nonzero(counts == 0)[0]
        if empty.size:
            raise MeshValidationError(f"subdomain {empty[0] + 1} owns no element")

    def elements_of(self, subdomain_id: int) -> np.ndarray:
        return np.nonzero(self.element_to_subdomain == subdomain_id)[0]


def _signed_area(kind: str, coords: np.ndarray) -> float:
    """Shoelace signed area of a tri3/quad4 element (positive for CCW)."""
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _validate_mesh(mesh: Mesh) -> None:
    n = mesh.n_nodes
    if n == 0:
        raise MeshValidationError("mesh has no nodes")
    if mesh.dimension not in (1, 2):
        raise MeshValidationError(f"unsupported dimension {mesh.dimension}")
    for e, (kind, conn) in enumerate(mesh.elements):
        if kind not in ELEMENT_KINDS:
            raise MeshValidationError(f"element {e}: unknown kind {kind!r}")
        conn = tuple(int(c) for c in conn)
        if len(conn) != _NODES_PER_ELEMENT[kind]:
            raise MeshValidationError(
                f"element {e}: {kind} needs {_NODES_PER_ELEMENT[kind]} nodes"
            )
        if any(c < 0 or c >= n for c in conn):
            raise MeshValidationError(f"element {e}: node index out of range")
        if len(set(conn)) != len(conn):
            raise MeshValidationError(f"element {e}: repeated node index")
        if _KIND_DIMENSION[kind] > mesh.dimension:
            raise MeshValidationError(
                f"element {e}: {kind} not allowed in a {mesh.dimension}D mesh"
            )
        if kind in ("tri3", "quad4"):
            area = _signed_area(kind, mesh.nodes[list(conn)])
            if area <= 0.0:
                raise MeshValidationError(
                    f"element {e}: negative element area ({area:g}); "
                    "node ordering must be counterclockwise"
                )
        mesh.elements[e] = (kind, conn)
    for name, ids in mesh.boundary_sets.items():
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise MeshValidationError(f"boundary set {name!r} references unknown node")


# ---------------------------------------------------------------------------
# native text format


def load_mesh(path, format: str = "native") -> Mesh:
    """Read a mesh file.  ``format`` is ``native`` or ``msh2``."""
    if format == "native":
        return _read_native(path)
    if format == "msh2":
        return _read_msh2(path)
    raise ValueError(f"unknown mesh format {format!r}")


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` in the native format (round-trips exactly)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"NODES {mesh.n_nodes} {mesh.dimension}\n")
        for row in mesh.nodes:
            fh.write(" ".join(repr(float(c)) for c in row) + "\n")
        fh.write(f"ELEMENTS {mesh.n_elements}\n")
        for kind, conn in mesh.elements:
            fh.write(kind + " " + " ".join(str(c) for c in conn) + "\n")
        fh.write(f"SETS {len(mesh.boundary_sets)}\n")
        for name, ids in mesh.boundary_sets.items():
            fh.write(f"{name} {ids.size}\n")
            fh.write(" ".join(str(i) for i in ids) + "\n")


class _Lines:
    """Line cursor that skips blanks/comments and remembers line numbers."""

    def __init__(self, path):
        with open(path, "r", encoding="ascii", errors="replace") as fh:
            self.raw = fh.readlines()
        self.pos = 0
        self.path = str(path)

    def next(self) -> tuple[int, str]:
        while self.pos < len(self.raw):
            lineno = self.pos + 1
            text = self.raw[self.pos].split("#", 1)[0].strip()
            self.pos += 1
            if text:
                return lineno, text
        raise MeshFormatError(f"{self.path}: unexpected end of file")

    def error(self, lineno: int, message: str) -> MeshFormatError:
        return MeshFormatError(f"{self.path}:{lineno}: {message}")


def _read_native(path) -> Mesh:
    lines = _Lines(path)
    lineno, header = lines.next()
    parts = header.split()
    if len(parts) != 3 or parts[0] != "NODES":
        raise lines.error(lineno, "expected 'NODES <count> <dim>'")
    try:
        n_nodes, dim = int(parts[1]), int(parts[2])
    except ValueError:
        raise lines.error(lineno, "NODES counts must be integers") from None
    nodes = np.empty((n_nodes, dim))
    for i in range(n_nodes):
        lineno, text = lines.next()
        vals = text.split()
        if len(vals) != dim:
            raise lines.error(lineno, f"expected {dim} coordinates")
        try:
            nodes[i] = [float(v) for v in vals]
        except ValueError:
            raise lines.error(lineno, "bad coordinate") from None
    lineno, header = lines.next()
    parts = header.split()
    if len(parts) != 2 or parts[0] != "ELEMENTS":
        raise lines.error(lineno, "expected 'ELEMENTS <count>'")
    elements = []
    for _ in range(int(parts[1])):
        lineno, text = lines.next()
        kind, *conn = text.split()
        if kind not in ELEMENT_KINDS:
            raise lines.error(lineno, f"unknown element kind {kind!r}")
        try:
            elements.append((kind, tuple(int(c) for c in conn)))
        except ValueError:
            raise lines.error(lineno, "bad node index") from None
    sets: dict[str, np.ndarray] = {}
    lineno, header = lines.next()
    parts = header.split()
    if len(parts) != 2 or parts[0] != "SETS":
        raise lines.error(lineno, "expected 'SETS <count>'")
    for _ in range(int(parts[1])):
        lineno, text = lines.next()
        name, count = text.split()
        ids: list[int] = []
        while len(ids) < int(count):
            lineno, text = lines.next()
            try:
                ids.extend(int(v) for v in text.split())
            except ValueError:
                raise lines.error(lineno, "bad node index in set") from None
        sets[name] = np.asarray(ids, dtype=int)
    try:
        return Mesh(nodes=nodes, elements=elements, boundary_sets=sets)
    except MeshValidationError as err:
        raise MeshValidationError(f"{lines.path}: {err}") from None


# ---------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII subset

_MSH_KIND = {1: "line2", 2: "tri3", 3: "quad4"}


def _read_msh2(path) -> Mesh:
    lines = _Lines(path)
    lineno, tag = lines.next()
    if tag != "$MeshFormat":
        raise lines.error(lineno, "expected $MeshFormat")
    lineno, text = lines.next()
    if not text.startswith("2.2"):
        raise lines.error(lineno, f"unsupported MSH version {text.split()[0]!r}")
    physical_names: dict[int, str] = {}
    coords = None
    node_ids: dict[int, int] = {}
    raw_elements: list[tuple[str, int, tuple[int, ...]]] = []
    while lines.pos < len(lines.raw):
        try:
            lineno, tag = lines.next()
        except MeshFormatError:
            break
        if tag == "$PhysicalNames":
            _, count = lines.next()
            for _ in range(int(count)):
                lineno, text = lines.next()
                parts = text.split(maxsplit=2)
                physical_names[int(parts[1])] = parts[2].strip().strip('"')
            lines.next()  # $EndPhysicalNames
        elif tag == "$Nodes":
            _, count = lines.next()
            n = int(count)
            coords = np.empty((n, 3))
            for i in range(n):
                lineno, text = lines.next()
                parts = text.split()
                if len(parts) != 4:
                    raise lines.error(lineno, "node line needs 'id x y z'")
                node_ids[int(parts[0])] = i
                coords[i] = [float(p) for p in parts[1:]]
            lines.next()  # $EndNodes
        elif tag == "$Elements":
            _, count = lines.next()
            for _ in range(int(count)):
                lineno, text = lines.next()
                parts = [int(p) for p in text.split()]
                etype = parts[1]
                if etype not in _MSH_KIND:
                    raise lines.error(lineno, f"unsupported MSH element type {etype}")
                kind = _MSH_KIND[etype]
                n_tags = parts[2]
                phys = parts[3] if n_tags >= 1 else 0
                conn = parts[3 + n_tags:]
                if len(conn) != _NODES_PER_ELEMENT[kind]:
                    raise lines.error(lineno, "wrong connectivity length")
                try:
                    conn = tuple(node_ids[c] for c in conn)
                except KeyError:
                    raise lines.error(lineno, "element references unknown node") from None
                raw_elements.append((kind, phys, conn))
            lines.next()  # $EndElements
        elif tag.startswith("$End"):
            continue
        else:
            # skip unknown sections verbatim until the matching $End
            end = "$End" + tag[1:]
            while True:
                lineno, text = lines.next()
                if text == end:
                    break
    if coords is None or not raw_elements:
        raise MeshFormatError(f"{lines.path}: missing $Nodes or $Elements section")
    dim = 2 if any(kind != "line2" for kind, _, _ in raw_elements) else 1
    nodes = coords[:, :dim]
    elements = []
    sets: dict[str, list[int]] = {}
    for kind, phys, conn in raw_elements:
        if _KIND_DIMENSION[kind] == dim:
            elements.append((kind, conn))
        else:
            name = physical_names.get(phys, f"phys_{phys}")
            sets.setdefault(name, []).extend(conn)
    try:
        return Mesh(
            nodes=nodes,
            elements=elements,
            boundary_sets={k: np.asarray(v, dtype=int) for k, v in sets.items()},
        )
    except MeshValidationError as err:
        raise MeshValidationError(f"{lines.path}: {err}") from None


# ---------------------------------------------------------------------------
# structured generators


def build_interval_mesh(region_lengths, region_element_counts):
    """Contiguous 1D mesh of line2 elements; one subdomain per region.

    Returns ``(Mesh, PartitionMap)``.  Boundary sets ``left``/``right`` hold
    the two end nodes.  Region ``r`` (1-based) owns its elements.
    """
    lengths = [float(v) for v in region_lengths]
    counts = [int(v) for v in region_element_counts]
    if len(lengths) != len(counts):
        raise ValueError("region_lengths and region_element_counts differ in length")
    if any(v <= 0 for v in lengths):
        raise ValueError("region lengths must be positive")
    if any(c < 1 for c in counts):
        raise ValueError("region element counts must be >= 1")
    xs = [0.0]
    owner = []
    for r, (length, count) in enumerate(zip(lengths, counts), start=1):
        x0 = xs[-1]
        for k in range(1, count + 1):
            xs.append(x0 + length * k / count)
            owner.append(r)
    nodes = np.asarray(xs)[:, None]
    elements = [("line2", (i, i + 1)) for i in range(len(xs) - 1)]
    sets = {"left": np.array([0]), "right": np.array([len(xs) - 1])}
    mesh = Mesh(nodes=nodes, elements=elements, boundary_sets=sets)
    part = PartitionMap(np.asarray(owner), subdomain_count=len(lengths))
    return mesh, part


def build_rectangle_mesh(lx, ly, nx, ny, kind="quad4", origin=(0.0, 0.0)):
    """Structured mesh of an ``lx`` x ``ly`` rectangle.

    ``kind`` selects quad4 cells or tri3 cells (each quad split along its
    SW-NE diagonal).  Boundary sets: left, right, bottom, top.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    x0, y0 = origin
    xs = x0 + lx * np.arange(nx + 1) / nx
    ys = y0 + ly * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    elements = []
    for i in range(nx):
        for j in range(ny):
            sw, se = nid(i, j), nid(i + 1, j)
            ne, nw = nid(i + 1, j + 1), nid(i, j + 1)
            if kind == "quad4":
                elements.append(("quad4", (sw, se, ne, nw)))
            elif kind == "tri3":
                elements.append(("tri3", (sw, se, ne)))
                elements.append(("tri3", (sw, ne, nw)))
            else:
                raise ValueError(f"unsupported kind {kind!r}")
    sets = {
        "left": np.array([nid(0, j) for j in range(ny + 1)]),
        "right": np.array([nid(nx, j) for j in range(ny + 1)]),
        "bottom": np.array([nid(i, 0) for i in range(nx + 1)]),
        "top": np.array([nid(i, ny) for i in range(nx + 1)]),
    }
    return Mesh(nodes=nodes, elements=elements, boundary_sets=sets)


# ---------------------------------------------------------------------------
# partition files


def load_partition(path, mesh: Mesh) -> PartitionMap:
    """Read a one-subdomain-id-per-element partition file."""
    lines = _Lines(path)
    ids = []
    while True:
        try:
            lineno, text = lines.next()
        except MeshFormatError:
            break
        for tok in text.split():
            try:
                ids.append(int(tok))
            except ValueError:
                raise lines.error(lineno, f"bad subdomain id {tok!r}") from None
    if len(ids) != mesh.n_elements:
        raise MeshFormatError(
            f"{lines.path}: partition lists {len(ids)} elements, "
            f"mesh has {mesh.n_elements}"
        )
    arr = np.asarray(ids, dtype=int)
    low = int(arr.min())
    if low == 0:
        arr = arr + 1
    elif low != 1:
        raise MeshValidationError(
            f"{lines.path}: subdomain ids must start at 0 or 1 (got {low})"
        )
    count = int(arr.max())
    present = np.unique(arr)
    if present.size != count:
        missing = sorted(set(range(1, count + 1)) - set(present.tolist()))[0]
        raise MeshValidationError(f"{lines.path}: subdomain {missing} owns no element")
    return PartitionMap(arr, subdomain_count=count)


def write_partition(partition: PartitionMap, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for sid in partition.element_to_subdomain:
            fh.write(f"{int(sid)}\n")
