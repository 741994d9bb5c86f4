import numpy as np
import pytest
import scipy.io

from mtsfem.assembly import BoundaryConditions, TransportCoefficients, assemble_subdomain
from mtsfem.decomposition import build_constraints, build_dof_maps
from mtsfem.mesh import build_interval_mesh, build_rectangle_mesh, PartitionMap
from mtsfem.mts_core import AssembledProblem, CouplingConfig, run
from mtsfem.reporting import (
    export_matrices,
    global_field,
    write_snapshot_csv_1d,
    write_snapshot_vtk,
    write_summary_json,
)


def small_coupled_problem():
    mesh, part = build_interval_mesh([0.5, 0.5], [4, 4])
    coeffs = TransportCoefficients(velocity=[0.0], diffusivity=0.1,
                                   decay=0.0, source=1.0)
    bc = BoundaryConditions(dirichlet={"left": 2.0, "right": 0.5})
    maps = build_dof_maps(mesh, part, ("left", "right"))
    con = build_constraints(maps)
    systems = [
        assemble_subdomain(mesh, part, i, coeffs, "galerkin",
                           (1.0, 0.1, 1), bc=bc, dof_map=maps[i])
        for i in (1, 2)
    ]
    ap = AssembledProblem(systems=systems, constraints=con,
                          d0=[np.zeros(s.n_dofs) for s in systems])
    return mesh, ap


class TestGlobalField:
    def test_dirichlet_values_restored(self):
        mesh, ap = small_coupled_problem()
        field = global_field(mesh, ap.systems,
                             [np.arange(s.n_dofs, dtype=float)
                              for s in ap.systems], t=0.0)
        assert field[0] == 2.0          # left prescribed value
        assert field[-1] == 0.5         # right prescribed value
        assert not np.isnan(field).any()

    def test_interface_takes_lower_subdomain_copy(self):
        mesh, ap = small_coupled_problem()
        parts = [np.full(s.n_dofs, 10.0) for s in ap.systems]
        parts[0][-1] = 7.0              # subdomain 1's copy of the shared node
        parts[1][0] = 9.0               # subdomain 2's copy
        field = global_field(mesh, ap.systems, parts, t=0.0)
        assert field[4] == 7.0          # node 4 is the junction


class TestSnapshotWriters:
    def test_1d_csv_sorted_by_x(self, tmp_path):
        mesh, _ = build_interval_mesh([1.0], [3])
        values = np.array([3.0, 2.0, 1.0, 0.0])
        path = tmp_path / "snap.csv"
        write_snapshot_csv_1d(path, mesh, {"c": values})
        lines = path.read_text().splitlines()
        assert lines[0] == "x,c"
        xs = [float(line.split(",")[0]) for line in lines[1:]]
        assert xs == sorted(xs)

    def test_vtk_structure_and_values(self, tmp_path):
        mesh = build_rectangle_mesh(1.0, 1.0, 1, 1, kind="quad4")
        path = tmp_path / "snap.vtk"
        write_snapshot_vtk(path, mesh, {"c": np.array([0.0, 1.0, 2.0, 3.0])})
        lines = path.read_text().splitlines()
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert "CELL_TYPES 1" in lines
        assert lines[lines.index("CELL_TYPES 1") + 1] == "9"  # quad cell
        scalars = lines.index("SCALARS c double 1")
        assert lines[scalars + 1] == "LOOKUP_TABLE default"
        assert lines[scalars + 2 : scalars + 6] == ["0.0", "1.0", "2.0", "3.0"]

    def test_vtk_rejects_1d_meshes(self, tmp_path):
        mesh, _ = build_interval_mesh([1.0], [2])
        with pytest.raises(ValueError, match="CSV"):
            write_snapshot_vtk(tmp_path / "x.vtk", mesh, {"c": np.zeros(3)})


class TestSummaryJson:
    def test_schema_version_and_key_order(self, tmp_path):
        path = tmp_path / "s.json"
        write_summary_json(path, {"zeta": 1, "alpha": 2})
        text = path.read_text()
        assert text.index('"alpha"') < text.index('"schema_version"') \
            < text.index('"zeta"')


class TestMatrixExport:
    def test_round_trips_through_matrixmarket(self, tmp_path):
        _, ap = small_coupled_problem()
        written = export_matrices(tmp_path, ap.systems)
        assert len(written) == 8
        K = scipy.io.mmread(str(tmp_path / "subdomain1_K.mtx")).tocsr()
        assert abs(K - ap.systems[0].K).max() <= 1e-15


class TestRunWithFieldReconstruction:
    def test_steady_state_reconstruction(self):
        # late-time solution of d/dt c - 0.1 c'' = 1 with c(0)=2, c(1)=0.5
        mesh, ap = small_coupled_problem()
        cfg = CouplingConfig(method="d_continuity", dt_system=0.1,
                             n_steps=300)
        trajectory, _ = run(ap, cfg)
        field = global_field(mesh, ap.systems, trajectory[-1].d,
                             trajectory[-1].time)
        xs = mesh.nodes[:, 0]
        exact = -5.0 * xs**2 + 3.5 * xs + 2.0   # -0.1 c'' = 1 with the BCs
        np.testing.assert_allclose(field, exact, atol=1e-6)
