"""Deterministic output writers: CSV time series, field snapshots, JSON
summaries, MatrixMarket exports.

Every writer formats floats with ``repr`` (shortest round-trip) and fixed
field order, so identical runs produce byte-identical files.  CSV files
use RFC-4180 quoting and CRLF line endings; 2D snapshots are legacy VTK
3.0 ASCII unstructured grids, 1D snapshots are x/value CSV files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import scipy.io

from .mesh import Mesh

_VTK_CELL_TYPE = {"line2": 3, "tri3": 5, "quad4": 9}


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def global_field(mesh: Mesh, systems, d_parts, t: float) -> np.ndarray:
    """Assemble a full-mesh nodal vector from per-subdomain free dofs.

    Interface nodes take the copy from the lowest-numbered subdomain
    (deterministic; the copies agree up to the coupling method's drift).
    Dirichlet nodes take their prescribed value at time ``t``.
    """
    out = np.full(mesh.n_nodes, np.nan)
    for system, values in zip(reversed(systems), reversed(d_parts)):
        dm = system.dof_map
        if dm is None:
            raise ValueError("subdomain has no dof map; not a mesh problem")
        out[dm.free_nodes_global] = values
        if dm.dirichlet_local.size:
            out[dm.nodes[dm.dirichlet_local]] = system.dirichlet_values(t)
    return out


def write_timeseries_csv(path, rows, header) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_snapshot_csv_1d(path, mesh: Mesh, fields: dict) -> None:
    """Sorted x/value columns for a 1D nodal snapshot."""
    order = np.argsort(mesh.nodes[:, 0], kind="stable")
    names = list(fields)
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(["x"] + names)
        for idx in order:
            writer.writerow([_fmt(mesh.nodes[idx, 0])]
                            + [_fmt(fields[n][idx]) for n in names])


def write_snapshot_vtk(path, mesh: Mesh, fields: dict, title="snapshot") -> None:
    """Legacy VTK 3.0 ASCII unstructured grid with nodal scalars."""
    if mesh.dimension != 2:
        raise ValueError("VTK snapshots are for 2D meshes; use the CSV writer")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in mesh.nodes:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} 0.0\n")
        sizes = sum(len(conn) + 1 for _, conn in mesh.elements)
        fh.write(f"CELLS {mesh.n_elements} {sizes}\n")
        for _, conn in mesh.elements:
            fh.write(str(len(conn)) + " " + " ".join(str(c) for c in conn) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        for kind, _ in mesh.elements:
            fh.write(f"{_VTK_CELL_TYPE[kind]}\n")
        fh.write(f"POINT_DATA {mesh.n_nodes}\n")
        for name, values in fields.items():
            fh.write(f"SCALARS {name} double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for v in values:
                fh.write(f"{_fmt(v)}\n")


def write_summary_json(path, summary: dict) -> None:
    payload = {"schema_version": 1}
    payload.update(summary)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_drift_csv(path, drift_report) -> None:
    write_timeseries_csv(
        path,
        drift_report.rows(),
        ["time", "d_drift_2", "d_drift_inf", "v_drift_2", "v_drift_inf"],
    )


def write_stability_csv(path, report) -> None:
    rows = []
    for s in report.subdomains:
        rows.append([s.subdomain, _fmt(s.omega), _fmt(s.dt_critical),
                     _fmt(s.theta), _fmt(s.dt_sub), s.eta,
                     int(s.symmetric_transport), int(s.dt_ok)])
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(["subdomain", "omega", "dt_critical", "theta",
                         "dt_sub", "eta", "symmetric_transport", "dt_ok"])
        for row in rows:
            writer.writerow(row)
        writer.writerow(["alpha_max", _fmt(report.alpha_max), "", "", "", "", "", ""])


def export_matrices(directory, systems) -> list:
    """MatrixMarket dumps of each subdomain's capacity/transport matrices."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, system in enumerate(systems, start=1):
        for name, matrix in (("M", system.M), ("M_gal", system.M_gal),
                             ("M_stab", system.M_stab), ("K", system.K)):
            target = directory / f"subdomain{i}_{name}.mtx"
            scipy.io.mmwrite(str(target), matrix.tocoo())
            written.append(target)
    return written
