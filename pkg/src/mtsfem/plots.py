"""Matplotlib figure rendering for the report path.

Figures are written next to the delimited outputs when ``--plots`` is
passed to the CLI.  Rendering is deterministic: the Agg backend, fixed
figure sizes, and stripped PNG metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KW = dict(dpi=130, metadata={"Software": None})


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return Path(path)


def plot_timeseries(path, times, series: dict, logy=True):
    """Line plot of per-step scalars (drift norms, energies, ...)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, values in series.items():
        values = np.asarray(values, dtype=float)
        if logy:
            values = np.where(values > 0, values, np.nan)
        ax.plot(times, values, label=label, linewidth=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("time")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_snapshot_1d(path, x, fields: dict, reference=None):
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    order = np.argsort(x, kind="stable")
    for label, values in fields.items():
        ax.plot(np.asarray(x)[order], np.asarray(values)[order],
                label=label, linewidth=1.2)
    if reference is not None:
        xs = np.linspace(float(np.min(x)), float(np.max(x)), 400)
        ax.plot(xs, [float(np.squeeze(reference(v))) for v in xs], "k--",
                label="reference", linewidth=1.0)
    ax.set_xlabel("x")
    ax.set_ylabel("value")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_snapshot_2d(path, mesh, values, title=""):
    """Filled contour of a nodal field on a 2D mesh (quads are split)."""
    triangles = []
    for kind, conn in mesh.elements:
        if kind == "tri3":
            triangles.append(conn)
        elif kind == "quad4":
            triangles.append((conn[0], conn[1], conn[2]))
            triangles.append((conn[0], conn[2], conn[3]))
    tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1],
                             np.asarray(triangles))
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    im = ax.tripcolor(tri, np.asarray(values, dtype=float), shading="gouraud")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title, fontsize=9)
    return _finish(fig, path)


def plot_convergence(path, dts, errors, order):
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    ax.loglog(dts, errors, "o-", label=f"observed order {order:.2f}")
    anchor = errors[len(errors) // 2] / dts[len(dts) // 2] ** 2
    ax.loglog(dts, [anchor * d**2 for d in dts], "k--",
              label="second order", linewidth=1.0)
    ax.set_xlabel("system time-step")
    ax.set_ylabel("error")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _finish(fig, path)
