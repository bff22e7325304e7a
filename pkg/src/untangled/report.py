"""Artifact writers: delimited tables, JSON, and figure rendering.

Every writer is deterministic for fixed inputs (shortest round-trip float
formatting, stable JSON key order), so reruns with identical configs and
seeds produce byte-identical data files.  Figures are rendered to files
with the Agg backend; nothing here opens a window.
"""

from __future__ import annotations

import json
import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .density import DensitySnapshot
from .select import FlowMap


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: str, header: Sequence[str], rows) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating,
                                                        np.integer))
                              else str(v) for v in row) + "\n")
    return path


def write_json(path: str, payload) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def flow_to_rows(flow: FlowMap):
    """Long-format trajectory rows: seed_s, seed coordinates, t, state."""
    dim = np.atleast_1d(flow.seeds[0][1]).size
    header = (["seed_s"] + [f"seed_x{a+1}" for a in range(dim)]
              + ["t"] + [f"x{a+1}" for a in range(dim)])
    rows = []
    for (s, x), traj in zip(flow.seeds, flow.trajectories):
        x = np.atleast_1d(x)
        for t, state in zip(traj.times, traj.states):
            rows.append([s, *x, t, *state])
    return header, rows


def write_flow_csv(path: str, flow: FlowMap) -> str:
    header, rows = flow_to_rows(flow)
    return write_csv(path, header, rows)


def write_snapshots_csv(path: str, snapshots: Sequence[DensitySnapshot]) -> str:
    dim = len(snapshots[0].bin_edges)
    header = ["t"] + [f"center_x{a+1}" for a in range(dim)] + ["mass"]
    rows = []
    for snap in snapshots:
        centers = [0.5 * (e[:-1] + e[1:]) for e in snap.bin_edges]
        mesh = np.meshgrid(*centers, indexing="ij")
        flat = [m.ravel() for m in mesh]
        for i, mass in enumerate(snap.bin_masses.ravel()):
            if mass > 0:
                rows.append([snap.t, *(f[i] for f in flat), mass])
    return write_csv(path, header, rows)


def write_atoms_json(path: str, snapshots: Sequence[DensitySnapshot]) -> str:
    payload = [{"t": snap.t,
                "atoms": [{"location": list(map(float, loc)),
                           "mass": mass, "particles": count}
                          for loc, mass, count in snap.atoms]}
               for snap in snapshots]
    return write_json(path, payload)


def write_characteristics_csv(path: str, sol, seeds, stride: int = 1) -> str:
    header = ["seed_index", "t", "U", "I"]
    rows = []
    for j in range(0, sol.U.shape[0], stride):
        for k, t in enumerate(sol.grid.nodes):
            rows.append([j, t, sol.U[j, k], sol.I[j, k]])
    return write_csv(path, header, rows)


def write_galerkin_csv(path: str, system, solution) -> str:
    tq, _ = system.space.quadrature()
    header = ["node", "tau", "U_h"]
    rows = []
    for j in range(system.n_nodes):
        for t, u in zip(tq, solution["U_h"][j]):
            rows.append([j, t, u])
    return write_csv(path, header, rows)


# --- figures ------------------------------------------------------------------

def render_flow_figure(path: str, flow: FlowMap, max_lines: int = 64) -> str:
    """Flow lines in the (t, x) plane (first coordinate for d >= 2)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    stride = max(1, len(flow.trajectories) // max_lines)
    for traj in flow.trajectories[::stride]:
        ax.plot(traj.times, traj.states[:, 0], lw=0.7, color="tab:blue",
                alpha=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title("selected flow lines")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_density_figure(path: str, snapshots: Sequence[DensitySnapshot]) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for snap in snapshots:
        edges = snap.bin_edges[0]
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = edges[1] - edges[0]
        masses = snap.bin_masses if snap.bin_masses.ndim == 1 \
            else snap.bin_masses.sum(axis=tuple(range(1, snap.bin_masses.ndim)))
        ax.step(centers, masses / width, where="mid", label=f"t={snap.t:g}")
        for loc, mass, _ in snap.atoms:
            ax.annotate(f"atom {mass:.3g}", (loc[0], 0.0),
                        textcoords="offset points", xytext=(2, 12 + 24 * snap.t),
                        fontsize=7)
            ax.axvline(loc[0], color="tab:red", lw=0.8, alpha=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title("push-forward density")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_transport_figure(path: str, sol, stride: int = 1) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for j in range(0, sol.U.shape[0], max(1, stride)):
        ax.plot(sol.grid.nodes, sol.U[j], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("U")
    ax.set_title("characteristic ODE solutions")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_galerkin_figure(path: str, system, solution, reference=None) -> str:
    tq, _ = system.space.quadrature()
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for j in range(system.n_nodes):
        ax.plot(tq, solution["U_h"][j], lw=0.8,
                label="U_h" if j == 0 else None)
        if reference is not None:
            ax.plot(tq, reference[j], lw=0.8, ls="--",
                    label="characteristics" if j == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("U")
    ax.set_title("Petrov-Galerkin vs characteristics")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_convergence_figure(path: str, table: dict) -> str:
    """Study figure: mollification errors and Galerkin refinement."""
    n_panels = sum(1 for key in ("mollification", "galerkin") if table.get(key))
    fig, axes = plt.subplots(1, max(n_panels, 1), figsize=(5.5 * max(n_panels, 1), 4.0))
    axes = np.atleast_1d(axes)
    panel = 0
    rows = table.get("mollification")
    if rows:
        eps = [r["eps"] for r in rows]
        axes[panel].loglog(eps, [r["flow_l1_error"] for r in rows], "o-",
                           label="flow L1")
        axes[panel].loglog(eps, [r["density_w1_error"] for r in rows], "s-",
                           label="density W1")
        axes[panel].set_xlabel("mollification width")
        axes[panel].set_ylabel("error vs selected flow")
        axes[panel].legend(fontsize=8)
        axes[panel].set_title("stability under mollification")
        panel += 1
    rows = table.get("galerkin")
    if rows:
        dts = [r["dtau"] for r in rows]
        axes[panel].loglog(dts, [r["l2_error"] for r in rows], "o-")
        axes[panel].set_xlabel("mesh width")
        axes[panel].set_ylabel("L2 error vs characteristics")
        axes[panel].set_title("Petrov-Galerkin refinement")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
