"""PNG figures of a closed-loop trace (needs the ``plots`` extra)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .contour import Arc


def _path_points(path, n=400):
    pts = []
    for seg in path:
        s = np.linspace(0.0, seg.length, n if isinstance(seg, Arc) else 2)
        pts.extend(seg.point_at(v) for v in s)
    return np.array(pts)


def render_trace(trace, path, out_dir, eps_c: float) -> list[Path]:
    """Write the end-effector path, contouring error and inputs; return the file paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    files = []

    fig, ax = plt.subplots(figsize=(5, 5))
    ref = _path_points(path)
    ax.plot(ref[:, 0], ref[:, 1], "k--", lw=1, label="contour")
    ax.plot(trace.y[:, 0], trace.y[:, 1], lw=1, label="end effector")
    ax.set_aspect("equal")
    ax.set_xlabel("x_e [m]")
    ax.set_ylabel("y_e [m]")
    ax.legend(loc="best")
    files.append(out_dir / "path.png")
    fig.savefig(files[-1], dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(trace.t, 1e3 * trace.eps, lw=1)
    ax.axhline(1e3 * eps_c, color="r", ls="--", lw=1, label="tolerance")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("contouring error [mm]")
    ax.legend(loc="best")
    files.append(out_dir / "contouring_error.png")
    fig.savefig(files[-1], dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, axes = plt.subplots(3, 1, figsize=(7, 5), sharex=True)
    for i, ax in enumerate(axes):
        ax.plot(trace.t, trace.u[:, i], lw=1)
        ax.set_ylabel(f"u{i + 1} [A]")
    axes[-1].set_xlabel("t [s]")
    files.append(out_dir / "inputs.png")
    fig.savefig(files[-1], dpi=120, bbox_inches="tight")
    plt.close(fig)
    return files
