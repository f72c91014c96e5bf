"""Static figures for plans and runs, written to files next to the CSV/JSON output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402

COLORS = {"robot": "tab:blue", "object": "tab:orange"}


def polygon_vertices(poly) -> np.ndarray:
    """Vertices of a bounded planar H-polytope, by clipping its bounding box."""
    bb = poly.bounding_box()
    (x0, y0), (x1, y1) = bb.lower, bb.upper
    pts = [np.array(p, float) for p in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
    for h, b in zip(poly.H, poly.b):
        out = []
        for k in range(len(pts)):
            p, q = pts[k], pts[(k + 1) % len(pts)]
            fp, fq = h @ p - b, h @ q - b
            if fp <= 1e-12:
                out.append(p)
            if fp * fq < 0:
                out.append(p + (q - p) * fp / (fp - fq))
        pts = out
        if not pts:
            break
    return np.array(pts).reshape(-1, 2)


def _scene(ax, sc):
    ws = polygon_vertices(sc.workspace)
    ax.add_patch(Polygon(ws, closed=True, fill=False, ec="k", lw=1.2))
    for name, reg in sc.regions.items():
        v = polygon_vertices(reg)
        if len(v):
            ax.add_patch(Polygon(v, closed=True, fc="tab:green", alpha=0.12, ec="tab:green"))
            c = v.mean(axis=0)
            ax.annotate(name, c, ha="center", va="center", fontsize=7, color="tab:green")
    for name, obs in sc.obstacles.items():
        v = polygon_vertices(obs)
        if len(v):
            ax.add_patch(Polygon(v, closed=True, fc="0.4", alpha=0.5, ec="k"))
    bb = sc.workspace.bounding_box()
    pad = 0.05 * float(np.max(bb.upper - bb.lower))
    ax.set_xlim(bb.lower[0] - pad, bb.upper[0] + pad)
    ax.set_ylim(bb.lower[1] - pad, bb.upper[1] + pad)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def plot_plan(plan, sc, path, n: int = 60) -> Path:
    """Planned paths, impact points and (for robust plans) tube boxes at the knots."""
    fig, ax = plt.subplots(figsize=(6, 6))
    _scene(ax, sc)
    for name, ps in plan.paths.items():
        kind = "robot" if name in plan.robots else "object"
        pts = np.vstack([p.position(np.linspace(0, 1, n)) for p in ps])
        ax.plot(pts[:, 0], pts[:, 1], color=COLORS[kind], lw=1.5 if kind == "object" else 1.0,
                ls="-" if kind == "object" else "--")
        ax.plot(*pts[0], "o", color=COLORS[kind], ms=4)
        ax.annotate(name, pts[0], fontsize=7, xytext=(3, 3), textcoords="offset points")
    for on, segs in plan.tube.items():
        for s in segs:
            box = plan.tube_box(on, s.t0)
            ax.add_patch(Rectangle(box.lower, *(box.upper - box.lower), fill=False, ec="tab:red", lw=0.6))
    for e in plan.events:
        ax.plot(*e.contact_point, "x", color="tab:red", ms=7)
    title = f"{plan.scenario}: rho = {plan.rho:.3f} m"
    if plan.delta is not None:
        title += f", delta = {plan.delta:.4f} m/s"
    ax.set_title(title, fontsize=9)
    return _save(fig, path)


def plot_run(log, sc, path, plan=None) -> Path:
    """Executed paths (solid) over planned paths (dotted), impacts marked."""
    fig, ax = plt.subplots(figsize=(6, 6))
    _scene(ax, sc)
    if plan is not None:
        for name, ps in plan.paths.items():
            pts = np.vstack([p.position(np.linspace(0, 1, 40)) for p in ps])
            ax.plot(pts[:, 0], pts[:, 1], ":", color="0.5", lw=0.8)
    for b in log.bodies():
        kind = "robot" if b in sc.robots else "object"
        P = log.positions(b)
        ax.plot(P[:, 0], P[:, 1], color=COLORS[kind], lw=1.2)
        ax.annotate(b, P[0], fontsize=7, xytext=(3, 3), textcoords="offset points")
    for e in log.impacts():
        ax.plot(*e["contact"], "x", color="tab:red", ms=7)
    rho = log.report.get("rho")
    ax.set_title(f"{log.meta.get('scenario', '')}: executed rho = {rho:.3f} m" if rho is not None
                 else str(log.meta.get("scenario", "")), fontsize=9)
    return _save(fig, path)


def plot_velocities(log, path) -> Path:
    """Speed of every body over time; impacts as vertical lines."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    t = log.times
    for b in log.bodies():
        ax.plot(t, np.linalg.norm(log.velocities(b), axis=1), lw=1.0, label=b)
    for e in log.impacts():
        ax.axvline(e["t"], color="tab:red", lw=0.6, ls="--")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("speed [m/s]")
    ax.legend(fontsize=7, ncol=4)
    return _save(fig, path)


def _save(fig, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return p
