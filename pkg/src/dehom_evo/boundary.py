"""Supports and loads described in coarse-grid coordinates.

A region is an axis-aligned box ``(x0, y0, x1, y1)`` in coarse element units.
It selects every node inside the box once the grid is refined by an integer
``scale``; a box that contains no node falls back to the node closest to its
centre. A load total is shared over the selected nodes so that the resultant
does not depend on the resolution: boxes that select a straight run of nodes
get consistent line-load weights (half weight at both ends), anything else an
even split.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import Grid

EDGES = ("left", "right", "top", "bottom")


@dataclass(frozen=True)
class Support:
    box: tuple
    components: str = "xy"


@dataclass(frozen=True)
class Load:
    box: tuple
    force: tuple


def edge_box(name: str, nx: int, ny: int) -> tuple:
    return {
        "left": (0, 0, 0, ny),
        "right": (nx, 0, nx, ny),
        "bottom": (0, 0, nx, 0),
        "top": (0, ny, nx, ny),
    }[name]


def select_nodes(grid: Grid, box, scale: float = 1.0) -> np.ndarray:
    x0, y0, x1, y1 = (float(v) * scale for v in box)
    xy = grid.node_coords()
    tol = 1e-9 * max(1.0, scale)
    inside = (
        (xy[:, 0] >= min(x0, x1) - tol)
        & (xy[:, 0] <= max(x0, x1) + tol)
        & (xy[:, 1] >= min(y0, y1) - tol)
        & (xy[:, 1] <= max(y0, y1) + tol)
    )
    ids = np.flatnonzero(inside)
    if ids.size == 0:
        centre = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
        ids = np.array([int(np.argmin(np.sum((xy - centre) ** 2, axis=1)))])
    return ids


def fixed_dofs(grid: Grid, supports, scale: float = 1.0) -> np.ndarray:
    dofs = []
    for s in supports:
        ids = select_nodes(grid, s.box, scale)
        if "x" in s.components:
            dofs.append(2 * ids)
        if "y" in s.components:
            dofs.append(2 * ids + 1)
    if not dofs:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(dofs))


def force_vector(grid: Grid, loads, scale: float = 1.0) -> np.ndarray:
    F = np.zeros(grid.n_dofs)
    for ld in loads:
        ids = select_nodes(grid, ld.box, scale)
        w = load_weights(grid, ids)
        F[2 * ids] += ld.force[0] * w
        F[2 * ids + 1] += ld.force[1] * w
    return F


def load_weights(grid: Grid, ids: np.ndarray) -> np.ndarray:
    """Nodal shares (summing to 1) of a load spread over ``ids``."""
    if ids.size == 1:
        return np.ones(1)
    xy = grid.node_coords()[ids]
    line = np.ptp(xy[:, 0]) == 0 or np.ptp(xy[:, 1]) == 0
    if not line:
        return np.full(ids.size, 1.0 / ids.size)
    w = np.ones(ids.size)
    along = xy[:, 0] if np.ptp(xy[:, 0]) > 0 else xy[:, 1]
    order = np.argsort(along)
    w[order[0]] = w[order[-1]] = 0.5
    return w / w.sum()


def loaded_nodes(grid: Grid, loads, scale: float = 1.0) -> np.ndarray:
    ids = [select_nodes(grid, ld.box, scale) for ld in loads if np.any(np.asarray(ld.force) != 0)]
    return np.unique(np.concatenate(ids)) if ids else np.zeros(0, dtype=np.int64)


def supported_nodes(grid: Grid, supports, scale: float = 1.0) -> np.ndarray:
    ids = [select_nodes(grid, s.box, scale) for s in supports]
    return np.unique(np.concatenate(ids)) if ids else np.zeros(0, dtype=np.int64)
