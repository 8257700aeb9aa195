"""Contour extraction, equal arc-length resampling, deviation metrics and DXF export.

Scalar samples sit at pixel centres, so sample ``(i, j)`` has coordinates
``(i + 0.5, j + 0.5)`` in fine-pixel units. Contours are oriented with the
solid side (values >= c) on the left: outer boundaries run counter-clockwise
and holes clockwise, so signed loop areas add up to the solid area.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

from .errors import NumericalError
from .io import atomic_write_text

MIN_LOOP_AREA = 4.0
DUP_TOL = 1e-12


@dataclass
class ContourSet:
    loops: list = field(default_factory=list)  # closed polylines, (n, 2) arrays
    open: list = field(default_factory=list)  # open polylines, (n, 2) arrays

    def __len__(self):
        return len(self.loops) + len(self.open)

    def is_empty(self) -> bool:
        return len(self) == 0


@dataclass
class ResampleReport:
    eps_shape: float
    eps_acc: float
    n_msa: int
    n_ear: int
    delta_s: float
    loops: list = field(default_factory=list)  # per-polyline reports when aggregated


# --------------------------------------------------------------------------- marching squares


def _segment_table():
    """(code, centre_solid) -> list of (from_edge, to_edge) local edge pairs.

    Bit k of the code is set when corner k (counter-clockwise from the
    bottom-left) is solid. Local edge k joins corner k to corner k+1. Each
    segment runs from an edge where the boundary walk leaves the solid to an
    edge where it re-enters, which keeps the solid on the left.
    """
    table = {}
    for code in range(16):
        solid = [(code >> k) & 1 for k in range(4)]
        exits = [k for k in range(4) if solid[k] and not solid[(k + 1) % 4]]
        entries = [k for k in range(4) if not solid[k] and solid[(k + 1) % 4]]
        for centre in (False, True):
            segs = []
            for ex in exits:
                if len(exits) == 1:
                    en = entries[0]
                elif centre:  # solid centre: cut off the void corner that follows
                    en = (ex + 1) % 4
                else:  # void centre: close off this solid corner
                    en = (ex - 1) % 4
                segs.append((ex, en))
            table[(code, centre)] = segs
    return table


_TABLE = _segment_table()


def _prepare(field_, c):
    f = np.asarray(field_, dtype=float)
    if f.ndim != 2 or min(f.shape) < 2:
        raise ValueError(f"marching squares needs a 2D grid of at least 2x2, got shape {f.shape}")
    binary = np.all((f == 0) | (f == 1))
    if binary:
        # pad so every solid region closes, then smooth once so the edge
        # interpolation places the contour between pixels
        f = np.pad(f, 2, constant_values=0.0)
        f = uniform_filter(f, size=3, mode="constant", cval=0.0)
        return f, -2.0
    return f, 0.0


def marching_squares(field_, c: float = 0.5) -> ContourSet:
    """Iso-contours of a scalar field sampled at pixel centres.

    Binary (0/1) fields are zero-padded and box-smoothed first, so all their
    contours are closed loops.
    """
    f, shift = _prepare(field_, c)
    nx, ny = f.shape
    if not (f.min() < c <= f.max()):
        return ContourSet()
    s = f >= c
    code = (
        s[:-1, :-1].astype(np.int64)
        | (s[1:, :-1].astype(np.int64) << 1)
        | (s[1:, 1:].astype(np.int64) << 2)
        | (s[:-1, 1:].astype(np.int64) << 3)
    )
    centre = 0.25 * (f[:-1, :-1] + f[1:, :-1] + f[1:, 1:] + f[:-1, 1:]) >= c
    ci, cj = np.nonzero((code != 0) & (code != 15))

    n_h = (nx - 1) * ny

    def edge_id(i, j, k):
        # k: 0 bottom, 1 right, 2 top, 3 left
        if k == 0:
            return i * ny + j
        if k == 2:
            return i * ny + j + 1
        if k == 1:
            return n_h + (i + 1) * (ny - 1) + j
        return n_h + i * (ny - 1) + j

    def edge_point(eid):
        if eid < n_h:
            i, j = divmod(eid, ny)
            a, b = f[i, j], f[i + 1, j]
            t = (c - a) / (b - a)
            return (i + t + 0.5, j + 0.5)
        i, j = divmod(eid - n_h, ny - 1)
        a, b = f[i, j], f[i, j + 1]
        t = (c - a) / (b - a)
        return (i + 0.5, j + t + 0.5)

    starts, ends = [], []
    for i, j in zip(ci.tolist(), cj.tolist()):
        for a, b in _TABLE[(int(code[i, j]), bool(centre[i, j]))]:
            starts.append(edge_id(i, j, a))
            ends.append(edge_id(i, j, b))
    succ = {st: en for st, en in zip(starts, ends)}
    preds = set(ends)

    cache = {}

    def pt(eid):
        p = cache.get(eid)
        if p is None:
            p = cache[eid] = edge_point(eid)
        return p

    out = ContourSet()
    seen = set()
    # open chains start at an edge nothing flows into
    for st in starts:
        if st in preds or st in seen:
            continue
        chain = [st]
        seen.add(st)
        cur = st
        while cur in succ:
            cur = succ[cur]
            chain.append(cur)
            seen.add(cur)
        poly = _clean(np.array([pt(e) for e in chain]) + shift, closed=False)
        if len(poly) >= 2:
            out.open.append(poly)
    for st in starts:
        if st in seen:
            continue
        chain = []
        cur = st
        while cur not in seen:
            seen.add(cur)
            chain.append(cur)
            cur = succ[cur]
        poly = _clean(np.array([pt(e) for e in chain]) + shift, closed=True)
        if len(poly) >= 3 and abs(polygon_area(poly)) >= MIN_LOOP_AREA:
            out.loops.append(poly)
    return out


def _clean(poly: np.ndarray, closed: bool) -> np.ndarray:
    """Drop consecutive duplicate points (and a duplicated seam on loops)."""
    keep = [0]
    for k in range(1, len(poly)):
        if np.linalg.norm(poly[k] - poly[keep[-1]]) > DUP_TOL:
            keep.append(k)
    poly = poly[keep]
    if closed and len(poly) > 1 and np.linalg.norm(poly[-1] - poly[0]) <= DUP_TOL:
        poly = poly[:-1]
    return poly


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise loops)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# --------------------------------------------------------------------------- resampling


def polyline_length(poly: np.ndarray, closed: bool = False) -> float:
    pts = np.vstack([poly, poly[:1]]) if closed else poly
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def _cumulative(poly, closed):
    pts = np.vstack([poly, poly[:1]]) if closed else np.asarray(poly, float)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    return pts, s


def point_count(n_msa: int, m_factor: float) -> int:
    return max(4, int(round(m_factor * n_msa)))


def resample_equal_arclength(poly, m_factor: float, closed: bool = False) -> np.ndarray:
    """Points at equal arc-length steps along ``poly``.

    Open curves keep both end points (step L/(N-1)); loops use step L/N and do
    not repeat the seam.
    """
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 2:
        raise ValueError("resampling needs at least 2 points")
    if not m_factor > 0:
        raise ValueError(f"M must be positive, got {m_factor}")
    pts, s = _cumulative(poly, closed)
    L = s[-1]
    if L <= 0:
        raise NumericalError("cannot resample a zero-length polyline")
    n = point_count(len(poly), m_factor)
    targets = np.arange(n) * (L / n if closed else L / (n - 1))
    if not closed:
        targets[-1] = L
    return np.stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])], axis=1)


# --------------------------------------------------------------------------- deviation


def _segment_distances(points, a, ab, ab2):
    t = np.clip(np.sum((points[:, None, :] - a) * ab, axis=-1) / ab2, 0.0, 1.0)
    d = points[:, None, :] - (a + t[..., None] * ab)
    return np.sqrt(np.sum(d * d, axis=-1))


def point_to_polyline(points: np.ndarray, poly: np.ndarray, closed: bool = False, k: int = 16) -> np.ndarray:
    """Distance from each point to the nearest segment of ``poly``.

    Large inputs only test the ``k`` segments with the closest midpoints and
    fall back to all segments wherever that candidate set cannot be proven to
    contain the nearest one.
    """
    points = np.atleast_2d(np.asarray(points, float))
    pts = np.vstack([poly, poly[:1]]) if closed and len(poly) > 2 else np.asarray(poly, float)
    if len(pts) == 1:
        return np.linalg.norm(points - pts[0], axis=1)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    ab2 = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    out = np.empty(len(points))
    if len(points) * len(a) <= 1 << 20 or len(a) <= k:
        for lo in range(0, len(points), 1024):
            out[lo : lo + 1024] = _segment_distances(points[lo : lo + 1024], a, ab, ab2).min(axis=1)
        return out
    mid = 0.5 * (a + b)
    half = 0.5 * np.sqrt(ab2).max()
    dmid, idx = cKDTree(mid).query(points, k=k)
    t = np.clip(np.sum((points[:, None, :] - a[idx]) * ab[idx], axis=-1) / ab2[idx], 0.0, 1.0)
    d = points[:, None, :] - (a[idx] + t[..., None] * ab[idx])
    out = np.sqrt(np.min(np.sum(d * d, axis=-1), axis=1))
    # any segment outside the candidates is at least dmid[:, -1] - half away
    unsure = np.flatnonzero(out > dmid[:, -1] - half)
    for lo in range(0, len(unsure), 256):
        sel = unsure[lo : lo + 256]
        out[sel] = _segment_distances(points[sel], a, ab, ab2).min(axis=1)
    return out


def deviation(p, q, closed: bool = False):
    """Symmetric max-min point-to-polyline distance and relative accuracy in percent.

    ``p`` is the reference curve; its length normalizes the accuracy.
    """
    p, q = np.asarray(p, float), np.asarray(q, float)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("deviation needs two nonempty polylines")
    eps = max(float(point_to_polyline(q, p, closed).max()), float(point_to_polyline(p, q, closed).max()))
    L = polyline_length(p, closed)
    acc = (1.0 - eps / L) * 100.0 if L > 0 else (100.0 if eps == 0 else 0.0)
    return eps, acc


# --------------------------------------------------------------------------- pipeline


def extract_geometry(field_, c: float = 0.5, m_factor: float = 1.0):
    """Contours of a field, resampled at equal arc length, with a deviation report."""
    bits = getattr(field_, "bits", field_)
    raw = marching_squares(bits, c)
    out = ContourSet()
    reports = []
    for group, closed in ((raw.loops, True), (raw.open, False)):
        for poly in group:
            res = resample_equal_arclength(poly, m_factor, closed)
            eps, acc = deviation(poly, res, closed)
            L = polyline_length(poly, closed)
            n = len(res)
            reports.append(ResampleReport(eps, acc, len(poly), n, L / n if closed else L / (n - 1)))
            (out.loops if closed else out.open).append(res)
    if reports:
        worst = max(reports, key=lambda r: r.eps_shape)
        agg = ResampleReport(
            worst.eps_shape,
            min(r.eps_acc for r in reports),
            sum(r.n_msa for r in reports),
            sum(r.n_ear for r in reports),
            max(r.delta_s for r in reports),
            reports,
        )
    else:
        agg = ResampleReport(0.0, 100.0, 0, 0, 0.0, [])
    return out, agg


def report_rows(report: ResampleReport):
    return [(k, r.n_msa, r.n_ear, r.eps_shape, r.eps_acc) for k, r in enumerate(report.loops)]


REPORT_HEADER = ("loop_id", "n_msa", "n_ear", "eps_shape", "eps_acc")


# --------------------------------------------------------------------------- DXF


def dxf_text(contours: ContourSet, scale: float = 1.0) -> str:
    """Minimal DXF R12 document with one closed POLYLINE per loop."""
    if contours.is_empty():
        raise ValueError("cannot export an empty contour set")
    lines = ["0", "SECTION", "2", "HEADER", "9", "$ACADVER", "1", "AC1009", "0", "ENDSEC"]
    lines += ["0", "SECTION", "2", "ENTITIES"]
    polys = [(p, 1) for p in contours.loops] + [(p, 0) for p in contours.open]
    for poly, flag in polys:
        lines += ["0", "POLYLINE", "8", "0", "66", "1", "10", "0.0", "20", "0.0", "30", "0.0", "70", str(flag)]
        for x, y in np.asarray(poly, float) * scale:
            lines += ["0", "VERTEX", "8", "0", "10", f"{x + 0.0:.9f}", "20", f"{y + 0.0:.9f}"]
        lines += ["0", "SEQEND", "8", "0"]
    lines += ["0", "ENDSEC", "0", "EOF"]
    return "\n".join(lines) + "\n"


def export_dxf(contours: ContourSet, scale: float, path) -> None:
    atomic_write_text(path, dxf_text(contours, scale))
