"""Independent reference implementations used only by the tests.

Nothing here imports the package's FEM, sorting or DXF code; each routine is
written from the textbook definition so it can serve as an oracle.
"""
import numpy as np


def q4_stiffness(D):
    """Unit-square bilinear element stiffness by explicit 2x2 Gauss quadrature."""
    g = 1.0 / np.sqrt(3.0)
    K = np.zeros((8, 8))
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    for xi in (-g, g):
        for eta in (-g, g):
            B = np.zeros((3, 8))
            for a, (xa, ea) in enumerate(corners):
                # unit square: x = (1 + xi) / 2, so d/dx = 2 d/dxi
                dndx = 2.0 * 0.25 * xa * (1 + ea * eta)
                dndy = 2.0 * 0.25 * ea * (1 + xa * xi)
                B[0, 2 * a] = dndx
                B[1, 2 * a + 1] = dndy
                B[2, 2 * a] = dndy
                B[2, 2 * a + 1] = dndx
            K += B.T @ D @ B * 0.25  # det J = 1/4
    return K


def plane_stress(E=1.0, nu=0.3):
    return E / (1 - nu * nu) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


def dense_solve(nx, ny, D_of_elem, fixed_nodes, loads):
    """Dense assembly and solve on an nx-by-ny unit grid.

    ``D_of_elem(ix, iy)`` gives the element constitutive matrix,
    ``fixed_nodes`` is an iterable of ``(i, j, comps)`` and ``loads`` maps
    ``(i, j)`` to a force pair. Returns ``(u, compliance)`` with node id
    ``j * (nx + 1) + i`` and dofs ``2 * id + {0, 1}``.
    """
    nn = (nx + 1) * (ny + 1)
    K = np.zeros((2 * nn, 2 * nn))
    for iy in range(ny):
        for ix in range(nx):
            n0 = iy * (nx + 1) + ix
            nodes = [n0, n0 + 1, n0 + nx + 2, n0 + nx + 1]
            dofs = np.array([[2 * n, 2 * n + 1] for n in nodes]).ravel()
            K[np.ix_(dofs, dofs)] += q4_stiffness(D_of_elem(ix, iy))
    F = np.zeros(2 * nn)
    for (i, j), f in loads.items():
        F[2 * (j * (nx + 1) + i)] += f[0]
        F[2 * (j * (nx + 1) + i) + 1] += f[1]
    fixed = set()
    for i, j, comps in fixed_nodes:
        n = j * (nx + 1) + i
        if "x" in comps:
            fixed.add(2 * n)
        if "y" in comps:
            fixed.add(2 * n + 1)
    free = np.array(sorted(set(range(2 * nn)) - fixed))
    u = np.zeros(2 * nn)
    u[free] = np.linalg.solve(K[np.ix_(free, free)], F[free])
    return u, float(u @ F)


def brute_ranks(F, V=None):
    """Non-domination ranks by repeatedly peeling the non-dominated set."""
    F = np.asarray(F, float)
    n = len(F)
    V = np.zeros(n) if V is None else np.asarray(V, float)
    feas = V == 0
    dom = np.zeros((n, n), bool)  # dom[i, j]: i dominates j
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if feas[i] and feas[j]:
                dom[i, j] = all(F[i] <= F[j]) and any(F[i] < F[j])
            elif feas[i] != feas[j]:
                dom[i, j] = bool(feas[i])
            else:
                dom[i, j] = V[i] < V[j]
    ranks = np.zeros(n, dtype=int)
    left = np.ones(n, bool)
    r = 1
    while left.any():
        front = left & ~dom[left].any(axis=0)
        ranks[front] = r
        left &= ~front
        r += 1
    return ranks


def read_dxf_polylines(text):
    """Polylines of a minimal R12 DXF as (points, closed) pairs."""
    lines = text.splitlines()
    pairs = [(lines[k].strip(), lines[k + 1].strip()) for k in range(0, len(lines) - 1, 2)]
    out, cur, closed, vertex = [], None, False, None
    for code, value in pairs:
        if code == "0":
            if vertex is not None:
                cur.append(vertex)
                vertex = None
            if value == "POLYLINE":
                cur, closed = [], False
            elif value == "VERTEX":
                vertex = [None, None]
            elif value == "SEQEND":
                out.append((np.array(cur, float), closed))
                cur = None
        elif cur is not None and vertex is None and code == "70":
            closed = bool(int(value) & 1)
        elif vertex is not None and code == "10":
            vertex[0] = float(value)
        elif vertex is not None and code == "20":
            vertex[1] = float(value)
    return out


def length(poly, closed):
    pts = np.vstack([poly, poly[:1]]) if closed else np.asarray(poly)
    return float(sum(np.hypot(*(b - a)) for a, b in zip(pts[:-1], pts[1:])))


def brute_distance(points, poly, closed):
    """All-pairs point-to-segment distances, one pair at a time."""
    pts = np.vstack([poly, poly[:1]]) if closed else poly
    out = []
    for p in points:
        best = np.inf
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            t = min(1.0, max(0.0, float(np.dot(p - a, ab) / np.dot(ab, ab))))
            best = min(best, float(np.hypot(*(p - a - t * ab))))
        out.append(best)
    return np.array(out)


def brute_deviation(p, q, closed):
    eps = max(brute_distance(q, p, closed).max(), brute_distance(p, q, closed).max())
    return eps, (1 - eps / length(p, closed)) * 100


def brute_crowding(F):
    n = len(F)
    d = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(F.shape[1]):
        order = sorted(range(n), key=lambda i: F[i, k])
        lo, hi = F[order[0], k], F[order[-1], k]
        d[order[0]] = d[order[-1]] = np.inf
        for a in range(1, n - 1):
            if hi > lo:
                d[order[a]] += (F[order[a + 1], k] - F[order[a - 1], k]) / (hi - lo)
    return d
