"""Phasor-noise de-homogenization of lattice design fields into binary structures.

Every coarse element emits one Gabor-like kernel per lamination direction. The
kernels are superposed on an intermediate grid, demodulated into sawtooth
phase fields, upsampled to the fine grid and thresholded into bands whose
relative width equals the local bar width. The two directional layers are
merged by union.

Coordinates are in coarse-element units; element ``(ix, iy)`` covers
``[ix, ix+1] x [iy, iy+1]``. Intermediate and fine samples sit at cell centres.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .design import DesignField
from .errors import ConfigError, NumericalError
from .interp import upsample, upsample_bilinear

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhasorConfig:
    omega: float = 1.0
    beta: float = 1.0
    aspect: float = 2.0
    align_iters: int = 10
    sample_radius: float = 3.0
    s_i: int = 4
    s_f: int = 16
    rho_void: float = 1e-3
    void_width: float = 0.02
    solid_width: float = 0.999

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigError(f"omega must be positive, got {self.omega}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not self.aspect >= 1:
            raise ConfigError(f"aspect must be >= 1, got {self.aspect}")
        if self.align_iters < 0:
            raise ConfigError(f"align_iters must be >= 0, got {self.align_iters}")
        if not self.sample_radius > 0:
            raise ConfigError(f"sample_radius must be positive, got {self.sample_radius}")
        MeshHierarchy(2, 2, self.s_i, self.s_f)

    def digest(self) -> str:
        return hashlib.sha1(repr(sorted(asdict(self).items())).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class MeshHierarchy:
    nx: int
    ny: int
    s_i: int = 4
    s_f: int = 16

    def __post_init__(self):
        if self.s_i < 2:
            raise ConfigError(f"s_i must be >= 2, got {self.s_i}")
        if self.s_f < self.s_i or self.s_f % self.s_i:
            raise ConfigError(f"s_f must be a multiple of s_i with s_f >= s_i, got s_i={self.s_i}, s_f={self.s_f}")

    @classmethod
    def for_field(cls, x: DesignField, cfg: PhasorConfig) -> "MeshHierarchy":
        return cls(x.nx, x.ny, cfg.s_i, cfg.s_f)

    @property
    def coarse_shape(self):
        return (self.nx, self.ny)

    @property
    def inter_shape(self):
        return (self.nx * self.s_i, self.ny * self.s_i)

    @property
    def fine_shape(self):
        return (self.nx * self.s_f, self.ny * self.s_f)

    def inter_points(self) -> np.ndarray:
        """(NX_i, NY_i, 2) sample positions of the intermediate grid."""
        gx = (np.arange(self.inter_shape[0]) + 0.5) / self.s_i
        gy = (np.arange(self.inter_shape[1]) + 0.5) / self.s_i
        return np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1)


@dataclass
class BinaryField:
    bits: np.ndarray  # (NX_f, NY_f) uint8 0/1, indexed [ix, iy]
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = (np.asarray(self.bits) > 0).astype(np.uint8)

    @property
    def shape(self):
        return self.bits.shape


# --------------------------------------------------------------------------- directions


def lamination_directions(x: DesignField):
    """Unit lamination directions (nx, ny, 2) and layer thicknesses.

    Thicknesses are the effective widths (density folded in).
    """
    c, s = np.cos(x.theta), np.sin(x.theta)
    n1 = np.stack([c, s], axis=-1)
    n2 = np.stack([-s, c], axis=-1)
    t1, t2 = x.effective_widths()
    return n1, n2, np.clip(t1, 0.0, 1.0), np.clip(t2, 0.0, 1.0)


# --------------------------------------------------------------------------- kernels


def element_centres(nx: int, ny: int) -> np.ndarray:
    gx, gy = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny) + 0.5, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def kernel_envelope(d: np.ndarray, n: np.ndarray, cfg: PhasorConfig) -> np.ndarray:
    """exp(-beta * Delta) for offsets ``d`` from kernel centres with directions ``n``."""
    along = np.sum(d * n, axis=-1)
    across = d[..., 1] * n[..., 0] - d[..., 0] * n[..., 1]
    delta = (along / cfg.aspect) ** 2 + across**2
    return np.exp(-cfg.beta * delta)


def phasor_kernel(p: np.ndarray, centre: np.ndarray, n: np.ndarray, phase, cfg: PhasorConfig) -> np.ndarray:
    """Single kernel emission sampled at points ``p`` (..., 2)."""
    d = p - centre
    return kernel_envelope(d, n, cfg) * np.exp(1j * (2.0 * np.pi * cfg.omega * np.sum(n * d, axis=-1) + phase))


def _neighbour_offsets(radius: float):
    r = int(np.ceil(radius)) + 1
    return [(ox, oy) for ox in range(-r, r + 1) for oy in range(-r, r + 1)]


def _alignment_links(n: np.ndarray, cfg: PhasorConfig, offsets):
    """Per-link sign, predicted phase shift and weight between elements e and f = e + offset."""
    nx, ny = n.shape[:2]
    centres = element_centres(nx, ny)
    links = []
    for ox, oy in offsets:
        ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        fx, fy = ex + ox, ey + oy
        ok = (fx >= 0) & (fx < nx) & (fy >= 0) & (fy < ny)
        ex, ey, fx, fy = ex[ok], ey[ok], fx[ok], fy[ok]
        ne, nf = n[ex, ey], n[fx, fy]
        s = np.where(np.sum(ne * nf, axis=-1) >= 0, 1.0, -1.0)
        dc = centres[ex, ey] - centres[fx, fy]
        delta = np.pi * cfg.omega * np.sum((ne + s[:, None] * nf) * dc, axis=-1)
        w = np.exp(-cfg.beta * np.sum(dc * dc, axis=-1))
        links.append((ex * ny + ey, fx * ny + fy, s, delta, w))
    return [np.concatenate(parts) for parts in zip(*links)]


_ALL_NEIGHBOURS = [(ox, oy) for ox in (-1, 0, 1) for oy in (-1, 0, 1) if (ox, oy) != (0, 0)]
_HALF_NEIGHBOURS = [(1, 0), (0, 1), (1, 1), (1, -1)]


def align_phases(n: np.ndarray, cfg: PhasorConfig, iters: int | None = None, objective: list | None = None):
    """Gauss-Seidel phase alignment of one direction field (nx, ny, 2).

    Phases start from the plane waves through the domain centre. Each sweep
    sets every phase, in element order, to the weighted circular
    mean of the phases its eight neighbours predict for it; directions are
    compared up to sign. ``objective`` (if given) receives the discrepancy
    before the first and after every sweep.
    """
    nx, ny = n.shape[:2]
    iters = cfg.align_iters if iters is None else iters
    e, f, s, delta, w = _alignment_links(n, cfg, _ALL_NEIGHBOURS)
    order = np.argsort(e, kind="stable")
    e, f, s, delta, w = e[order], f[order], s[order], delta[order], w[order]
    starts = np.searchsorted(e, np.arange(nx * ny + 1))
    phi = _plane_wave_start(n, cfg).ravel()
    if objective is not None:
        objective.append(alignment_objective(phi.reshape(nx, ny), n, cfg))
    for _ in range(iters):
        for k in range(nx * ny):
            lo, hi = starts[k], starts[k + 1]
            acc = np.sum(w[lo:hi] * np.exp(1j * (s[lo:hi] * phi[f[lo:hi]] + delta[lo:hi])))
            if abs(acc) > 1e-300:
                phi[k] = np.angle(acc)
        if objective is not None:
            objective.append(alignment_objective(phi.reshape(nx, ny), n, cfg))
    return _fix_gauge(phi.reshape(nx, ny), n, cfg)


def _oriented(n: np.ndarray):
    """Directions flipped to a common half plane and the sign relating them to ``n``."""
    nn = n * np.where(n[..., :1] + 1e-12 * n[..., 1:] >= 0, 1.0, -1.0)
    return nn, np.where(np.sum(n * nn, axis=-1) >= 0, 1.0, -1.0)


def _plane_wave_start(n: np.ndarray, cfg: PhasorConfig) -> np.ndarray:
    """Phases of the plane waves through the domain centre; exact for uniform directions."""
    nx, ny = n.shape[:2]
    nn, s = _oriented(n)
    d = element_centres(nx, ny) - np.array([nx / 2.0, ny / 2.0])
    return s * 2.0 * np.pi * cfg.omega * np.sum(nn * d, axis=-1)


def _fix_gauge(phi: np.ndarray, n: np.ndarray, cfg: PhasorConfig) -> np.ndarray:
    """Shift all phases so the wave through the domain centre has phase zero.

    Phases are only defined up to a common shift; anchoring it at the centre
    keeps the pattern independent of sweep order under rotations of the domain.
    """
    nx, ny = phi.shape
    p0 = np.array([nx / 2.0, ny / 2.0])
    d = p0 - element_centres(nx, ny)
    nn, s = _oriented(n)
    pred = 2.0 * np.pi * cfg.omega * np.sum(nn * d, axis=-1) + s * phi
    acc = np.sum(kernel_envelope(d, nn, cfg) * np.exp(1j * pred))
    if abs(acc) < 1e-300:
        return phi
    return phi - s * np.angle(acc)


def alignment_objective(phi: np.ndarray, n: np.ndarray, cfg: PhasorConfig) -> float:
    """Total neighbour phase discrepancy sum w (1 - cos(phi_e - s phi_f - delta_ef)) over pairs."""
    e, f, s, delta, w = _alignment_links(n, cfg, _HALF_NEIGHBOURS)
    p = np.ravel(phi)
    return float(np.sum(w * (1.0 - np.cos(p[e] - s * p[f] - delta))))


def superpose(points, centres, n, phases, cfg: PhasorConfig, normalize: bool = True):
    """Sum kernels at arbitrary points; every kernel within ``sample_radius`` contributes.

    ``centres``, ``n`` and ``phases`` describe the kernels as flat arrays. Used
    for small direct evaluations; :func:`synthesize` is the gridded fast path.
    """
    points = np.asarray(points, float)
    flat = points.reshape(-1, 2)
    num = np.zeros(flat.shape[0], dtype=complex)
    den = np.zeros(flat.shape[0])
    for c, nn, ph in zip(np.reshape(centres, (-1, 2)), np.reshape(n, (-1, 2)), np.ravel(phases)):
        d = flat - c
        inside = np.sum(d * d, axis=-1) <= cfg.sample_radius**2
        env = kernel_envelope(d, nn, cfg)
        wave = np.exp(1j * (2.0 * np.pi * cfg.omega * np.sum(nn * d, axis=-1) + ph))
        num += np.where(inside, env * wave, 0.0)
        den += np.where(inside, env, 0.0)
    if normalize:
        num = num / np.where(den > 0, den, 1.0)
    return num.reshape(points.shape[:-1])


def synthesize(x: DesignField, dirs, mesh: MeshHierarchy, cfg: PhasorConfig, phases=None):
    """Complex fields G(., n1) and G(., n2) on the intermediate grid.

    ``phases`` optionally supplies the per-element offsets for both directions
    (skipping alignment). Kernel directions are oriented, per sample, to agree
    with the direction of the element containing the sample, so antiparallel
    neighbours add coherently.
    """
    n1, n2 = dirs[0], dirs[1]
    if x.shape != mesh.coarse_shape:
        raise ConfigError(f"design grid {x.shape} does not match mesh {mesh.coarse_shape}")
    if phases is None:
        phases = (align_phases(n1, cfg), align_phases(n2, cfg))
    pts = mesh.inter_points()
    home = np.floor(pts).astype(np.int64)
    hx, hy = home[..., 0], home[..., 1]
    out = []
    for n, phi in zip((n1, n2), phases):
        n_home = n[hx, hy]
        num = np.zeros(pts.shape[:2], dtype=complex)
        den = np.zeros(pts.shape[:2])
        for ox, oy in _neighbour_offsets(cfg.sample_radius):
            kx, ky = hx + ox, hy + oy
            valid = (kx >= 0) & (kx < mesh.nx) & (ky >= 0) & (ky < mesh.ny)
            kxc, kyc = np.clip(kx, 0, mesh.nx - 1), np.clip(ky, 0, mesh.ny - 1)
            d = pts - np.stack([kxc + 0.5, kyc + 0.5], axis=-1)
            valid &= np.sum(d * d, axis=-1) <= cfg.sample_radius**2
            if not valid.any():
                continue
            nk = n[kxc, kyc]
            s = np.where(np.sum(nk * n_home, axis=-1) >= 0, 1.0, -1.0)
            nk = nk * s[..., None]
            env = kernel_envelope(d, nk, cfg)
            wave = np.exp(1j * (2.0 * np.pi * cfg.omega * np.sum(nk * d, axis=-1) + s * phi[kxc, kyc]))
            num += np.where(valid, env * wave, 0.0)
            den += np.where(valid, env, 0.0)
        bad = np.argwhere(~(den > 1e-300))
        if bad.size:
            i, j = bad[0]
            raise NumericalError(
                f"no kernel weight at intermediate node ({i}, {j}); increase sample_radius (now {cfg.sample_radius})"
            )
        out.append(num / den)
    return out[0], out[1]


# --------------------------------------------------------------------------- demodulation


def demodulate(g: np.ndarray):
    """Sawtooth phase in [0, 1) and the number of zero-magnitude nodes (set to 0)."""
    g = np.asarray(g)
    if not np.all(np.isfinite(g)):
        raise NumericalError("phasor field contains non-finite values")
    ph = np.mod(np.angle(g) / (2.0 * np.pi), 1.0)
    ph = np.where(ph >= 1.0, 0.0, ph)
    zero = np.abs(g) == 0
    return np.where(zero, 0.0, ph), int(np.count_nonzero(zero))


def band(phase: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Centred band of relative width t around phase 0."""
    return (2.0 * np.minimum(phase, 1.0 - phase) <= t) & (t > 0)


def upsample_phase(phase: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic upsampling of a sawtooth phase field through its unit phasor."""
    if factor == 1:
        return phase
    ang = 2.0 * np.pi * phase
    c, s = upsample(np.cos(ang), factor), upsample(np.sin(ang), factor)
    return demodulate(c + 1j * s)[0]


def threshold_union(phi1, phi2, t1, t2, mesh: MeshHierarchy) -> BinaryField:
    r = mesh.s_f // mesh.s_i
    p1, p2 = upsample_phase(phi1, r), upsample_phase(phi2, r)
    th1 = np.clip(upsample_bilinear(np.asarray(t1, float), mesh.s_f), 0.0, 1.0)
    th2 = np.clip(upsample_bilinear(np.asarray(t2, float), mesh.s_f), 0.0, 1.0)
    return BinaryField(band(p1, th1) | band(p2, th2))


# --------------------------------------------------------------------------- pipeline


def field_digest(x: DesignField) -> str:
    h = hashlib.sha1()
    for a in (x.mu1, x.mu2, x.theta, x.rho):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:12]


def dehomogenize(x: DesignField, cfg: PhasorConfig | None = None, mesh: MeshHierarchy | None = None) -> BinaryField:
    cfg = PhasorConfig() if cfg is None else cfg
    mesh = MeshHierarchy.for_field(x, cfg) if mesh is None else mesh
    n1, n2, t1, t2 = lamination_directions(x)
    void = (x.rho <= cfg.rho_void) | (np.maximum(t1, t2) <= cfg.void_width)
    solid = ~void & (np.maximum(t1, t2) >= cfg.solid_width)
    if void.all() or solid.all():
        bits = np.full(mesh.fine_shape, 0 if void.all() else 1, dtype=np.uint8)
    else:
        g1, g2 = synthesize(x, (n1, n2), mesh, cfg)
        (ph1, z1), (ph2, z2) = demodulate(g1), demodulate(g2)
        if z1 or z2:
            logger.warning("%d zero-magnitude phasor nodes set to phase 0", z1 + z2)
        bits = threshold_union(ph1, ph2, t1, t2, mesh).bits
        rep = np.ones((mesh.s_f, mesh.s_f), dtype=bool)
        bits[np.kron(void, rep).astype(bool)] = 0
        bits[np.kron(solid, rep).astype(bool)] = 1
    return BinaryField(bits, f"design={field_digest(x)} phasor={cfg.digest()}", {"s_f": mesh.s_f})
