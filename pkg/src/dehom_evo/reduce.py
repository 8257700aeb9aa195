"""Principal-component compression of design-field populations.

Fields are folded first (density multiplied into the widths), giving an
``N_m x 3`` matrix of (w1, w2, theta) per design with elements in ``[ix, iy]``
C order. All three channels share one spatial basis ``phi`` (``N_m x N_c``),
so a reduced design is an ``N_c x 3`` coefficient matrix.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design import THETA_BOUND, DesignField
from .errors import ConfigError, NumericalError
from .io import read_csv, write_csv

CHANNELS = ("mu1", "mu2", "theta")
DEFAULT_EXPLAINED = 0.99


@dataclass(frozen=True)
class PcaBasis:
    phi: np.ndarray  # (N_m, N_c) orthonormal columns
    mean: np.ndarray  # (N_m, 3)
    explained: np.ndarray  # (N_c,) variance fractions
    shape: tuple  # (nx, ny)

    @property
    def n_c(self) -> int:
        return self.phi.shape[1]

    @property
    def basis_id(self) -> str:
        h = hashlib.sha1(np.ascontiguousarray(self.phi).tobytes())
        h.update(np.ascontiguousarray(self.mean).tobytes())
        return h.hexdigest()[:12]

    def mean_field(self) -> DesignField:
        return _to_field(self.mean, self.shape)

    def to_csv(self, directory) -> None:
        directory = Path(directory)
        rows = [
            (k, i, self.phi[i, k], self.explained[k]) for k in range(self.n_c) for i in range(self.phi.shape[0])
        ]
        write_csv(directory / "phi.csv", ("k", "i", "value", "explained"), rows)
        self.mean_field().to_csv(directory / "mean.csv")

    @classmethod
    def from_csv(cls, directory) -> "PcaBasis":
        directory = Path(directory)
        rows = read_csv(directory / "phi.csv")
        mean = DesignField.from_csv(directory / "mean.csv", mu_bounds=(0.0, 1.0), rho_bounds=(0.0, 1.0))
        n_c = max(int(r["k"]) for r in rows) + 1
        n_m = mean.mu1.size
        phi = np.zeros((n_m, n_c))
        explained = np.zeros(n_c)
        for r in rows:
            phi[int(r["i"]), int(r["k"])] = float(r["value"])
            explained[int(r["k"])] = float(r["explained"])
        return cls(phi, _flatten(mean), explained, mean.shape)


@dataclass(frozen=True)
class ReducedDesign:
    z: np.ndarray  # (N_c, 3)
    basis_id: str

    def vector(self) -> np.ndarray:
        return self.z.ravel()

    def to_csv(self, path) -> None:
        rows = [(k, ch, self.z[k, c]) for k in range(self.z.shape[0]) for c, ch in enumerate(CHANNELS)]
        write_csv(path, ("k", "channel", "value"), rows)

    @classmethod
    def from_csv(cls, path, basis_id: str = "") -> "ReducedDesign":
        rows = read_csv(path)
        n_c = max(int(r["k"]) for r in rows) + 1
        z = np.zeros((n_c, 3))
        for r in rows:
            z[int(r["k"]), CHANNELS.index(r["channel"])] = float(r["value"])
        return cls(z, basis_id)


def _flatten(x: DesignField) -> np.ndarray:
    f = x.folded()
    return np.stack([f.mu1.ravel(), f.mu2.ravel(), f.theta.ravel()], axis=1)


def _to_field(a: np.ndarray, shape) -> DesignField:
    return DesignField(
        a[:, 0].reshape(shape), a[:, 1].reshape(shape), a[:, 2].reshape(shape), None, (0.0, 1.0), (1.0, 1.0)
    )


def _spectrum(population):
    population = list(population)
    if len(population) < 2:
        raise ConfigError(f"PCA needs at least 2 designs, got {len(population)}")
    shape = population[0].shape
    if any(x.shape != shape for x in population):
        raise ConfigError("all designs in a population must share one grid")
    X = np.stack([_flatten(x) for x in population])  # (S, N_m, 3)
    mean = X.mean(axis=0)
    # channels act as extra observations of the same spatial variable
    A = (X - mean).transpose(1, 0, 2).reshape(X.shape[1], -1)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    # variance below round-off of the raw data counts as zero
    noise = 1e-24 * max(float(np.sum(X**2)), 1.0)
    return shape, mean, U, np.where(s**2 <= noise, 0.0, s**2), len(population)


def choose_n_components(population, target: float = DEFAULT_EXPLAINED) -> int:
    """Smallest N_c whose cumulative explained variance reaches ``target``."""
    _, _, _, var, n_pop = _spectrum(population)
    if var.sum() <= 0:
        raise NumericalError("population has zero variance in every direction")
    frac = np.cumsum(var) / var.sum()
    k = int(np.searchsorted(frac, target - 1e-12) + 1)
    return min(k, len(var), n_pop - 1)


def fit_pca(population, n_c: int | None = None) -> PcaBasis:
    shape, mean, U, var, n_pop = _spectrum(population)
    if n_c is None:
        n_c = choose_n_components(population)
    n_m = U.shape[0]
    if not 1 <= n_c <= min(n_m, n_pop - 1):
        raise ConfigError(f"n_c={n_c} must lie in [1, min(N_m={n_m}, population-1={n_pop - 1})]")
    total = var.sum()
    flat = np.flatnonzero(var[:n_c] == 0)
    if total == 0 or flat.size:
        which = "all directions" if total == 0 else f"components {flat.tolist()}"
        raise NumericalError(f"population has zero variance in {which}; reduce n_c or diversify the designs")
    # fix the sign of each column so the basis is reproducible
    phi = U[:, :n_c].copy()
    signs = np.sign(phi[np.argmax(np.abs(phi), axis=0), np.arange(n_c)])
    phi *= signs
    return PcaBasis(phi, mean, var[:n_c] / total, shape)


def project(basis: PcaBasis, x: DesignField) -> ReducedDesign:
    if x.shape != basis.shape:
        raise ConfigError(f"design grid {x.shape} does not match basis grid {basis.shape}")
    return ReducedDesign(basis.phi.T @ (_flatten(x) - basis.mean), basis.basis_id)


def reconstruct(basis: PcaBasis, z: ReducedDesign | np.ndarray) -> DesignField:
    zz = z.z if isinstance(z, ReducedDesign) else np.asarray(z, float)
    if zz.ndim == 1 and zz.size == 3 * basis.n_c:
        zz = zz.reshape(basis.n_c, 3)
    if zz.shape != (basis.n_c, 3):
        raise ConfigError(f"reduced design has shape {zz.shape}, basis expects {(basis.n_c, 3)}")
    a = basis.mean + basis.phi @ zz
    a[:, :2] = np.clip(a[:, :2], 0.0, 1.0)
    a[:, 2] = np.clip(a[:, 2], -THETA_BOUND, THETA_BOUND)
    return _to_field(a, basis.shape)
