"""A small fully connected variational autoencoder in plain numpy.

Encoder and decoder each have two tanh hidden layers. Inputs are standardized
per dimension before training; the statistics live in the model so decoded
outputs come back in the original units. Gradients are written out by hand and
parameters are updated with Adam.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

MIN_ELITE = 8
SD_FLOOR = 1e-8


@dataclass(frozen=True)
class VaeConfig:
    hidden: tuple = (64, 32)
    n_lat: int = 8
    beta: float = 1e-3
    epochs: int = 400
    lr: float = 1e-3
    batch: int = 32
    jitter: float = 0.1

    def __post_init__(self):
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ConfigError(f"hidden must be two positive sizes, got {self.hidden}")
        if self.n_lat < 1 or self.epochs < 1 or self.batch < 1:
            raise ConfigError("n_lat, epochs and batch must be positive")
        if self.beta < 0 or self.lr <= 0 or self.jitter < 0:
            raise ConfigError("beta and jitter must be >= 0 and lr > 0")


@dataclass
class VaeModel:
    params: list  # [W, b] pairs: three encoder layers then three decoder layers
    n_lat: int
    beta: float
    x_mean: np.ndarray
    x_sd: np.ndarray
    history: list = field(default_factory=list)  # per epoch (total, recon, kl)

    @property
    def dim(self) -> int:
        return self.params[0].shape[0]

    @property
    def final_losses(self):
        return self.history[-1] if self.history else None

    def standardize(self, x):
        return (np.asarray(x, float) - self.x_mean) / self.x_sd

    def encode(self, x):
        """Latent means and log-variances of raw (unstandardized) inputs."""
        out, _ = _encode(self.params, self.standardize(np.atleast_2d(x)))
        return out[:, : self.n_lat], out[:, self.n_lat :]

    def decode(self, z):
        """Raw-unit reconstruction of latent points."""
        y, _ = _decode(self.params, np.atleast_2d(z))
        return y * self.x_sd + self.x_mean


def _glorot(rng, n_in, n_out):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, (n_in, n_out))


def init_params(dim: int, cfg: VaeConfig, rng) -> list:
    h1, h2 = cfg.hidden
    sizes = [(dim, h1), (h1, h2), (h2, 2 * cfg.n_lat), (cfg.n_lat, h2), (h2, h1), (h1, dim)]
    params = []
    for n_in, n_out in sizes:
        params += [_glorot(rng, n_in, n_out), np.zeros(n_out)]
    return params


def _mlp(params, x):
    """Two tanh layers and a linear head; returns output and activations."""
    acts = [x]
    for k in range(2):
        acts.append(np.tanh(acts[-1] @ params[2 * k] + params[2 * k + 1]))
    return acts[-1] @ params[4] + params[5], acts


def _mlp_back(params, acts, g):
    """Gradients of the three-layer block; returns (param grads, input grad)."""
    grads = [None] * 6
    grads[4], grads[5] = acts[2].T @ g, g.sum(axis=0)
    g = g @ params[4].T
    for k in (1, 0):
        g = g * (1.0 - acts[k + 1] ** 2)
        grads[2 * k], grads[2 * k + 1] = acts[k].T @ g, g.sum(axis=0)
        g = g @ params[2 * k].T
    return grads, g


def _encode(params, x):
    return _mlp(params[:6], x)


def _decode(params, z):
    return _mlp(params[6:], z)


def loss_terms(params, x, eps, beta):
    """Reconstruction (mean squared error), KL per sample, and total loss."""
    n_lat = eps.shape[1]
    enc, _ = _encode(params, x)
    mu, lv = enc[:, :n_lat], enc[:, n_lat:]
    z = mu + np.exp(0.5 * lv) * eps
    y, _ = _decode(params, z)
    recon = float(np.mean((y - x) ** 2))
    kl = float(np.mean(-0.5 * np.sum(1.0 + lv - mu**2 - np.exp(lv), axis=1)))
    return recon, kl, recon + beta * kl


def loss_and_grads(params, x, eps, beta):
    """Total loss and its gradient for a fixed noise draw ``eps``."""
    n, n_lat = eps.shape
    enc, enc_acts = _encode(params, x)
    mu, lv = enc[:, :n_lat], enc[:, n_lat:]
    sd = np.exp(0.5 * lv)
    z = mu + sd * eps
    y, dec_acts = _decode(params, z)
    diff = y - x
    recon = float(np.mean(diff**2))
    kl = float(np.mean(-0.5 * np.sum(1.0 + lv - mu**2 - sd**2, axis=1)))

    dec_grads, dz = _mlp_back(params[6:], dec_acts, 2.0 * diff / diff.size)
    dmu = dz + beta * mu / n
    dlv = dz * eps * 0.5 * sd + beta * 0.5 * (sd**2 - 1.0) / n
    enc_grads, _ = _mlp_back(params[:6], enc_acts, np.hstack([dmu, dlv]))
    return (recon, kl, recon + beta * kl), enc_grads + dec_grads


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1, c2 = 1.0 - self.b1**self.t, 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _as_matrix(elite) -> np.ndarray:
    rows = [np.asarray(e.vector() if hasattr(e, "vector") else e, float).ravel() for e in elite]
    return np.array(rows)


def train_vae(elite, cfg: VaeConfig = VaeConfig(), rng=None) -> VaeModel:
    """Fit a VAE to the elite vectors; deterministic for a given generator."""
    X = _as_matrix(elite)
    if len(X) < MIN_ELITE:
        raise ConfigError(f"VAE training needs at least {MIN_ELITE} elites, got {len(X)}")
    rng = np.random.default_rng(0) if rng is None else rng
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < SD_FLOOR, 1.0, sd)
    Xs = (X - mean) / sd
    params = init_params(X.shape[1], cfg, rng)
    opt = Adam(params, cfg.lr)
    model = VaeModel(params, cfg.n_lat, cfg.beta, mean, sd)
    n = len(Xs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        tot = np.zeros(3)
        for start in range(0, n, cfg.batch):
            xb = Xs[order[start : start + cfg.batch]]
            eps = rng.standard_normal((len(xb), cfg.n_lat))
            losses, grads = loss_and_grads(params, xb, eps, cfg.beta)
            if not np.isfinite(losses[2]):
                raise NumericalError(f"VAE loss became non-finite at epoch {epoch}")
            opt.step(params, grads)
            tot += np.array(losses) * len(xb)
        r, k, t = tot / n
        model.history.append((float(t), float(r), float(k)))
    logger.debug("VAE trained: first loss %.4g, final %.4g", model.history[0][0], model.history[-1][0])
    return model


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation; falls back to linear for (anti)parallel or tiny vectors."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return (1.0 - t) * a + t * b
    cos = np.clip(a @ b / (na * nb), -1.0, 1.0)
    om = np.arccos(cos)
    s = np.sin(om)
    if s < 1e-8:
        return (1.0 - t) * a + t * b
    return (np.sin((1.0 - t) * om) * a + np.sin(t * om) * b) / s


def crossover(model: VaeModel, elite, n_offspring: int, jitter: float = 0.1, rng=None, t=None):
    """Offspring vectors from latent interpolation of random parent pairs.

    Returns an ``(n_offspring, dim)`` array in the elite's raw units.
    """
    X = _as_matrix(elite)
    if len(X) < 2:
        raise ConfigError(f"crossover needs at least 2 elites, got {len(X)}")
    rng = np.random.default_rng(0) if rng is None else rng
    mu, _ = model.encode(X)
    out = np.empty((n_offspring, X.shape[1]))
    for k in range(n_offspring):
        i, j = rng.choice(len(X), size=2, replace=False)
        tk = rng.uniform(0.0, 1.0) if t is None else t
        z = slerp(mu[i], mu[j], tk) + jitter * rng.standard_normal(model.n_lat)
        out[k] = model.decode(z)[0]
    return out


def sample_prior(model: VaeModel, n: int, rng=None) -> np.ndarray:
    rng = np.random.default_rng(0) if rng is None else rng
    return model.decode(rng.standard_normal((n, model.n_lat)))
