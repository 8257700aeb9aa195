"""Plain ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Every parse error names the file,
the line and the key. Relative paths are resolved against the file's folder.

Problem files::

    grid = 40 20
    supports = left:xy; right:xy
    loads = 20 20 : 0 -1
    v0 = 0.4
    lmin = 0.1
    mode = free-widths

A support is an edge name or a box ``x0 y0 x1 y1`` (a point may be given as
``x y``), optionally followed by ``:components``. A load is a location in the
same forms followed by ``: fx fy``. Coordinates are coarse-grid units.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .boundary import EDGES, Load, Support, edge_box
from .errors import ConfigError
from .evolve import OPT_OBJECTIVES, EvolveConfig
from .lowfid import CoarseProblem
from .mutation import MutationConfig
from .phasor import PhasorConfig
from .vae import VaeConfig

PROBLEM_KEYS = ("grid", "supports", "loads", "v0", "lmin", "lmax", "mode", "p", "mu_min", "mu_max", "rho_min")
PHASOR_KEYS = tuple(f.name for f in fields(PhasorConfig))
VAE_KEYS = tuple(f"vae_{f.name}" for f in fields(VaeConfig))
MUTATION_KEYS = tuple(f"mutation_{f.name}" for f in fields(MutationConfig))
RUN_KEYS = (
    ("problem", "phasor", "surrogate", "generations", "seed", "objective", "n_offspring", "n_c")
    + ("stiffness_constraint", "workers")
    + VAE_KEYS
    + MUTATION_KEYS
)


class Config:
    """Parsed ``key = value`` pairs remembering where each came from."""

    def __init__(self, path, allowed=None):
        self.path = Path(path)
        self.entries: dict[str, tuple[str, int]] = {}
        try:
            text = self.path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {self.path}: {exc.strerror or exc}") from exc
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"{self.path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            if allowed is not None and key not in allowed:
                raise ConfigError(f"{self.path}:{lineno}: unknown key '{key}'")
            if key in self.entries:
                raise ConfigError(f"{self.path}:{lineno}: key '{key}' given twice")
            self.entries[key] = (value.strip(), lineno)

    def __contains__(self, key):
        return key in self.entries

    def where(self, key) -> str:
        return f"{self.path}:{self.entries[key][1]}: key '{key}'"

    def raw(self, key, default=None):
        return self.entries[key][0] if key in self.entries else default

    def get(self, key, conv, default=None):
        if key not in self.entries:
            return default
        try:
            return conv(self.entries[key][0])
        except (ValueError, TypeError, ConfigError) as exc:
            raise ConfigError(f"{self.where(key)}: {exc}") from None

    def require(self, key, conv):
        if key not in self.entries:
            raise ConfigError(f"{self.path}: missing required key '{key}'")
        return self.get(key, conv)

    def path_value(self, key, must_exist=True):
        value = self.raw(key)
        if value is None:
            return None
        p = Path(value)
        if not p.is_absolute():
            p = self.path.parent / p
        if must_exist and not p.exists():
            raise ConfigError(f"{self.where(key)}: path {p} does not exist")
        return p


def to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _numbers(s: str, count=None) -> tuple:
    vals = tuple(float(t) for t in s.replace(",", " ").split())
    if count is not None and len(vals) not in count:
        raise ValueError(f"expected {' or '.join(map(str, count))} numbers, got {len(vals)}")
    return vals


def _location(s: str, nx: int, ny: int) -> tuple:
    s = s.strip()
    if s in EDGES:
        return edge_box(s, nx, ny)
    v = _numbers(s, (2, 4))
    return v + v if len(v) == 2 else v


def parse_supports(s: str, nx: int, ny: int) -> tuple:
    out = []
    for item in filter(None, (t.strip() for t in s.split(";"))):
        loc, _, comps = item.partition(":")
        comps = comps.strip() or "xy"
        if comps not in ("x", "y", "xy"):
            raise ValueError(f"support components must be x, y or xy, got {comps!r}")
        out.append(Support(_location(loc, nx, ny), comps))
    if not out:
        raise ValueError("no supports given")
    return tuple(out)


def parse_loads(s: str, nx: int, ny: int) -> tuple:
    out = []
    for item in filter(None, (t.strip() for t in s.split(";"))):
        loc, sep, force = item.partition(":")
        if not sep:
            raise ValueError(f"load {item!r} needs a ': fx fy' force")
        out.append(Load(_location(loc, nx, ny), _numbers(force, (2,))))
    if not out:
        raise ValueError("no loads given")
    return tuple(out)


def load_problem(path) -> CoarseProblem:
    cfg = Config(path, PROBLEM_KEYS)
    nx, ny = cfg.require("grid", lambda s: tuple(int(t) for t in s.split()))
    kw = {k: cfg.get(k, float) for k in ("v0", "lmin", "lmax", "p", "mu_min", "mu_max", "rho_min") if k in cfg}
    if "mode" in cfg:
        kw["mode"] = cfg.raw("mode")
    try:
        return CoarseProblem(
            nx,
            ny,
            cfg.require("supports", lambda s: parse_supports(s, nx, ny)),
            cfg.require("loads", lambda s: parse_loads(s, nx, ny)),
            **kw,
        )
    except ConfigError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None


def _typed(cls, cfg: Config, prefix: str = "") -> dict:
    kw = {}
    for f in fields(cls):
        key = prefix + f.name
        if key not in cfg:
            continue
        if f.name == "hidden":
            kw[f.name] = cfg.get(key, lambda s: tuple(int(t) for t in s.split()))
        elif f.type in ("int", int):
            kw[f.name] = cfg.get(key, int)
        else:
            kw[f.name] = cfg.get(key, float)
    return kw


def phasor_from(cfg: Config) -> PhasorConfig:
    try:
        return PhasorConfig(**_typed(PhasorConfig, cfg))
    except ConfigError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None


def load_phasor(path) -> PhasorConfig:
    return phasor_from(Config(path, PHASOR_KEYS))


def load_run(path, seed_override=None):
    """Parse a run file into ``(problem, phasor, surrogate_path, EvolveConfig)``."""
    cfg = Config(path, RUN_KEYS)
    problem = load_problem(cfg.path_value("problem") or _missing(cfg, "problem"))
    phasor_path = cfg.path_value("phasor")
    phasor = load_phasor(phasor_path) if phasor_path else PhasorConfig()
    surrogate = cfg.path_value("surrogate")
    objective = cfg.raw("objective", "u_max")
    if objective not in OPT_OBJECTIVES:
        raise ConfigError(f"{cfg.where('objective')}: must be one of {', '.join(OPT_OBJECTIVES)}")
    seed = cfg.get("seed", int, 0) if seed_override is None else seed_override
    try:
        vae = VaeConfig(**_typed(VaeConfig, cfg, "vae_"))
        mutation = MutationConfig(**_typed(MutationConfig, cfg, "mutation_"))
        evo = EvolveConfig(
            generations=cfg.get("generations", int, 15),
            seed=seed,
            objective=objective,
            n_offspring=cfg.get("n_offspring", int),
            n_c=cfg.get("n_c", int),
            stiffness_constraint=cfg.get("stiffness_constraint", to_bool, False),
            workers=cfg.get("workers", int, 1),
            vae=vae,
            mutation=mutation,
            phasor=phasor,
        )
    except ConfigError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None
    return problem, phasor, surrogate, evo


def _missing(cfg: Config, key):
    raise ConfigError(f"{cfg.path}: missing required key '{key}'")
