"""Command-line entry point: ``dehom-evo <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
failure. Errors are reported on one stderr line prefixed ``dehom-evo: error[<kind>]:``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import load_phasor, load_problem, load_run
from .design import DesignField
from .errors import ConfigError, DehomError, NumericalError
from .io import read_csv, read_pgm, write_csv, write_pgm

logger = logging.getLogger("dehom_evo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
SEED_ENV = "DEHOM_EVO_SEED"


def _surrogate(path):
    from .homog import SurrogateModel, default_surrogate

    return default_surrogate() if path is None else SurrogateModel.from_csv(path)


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"path {p} does not exist")
    return p


def cmd_homogenize(args) -> None:
    from .homog import fit_surrogate, homogenization_grid

    if args.grid < 2 or args.order < 0 or args.order >= args.grid:
        raise ConfigError(f"need grid >= 2 and 0 <= order < grid, got grid={args.grid}, order={args.order}")
    samples = homogenization_grid(args.grid, args.resolution)
    model = fit_surrogate(samples, args.order, args.order)
    model.to_csv(args.out)
    logger.info("surrogate written to %s (max residual %.4g)", args.out, model.fit_residual)


def cmd_init(args) -> None:
    from .lowfid import generate_initial_population

    problem = load_problem(_existing(args.config))
    rows = read_csv(_existing(args.schedule))
    try:
        schedule = [(float(r["v0"]), float(r["lmin"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{args.schedule}: expected columns v0,lmin with numbers ({exc})") from None
    pop = generate_initial_population(problem, _surrogate(args.surrogate), schedule, args.iters, args.seed)
    out = Path(args.out)
    for k, x in enumerate(pop):
        x.to_csv(out / f"design_{k:03d}.csv")
    logger.info("%d designs written to %s", len(pop), out)


def cmd_dehom(args) -> None:
    from .phasor import PhasorConfig, dehomogenize

    x = DesignField.from_csv(_existing(args.design))
    cfg = load_phasor(_existing(args.config)) if args.config else PhasorConfig()
    field_ = dehomogenize(x, cfg)
    nx, ny = field_.shape
    header = {"nx": nx, "ny": ny, "s_f": cfg.s_f, "provenance": field_.provenance, "config_hash": cfg.digest()}
    write_pgm(args.out, field_.bits, header)
    logger.info("%dx%d field written to %s (solid fraction %.4f)", nx, ny, args.out, field_.bits.mean())


def cmd_extract(args) -> None:
    from .geom import REPORT_HEADER, export_dxf, extract_geometry, report_rows

    bits = read_pgm(_existing(args.field))
    contours, report = extract_geometry(bits.astype(float), args.level, args.m)
    export_dxf(contours, args.scale, args.out)
    if args.report:
        write_csv(args.report, REPORT_HEADER, report_rows(report))
    logger.info("%d loops written to %s", len(contours.loops), args.out)


def cmd_eval(args) -> None:
    from .hifi import RESULT_HEADER, FineProblem, evaluate_batch

    problem = load_problem(_existing(args.problem))
    paths = sorted(_existing(args.fields).glob("*.pgm"))
    if not paths:
        raise ConfigError(f"no .pgm fields in {args.fields}")
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    fields_ = [read_pgm(p) for p in paths]
    nx, ny = fields_[0].shape
    if nx % problem.nx or ny * problem.nx != nx * problem.ny:
        raise ConfigError(f"field size {nx}x{ny} is not a multiple of the {problem.nx}x{problem.ny} problem grid")
    fine = FineProblem.from_coarse(problem, nx // problem.nx)
    results = evaluate_batch(fine, fields_, metrics, args.workers)
    write_csv(args.out, RESULT_HEADER, [r.row(p.stem) for p, r in zip(paths, results)])
    logger.info("%d fields evaluated into %s", len(paths), args.out)


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return None
    try:
        seed = int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return seed


def cmd_run(args) -> None:
    from dataclasses import replace

    from .evolve import run

    problem, _, surrogate_path, cfg = load_run(_existing(args.config), _seed(args))
    if cfg.seed < 0:
        raise ConfigError(f"seed must be >= 0, got {cfg.seed}")
    over = {"generations": args.gens} if args.gens is not None else {}
    if args.workers is not None:
        over["workers"] = args.workers
    cfg = replace(cfg, **over)
    surrogate = _surrogate(surrogate_path)
    if args.resume:
        state = run(problem, surrogate, cfg=cfg, out=args.out, resume=_existing(args.resume))
    else:
        if not args.init or not args.out:
            raise ConfigError("run needs --init and --out (or --resume)")
        paths = sorted(_existing(args.init).glob("*.csv"))
        if not paths:
            raise ConfigError(f"no design .csv files in {args.init}")
        pop = [DesignField.from_csv(p) for p in paths]
        state = run(problem, surrogate, pop, cfg, out=args.out)
    logger.info("finished generation %d, hypervolume %.6g", state.generation, state.history[-1])


def _generations(run_dir: Path):
    gens = []
    for d in run_dir.glob("gen_*"):
        try:
            gens.append((int(d.name[4:]), d))
        except ValueError:
            continue
    return sorted(gens)


def cmd_plot(args) -> None:
    from .plotting import hypervolume_svg, pareto_svg, write_svg

    run_dir = _existing(args.run)
    hv_path = run_dir / "hypervolume.csv"
    if not hv_path.exists():
        raise ConfigError(f"{run_dir} has no hypervolume.csv")
    history = [float(r["hv"]) for r in read_csv(hv_path)]
    gens = _generations(run_dir)
    if not history or not gens:
        raise ConfigError(f"{run_dir} has an empty history")
    out = Path(args.out) if args.out else run_dir
    chosen = gens if args.all else [g for g in gens if args.gen is None or g[0] == args.gen][-1:]
    if not chosen:
        raise ConfigError(f"{run_dir} has no generation {args.gen}")
    for k, d in chosen:
        rows = read_csv(d / "population.csv")
        names = list(rows[0].keys())
        obj = names[names.index("violation") - 1]
        pts = [(float(r["vf"]), float(r[obj])) for r in rows]
        feas = [r["feasible"] == "1" for r in rows]
        write_svg(out / f"pareto_gen{k}.svg", pareto_svg(pts, feas, ("volume fraction", obj), f"generation {k}"))
    write_svg(out / "hypervolume.svg", hypervolume_svg(history))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dehom-evo", description="Evolutionary de-homogenization pipeline.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("homogenize", help="fit the lattice stiffness surrogate")
    s.add_argument("--grid", type=int, default=11)
    s.add_argument("--order", type=int, default=5)
    s.add_argument("--resolution", type=int, default=64, help="unit-cell pixels per side")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_homogenize)

    s = sub.add_parser("init", help="generate an initial population with the low-fidelity optimizer")
    s.add_argument("--config", required=True, help="problem config")
    s.add_argument("--schedule", required=True, help="CSV with columns v0,lmin")
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int, default=60)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--surrogate", help="surrogate CSV (default: packaged)")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("dehom", help="turn a design field into a binary pixel field")
    s.add_argument("--design", required=True)
    s.add_argument("--config", help="phasor config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dehom)

    s = sub.add_parser("extract", help="trace contours of a binary field into DXF")
    s.add_argument("--field", required=True)
    s.add_argument("--m", type=float, default=1.0, help="resampling factor")
    s.add_argument("--scale", type=float, default=1.0, help="length per pixel")
    s.add_argument("--level", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("eval", help="evaluate binary fields with the pixel solver")
    s.add_argument("--problem", required=True)
    s.add_argument("--fields", required=True, help="folder of .pgm fields")
    s.add_argument("--metrics", default="vf,compliance")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", help="run the evolutionary loop")
    s.add_argument("--config", required=True)
    s.add_argument("--init", help="folder of initial design CSVs")
    s.add_argument("--gens", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--resume", help="gen_<k> folder to continue from")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("plot", help="SVG plots of a run")
    s.add_argument("--run", required=True)
    s.add_argument("--out", help="output folder (default: the run folder)")
    s.add_argument("--gen", type=int, help="generation to plot (default: last)")
    s.add_argument("--all", action="store_true", help="plot every generation")
    s.set_defaults(func=cmd_plot)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"dehom-evo: error[{kind}]: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (NumericalError, ArithmeticError) as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except (DehomError, ValueError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
