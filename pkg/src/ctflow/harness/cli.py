"""Command line entry point: ``ctflow <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 one or more failed cells.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..store import StoreError
from .config import ConfigError, ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_CELL = 0, 2, 3

log = logging.getLogger("ctflow")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_yaml(args.config) if args.config else ExperimentConfig()
    d = cfg.to_dict()
    for key in ("grs", "theta0", "I0", "cnr", "methods"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if getattr(args, "iterations", None):
        d["train"] = {**d["train"], "iterations": args.iterations}
    if getattr(args, "output_dir", None):
        d["output_dir"] = args.output_dir
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    return ExperimentConfig.from_dict(d)


def _single_cell(cfg: ExperimentConfig) -> dict:
    cells = cfg.cells()
    if len(cells) != 1:
        raise ConfigError(f"this command needs exactly one cell, the config yields {len(cells)}")
    return cells[0]


def cmd_generate(args):
    from .sweep import ground_truth, output_root

    cfg = _config(args)
    movie = ground_truth(cfg.cells()[0], output_root(cfg))
    print(f"ground truth: {movie.nt} frames on {movie.grid.nx}x{movie.grid.ny}")
    return EXIT_OK


def cmd_scan(args):
    from .sweep import ground_truth, measured_sinogram, output_root

    cfg = _config(args)
    root = output_root(cfg)
    for cell in cfg.cells():
        sino = measured_sinogram(cell, ground_truth(cell, root), root)
        print(f"sinogram grs={cell['scan']['grs']:g} theta0={cell['scan']['theta0']:g}: {sino.g.shape}")
    return EXIT_OK


def cmd_recon(args):
    from .sweep import fbp_movie, ground_truth, measured_sinogram, output_root

    cfg = _config(args)
    root = output_root(cfg)
    for cell in cfg.cells():
        movie = fbp_movie(cell, measured_sinogram(cell, ground_truth(cell, root), root), root)
        print(f"recon grs={cell['scan']['grs']:g}: {movie.nt} frames")
    return EXIT_OK


def cmd_train(args):
    from .sweep import fbp_movie, ground_truth, measured_sinogram, output_root, trained_network, training_problem

    cfg = _config(args)
    root = output_root(cfg)
    cell = _single_cell(cfg)
    if cell["method"] == "fbp":
        raise ConfigError("method fbp has nothing to train")
    truth = ground_truth(cell, root)
    sino = measured_sinogram(cell, truth, root)
    recon = fbp_movie(cell, sino, root) if cell["method"] == "imageflow" else None
    problem = training_problem(cell, sino if cell["method"] == "sinoflow" else None, recon)
    trained_network(cell, problem, root / "cells" / cell["cell_id"])
    print(f"trained cell {cell['cell_id']}")
    return EXIT_OK


def cmd_evaluate(args):
    from .sweep import run_cell, output_root

    cfg = _config(args)
    rec = run_cell(_single_cell(cfg), output_root(cfg), cfg.hash)
    print(json.dumps({k: v for k, v in rec.to_dict().items() if k != "error"}, indent=2))
    return EXIT_OK if rec.status == "ok" else EXIT_CELL


def cmd_sweep(args):
    from .plots import emit_plots
    from .sweep import run_sweep

    cfg = _config(args)
    res = run_sweep(cfg, workers=args.workers)
    emit_plots(res.records, res.root / "plots")
    for r in res.records:
        print(f"{r.status:6s} {r.method:9s} {r.condition:28s} theta0={r.theta0:<5g} conc_rmse={r.conc_rmse} "
              f"vel_rmse={r.vel_rmse}")
    if res.failures:
        print(f"{len(res.failures)} cell(s) failed", file=sys.stderr)
        return EXIT_CELL
    return EXIT_OK


def cmd_plot(args):
    from .plots import emit_plots
    from .sweep import collect_records

    records = collect_records(args.root)
    if not records:
        raise ConfigError(f"no records under {args.root}")
    for f in emit_plots(records, args.out or Path(args.root) / "plots"):
        print(f)
    return EXIT_OK


def cmd_threshold(args):
    from .metrics import StrouhalInputs, strouhal_threshold

    f = strouhal_threshold(StrouhalInputs(args.st, args.omega, args.lc_over_h, args.H, args.u))
    print(f"gantry threshold: {f:.4f} Hz")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def experiment(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("-c", "--config", help="YAML experiment config (desk defaults when omitted)")
        p.add_argument("--grs", type=float, nargs="+")
        p.add_argument("--theta0", type=float, nargs="+")
        p.add_argument("--I0", type=float, nargs="+")
        p.add_argument("--cnr", type=float, nargs="+")
        p.add_argument("--methods", nargs="+")
        p.add_argument("--iterations", type=int)
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        p.set_defaults(fn=fn)
        return p

    experiment("generate", cmd_generate, "synthesize or ingest the ground-truth movie")
    experiment("scan", cmd_scan, "simulate sinograms for every scan condition")
    experiment("recon", cmd_recon, "FBP movies for every scan condition")
    experiment("train", cmd_train, "train the network of a single-cell config")
    experiment("evaluate", cmd_evaluate, "run and score a single-cell config")
    p = experiment("sweep", cmd_sweep, "run all cells, then write plots")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("plot", help="boxplots and CSV from stored records")
    p.add_argument("root")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("threshold", help="Strouhal gantry-speed threshold")
    p.add_argument("--st", type=float, default=0.37)
    p.add_argument("--omega", type=float, default=7.33, help="flow angular frequency [1/s]")
    p.add_argument("--lc-over-h", type=float, default=5.0)
    p.add_argument("--H", type=float, default=1.5, help="cm")
    p.add_argument("--u", type=float, default=30.0, help="cm/s")
    p.set_defaults(fn=cmd_threshold)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, StoreError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
