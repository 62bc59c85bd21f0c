"""Command-line interface.

Every command is a pure function of its configuration and input files, so
reruns are bit-identical. Exit codes: 0 success, 1 usage/config error,
2 data/format error, 3 numerical-degeneracy error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    MANIFEST_NAME,
    gen_powerlaw_phase,
    load_dataset,
    load_field,
    read_manifest,
    save_dataset,
    save_field,
    write_pgm,
)
from .errors import ConfigError, DegenerateInputError, DimensionError, FormatError
from .fieldcore import Grid2D, RealField
from .metrics import report
from .noise import NoiseModel, RngStream, measure
from .optics import DEFAULT_DEFOCUS, DEFAULT_WAVELENGTH, OpticalConfig
from .pipeline import (
    ExperimentConfig,
    ExperimentLock,
    LsExperiment,
    parse_config_text,
)
from .retrieval import approximant, gs_solve
from .spectral import psd2d, psd_slope, psd_diagonal


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _nonempty_guard(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} is not empty (pass --force to overwrite)")


def _parse_photons(raw: str) -> float:
    if raw.strip().lower() in ("inf", "infinity", "noiseless"):
        return float("inf")
    return float(raw)


def _optical_for(grid, args) -> OpticalConfig:
    return OpticalConfig(args.wavelength, args.defocus, grid)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    _nonempty_guard(out, args.force)
    grid = Grid2D.square(args.size, args.pitch)
    ds = gen_powerlaw_phase(grid, args.exponent, args.n, args.seed, args.fmax)
    save_dataset(ds, out, force=args.force)
    print(f"wrote {len(ds)} phase objects to {out}")
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out)
    _nonempty_guard(out, args.force)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(args.data)
    grid = ds.grid
    if args.dx is not None:
        grid = Grid2D(nx=grid.nx, ny=grid.ny, dx=args.dx, dy=args.dx)
    optical = _optical_for(grid, args)
    noise = NoiseModel(photons=args.photons, sigma=args.sigma, seed=args.seed)
    lines = []
    for index, (item_id, phase) in enumerate(ds.items):
        phase = RealField(grid, phase.values)
        m = measure(phase, optical, noise, RngStream(args.seed, index))
        save_field(m.g, out / f"g_{item_id}.lspr", precision="f64")
        save_field(m.g0, out / f"g0_{item_id}.lspr", precision="f64")
        lines.append(f"{item_id}\tg_{item_id}.lspr\tg\n")
        lines.append(f"{item_id}\tg0_{item_id}.lspr\tg0\n")
    (out / MANIFEST_NAME).write_text("".join(lines))
    print(f"wrote measurements for {len(ds)} objects to {out}")
    return 0


def _iter_measurements(directory: Path):
    for item_id, filename, role in read_manifest(directory):
        if role == "g":
            yield item_id, load_field(directory / filename)


def cmd_approximant(args) -> int:
    out = Path(args.out)
    _nonempty_guard(out, args.force)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    count = 0
    for item_id, g in _iter_measurements(Path(args.measurements)):
        optical = _optical_for(g.grid, args)
        xi = approximant(g, optical)
        save_field(xi, out / f"xi_{item_id}.lspr", precision="f64")
        lines.append(f"{item_id}\txi_{item_id}.lspr\txi\n")
        count += 1
    if not count:
        raise FormatError(f"no measurements found in {args.measurements}")
    (out / MANIFEST_NAME).write_text("".join(lines))
    print(f"wrote {count} approximants to {out}")
    return 0


def cmd_gs(args) -> int:
    out = Path(args.out)
    _nonempty_guard(out, args.force)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    count = 0
    for item_id, g in _iter_measurements(Path(args.measurements)):
        optical = _optical_for(g.grid, args)
        state = gs_solve(g, optical, args.iters)
        save_field(state.phase, out / f"gs_{item_id}.lspr", precision="f64")
        rows = ["iteration,residual\n"]
        rows += [f"{k},{r:.17g}\n" for k, r in enumerate(state.residuals)]
        (out / f"{item_id}_residuals.csv").write_text("".join(rows))
        lines.append(f"{item_id}\tgs_{item_id}.lspr\tgs\n")
        count += 1
    if not count:
        raise FormatError(f"no measurements found in {args.measurements}")
    (out / MANIFEST_NAME).write_text("".join(lines))
    print(f"wrote {count} retrievals ({args.iters} iterations) to {out}")
    return 0


def _load_experiment(args) -> LsExperiment:
    overrides = {}
    for kv in args.set or []:
        if "=" not in kv:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        key, _, value = kv.partition("=")
        overrides[key] = value
    if args.config:
        text = Path(args.config).read_text()
    else:
        manifest = Path(args.exp) / "manifest.txt"
        text = manifest.read_text() if manifest.exists() else ""
    config = parse_config_text(text, overrides=overrides)
    return LsExperiment(config, Path(args.exp))


def cmd_train(args) -> int:
    exp = _load_experiment(args)
    with ExperimentLock(exp.root):
        exp.generate_dataset()
        path = exp.train_role(args.role, q=args.q)
        exp.write_manifest()
    print(f"trained {args.role} -> {path}")
    return 0


def cmd_run_ls(args) -> int:
    exp = _load_experiment(args)
    reports = exp.run(with_l3=args.with_l3)
    for method in sorted(reports):
        agg = reports[method].aggregate()
        print(f"{method}: pcc {agg['pcc'][0]:.4f} +- {agg['pcc'][1]:.4f}, "
              f"psnr {agg['psnr_db'][0]:.2f} dB, ssim {agg['ssim'][0]:.4f}")
    print(f"experiment artifacts in {exp.root}")
    return 0


def cmd_sweep_q(args) -> int:
    qs = [float(v) for v in args.qs.split(",")]
    exp = _load_experiment(args)
    with ExperimentLock(exp.root):
        exp.generate_dataset()
        exp.prepare_inputs()
        results = exp.q_sweep(qs)
        exp.write_manifest()
    for q in qs:
        agg = results[q]["dnn_s"].aggregate()
        print(f"q={q:g}: dnn_s pcc {agg['pcc'][0]:.4f} +- {agg['pcc'][1]:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    exp = _load_experiment(args)
    if args.predictions:
        ids = [item_id for item_id, _ in exp.splits()["test"]]
        recons = [load_field(Path(args.predictions) / f"{item_id}.lspr")
                  for item_id in ids]
        refs = [field for _, field in exp.splits()["test"]]
        rep = report(recons, refs, peak=exp.config.dataset_fmax, ids=ids)
        out = Path(args.out or exp.reports_dir)
        out.mkdir(parents=True, exist_ok=True)
        rep.to_csv(out / "metrics_predictions.csv")
        agg = rep.aggregate()
        print(f"predictions: pcc {agg['pcc'][0]:.4f} +- {agg['pcc'][1]:.4f}")
        return 0
    reports = exp.evaluate(q=args.q, include_l3=args.with_l3)
    if args.pgm:
        pgm_dir = Path(args.pgm)
        pgm_dir.mkdir(parents=True, exist_ok=True)
        for item_id, phase in exp.splits()["test"]:
            write_pgm(phase.values, pgm_dir / f"ref_{item_id}.pgm")
    for method in sorted(reports):
        agg = reports[method].aggregate()
        print(f"{method}: pcc {agg['pcc'][0]:.4f} +- {agg['pcc'][1]:.4f}")
    return 0


def cmd_analyze_psd(args) -> int:
    directory = Path(args.infile)
    fields = []
    if (directory / MANIFEST_NAME).exists():
        names = [f for _, f, _ in read_manifest(directory)]
    else:
        names = sorted(p.name for p in directory.glob("*.lspr"))
    for name in names:
        fld = load_field(directory / name)
        if isinstance(fld, RealField):
            fields.append(fld)
    if not fields:
        raise FormatError(f"no real LSPR fields in {directory}")
    psd = psd2d(fields)
    save_field(psd, args.out, precision="f64")
    slope = psd_slope(psd)
    print(f"psd_slope={slope:.4f}")
    if args.diagonal:
        diag = psd_diagonal(psd)
        rows = ["bin,psd\n"] + [f"{k},{v:.17g}\n" for k, v in enumerate(diag)]
        Path(args.diagonal).write_text("".join(rows))
    if args.pgm:
        write_pgm(np.log10(psd.values + psd.values.max() * 1e-12), args.pgm)
    return 0


def cmd_export_pgm(args) -> int:
    fld = load_field(args.infile)
    values = np.abs(fld.values) if np.iscomplexobj(fld.values) else fld.values
    write_pgm(values, args.out)
    print(f"wrote {args.out} (scale in {args.out}.scale.txt)")
    return 0


# -- parser -------------------------------------------------------------------


def _add_optics_flags(p):
    p.add_argument("--lambda", dest="wavelength", type=float,
                   default=DEFAULT_WAVELENGTH, help="wavelength in meters")
    p.add_argument("--z", dest="defocus", type=float, default=DEFAULT_DEFOCUS,
                   help="defocus distance in meters")


def _add_experiment_flags(p):
    p.add_argument("--exp", required=True, help="experiment directory")
    p.add_argument("--config", help="key=value config file (defaults to the "
                                    "experiment manifest if present)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def build_parser() -> _Parser:
    parser = _Parser(prog="lsphase",
                     description="dual-band learned phase retrieval bench")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a power-law phase dataset")
    p.add_argument("--n", type=int, required=True, help="number of objects")
    p.add_argument("--size", type=int, default=64, help="grid size (even)")
    p.add_argument("--exponent", type=float, default=2.0,
                   help="radial PSD falloff exponent")
    p.add_argument("--fmax", type=float, default=float(np.pi),
                   help="phase stroke in radians")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pitch", type=float, default=144e-6,
                   help="pixel pitch in meters")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("simulate", help="simulate photon-limited measurements")
    p.add_argument("--data", required=True, help="phase dataset directory")
    _add_optics_flags(p)
    p.add_argument("--dx", type=float, help="override the stored pixel pitch")
    p.add_argument("--photons", type=_parse_photons, default=1.0,
                   help="mean photons/pixel/frame, or 'inf' for noiseless")
    p.add_argument("--sigma", type=float, default=0.0,
                   help="Gaussian read noise std in photon units")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("approximant", help="one-iteration retrieval of a "
                                           "measurement directory")
    p.add_argument("--measurements", required=True)
    _add_optics_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_approximant)

    p = sub.add_parser("gs", help="iterative retrieval with residual history")
    p.add_argument("--measurements", required=True)
    _add_optics_flags(p)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gs)

    p = sub.add_parser("train", help="train one network role")
    _add_experiment_flags(p)
    p.add_argument("--role", required=True, choices=("L", "H", "S", "L3"))
    p.add_argument("--q", type=float, help="filter exponent (H and S roles)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run-ls", help="full two-step protocol plus evaluation")
    _add_experiment_flags(p)
    p.add_argument("--with-l3", action="store_true",
                   help="also train the capacity-matched baseline")
    p.set_defaults(func=cmd_run_ls)

    p = sub.add_parser("sweep-q", help="retrain band-dependent networks over "
                                       "a list of filter exponents")
    _add_experiment_flags(p)
    p.add_argument("--qs", required=True, help="comma-separated q values")
    p.set_defaults(func=cmd_sweep_q)

    p = sub.add_parser("evaluate", help="metric reports for a trained "
                                        "experiment or a prediction directory")
    _add_experiment_flags(p)
    p.add_argument("--q", type=float)
    p.add_argument("--with-l3", action="store_true")
    p.add_argument("--predictions", help="directory of <id>.lspr predictions "
                                         "to score against the test split")
    p.add_argument("--out", help="report directory for --predictions mode "
                                 "(default: exp/reports)")
    p.add_argument("--pgm", help="also export the test references as PGMs here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-psd", help="average PSD, slope fit and "
                                           "diagonal cross-section")
    p.add_argument("--in", dest="infile", required=True,
                   help="directory of LSPR fields")
    p.add_argument("--out", required=True, help="output PSD LSPR file")
    p.add_argument("--diagonal", help="write the diagonal cross-section CSV")
    p.add_argument("--pgm", help="write a log-scaled PGM of the PSD")
    p.set_defaults(func=cmd_analyze_psd)

    p = sub.add_parser("export-pgm", help="export any LSPR field as 16-bit PGM")
    p.add_argument("infile")
    p.add_argument("out")
    p.set_defaults(func=cmd_export_pgm)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return 3
    except (FormatError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
