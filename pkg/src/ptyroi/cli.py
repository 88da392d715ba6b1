"""Command line front end.

Exit codes: 0 success, 1 usage, 2 data or format problem, 3 numerical failure
(degenerate clustering, empty selection).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import RoiMask, adjust_border, intersect_roi, kmeans2, prepare_map, roi_fraction, union_roi
from .dataset import filter_dataset, load_dataset, save_dataset, selected_indices, write_selection
from .exceptions import GeometryError, PtyRoiError
from .export import (
    mask_to_grid,
    read_grid,
    read_mask_csv,
    read_stat_csv,
    save_png,
    write_grid,
    write_json,
    write_mask_csv,
    write_stat_csv,
)
from .pipeline import PipelineConfig, PipelineError, derive_seeds, run_pipeline
from .recon import epie_reconstruct, phase_image, ssim
from .simulator import circular_probe, shepp_logan, simulate_scan
from .stats import ABSORPTION, COM_MAGNITUDE, DiffractionStats, build_stat_map

log = logging.getLogger("ptyroi")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(parser):
    parser.add_argument("--config", help="key = value file; command line flags take precedence")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--threads", type=int, help="worker thread cap")
    parser.add_argument("--border", type=int, help="grow (+) or shrink (-) the RoI by this many scan steps")
    parser.add_argument("--border-cols", type=int, help="separate border along grid columns")
    parser.add_argument("--no-log", dest="log", action="store_const", const=False, help="cluster unlogged values")
    parser.add_argument("--no-filter", dest="filter", action="store_const", const=False, help="skip the 3x3 mean filter")
    parser.add_argument("--filter-first", dest="log_first", action="store_const", const=False,
                        help="apply the 3x3 filter before the log instead of after")
    parser.add_argument("--kmeans-iters", type=int, help="k-means iteration cap (default 10)")
    parser.add_argument("--kmeans-init", choices=("optimal", "minmax"), help="k-means centroid seeding")
    parser.add_argument("--png", action="store_const", const=True, help="also write PNG renderings")
    parser.add_argument("-v", "--verbose", action="store_true")


def _sim_args(parser):
    parser.add_argument("--phantom-size", type=int)
    parser.add_argument("--probe-diameter", type=int)
    parser.add_argument("--frame-size", type=int, help="probe window and detector frame size in pixels")
    parser.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"))
    parser.add_argument("--step", type=int, help="scan step in object pixels")
    parser.add_argument("--absorption", type=float)
    parser.add_argument("--phase-strength", type=float)
    parser.add_argument("--photons", type=float, help="mean photons per frame; enables Poisson noise")


def _dataset_args(parser, required=True):
    parser.add_argument("--stack", required=required, help="stack file")
    parser.add_argument("--positions", required=required, help="positions CSV")


def build_parser():
    parser = _Parser(prog="ptyroi", description="Region-of-interest selection for ptychography scans.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a simulated Shepp-Logan scan")
    _common(p)
    _sim_args(p)

    p = sub.add_parser("stats", help="absorption and CoM-magnitude maps")
    _common(p)
    _dataset_args(p)

    p = sub.add_parser("select", help="cluster the stat maps into an RoI mask")
    _common(p)
    p.add_argument("--absorption-csv", required=True)
    p.add_argument("--magnitude-csv", required=True)
    p.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"))

    p = sub.add_parser("filter", help="keep only frames selected by an RoI mask")
    _common(p)
    _dataset_args(p)
    p.add_argument("--mask", required=True, help="roi_mask.csv from 'select'")

    p = sub.add_parser("reconstruct", help="known-probe ePIE reconstruction")
    _common(p)
    _dataset_args(p)
    p.add_argument("--probe-diameter", type=int)
    p.add_argument("--step-px", type=int, help="scan step in object pixels")
    p.add_argument("--iterations", type=int)
    p.add_argument("--object-step", type=float)

    p = sub.add_parser("ssim", help="SSIM between two grid files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--crop", type=int, nargs=4, metavar=("R0", "R1", "C0", "C1"))

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _common(p)
    _sim_args(p)
    _dataset_args(p, required=False)
    p.add_argument("--reconstruct", action="store_const", const=True)
    p.add_argument("--iterations", dest="recon_iters", type=int)
    return parser


_CONFIG_KEYS = {
    "out", "seed", "threads", "border", "border_cols", "log", "filter", "log_first", "kmeans_iters", "kmeans_init", "png",
    "phantom_size", "probe_diameter", "frame_size", "step", "absorption", "phase_strength", "photons",
    "stack", "positions", "reconstruct", "recon_iters", "object_step",
}


def _config(args):
    overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS and v is not None}
    grid = getattr(args, "grid", None)
    if grid is not None and args.command in ("simulate", "pipeline"):
        overrides["grid_rows"], overrides["grid_cols"] = grid
    if getattr(args, "iterations", None) is not None:
        overrides["recon_iters"] = args.iterations
    if args.config:
        return PipelineConfig.from_file(args.config, **overrides)
    return PipelineConfig.from_mapping(overrides)


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = _config(args)
    out = _outdir(cfg)
    sim_seed, _ = derive_seeds(cfg.seed)
    phantom = shepp_logan(cfg.phantom_size, cfg.absorption, cfg.phase_strength)
    probe = circular_probe(cfg.frame_size, cfg.probe_diameter)
    ds = simulate_scan(
        phantom, probe, cfg.grid_rows, cfg.grid_cols, cfg.step,
        photons=cfg.photons, seed=sim_seed, pixel_size_um=cfg.pixel_size_um, n_jobs=cfg.threads,
    )
    save_dataset(ds, out / "stack.ptys", out / "positions.csv")
    if cfg.png:
        save_png(out / "phantom_phase.png", phantom.phase)
    print(f"wrote {ds.n_frames} frames of {ds.frame_shape[0]}x{ds.frame_shape[1]} to {out}")


def cmd_stats(args):
    cfg = _config(args)
    out = _outdir(cfg)
    ds = load_dataset(args.stack, args.positions)
    stats = DiffractionStats().fit_transform(ds.patterns)
    dead = stats[:, 0] <= 0
    for col, kind in ((0, ABSORPTION), (1, COM_MAGNITUDE)):
        raw = build_stat_map(np.where(dead, -np.inf, stats[:, col]), ds, ds.grid_shape, kind)
        stat_map = prepare_map(raw, cfg.filter, cfg.log, log_first=cfg.log_first)
        write_stat_csv(out / f"{kind}.csv", ds.index, ds.rows, ds.cols, stat_map.at(ds.rows, ds.cols))
        if cfg.png:
            save_png(out / f"{kind}.png", stat_map.values)
    print(f"wrote absorption.csv and com_magnitude.csv for {ds.n_frames} frames to {out}")


def cmd_select(args):
    cfg = _config(args)
    out = _outdir(cfg)
    ai, ar, ac, av = read_stat_csv(args.absorption_csv)
    mi, mr, mc, mv = read_stat_csv(args.magnitude_csv)
    if not (np.array_equal(ai, mi) and np.array_equal(ar, mr) and np.array_equal(ac, mc)):
        raise GeometryError("absorption and magnitude tables list different scan positions")
    grid = tuple(args.grid) if args.grid else (int(ar.max()), int(ac.max()))
    live = np.isfinite(av) & np.isfinite(mv)
    occupied = mask_to_grid(ar, ac, np.ones(len(ar), dtype=bool), grid)[1]
    masks = []
    for values, cluster in ((av, 0), (mv, 1)):
        result = kmeans2(values[live], cfg.kmeans_iters, cfg.kmeans_init)
        chosen = np.zeros(len(values), dtype=bool)
        chosen[live] = result.labels == cluster
        masks.append(RoiMask(mask_to_grid(ar, ac, chosen, grid)[0], occupied))
    union = union_roi(*masks)
    mask = adjust_border(union, cfg.border, cfg.border_cols)
    mask = RoiMask(mask.cells & mask_to_grid(ar, ac, live, grid)[0], occupied)
    selected = mask.cells[ar - 1, ac - 1]
    write_mask_csv(out / "roi_mask.csv", ai, ar, ac, selected)
    summary = {
        "occupied": int(occupied.sum()),
        "absorption_cluster": masks[0].count,
        "scatter_cluster": masks[1].count,
        "overlap": intersect_roi(*masks).count,
        "union": union.count,
        "border": cfg.border,
        "selected": mask.count,
        "fraction": roi_fraction(mask),
    }
    write_json(out / "roi_summary.json", summary)
    if cfg.png:
        save_png(out / "roi_mask.png", mask.cells.astype(float))
    print(
        f"absorption {summary['absorption_cluster']}, scatter {summary['scatter_cluster']}, "
        f"overlap {summary['overlap']}, selected {summary['selected']} ({summary['fraction']:.3f})"
    )


def cmd_filter(args):
    cfg = _config(args)
    out = _outdir(cfg)
    ds = load_dataset(args.stack, args.positions)
    mi, mr, mc, sel = read_mask_csv(args.mask)
    cells, occupied = mask_to_grid(mr, mc, sel, ds.grid_shape)
    mask = RoiMask(cells & ds.occupancy(), occupied | ds.occupancy())
    subset = filter_dataset(ds, mask)
    save_dataset(subset, out / "filtered_stack.ptys", out / "filtered_positions.csv")
    write_selection(out / "selection.csv", selected_indices(ds, mask))
    print(f"kept {subset.n_frames} of {ds.n_frames} frames")


def cmd_reconstruct(args):
    cfg = _config(args)
    out = _outdir(cfg)
    ds = load_dataset(args.stack, args.positions)
    probe = circular_probe(ds.frame_shape[0], cfg.probe_diameter)
    _, recon_seed = derive_seeds(cfg.seed)
    step_px = args.step_px if args.step_px is not None else int(round(ds.step_size / cfg.pixel_size_um))
    recon = epie_reconstruct(ds, probe, cfg.recon_iters, cfg.object_step, step_px=step_px, seed=recon_seed)
    phase = phase_image(recon)
    modulus = np.abs(recon.object_estimate)
    write_grid(out / "phase.f32", phase)
    write_grid(out / "modulus.f32", modulus)
    save_png(out / "phase.png", phase)
    save_png(out / "modulus.png", modulus)
    np.savetxt(out / "error_trace.txt", recon.error_trace)
    print(f"{recon.iterations} iterations, final misfit {recon.error_trace[-1]:.6g}")


def cmd_ssim(args):
    a = read_grid(args.a)
    b = read_grid(args.b)
    if args.crop:
        r0, r1, c0, c1 = args.crop
        a, b = a[r0:r1, c0:c1], b[r0:r1, c0:c1]
    print(f"{ssim(a, b):.6f}")


def cmd_pipeline(args):
    cfg = _config(args)
    report = run_pipeline(cfg)
    d = report.durations
    print(
        f"frames {report.frames_in} -> {report.frames_out} ({report.retained_fraction:.3f}); "
        + ", ".join(f"{k} {v:.3f}s" for k, v in d.items())
        + (f"; ssim {report.ssim:.6f}" if report.ssim is not None else "")
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "stats": cmd_stats,
    "select": cmd_select,
    "filter": cmd_filter,
    "reconstruct": cmd_reconstruct,
    "ssim": cmd_ssim,
    "pipeline": cmd_pipeline,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"ptyroi: {exc}", file=sys.stderr)
        return exc.exit_code
    except PtyRoiError as exc:
        print(f"ptyroi {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(f"ptyroi {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ptyroi {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
