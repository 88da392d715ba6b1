"""End-to-end run: simulate or load, compute stats, select the RoI, filter, reconstruct."""

import dataclasses
import logging
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .clustering import RoiSelector, roi_fraction
from .dataset import filter_dataset, load_dataset, save_dataset, selected_indices, write_selection
from .exceptions import PtyRoiError
from .export import save_png, write_grid, write_json, write_mask_csv, write_stat_csv
from .recon import epie_reconstruct, phase_image, phase_ssim, support_bbox
from .simulator import circular_probe, shepp_logan, simulate_scan, support_overlap
from .stats import DiffractionStats

log = logging.getLogger(__name__)

STAGES = ("stats", "clustering", "selection", "reconstruction")


@dataclass
class PipelineConfig:
    """Every knob of a run.  A config file sets any subset; the rest keep these defaults."""

    stack: Optional[str] = None
    positions: Optional[str] = None
    phantom_size: int = 256
    probe_diameter: int = 16
    frame_size: int = 22
    grid_rows: int = 40
    grid_cols: int = 40
    step: int = 6
    absorption: float = 0.3
    phase_strength: float = 0.5
    photons: Optional[float] = None
    pixel_size_um: float = 1.0
    filter: bool = True
    log: bool = True
    log_first: bool = True
    kmeans_iters: int = 10
    kmeans_init: str = "optimal"
    border: int = 0
    border_cols: Optional[int] = None
    reconstruct: bool = False
    recon_iters: int = 200
    object_step: float = 1.0
    seed: int = 0
    threads: int = 1
    png: bool = False
    out: str = "ptyroi_out"

    @property
    def simulated(self):
        return self.stack is None

    @classmethod
    def from_file(cls, path, **overrides):
        """Read a flat ``key = value`` file; ``#`` starts a comment.  Overrides win."""
        values = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value")
                key, raw = (part.strip() for part in line.split("=", 1))
                values[key.replace("-", "_")] = raw
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, mapping):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(fields[key], raw)
        return cls(**kwargs)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is not None:
                lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(f, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", ""):
        return None
    args = [a for a in typing.get_args(f.type) if a is not type(None)]
    kind = args[0] if args else f.type
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: expected a boolean, got {raw!r}")
    if kind in (int, float):
        return kind(text)
    return text


@dataclass
class TimingReport:
    durations: dict = field(default_factory=lambda: {name: 0.0 for name in STAGES})
    total: float = 0.0
    frames_in: int = 0
    frames_out: int = 0
    retained_fraction: float = 0.0
    roi_fraction: float = 0.0
    ssim: Optional[float] = None
    summary: dict = field(default_factory=dict)

    def as_dict(self):
        return dataclasses.asdict(self)


class PipelineError(PtyRoiError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)


def derive_seeds(seed, n=2):
    """Independent child seeds (simulation noise, frame order) from the root seed."""
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(n)]


class _Outputs:
    def __init__(self, out):
        self.out = Path(out)
        self.written = []

    def path(self, name):
        p = self.out / name
        self.written.append(p)
        return p

    def discard(self):
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def run_pipeline(cfg):
    """Run every stage for ``cfg`` and write its artifacts to ``cfg.out``.

    Returns a :class:`TimingReport`.  A failing stage raises
    :class:`PipelineError` naming it, after deleting the files this run wrote.
    """
    out = _Outputs(cfg.out)
    out.out.mkdir(parents=True, exist_ok=True)
    report = TimingReport()
    stage = "input"
    try:
        sim_seed, recon_seed = derive_seeds(cfg.seed)
        probe = circular_probe(cfg.frame_size, cfg.probe_diameter)
        phantom = None
        if cfg.simulated:
            phantom = shepp_logan(cfg.phantom_size, cfg.absorption, cfg.phase_strength)
            ds = simulate_scan(
                phantom, probe, cfg.grid_rows, cfg.grid_cols, cfg.step,
                photons=cfg.photons, seed=sim_seed, pixel_size_um=cfg.pixel_size_um, n_jobs=cfg.threads,
            )
            save_dataset(ds, out.path("stack.ptys"), out.path("positions.csv"))
            step_px = cfg.step
        else:
            ds = load_dataset(cfg.stack, cfg.positions)
            if cfg.reconstruct:
                probe = circular_probe(ds.frame_shape[0], cfg.probe_diameter)
            step_px = int(round(ds.step_size / cfg.pixel_size_um))
        report.frames_in = ds.n_frames

        t_start = time.perf_counter()
        stage = "stats"
        t0 = time.perf_counter()
        stats = DiffractionStats().fit_transform(ds.patterns)
        report.durations["stats"] = time.perf_counter() - t0

        stage = "clustering"
        t0 = time.perf_counter()
        selector = RoiSelector(
            smooth=cfg.filter, log_scale=cfg.log, log_first=cfg.log_first, max_iter=cfg.kmeans_iters,
            kmeans_init=cfg.kmeans_init,
            border=cfg.border, border_cols=cfg.border_cols,
        ).fit(stats, positions=ds, grid_shape=ds.grid_shape)
        report.durations["clustering"] = time.perf_counter() - t0

        stage = "selection"
        t0 = time.perf_counter()
        subset = filter_dataset(ds, selector.mask_)
        report.durations["selection"] = time.perf_counter() - t0

        stage = "reconstruction"
        t0 = time.perf_counter()
        full = roi = None
        if cfg.reconstruct:
            full = epie_reconstruct(ds, probe, cfg.recon_iters, cfg.object_step, step_px=step_px, seed=recon_seed)
            roi = epie_reconstruct(subset, probe, cfg.recon_iters, cfg.object_step, step_px=step_px, seed=recon_seed)
            crop = None
            if phantom is not None:
                crop = support_bbox(phantom.support[: full.shape[0], : full.shape[1]])
            report.ssim = phase_ssim(roi, full, crop)
        report.durations["reconstruction"] = time.perf_counter() - t0
        report.total = time.perf_counter() - t_start

        stage = "output"
        summary = selector.summary()
        report.frames_out = subset.n_frames
        report.retained_fraction = subset.n_frames / ds.n_frames
        report.roi_fraction = roi_fraction(selector.mask_)
        if phantom is not None:
            overlap = support_overlap(phantom, probe, ds.grid_shape, cfg.step)
            summary["support_overlap"] = int(overlap.sum())
            summary["support_recall"] = float((selector.mask_.cells & overlap).sum() / max(overlap.sum(), 1))
        if report.ssim is not None:
            summary["ssim"] = report.ssim
        report.summary = summary
        _write_artifacts(out, cfg, ds, subset, selector, full, roi)
        write_json(out.path("roi_summary.json"), summary)
        write_json(out.path("timing.json"), report.as_dict())
        (out.path("config.txt")).write_text(cfg.to_text())
    except PtyRoiError as exc:
        out.discard()
        raise PipelineError(stage, exc) from exc
    except (OSError, ValueError) as exc:
        out.discard()
        raise PipelineError(stage, exc) from exc
    log.info("retained %d of %d frames", report.frames_out, report.frames_in)
    return report


def _write_artifacts(out, cfg, ds, subset, selector, full, roi):
    r, c = ds.rows, ds.cols
    write_stat_csv(out.path("absorption.csv"), ds.index, r, c, selector.absorption_map_.at(r, c))
    write_stat_csv(out.path("com_magnitude.csv"), ds.index, r, c, selector.magnitude_map_.at(r, c))
    write_mask_csv(out.path("roi_mask.csv"), ds.index, r, c, selector.selected_)
    write_selection(out.path("selection.csv"), selected_indices(ds, selector.mask_))
    save_dataset(subset, out.path("filtered_stack.ptys"), out.path("filtered_positions.csv"))
    if full is not None:
        write_grid(out.path("full_phase.f32"), phase_image(full))
        write_grid(out.path("roi_phase.f32"), phase_image(roi))
        write_grid(out.path("full_modulus.f32"), np.abs(full.object_estimate))
        write_grid(out.path("roi_modulus.f32"), np.abs(roi.object_estimate))
    if cfg.png:
        save_png(out.path("absorption.png"), selector.absorption_map_.values)
        save_png(out.path("com_magnitude.png"), selector.magnitude_map_.values)
        save_png(out.path("roi_mask.png"), selector.mask_.cells.astype(float))
        if full is not None:
            save_png(out.path("full_phase.png"), phase_image(full))
            save_png(out.path("roi_phase.png"), phase_image(roi))

