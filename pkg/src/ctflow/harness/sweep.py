"""Cell-by-cell experiment runner with content-hash resume.

Layout under the output root::

    config.yaml                      verbatim experiment config
    cache/truth/<hash>/              ground-truth movie
    cache/sino/<hash>/               measured sinogram
    cache/recon/<hash>/              FBP movie
    cells/<cell_id>/record.json      MetricsRecord + full cell config
    cells/<cell_id>/train/           checkpoint and loss history
    cells/<cell_id>/series/          section velocity time series
"""
from __future__ import annotations

import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ctsim import FanBeamGeometry, acquire, load_sinogram, save_sinogram
from ..flowgen import FieldMovie, FlowParams, load_field_movie, save_field_movie, synthesize_channel_case
from ..geometry import GridSpec, build_bifurcation_mask, geometry_from_dict, locate_cross_sections
from ..pinn import TrainConfig, TrainingProblem, evaluate_fields, load_checkpoint, make_network, train
from ..recon import ReconConfig, reconstruct_movie
from ..store import StoreError, config_hash, write_artifact
from .config import ExperimentConfig, scan_protocol
from .metrics import MetricsRecord, concentration_rmse, decile_errors, outlet_ratio, velocity_timeseries

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CTFLOW_OUTPUT_ROOT"


def output_root(config: ExperimentConfig, root=None) -> Path:
    if root is not None:
        return Path(root)
    base = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(config.output_dir)
    return out if out.is_absolute() or not base else Path(base) / out


# ------------------------------------------------------------------ cached stages


def _truth_key(cell: dict) -> dict:
    return {k: cell[k] for k in ("geometry", "flow", "grid", "ground_truth")}


def _grid(cell) -> GridSpec:
    return GridSpec.square(int(cell["grid"]["n"]), float(cell["grid"]["fov"]))


def ground_truth(cell: dict, root: Path) -> FieldMovie:
    path = root / "cache" / "truth" / config_hash(_truth_key(cell))
    try:
        return load_field_movie(path)
    except StoreError:
        pass
    gt_cfg = cell["ground_truth"]
    params = FlowParams(**cell["flow"])
    if gt_cfg["source"] == "file":
        movie = load_field_movie(gt_cfg["path"])
    else:
        movie = synthesize_channel_case(params, _grid(cell), int(gt_cfg["nt"]),
                                        duration=float(gt_cfg["duration_s"]) / params.time_scale,
                                        geometry=geometry_from_dict(cell["geometry"]),
                                        spinup=float(gt_cfg.get("spinup", 0.0)))
    save_field_movie(movie, path, provenance={"truth_key": _truth_key(cell)})
    return load_field_movie(path)


def _scan_key(cell: dict) -> dict:
    return {"truth": config_hash(_truth_key(cell)), "fan": cell["fan"], "scan": cell["scan"]}


def measured_sinogram(cell: dict, truth: FieldMovie, root: Path):
    path = root / "cache" / "sino" / config_hash(_scan_key(cell))
    try:
        return load_sinogram(path)
    except StoreError:
        pass
    sino = acquire(truth, FanBeamGeometry(**cell["fan"]), scan_protocol(cell["scan"]))
    save_sinogram(sino, path, provenance={"scan_key": _scan_key(cell)})
    return load_sinogram(path)


def fbp_movie(cell: dict, sino, root: Path) -> FieldMovie:
    path = root / "cache" / "recon" / config_hash(_scan_key(cell))
    try:
        return load_field_movie(path)
    except StoreError:
        pass
    p = FlowParams(**cell["flow"])
    cfg = ReconConfig(_grid(cell), views_per_frame=sino.geometry.views_per_rotation, u_c=p.u_c, H=p.H)
    movie = reconstruct_movie(sino, cfg)
    save_field_movie(movie, path, provenance={"scan_key": _scan_key(cell)})
    return load_field_movie(path)


def train_config(cell: dict) -> TrainConfig:
    p = FlowParams(**cell["flow"])
    return TrainConfig(**{"seed": cell["seed"], **cell["train"], "mode": cell["method"], "Re": p.Re})


def training_problem(cell: dict, sino=None, recon=None) -> TrainingProblem:
    p = FlowParams(**cell["flow"])
    grid = _grid(cell)
    half = 0.5 * grid.fov_x
    return TrainingProblem(geometry_from_dict(cell["geometry"]), p.time_scale, (0.0, cell["window_s"] / p.time_scale),
                           (half, half), grid.pixel_size, recon=recon, sinogram=sino)


def trained_network(cell: dict, problem: TrainingProblem, cell_dir: Path):
    tdir = cell_dir / "train"
    final = tdir / "final.pt"
    cfg = train_config(cell)
    if final.exists():
        net, blob = load_checkpoint(final)
        if blob.get("train_config") == cfg.to_dict():
            log.info("cell %s: reusing trained network", cell["cell_id"])
            return net
    net = make_network(problem, cfg)
    return train(net, problem, cfg, checkpoint_dir=tdir).net


# ------------------------------------------------------------------ evaluation


def _window_frames(truth: FieldMovie, cell: dict) -> np.ndarray:
    t_end = cell["window_s"] / truth.time_scale
    return np.nonzero(truth.times <= t_end + 1e-9)[0]


def evaluate_cell(cell: dict, truth: FieldMovie, source, cell_dir: Path | None = None) -> MetricsRecord:
    """Metrics of a network (or an FBP movie for method 'fbp') against the truth."""
    geom = geometry_from_dict(cell["geometry"])
    grid = truth.grid
    frames = _window_frames(truth, cell)
    times = truth.times[frames]
    roi = truth.roi if truth.roi is not None else build_bifurcation_mask(geom, grid).roi
    X, Y = grid.mesh()
    scan = cell["scan"]
    rec = MetricsRecord(cell_id=cell["cell_id"], method=cell["method"], grs=scan["grs"], theta0=scan["theta0"],
                        I0=scan["I0"], cnr=scan["cnr"], duty_cycle=scan["duty_cycle"],
                        pulse_width=scan["pulse_width"], config_hash=cell["cell_id"])
    truth_c = [np.asarray(truth.c[k], float) for k in frames]
    if cell["method"] == "fbp":
        near = [int(np.abs(source.times - t).argmin()) for t in times]
        rec.conc_rmse = concentration_rmse([source.c[k] for k in near], truth_c, roi)
        return rec

    xs, ys = X[roi] / truth.H, Y[roi] / truth.H
    pred_c = []
    for t in times:
        f = evaluate_fields(source, np.column_stack([np.full(len(xs), t), xs, ys]))
        img = np.zeros(roi.shape)
        img[roi] = f["c"]
        pred_c.append(img)
    rec.conc_rmse = concentration_rmse(pred_c, truth_c, roi)

    sections = locate_cross_sections(geom, build_bifurcation_mask(geom, grid))
    series = {"times": times}
    for name, sec in sections.items():
        series[f"{name}_pred"] = velocity_timeseries(source, sec, times, u_c=truth.u_c, H=truth.H)
        series[f"{name}_truth"] = velocity_timeseries(truth, sec, times)
    rec.high_vel_err, rec.low_vel_err, rec.vel_range_err, rec.vel_rmse = decile_errors(
        series["inlet_pred"], series["inlet_truth"])
    if "outlet_upper" in sections and "outlet_lower" in sections:
        rec.outlet_ratio = outlet_ratio(source, sections["outlet_upper"], sections["outlet_lower"], times,
                                        u_c=truth.u_c, H=truth.H)
    if cell_dir is not None:
        write_artifact(cell_dir / "series", series, {"kind": "velocity_series", "units": "m/s",
                                                     "config_hash": cell["cell_id"]})
        rec.series = {name: "series" for name in sections}
    return rec


# ------------------------------------------------------------------ cells


def _record_path(root: Path, cell: dict) -> Path:
    return root / "cells" / cell["cell_id"] / "record.json"


def load_record(root: Path, cell: dict) -> MetricsRecord | None:
    f = _record_path(root, cell)
    if not f.exists():
        return None
    doc = json.loads(f.read_text())
    if doc.get("config_hash") != cell["cell_id"] or doc["record"].get("status") != "ok":
        return None
    return MetricsRecord.from_dict(doc["record"])


def _write_record(root: Path, cell: dict, rec: MetricsRecord, experiment_hash: str):
    f = _record_path(root, cell)
    f.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config_hash": cell["cell_id"], "experiment_hash": experiment_hash, "cell": cell, "record": rec.to_dict()}
    tmp = f.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
    tmp.replace(f)


def run_cell(cell: dict, root: Path, experiment_hash: str = "") -> MetricsRecord:
    """Simulate, reconstruct, train and evaluate one cell; failures become records."""
    done = load_record(root, cell)
    if done is not None:
        return done
    cell_dir = root / "cells" / cell["cell_id"]
    try:
        truth = ground_truth(cell, root)
        sino = measured_sinogram(cell, truth, root)
        recon = fbp_movie(cell, sino, root) if cell["method"] in ("imageflow", "fbp") else None
        if cell["method"] == "fbp":
            source = recon
        else:
            problem = training_problem(cell, sino if cell["method"] == "sinoflow" else None, recon)
            source = trained_network(cell, problem, cell_dir)
        rec = evaluate_cell(cell, truth, source, cell_dir)
    except Exception as e:  # noqa: BLE001 - a failed cell must not stop the sweep
        log.error("cell %s failed: %s", cell["cell_id"], e)
        scan = cell["scan"]
        rec = MetricsRecord(cell_id=cell["cell_id"], method=cell["method"], grs=scan["grs"], theta0=scan["theta0"],
                            I0=scan["I0"], cnr=scan["cnr"], duty_cycle=scan["duty_cycle"],
                            pulse_width=scan["pulse_width"], status="failed",
                            error=f"{type(e).__name__}: {e}\n{traceback.format_exc(limit=5)}",
                            config_hash=cell["cell_id"])
    _write_record(root, cell, rec, experiment_hash)
    return rec


def _run_group(cells: list[dict], root: str, experiment_hash: str) -> list[MetricsRecord]:
    import torch

    torch.set_num_threads(1)
    return [run_cell(c, Path(root), experiment_hash) for c in cells]


@dataclass
class SweepResult:
    records: list[MetricsRecord] = field(default_factory=list)
    root: Path | None = None

    @property
    def failures(self) -> list[MetricsRecord]:
        return [r for r in self.records if r.status != "ok"]


def run_sweep(config: ExperimentConfig, root=None, workers: int = 1) -> SweepResult:
    """Run every cell of ``config``; completed cells are read back, not rerun.

    Cells sharing a scan run in the same worker so the sinogram is simulated
    once; groups run in separate processes when ``workers > 1``.
    """
    root = output_root(config, root)
    root.mkdir(parents=True, exist_ok=True)
    config.to_yaml(root / "config.yaml")
    cells = config.cells()
    if cells and config.ground_truth["source"] == "womersley_channel":
        ground_truth(cells[0], root)  # shared by every cell; build once up front
    groups: dict[str, list[dict]] = {}
    for c in cells:
        groups.setdefault(config_hash(_scan_key(c)), []).append(c)
    h = config.hash
    if workers > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_group, groups.values(), [str(root)] * len(groups), [h] * len(groups)))
    else:
        parts = [[run_cell(c, root, h) for c in g] for g in groups.values()]
    by_id = {r.cell_id: r for part in parts for r in part}
    return SweepResult([by_id[c["cell_id"]] for c in cells], root)


def collect_records(root) -> list[MetricsRecord]:
    """All records stored under an output root, in cell-id order."""
    out = []
    for f in sorted(Path(root).glob("cells/*/record.json")):
        out.append(MetricsRecord.from_dict(json.loads(f.read_text())["record"]))
    return out
