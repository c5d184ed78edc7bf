"""Monte Carlo I0 -> CNR calibration of the noisy FBP pipeline.

The photon count that gives a target image CNR depends on the grid, the
detector and the view count, so the stored table belongs to one scan setup
(the desk channel case) and records that setup in its header.
"""
from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..ctsim import FanBeamGeometry, ScanProtocol, estimate_cnr, forward_project_dynamic, simulate_measurement
from ..flowgen import FieldMovie
from ..geometry import ChannelGeometry, GridSpec, build_bifurcation_mask
from ..recon import ReconConfig, fbp_reconstruct_frame

TABLE = "cnr_calibration.csv"


def cnr_rois(geometry, grid: GridSpec, erode: int = 3):
    """Lumen ROI (ROI eroded by ``erode`` pixels) and a background band of
    1..3 H outside the vessel axis, restricted to the ROI's x extent."""
    mask = build_bifurcation_mask(geometry, grid)
    lumen = ndimage.binary_erosion(mask.roi, iterations=erode)
    X, Y = grid.mesh()
    x0, x1, y0, y1 = geometry.roi_bbox()
    near = ndimage.binary_dilation(mask.lumen, iterations=int(np.ceil(geometry.H / grid.pixel_size)))
    band = ndimage.binary_dilation(mask.lumen, iterations=int(np.ceil(3 * geometry.H / grid.pixel_size)))
    background = band & ~near & (X >= x0) & (X <= x1)
    return lumen, background


def calibrate(i0_values, geometry=None, grid=None, fan=None, grs: float = 4.0, seeds=(0, 1, 2)):
    """CNR of a static full-contrast vessel reconstructed at each I0."""
    geometry = geometry or ChannelGeometry()
    grid = grid or GridSpec.square(256, 12.8)
    fan = fan or FanBeamGeometry.for_grid(grid)
    X, Y = grid.mesh()
    roi = geometry.roi(X, Y)
    movie = FieldMovie(grid, np.array([0.0]), 30.0, geometry.H, c=roi[None].astype(float), roi=roi)
    clean = forward_project_dynamic(movie, fan, ScanProtocol(grs=grs))
    lumen, background = cnr_rois(geometry, grid)
    config = ReconConfig(grid)
    rows = []
    for i0 in i0_values:
        vals = []
        for s in seeds:
            proto = ScanProtocol(grs=grs, I0=float(i0), noise_enabled=True, seed=int(s))
            sino = simulate_measurement(clean, proto)
            img = fbp_reconstruct_frame(sino.g, sino.view_angle, fan, config)
            vals.append(estimate_cnr(img, lumen, background))
        rows.append({"I0": float(i0), "cnr_mean": float(np.mean(vals)), "cnr_std": float(np.std(vals, ddof=1))})
    setup = {"geometry": geometry.to_dict(), "grid": grid.to_dict(), "fan": fan.to_dict(), "grs": grs,
             "seeds": list(seeds)}
    return rows, setup


def write_table(rows, setup, path):
    path = Path(path)
    with open(path, "w", newline="") as f:
        f.write("# " + json.dumps(setup, sort_keys=True) + "\n")
        w = csv.DictWriter(f, fieldnames=["I0", "cnr_mean", "cnr_std"])
        w.writeheader()
        w.writerows(rows)
    return path


def load_table(path=None):
    """Rows and setup of a calibration table; the packaged one by default."""
    if path is None:
        text = resources.files("ctflow.data").joinpath(TABLE).read_text()
    else:
        text = Path(path).read_text()
    lines = text.splitlines()
    setup = json.loads(lines[0][2:]) if lines and lines[0].startswith("# ") else {}
    body = [ln for ln in lines if not ln.startswith("#")]
    rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(body)]
    return rows, setup


def i0_for_cnr(cnr: float, rows=None) -> float:
    """Interpolate log I0 against log CNR; targets outside the table are refused."""
    rows = rows or load_table()[0]
    i0 = np.array([r["I0"] for r in rows])
    c = np.array([r["cnr_mean"] for r in rows])
    order = np.argsort(c)
    if not c[order[0]] <= cnr <= c[order[-1]]:
        raise ValueError(f"CNR {cnr} outside calibrated range [{c.min():.1f}, {c.max():.1f}]")
    return float(np.exp(np.interp(np.log(cnr), np.log(c[order]), np.log(i0[order]))))


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "data" / TABLE
    rows, setup = calibrate(np.logspace(2.6, 4.8, 12))
    write_table(rows, setup, out)
    for r in rows:
        print(r)
