"""Equiangular fan-beam filtered backprojection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.signal import fftconvolve

from .ctsim import FanBeamGeometry, Sinogram
from .flowgen import FieldMovie
from .geometry import GridSpec


@dataclass(frozen=True)
class ReconConfig:
    grid: GridSpec
    views_per_frame: int = 984
    filter: str = "ramlak"
    u_c: float = 30.0  # cm/s, for the output time axis
    H: float = 1.5  # cm

    def __post_init__(self):
        if self.filter != "ramlak":
            raise ValueError(f"unsupported filter {self.filter!r}")
        if self.views_per_frame < 1:
            raise ValueError("views_per_frame must be positive")


def ramlak_kernel(n_channels: int, pitch: float) -> np.ndarray:
    """Equiangular ramp kernel on lags -(n-1)..(n-1), pitch in radians."""
    n = np.arange(-(n_channels - 1), n_channels)
    k = np.zeros(len(n))
    k[n == 0] = 1.0 / (8 * pitch**2)
    odd = n % 2 == 1
    k[odd] = -1.0 / (2 * math.pi**2 * np.sin(n[odd] * pitch) ** 2)
    return k


def filter_views(views: np.ndarray, geom: FanBeamGeometry) -> np.ndarray:
    """Cosine pre-weighting and ramp filtering of each view (rows)."""
    g = np.nan_to_num(np.asarray(views, float), nan=0.0)
    weighted = g * geom.source_to_iso * np.cos(geom.gammas)[None, :]
    kern = ramlak_kernel(geom.n_channels, geom.channel_pitch)
    full = fftconvolve(weighted, kern[None, :], axes=1)
    n = geom.n_channels
    return geom.channel_pitch * full[:, n - 1:2 * n - 1]


@numba.njit(cache=True, nogil=True)
def _backproject(q, angles, R, pitch, xs, ys, dbeta, out):
    nv, nch = q.shape
    centre = 0.5 * (nch - 1)
    for v in range(nv):
        th = angles[v]
        sx = R * math.cos(th)
        sy = R * math.sin(th)
        for j in range(ys.shape[0]):
            py = ys[j] - sy
            for i in range(xs.shape[0]):
                px = xs[i] - sx
                L2 = px * px + py * py
                gam = math.atan2(py, px) - th - math.pi
                gam = (gam + math.pi) % (2 * math.pi) - math.pi
                u = gam / pitch + centre
                k = int(math.floor(u))
                if k < 0 or k >= nch - 1:
                    continue
                w = u - k
                out[j, i] += dbeta * ((1 - w) * q[v, k] + w * q[v, k + 1]) / L2


def fbp_reconstruct_frame(views: np.ndarray, angles: np.ndarray, geom: FanBeamGeometry,
                          config: ReconConfig) -> np.ndarray:
    """Reconstruct one image from a full rotation of views.

    NaN (switched-off) views are zero-filled.
    """
    if geom is None:
        raise ValueError("fan-beam geometry required")
    views = np.asarray(views, float)
    if views.shape[0] < config.views_per_frame:
        raise ValueError(f"need {config.views_per_frame} views, got {views.shape[0]}")
    if views.shape[1] != geom.n_channels:
        raise ValueError("channel count does not match the geometry")
    views = views[: config.views_per_frame]
    angles = np.asarray(angles, float)[: config.views_per_frame]
    q = filter_views(views, geom)
    out = np.zeros((config.grid.ny, config.grid.nx))
    _backproject(q, angles, geom.source_to_iso, geom.channel_pitch, config.grid.x_centers,
                 config.grid.y_centers, geom.view_step, out)
    return out


def reconstruct_movie(sino: Sinogram, config: ReconConfig) -> FieldMovie:
    """One frame per whole block of ``views_per_frame`` views, stamped at the block centre."""
    vpf = config.views_per_frame
    n_frames = sino.n_views // vpf
    if n_frames < 1:
        raise ValueError("sinogram holds less than one frame of views")
    geom = sino.geometry
    frames = np.empty((n_frames, config.grid.ny, config.grid.nx))
    times = np.empty(n_frames)
    dt_view = 1.0 / (geom.views_per_rotation * sino.protocol.grs)
    for k in range(n_frames):
        sl = slice(k * vpf, (k + 1) * vpf)
        frames[k] = fbp_reconstruct_frame(sino.g[sl], sino.view_angle[sl], geom, config)
        times[k] = sino.view_time[k * vpf] + 0.5 * vpf * dt_view
    time_scale = config.H / config.u_c
    meta = {"source": "fbp", "views_per_frame": vpf, "noise": sino.noise, "protocol": sino.protocol.to_dict()}
    return FieldMovie(config.grid, times / time_scale, config.u_c, config.H, c=frames, meta=meta)
