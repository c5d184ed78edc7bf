"""Per-iteration sample batches: physics points, image data, sinogram rays."""
from __future__ import annotations

import numpy as np

from ..ctsim import Sinogram, ray_geometry
from ..flowgen import FieldMovie, bilinear
from .losses import RayBatch, build_ray_batch


class DomainSampler:
    """Uniform (t, x, y) samples inside the region-of-interest lumen.

    ``window`` is the nondimensional time interval; positions are returned
    in units of H.
    """

    def __init__(self, geometry, window: tuple[float, float]):
        self.geometry = geometry
        self.H = geometry.H
        self.window = (float(window[0]), float(window[1]))
        self.bbox = geometry.roi_bbox()  # cm
        x0, x1, y0, y1 = self.bbox
        self.lo = np.array([self.window[0], x0 / self.H, y0 / self.H])
        self.hi = np.array([self.window[1], x1 / self.H, y1 / self.H])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x0, x1, y0, y1 = self.bbox
        out = np.empty((0, 2))
        while len(out) < n:
            m = max(2 * (n - len(out)), 64)
            x = rng.uniform(x0, x1, m)
            y = rng.uniform(y0, y1, m)
            ok = self.geometry.roi(x, y)
            out = np.concatenate([out, np.stack([x[ok], y[ok]], axis=1)])
        out = out[:n]
        t = rng.uniform(*self.window, n)
        return np.column_stack([t, out / self.H])


class ImageDataSampler:
    """ImageFlow data: c_CT at random ROI points, nearest frame in time."""

    def __init__(self, recon: FieldMovie, domain: DomainSampler):
        if recon.c is None:
            raise ValueError("reconstruction has no concentration frames")
        self.recon = recon
        self.domain = domain

    def sample(self, n: int, rng: np.random.Generator):
        pts = self.domain.sample(n, rng)
        k = np.abs(pts[:, 0:1] - self.recon.times[None, :]).argmin(axis=1)
        c = np.empty(n)
        for kk in np.unique(k):
            sel = k == kk
            c[sel] = bilinear(np.asarray(self.recon.c[kk], float), self.recon.grid,
                              pts[sel, 1] * self.domain.H, pts[sel, 2] * self.domain.H)
        return pts, c


class RaySampler:
    """Uniform draws over measured rays that cross the network domain.

    Rays from switched-off views are never candidates; rays that miss the
    domain carry no gradient and are skipped.
    """

    def __init__(self, sino: Sinogram, domain: DomainSampler, time_scale: float):
        self.sino = sino
        self.time_scale = time_scale
        t = sino.view_time / time_scale
        views = np.nonzero(sino.pulse_mask & (t >= domain.window[0] - 1e-9) & (t <= domain.window[1] + 1e-9))[0]
        if len(views) == 0:
            raise ValueError("no measured views inside the training window")
        geom = sino.geometry
        src, d = ray_geometry(geom, sino.view_angle[views][:, None], geom.gammas[None, :])
        hit = _hits_box(src.reshape(-1, 2), d.reshape(-1, 2), domain.bbox).reshape(len(views), geom.n_channels)
        hit &= np.isfinite(sino.g[views])
        vi, ch = np.nonzero(hit)
        self.views = views[vi]
        self.channels = ch
        if len(self.views) == 0:
            raise ValueError("no measured ray crosses the network domain")

    def __len__(self):
        return len(self.views)

    def sample(self, n: int, rng: np.random.Generator) -> RayBatch:
        k = rng.integers(0, len(self.views), n)
        return build_ray_batch(self.sino, self.views[k], self.channels[k], self.time_scale)


def _hits_box(src, d, box):
    x0, x1, y0, y1 = box
    dx = np.where(np.abs(d[:, 0]) < 1e-15, 1e-15, d[:, 0])
    dy = np.where(np.abs(d[:, 1]) < 1e-15, 1e-15, d[:, 1])
    tx = np.stack([(x0 - src[:, 0]) / dx, (x1 - src[:, 0]) / dx])
    ty = np.stack([(y0 - src[:, 1]) / dy, (y1 - src[:, 1]) / dy])
    t0 = np.maximum(tx.min(axis=0), ty.min(axis=0))
    t1 = np.minimum(tx.max(axis=0), ty.max(axis=0))
    return t1 > t0
