"""Physics, image-domain and sinogram-domain losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from ..ctsim import Sinogram, ray_geometry
from .network import FieldNetwork
from .residuals import physics_residuals


def loss_physics(net: FieldNetwork, points: torch.Tensor, Re: float, method: str = "jet") -> torch.Tensor:
    """Batch mean of e1^2 + e2^2 + e3^2 + e4^2."""
    if len(points) == 0:
        raise ValueError("empty physics batch")
    e1, e2, e3, e4 = physics_residuals(net, points, Re, method)
    return (e1**2 + e2**2 + e3**2 + e4**2).mean()


def loss_imageflow_data(net: FieldNetwork, points: torch.Tensor, c_ct: torch.Tensor, lambda0: float = 1.0) -> torch.Tensor:
    if len(points) == 0:
        raise ValueError("empty data batch")
    return lambda0 * ((net(points)[:, 0] - c_ct) ** 2).mean()


@dataclass
class RayBatch:
    """Rays of measured (view, channel) pairs; positions in cm, time nondimensional."""

    views: np.ndarray
    channels: np.ndarray
    src: np.ndarray  # (R, 2)
    dirs: np.ndarray  # (R, 2)
    t: np.ndarray  # (R,)
    g: np.ndarray  # (R,) measured line integrals, cm

    def __len__(self):
        return len(self.views)


def build_ray_batch(sino: Sinogram, views, channels, time_scale: float, subray: int | None = None) -> RayBatch:
    """Ray geometry for sinogram entries; switched-off views are refused.

    ``subray`` selects one detector subray instead of the channel centre.
    """
    views = np.asarray(views, int)
    channels = np.asarray(channels, int)
    if not np.all(sino.pulse_mask[views]):
        raise ValueError("ray batch contains views with the source switched off")
    gam = sino.geometry.gammas[channels]
    if subray is not None:
        gam = gam + sino.geometry.subray_offsets[subray]
    src, d = ray_geometry(sino.geometry, sino.view_angle[views], gam)
    g = sino.g[views, channels] if subray is None else sino.subrays[views, channels, subray]
    return RayBatch(views, channels, np.asarray(src), np.asarray(d), sino.view_time[views] / time_scale,
                    np.asarray(g, float))


@dataclass
class SinoflowRenderer:
    """Midpoint quadrature of the predicted concentration along fan rays.

    ``n_p`` points are spread uniformly over each ray's chord through the
    square field of view (half widths ``half_fov`` in cm); only points where
    ``mask_fn`` (x, y in cm) is true are evaluated. ``length_unit`` 'cm'
    gives line integrals in concentration*cm, 'pixel' divides by
    ``pixel_size``.
    """

    n_p: int
    H: float
    half_fov: tuple[float, float]
    mask_fn: Callable | None = None
    lambda1: float | None = None
    length_unit: str = "cm"
    pixel_size: float = 1.0

    @property
    def weight(self) -> float:
        return 1.0 / self.n_p if self.lambda1 is None else self.lambda1

    @property
    def unit(self) -> float:
        if self.length_unit == "cm":
            return 1.0
        if self.length_unit == "pixel":
            return 1.0 / self.pixel_size
        raise ValueError(f"unknown length unit {self.length_unit!r}")

    def quadrature(self, rays: RayBatch):
        """Point coordinates (M, 3) nondimensional, owning ray index (M,), step (R,) cm."""
        hx, hy = self.half_fov
        src, d = rays.src, rays.dirs
        # slab clipping; axis-parallel rays get a tiny divisor instead of zero
        dx = np.where(np.abs(d[:, 0]) < 1e-15, 1e-15, d[:, 0])
        dy = np.where(np.abs(d[:, 1]) < 1e-15, 1e-15, d[:, 1])
        tx = np.stack([(-hx - src[:, 0]) / dx, (hx - src[:, 0]) / dx])
        ty = np.stack([(-hy - src[:, 1]) / dy, (hy - src[:, 1]) / dy])
        t0 = np.maximum(tx.min(axis=0), ty.min(axis=0))
        t1 = np.minimum(tx.max(axis=0), ty.max(axis=0))
        chord = np.where(t1 > t0, t1 - t0, 0.0)
        step = chord / self.n_p
        s = t0[:, None] + (np.arange(self.n_p)[None, :] + 0.5) * step[:, None]
        x = src[:, 0:1] + s * d[:, 0:1]
        y = src[:, 1:2] + s * d[:, 1:2]
        keep = (chord > 0)[:, None] & np.ones_like(x, bool)
        if self.mask_fn is not None:
            keep &= np.asarray(self.mask_fn(x, y), bool)
        ray_idx = np.nonzero(keep)[0]
        pts = np.stack([np.broadcast_to(rays.t[:, None], x.shape)[keep], x[keep] / self.H, y[keep] / self.H], axis=1)
        return pts, ray_idx, step

    def render(self, field, rays: RayBatch, dtype=None) -> torch.Tensor:
        """Predicted line integral per ray; ``field`` maps (M, 3) points to c.

        ``dtype`` defaults to the network precision, float32 for callables.
        """
        if dtype is None:
            dtype = field.lo.dtype if isinstance(field, FieldNetwork) else torch.float32
        pts, idx, step = self.quadrature(rays)
        out = torch.zeros(len(rays), dtype=dtype)
        if len(pts) == 0:
            return out
        p = torch.as_tensor(pts, dtype=dtype)
        if isinstance(field, FieldNetwork):
            c = field(p)[:, 0]
        else:
            c = torch.as_tensor(field(p)).to(dtype)
        w = torch.as_tensor(step[idx] * self.unit, dtype=dtype)
        return out.index_add(0, torch.as_tensor(idx), c * w)

    def loss(self, net: FieldNetwork, rays: RayBatch) -> torch.Tensor:
        """lambda1 * mean squared sinogram misfit."""
        if len(rays) == 0:
            raise ValueError("empty ray batch")
        ghat = self.render(net, rays, dtype=net.lo.dtype)
        g = torch.as_tensor(rays.g * self.unit, dtype=net.lo.dtype)
        return self.weight * ((ghat - g) ** 2).mean()


def sinoflow_render(field, rays: RayBatch, renderer: SinoflowRenderer) -> torch.Tensor:
    return renderer.render(field, rays)


def loss_sinoflow_data(net: FieldNetwork, rays: RayBatch, renderer: SinoflowRenderer) -> torch.Tensor:
    return renderer.loss(net, rays)
