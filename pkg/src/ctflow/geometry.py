"""Vessel anatomy, raster masks and measurement cross-sections.

All lengths are in cm. The coordinate origin is the centre of the imaging
field of view, ``x`` points right (parent-vessel flow direction) and ``y``
points up. Image arrays are indexed ``[iy, ix]`` with row ``iy`` increasing
with ``y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Square-pixel image grid centred on the origin."""

    nx: int
    ny: int
    pixel_size: float  # cm

    @classmethod
    def square(cls, n: int, fov: float) -> "GridSpec":
        return cls(n, n, fov / n)

    @property
    def fov_x(self) -> float:
        return self.nx * self.pixel_size

    @property
    def fov_y(self) -> float:
        return self.ny * self.pixel_size

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.pixel_size - 0.5 * self.fov_x

    @property
    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.pixel_size - 0.5 * self.fov_y

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_centers, self.y_centers)

    def pixel_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Nearest pixel (ix, iy) for physical points."""
        ix = np.floor((np.asarray(x) + 0.5 * self.fov_x) / self.pixel_size).astype(int)
        iy = np.floor((np.asarray(y) + 0.5 * self.fov_y) / self.pixel_size).astype(int)
        return ix, iy

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "pixel_size": self.pixel_size}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["nx"]), int(d["ny"]), float(d["pixel_size"]))


@dataclass(frozen=True)
class SectionSpec:
    name: str
    center: tuple[float, float]
    axis: tuple[float, float]  # unit vector along the local vessel axis
    width: float


@dataclass(frozen=True)
class VesselGeometry:
    """Idealised Y-shaped bifurcation with a hidden narrowing in the lower daughter.

    The parent channel runs along +x centred on ``y = 0``; the two daughters
    leave it at +/- alpha/2 and their outer walls continue the parent walls.
    ``occlusion_position`` and ``roi_fraction`` are fractions of the daughter
    length ``l``; the region of interest keeps only the proximal part of each
    daughter so that the narrowing never appears in it.
    """

    H: float = 1.5
    alpha: float = 30.0  # degrees
    occlusion_radius: float | None = None  # default 0.15 H
    occlusion_position: float = 0.8
    roi_fraction: float = 0.6
    roi_excludes_occlusion: bool = True
    section_offset: float = 0.5  # in units of H, distance of sections from ROI ends

    def __post_init__(self):
        if self.occlusion_radius is None:
            object.__setattr__(self, "occlusion_radius", 0.15 * self.H)
        if self.H <= 0:
            raise ValueError("vessel height must be positive")
        if self.occlusion_radius < 0:
            raise ValueError("occlusion radius must be non-negative")
        if 2 * self.occlusion_radius / self.h > 0.45 + 1e-12:
            raise ValueError("occlusion exceeds 45% of the daughter diameter")
        if self.roi_excludes_occlusion and self.occlusion_radius > 0:
            s_occ = self.occlusion_position * self.l
            if self.roi_fraction * self.l > s_occ - self.occlusion_radius:
                raise ValueError("region of interest would include the narrowing")

    kind = "bifurcation"

    @property
    def L(self) -> float:
        return 5.0 * self.H

    @property
    def h(self) -> float:
        return 2.0 * self.H / 3.0

    @property
    def l(self) -> float:
        return 8.0 * self.H

    @property
    def x_start(self) -> float:
        half = math.radians(self.alpha) / 2
        return -0.5 * (self.L + self.l * math.cos(half))

    @property
    def x_branch(self) -> float:
        return self.x_start + self.L

    def _daughter_frames(self):
        half = math.radians(self.alpha) / 2
        off = 0.5 * (self.H - self.h)
        frames = []
        for sign in (+1, -1):
            origin = np.array([self.x_branch, sign * off])
            axis = np.array([math.cos(half), sign * math.sin(half)])
            normal = np.array([-axis[1], axis[0]])
            frames.append((origin, axis, normal))
        return frames  # upper, lower

    def _daughter_coords(self, x, y, which: int):
        origin, axis, normal = self._daughter_frames()[which]
        dx, dy = x - origin[0], y - origin[1]
        return dx * axis[0] + dy * axis[1], dx * normal[0] + dy * normal[1]

    def occlusion_center(self) -> np.ndarray:
        origin, axis, normal = self._daughter_frames()[1]
        # outer wall of the lower daughter lies on the -normal side
        return origin + self.occlusion_position * self.l * axis - 0.5 * self.h * normal

    def _parent(self, x, y):
        return (x >= self.x_start) & (x <= self.x_branch) & (np.abs(y) <= 0.5 * self.H)

    def _junction(self, x, y):
        # wedge between the two outer walls, from the branch point to the crotch
        half = math.radians(self.alpha) / 2
        if half <= 0:
            return np.zeros(np.broadcast(x, y).shape, bool)
        off = 0.5 * (self.H - self.h)
        sn, cs, tn = math.sin(half), math.cos(half), math.tan(half)
        x_crotch = self.x_branch + 0.5 * self.h * sn + (0.5 * self.h * cs - off) / tn
        y_top = off + 0.5 * self.h * cs + (x - self.x_branch + 0.5 * self.h * sn) * tn
        return (x >= self.x_branch) & (x <= x_crotch) & (np.abs(y) <= np.minimum(y_top, 0.5 * self.H + (x - self.x_branch) * tn))

    def _daughter(self, x, y, which, s_max):
        s, n = self._daughter_coords(x, y, which)
        return (s >= 0) & (s <= s_max) & (np.abs(n) <= 0.5 * self.h)

    def occlusion(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, float), np.asarray(y, float)
        if self.occlusion_radius <= 0:
            return np.zeros(np.broadcast(x, y).shape, bool)
        cx, cy = self.occlusion_center()
        inside = (x - cx) ** 2 + (y - cy) ** 2 <= self.occlusion_radius**2
        return inside & self._daughter(x, y, 1, self.l)

    def lumen(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, float), np.asarray(y, float)
        open_ = self._parent(x, y) | self._junction(x, y)
        open_ |= self._daughter(x, y, 0, self.l) | self._daughter(x, y, 1, self.l)
        return open_ & ~self.occlusion(x, y)

    def roi(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, float), np.asarray(y, float)
        s_max = self.roi_fraction * self.l if self.roi_excludes_occlusion else self.l
        inside = self._parent(x, y) | self._junction(x, y)
        inside |= self._daughter(x, y, 0, s_max) | self._daughter(x, y, 1, s_max)
        return inside & self.lumen(x, y)

    def _box(self, s_max):
        pts = [(self.x_start, -0.5 * self.H), (self.x_start, 0.5 * self.H)]
        for origin, axis, normal in self._daughter_frames():
            for s in (0.0, s_max):
                for n in (-0.5 * self.h, 0.5 * self.h):
                    pts.append(tuple(origin + s * axis + n * normal))
        pts = np.array(pts)
        return (pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max())

    def bbox(self) -> tuple[float, float, float, float]:
        return self._box(self.l)

    def roi_bbox(self) -> tuple[float, float, float, float]:
        return self._box(self.roi_fraction * self.l if self.roi_excludes_occlusion else self.l)

    def section_specs(self) -> list[SectionSpec]:
        off = self.section_offset * self.H
        specs = [SectionSpec("inlet", (self.x_start + off, 0.0), (1.0, 0.0), self.H)]
        s_out = (self.roi_fraction if self.roi_excludes_occlusion else 1.0) * self.l - off
        for name, (origin, axis, _) in zip(("outlet_upper", "outlet_lower"), self._daughter_frames()):
            c = origin + s_out * axis
            specs.append(SectionSpec(name, (float(c[0]), float(c[1])), (float(axis[0]), float(axis[1])), self.h))
        return specs

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "H": self.H,
            "alpha": self.alpha,
            "occlusion_radius": self.occlusion_radius,
            "occlusion_position": self.occlusion_position,
            "roi_fraction": self.roi_fraction,
            "roi_excludes_occlusion": self.roi_excludes_occlusion,
            "section_offset": self.section_offset,
        }


@dataclass(frozen=True)
class ChannelGeometry:
    """Straight channel of height H crossing the field of view along x.

    The lumen extends across the whole field of view; the region of interest
    is the segment of length ``length`` centred on the origin. Contrast lives
    only inside the region of interest.
    """

    H: float = 1.5
    length: float = 9.0
    section_offset: float = 0.5  # units of H

    kind = "channel"

    @property
    def x_start(self) -> float:
        return -0.5 * self.length

    @property
    def x_end(self) -> float:
        return 0.5 * self.length

    def occlusion(self, x, y) -> np.ndarray:
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, bool)

    def lumen(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, float), np.asarray(y, float)
        return np.broadcast_to(np.abs(y) <= 0.5 * self.H, np.broadcast(x, y).shape).copy()

    def roi(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, float), np.asarray(y, float)
        return (np.abs(y) <= 0.5 * self.H) & (x >= self.x_start) & (x <= self.x_end)

    def bbox(self) -> tuple[float, float, float, float]:
        return self.roi_bbox()

    def roi_bbox(self) -> tuple[float, float, float, float]:
        return (self.x_start, self.x_end, -0.5 * self.H, 0.5 * self.H)

    def section_specs(self) -> list[SectionSpec]:
        off = self.section_offset * self.H
        return [
            SectionSpec("inlet", (self.x_start + off, 0.0), (1.0, 0.0), self.H),
            SectionSpec("outlet", (self.x_end - off, 0.0), (1.0, 0.0), self.H),
        ]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "H": self.H, "length": self.length, "section_offset": self.section_offset}


def geometry_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", "bifurcation")
    if kind == "channel":
        return ChannelGeometry(**d)
    if kind == "bifurcation":
        return VesselGeometry(**d)
    raise ValueError(f"unknown geometry kind {kind!r}")


@dataclass
class RasterMask:
    grid: GridSpec
    lumen: np.ndarray  # bool (ny, nx)
    roi: np.ndarray  # bool (ny, nx)
    occlusion: np.ndarray = field(default=None)

    @property
    def pixel_size(self) -> float:
        return self.grid.pixel_size


@dataclass
class CrossSection:
    """Transverse measurement line, one pixel wide.

    ``points`` are physical sample locations (cm) spaced one pixel apart,
    ``pixels`` the nearest raster pixel of each point as (ix, iy).
    """

    name: str
    points: np.ndarray
    pixels: np.ndarray
    normal: np.ndarray
    spacing: float

    @property
    def length(self) -> float:
        return len(self.points) * self.spacing


def build_bifurcation_mask(geom, grid: GridSpec) -> RasterMask:
    """Rasterise a geometry by pixel-centre inclusion."""
    if grid.pixel_size > geom.H / 20 + 1e-12:
        raise ValueError(
            f"pixel size {grid.pixel_size:.4g} cm does not resolve H={geom.H} cm (need <= H/20)"
        )
    x0, x1, y0, y1 = geom.bbox()
    if x0 < -0.5 * grid.fov_x or x1 > 0.5 * grid.fov_x or y0 < -0.5 * grid.fov_y or y1 > 0.5 * grid.fov_y:
        raise ValueError("geometry does not fit inside the grid field of view")
    X, Y = grid.mesh()
    lumen = geom.lumen(X, Y)
    roi = geom.roi(X, Y) & lumen
    occ = geom.occlusion(X, Y)
    return RasterMask(grid, lumen, roi, occ)


def locate_cross_sections(geom, mask: RasterMask) -> dict[str, CrossSection]:
    """Place the inlet and outlet measurement lines inside the region of interest."""
    ps = mask.pixel_size
    out = {}
    for spec in geom.section_specs():
        axis = np.asarray(spec.axis, float)
        axis = axis / np.linalg.norm(axis)
        trans = np.array([-axis[1], axis[0]])
        center = np.asarray(spec.center, float)
        if abs(axis[1]) < 1e-12:
            # axis-aligned: snap to the pixel column so the locus is exact pixels
            ix, _ = mask.grid.pixel_index(center[0], 0.0)
            xc = mask.grid.x_centers[int(ix)]
            col = mask.roi[:, int(ix)]
            ys = mask.grid.y_centers[col]
            ys = ys[np.abs(ys - center[1]) <= 0.5 * spec.width + ps]
            pts = np.stack([np.full_like(ys, xc), ys], axis=1)
        else:
            n = int(math.floor(spec.width / ps + 1e-9))
            offs = (np.arange(n) + 0.5 - 0.5 * n) * ps
            pts = center[None, :] + offs[:, None] * trans[None, :]
        if len(pts) == 0:
            raise ValueError(f"cross-section {spec.name!r} is empty")
        inside = geom.roi(pts[:, 0], pts[:, 1])
        if not inside.all():
            raise ValueError(f"cross-section {spec.name!r} leaves the region of interest")
        # the locus must span the full lumen width: one pixel beyond each end is wall
        ends = np.stack([pts[0] - ps * trans, pts[-1] + ps * trans])
        if geom.lumen(ends[:, 0], ends[:, 1]).any():
            raise ValueError(f"cross-section {spec.name!r} does not span the lumen")
        fine = np.linspace(0, 1, 8 * len(pts))[:, None] * (pts[-1] - pts[0])[None, :] + pts[0]
        if not geom.lumen(fine[:, 0], fine[:, 1]).all():
            raise ValueError(f"cross-section {spec.name!r} intersects the wall irregularly")
        ix, iy = mask.grid.pixel_index(pts[:, 0], pts[:, 1])
        out[spec.name] = CrossSection(spec.name, pts, np.stack([ix, iy], axis=1), axis, ps)
    return out
