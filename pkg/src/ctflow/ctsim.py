"""Dynamic fan-beam CT acquisition of a time-evolving contrast movie."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .flowgen import FieldMovie
from .geometry import GridSpec
from .store import StoreError, read_array, read_meta, write_artifact


@dataclass(frozen=True)
class FanBeamGeometry:
    """Equiangular third-generation fan beam.

    ``source_to_iso`` defaults to the distance at which the fan exactly
    covers the circle inscribed in the square field of view.
    """

    fan_angle: float = 43.6  # degrees, full fan
    n_channels: int = 1600
    subrays_per_channel: int = 5
    views_per_rotation: int = 984
    fov_side: float = 50.0  # cm
    source_to_iso: float | None = None  # cm
    detector: str = "equiangular"

    def __post_init__(self):
        if self.detector != "equiangular":
            raise ValueError("only equiangular detectors are modelled")
        if self.source_to_iso is None:
            R = 0.5 * self.fov_side / math.sin(0.5 * math.radians(self.fan_angle))
            object.__setattr__(self, "source_to_iso", R)
        if self.source_to_iso * math.sin(self.half_fan) < 0.5 * self.fov_side - 1e-9:
            raise ValueError("fan does not cover the inscribed field of view")

    @property
    def half_fan(self) -> float:
        return 0.5 * math.radians(self.fan_angle)

    @property
    def channel_pitch(self) -> float:
        """Angular channel spacing in radians."""
        return math.radians(self.fan_angle) / self.n_channels

    @property
    def gammas(self) -> np.ndarray:
        """Central fan angle of each channel (rad), symmetric about 0."""
        return (np.arange(self.n_channels) - 0.5 * (self.n_channels - 1)) * self.channel_pitch

    @property
    def subray_offsets(self) -> np.ndarray:
        n = self.subrays_per_channel
        return ((np.arange(n) + 0.5) / n - 0.5) * self.channel_pitch

    @property
    def view_step(self) -> float:
        return 2 * math.pi / self.views_per_rotation

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_grid(cls, grid: GridSpec, n_channels: int | None = None, **kw) -> "FanBeamGeometry":
        return cls(n_channels=n_channels or grid.nx, fov_side=grid.fov_x, **kw)


@dataclass(frozen=True)
class ScanProtocol:
    grs: float = 4.0  # rotations per second
    theta0: float = 0.0  # degrees
    I0: float = 1e15
    pulse_width: float = math.inf  # views per pulse, inf = continuous
    duty_cycle: float = 1.0
    n_rotations: int = 1
    delta_mu: float = 0.2  # 1/cm per unit concentration
    noise_enabled: bool = False
    seed: int = 0
    t_start: float = 0.0  # s, time of view 0

    def __post_init__(self):
        if self.grs <= 0:
            raise ValueError("gantry rotation speed must be positive")
        if self.n_rotations < 1:
            raise ValueError("need at least one rotation")
        if self.delta_mu <= 0:
            raise ValueError("delta_mu must be positive")
        if self.I0 <= 0:
            raise ValueError("I0 must be positive")

    def n_views(self, geom: FanBeamGeometry) -> int:
        return self.n_rotations * geom.views_per_rotation

    def view_times(self, geom: FanBeamGeometry) -> np.ndarray:
        v = np.arange(self.n_views(geom))
        return self.t_start + v / (geom.views_per_rotation * self.grs)

    def view_angles(self, geom: FanBeamGeometry) -> np.ndarray:
        """theta0 + omega_gantry * (t_v - t_start), radians."""
        return math.radians(self.theta0) + geom.view_step * np.arange(self.n_views(geom))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pulse_width"] = None if math.isinf(self.pulse_width) else self.pulse_width
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScanProtocol":
        d = dict(d)
        if d.get("pulse_width") is None:
            d["pulse_width"] = math.inf
        return cls(**d)


def rotations_for_window(window: float, grs: float) -> int:
    """Whole rotations that fit in an acquisition window of ``window`` seconds."""
    n = int(math.floor(window * grs + 1e-9))
    if n < 1:
        raise ValueError(f"window {window} s shorter than one rotation at {grs} Hz")
    return n


@dataclass
class Sinogram:
    """Line integrals of concentration (cm) per (view, channel).

    Views switched off by the pulse pattern hold NaN. ``subrays`` keeps the
    per-subray integrals from the projector (noise-free) so intensities can be
    averaged in the detector.
    """

    g: np.ndarray
    view_angle: np.ndarray  # rad
    view_time: np.ndarray  # s
    pulse_mask: np.ndarray
    geometry: FanBeamGeometry
    protocol: ScanProtocol
    noise: dict = field(default_factory=lambda: {"noise_free": True})
    subrays: np.ndarray | None = None

    @property
    def n_views(self) -> int:
        return self.g.shape[0]

    def on_views(self) -> np.ndarray:
        return np.nonzero(self.pulse_mask)[0]


def ray_geometry(geom: FanBeamGeometry, theta, gamma):
    """Source position and unit direction for fan rays at view angle ``theta``."""
    theta = np.asarray(theta, float)
    phi = theta + np.asarray(gamma, float)
    src = geom.source_to_iso * np.stack(np.broadcast_arrays(np.cos(theta), np.sin(theta)), axis=-1)
    d = -np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    src = np.broadcast_to(src, d.shape)
    return src, d


# --------------------------------------------------------------------------
# projector


@numba.njit(cache=True, nogil=True)
def _sample(frame, fx, fy):
    ny, nx = frame.shape
    i0 = math.floor(fx)
    j0 = math.floor(fy)
    wx = fx - i0
    wy = fy - j0
    acc = 0.0
    for dj in range(2):
        j = j0 + dj
        if j < 0 or j >= ny:
            continue
        wj = wy if dj else 1.0 - wy
        for di in range(2):
            i = i0 + di
            if i < 0 or i >= nx:
                continue
            wi = wx if di else 1.0 - wx
            acc += wi * wj * frame[j, i]
    return acc


@numba.njit(cache=True, nogil=True)
def _clip(sx, sy, dx, dy, x0, x1, y0, y1):
    tmin = -1e30
    tmax = 1e30
    if abs(dx) < 1e-15:
        if sx < x0 or sx > x1:
            return 0.0, -1.0
    else:
        ta = (x0 - sx) / dx
        tb = (x1 - sx) / dx
        tmin = max(tmin, min(ta, tb))
        tmax = min(tmax, max(ta, tb))
    if abs(dy) < 1e-15:
        if sy < y0 or sy > y1:
            return 0.0, -1.0
    else:
        ta = (y0 - sy) / dy
        tb = (y1 - sy) / dy
        tmin = max(tmin, min(ta, tb))
        tmax = min(tmax, max(ta, tb))
    return tmin, tmax


@numba.njit(cache=True, nogil=True)
def _ray_integral(c, k, w, sx, sy, dx, dy, ps, half_x, half_y, x0, x1, y0, y1):
    # midpoint nodes are laid out along the whole field-of-view chord so the
    # quadrature does not depend on the support box, which only skips nodes
    fmin, fmax = _clip(sx, sy, dx, dy, -half_x, half_x, -half_y, half_y)
    if fmax <= fmin:
        return 0.0
    tmin, tmax = _clip(sx, sy, dx, dy, x0, x1, y0, y1)
    if tmax <= tmin:
        return 0.0
    n = int(math.ceil((fmax - fmin) / (0.5 * ps)))
    ds = (fmax - fmin) / n
    m0 = max(int(math.floor((tmin - fmin) / ds - 0.5)), 0)
    m1 = min(int(math.ceil((tmax - fmin) / ds - 0.5)) + 1, n)
    total = 0.0
    for m in range(m0, m1):
        t = fmin + (m + 0.5) * ds
        fx = (sx + t * dx + half_x) / ps - 0.5
        fy = (sy + t * dy + half_y) / ps - 0.5
        val = _sample(c[k], fx, fy)
        if w > 0.0:
            val = (1.0 - w) * val + w * _sample(c[k + 1], fx, fy)
        total += val
    return total * ds


@numba.njit(cache=True, nogil=True)
def _project(c, kk, ww, angles, on, gammas, offsets, R, ps, half_x, half_y, box, out):
    nv = angles.shape[0]
    for v in range(nv):
        if not on[v]:
            continue
        th = angles[v]
        sx = R * math.cos(th)
        sy = R * math.sin(th)
        for j in range(gammas.shape[0]):
            for s in range(offsets.shape[0]):
                phi = th + gammas[j] + offsets[s]
                out[v, j, s] = _ray_integral(c, kk[v], ww[v], sx, sy, -math.cos(phi), -math.sin(phi),
                                             ps, half_x, half_y, box[0], box[1], box[2], box[3])


def _support_box(c: np.ndarray, grid: GridSpec) -> np.ndarray | None:
    nz = np.zeros((grid.ny, grid.nx), bool)
    for k in range(c.shape[0]):
        nz |= c[k] != 0
    if not nz.any():
        return None
    rows = np.nonzero(nz.any(axis=1))[0]
    cols = np.nonzero(nz.any(axis=0))[0]
    ps = grid.pixel_size
    xc, yc = grid.x_centers, grid.y_centers
    return np.array([xc[cols[0]] - 2 * ps, xc[cols[-1]] + 2 * ps, yc[rows[0]] - 2 * ps, yc[rows[-1]] + 2 * ps])


def _frame_weights(times: np.ndarray, t: np.ndarray, tol: float = 1e-9):
    if len(times) == 1:  # single frame = static scene
        return np.zeros(len(t), np.int64), np.zeros(len(t))
    if np.any(t < times[0] - tol) or np.any(t > times[-1] + tol):
        raise ValueError(
            f"acquisition window [{t.min():.6g}, {t.max():.6g}] exceeds movie span [{times[0]:.6g}, {times[-1]:.6g}]"
        )
    k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
    w = np.clip((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0)
    return k.astype(np.int64), w


def forward_project_dynamic(movie: FieldMovie, geom: FanBeamGeometry, protocol: ScanProtocol,
                            mask: np.ndarray | None = None) -> Sinogram:
    """Noise-free time-resolved fan-beam line integrals of ``movie.c``.

    Each view samples the movie at its own time (linear in time, bilinear in
    space, half-pixel steps); the channel value is the mean of its subrays.
    A single-frame movie is treated as a static scene.
    """
    if movie.c is None:
        raise ValueError("movie has no concentration field")
    if abs(movie.grid.fov_x - geom.fov_side) > 1e-6 * geom.fov_side:
        raise ValueError("scanner field of view does not match the movie grid")
    if mask is None:
        mask = pulse_mask(protocol, geom)
    times = protocol.view_times(geom)
    angles = protocol.view_angles(geom)
    kk, ww = _frame_weights(movie.times, times / movie.time_scale)
    c = np.asarray(movie.c)
    if c.dtype not in (np.float32, np.float64):
        c = c.astype(np.float64)
    c = np.ascontiguousarray(c)
    nv = len(times)
    sub = np.zeros((nv, geom.n_channels, geom.subrays_per_channel), np.float32)
    box = _support_box(c, movie.grid)
    if box is not None:
        _project(c, kk, ww, angles, mask, geom.gammas, geom.subray_offsets, geom.source_to_iso,
                 movie.grid.pixel_size, 0.5 * movie.grid.fov_x, 0.5 * movie.grid.fov_y, box, sub)
    sub[~mask] = np.nan
    g = sub.mean(axis=2, dtype=np.float64)
    return Sinogram(g, angles, times, mask, geom, protocol, {"noise_free": True}, sub)


# --------------------------------------------------------------------------
# detector model


def apply_beer_lambert(sino: Sinogram, protocol: ScanProtocol | None = None) -> np.ndarray:
    """Detected intensity per channel, subray intensities averaged."""
    protocol = protocol or sino.protocol
    if protocol.delta_mu <= 0:
        raise ValueError("delta_mu must be positive")
    if sino.subrays is not None:
        return protocol.I0 * np.exp(-protocol.delta_mu * sino.subrays.astype(np.float64)).mean(axis=2)
    return protocol.I0 * np.exp(-protocol.delta_mu * sino.g)


def add_poisson_noise(I: np.ndarray, seed: int) -> np.ndarray:
    """Independent Poisson counts; row ``v`` uses the stream ``(seed, v)``.

    NaN entries (switched-off views) pass through unchanged.
    """
    I = np.asarray(I, float)
    finite = np.isfinite(I)
    if np.any(I[finite] < 0):
        raise ValueError("intensities must be non-negative")
    rows = I.reshape(1, -1) if I.ndim <= 1 else I.reshape(I.shape[0], -1)
    fin = finite.reshape(rows.shape)
    out = np.full(rows.shape, np.nan)
    for v in range(rows.shape[0]):
        if not fin[v].any():
            continue
        rng = np.random.default_rng([seed, v])
        out[v, fin[v]] = rng.poisson(rows[v, fin[v]])
    return out.reshape(I.shape)


def log_transform(I_n: np.ndarray, protocol: ScanProtocol) -> np.ndarray:
    """Back to concentration line integrals; counts below one photon are clamped."""
    return -np.log(np.maximum(I_n, 1.0) / protocol.I0) / protocol.delta_mu


def simulate_measurement(sino: Sinogram, protocol: ScanProtocol | None = None) -> Sinogram:
    """Detector path: Beer-Lambert, optional Poisson noise, log transform."""
    protocol = protocol or sino.protocol
    I = apply_beer_lambert(sino, protocol)
    if protocol.noise_enabled:
        I = add_poisson_noise(I, protocol.seed)
        noise = {"noise_free": False, "I0": protocol.I0, "seed": protocol.seed}
    else:
        noise = {"noise_free": True, "I0": protocol.I0}
    g = log_transform(I, protocol)
    g[~sino.pulse_mask] = np.nan
    return Sinogram(g, sino.view_angle, sino.view_time, sino.pulse_mask, sino.geometry, protocol, noise, None)


def acquire(movie: FieldMovie, geom: FanBeamGeometry, protocol: ScanProtocol) -> Sinogram:
    return simulate_measurement(forward_project_dynamic(movie, geom, protocol), protocol)


# --------------------------------------------------------------------------
# pulsed mode and image quality


def pulse_mask(protocol: ScanProtocol, geom: FanBeamGeometry | None = None, n_views: int | None = None) -> np.ndarray:
    """Source on/off pattern starting with a pulse at view 0."""
    if n_views is None:
        n_views = protocol.n_views(geom or FanBeamGeometry())
    d = protocol.duty_cycle
    pw = protocol.pulse_width
    if not 0 < d <= 1:
        raise ValueError("duty cycle must lie in (0, 1]")
    if pw < 1:
        raise ValueError("pulse width must be at least one view")
    if d == 1 or math.isinf(pw):
        return np.ones(n_views, bool)
    if pw != int(pw):
        raise ValueError("pulse width must be a whole number of views")
    pw = int(pw)
    off = int(math.floor(pw * (1 - d) / d + 0.5))
    if off == 0:
        raise ValueError(f"pulse width {pw} at duty {d} leaves no off views")
    return (np.arange(n_views) % (pw + off)) < pw


def estimate_cnr(image: np.ndarray, lumen_roi: np.ndarray, background_roi: np.ndarray) -> float:
    """(mean lumen - mean background) / std background; inf for a noise-free background."""
    lumen_roi = np.asarray(lumen_roi, bool)
    background_roi = np.asarray(background_roi, bool)
    if (lumen_roi & background_roi).any():
        raise ValueError("ROIs must be disjoint")
    if lumen_roi.sum() < 100 or background_roi.sum() < 100:
        raise ValueError("each ROI needs at least 100 pixels")
    bg = image[background_roi]
    sd = float(np.std(bg, ddof=1))
    if sd == 0.0:
        return math.inf
    return float((image[lumen_roi].mean() - bg.mean()) / sd)


# --------------------------------------------------------------------------
# persistence


def save_sinogram(sino: Sinogram, path, provenance: dict | None = None):
    arrays = {
        "g": sino.g.astype(np.float32),
        "view_angle": sino.view_angle.astype(np.float64),
        "view_time": sino.view_time.astype(np.float64),
        "pulse_mask": sino.pulse_mask,
    }
    if sino.subrays is not None:
        arrays["subrays"] = sino.subrays.astype(np.float32)
    meta = {
        "kind": "sinogram",
        "geometry": sino.geometry.to_dict(),
        "protocol": sino.protocol.to_dict(),
        "noise": sino.noise,
        "provenance": provenance or {},
    }
    return write_artifact(path, arrays, meta)


def load_sinogram(path) -> Sinogram:
    meta = read_meta(path)
    if meta.get("kind") != "sinogram":
        raise StoreError(f"{path} is not a sinogram")
    geom = FanBeamGeometry(**meta["geometry"])
    proto = ScanProtocol.from_dict(meta["protocol"])
    g = read_array(path, meta, "g")
    mask = read_array(path, meta, "pulse_mask")
    ang = read_array(path, meta, "view_angle")
    tv = read_array(path, meta, "view_time")
    if g.shape != (len(mask), geom.n_channels) or len(ang) != len(mask) or len(tv) != len(mask):
        raise StoreError(f"{path}: inconsistent sinogram shapes")
    return Sinogram(g, ang, tv, mask, geom, proto, meta.get("noise", {}), read_array(path, meta, "subrays"))
