"""Ground-truth velocity and contrast movies.

Velocities, times and coordinates are nondimensionalised with the vessel
height ``H`` and the characteristic velocity ``u_c``: ``x~ = x/H``,
``t~ = t u_c / H``. Contrast concentration is dimensionless in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import ChannelGeometry, GridSpec, build_bifurcation_mask
from .store import StoreError, read_array, read_meta, write_artifact


@dataclass(frozen=True)
class FlowParams:
    """Pulsatile channel-flow parameters.

    ``u_c`` in cm/s, ``H`` in cm, ``nu`` in m^2/s, ``omega`` in rad/s.
    ``dP`` and ``A`` are the mean and pulsatile nondimensional pressure
    gradients; when left as None they are derived from ``pulse_ratio`` (ratio
    of oscillatory to steady centreline amplitude) and jointly scaled so the
    peak streamwise velocity equals ``u_c``.
    """

    u_c: float = 30.0
    H: float = 1.5
    nu: float = 3.8e-6
    omega: float = 7.33
    beta: float = 2.0
    pulse_ratio: float = 0.5
    dP: float | None = None
    A: float | None = None

    def __post_init__(self):
        if self.dP is None or self.A is None:
            dP, A = _normalised_gradients(self)
            object.__setattr__(self, "dP", dP)
            object.__setattr__(self, "A", A)

    @property
    def Re(self) -> float:
        return (self.u_c / 100.0) * (self.H / 100.0) / self.nu

    @property
    def St(self) -> float:
        return self.omega * self.H / self.u_c

    @property
    def womersley_alpha(self) -> float:
        return math.sqrt(self.Re * self.St)

    @property
    def lam(self) -> complex:
        return complex(np.sqrt(1j * self.Re * self.St))

    @property
    def time_scale(self) -> float:
        """Seconds per nondimensional time unit."""
        return self.H / self.u_c

    @property
    def period(self) -> float:
        """Cardiac period in nondimensional time."""
        return 2 * math.pi / self.St

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("u_c", "H", "nu", "omega", "beta", "pulse_ratio", "dP", "A")}


def _womersley_shape(y, Re, St, lam):
    # cosh(lam y)/cosh(lam/2) - 1 written with decaying exponentials only
    y = np.asarray(y, float)
    ratio = (np.exp(lam * (y - 0.5)) + np.exp(-lam * (y + 0.5))) / (1 + np.exp(-lam))
    return Re / (1j * Re * St) * (ratio - 1.0)


def _womersley_parts(y, p: FlowParams, dP=None, A=None):
    dP = p.dP if dP is None else dP
    A = p.A if A is None else A
    y = np.asarray(y, float)
    steady = 0.5 * p.Re * dP * (0.25 - y**2)
    osc = A * p.Re * _womersley_shape(y, p.Re, p.St, p.lam) / p.Re
    return steady, osc


def _normalised_gradients(p: FlowParams) -> tuple[float, float]:
    dP0 = 8.0 / p.Re  # unit steady centreline velocity
    centre = abs(p.Re * _womersley_shape(0.0, p.Re, p.St, p.lam) / p.Re)
    A0 = p.pulse_ratio / centre if p.pulse_ratio else 0.0

    def peak(y):
        s, o = _womersley_parts(y, p, dP0, A0)
        return s + np.abs(o)  # max over one period at fixed y

    ys = np.linspace(-0.5, 0.5, 4001)
    vals = peak(ys)
    k = int(np.argmax(vals))
    lo, hi = ys[max(k - 1, 0)], ys[min(k + 1, len(ys) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda y: -peak(y), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        vmax = max(-res.fun, vals[k])
    else:
        vmax = vals[k]
    return dP0 / vmax, A0 / vmax


def womersley_velocity(y_tilde, t_tilde, params: FlowParams) -> np.ndarray:
    """Streamwise velocity of the pulsatile plane-channel solution (v = 0)."""
    y = np.asarray(y_tilde, float)
    if np.any(np.abs(y) > 0.5 + 1e-12):
        raise ValueError("|y~| must be <= 1/2 inside the channel")
    steady, osc = _womersley_parts(np.clip(y, -0.5, 0.5), params)
    phase = np.exp(1j * params.St * np.asarray(t_tilde, float))
    return steady + np.real(osc * phase)


def womersley_pressure_gradient(t_tilde, params: FlowParams) -> np.ndarray:
    """dp~/dx~ driving the channel flow: -dP + Re{A exp(i St t~)}."""
    return -params.dP + params.A * np.cos(params.St * np.asarray(t_tilde, float))


def inlet_concentration(t_tilde, params: FlowParams) -> np.ndarray:
    """Spatially uniform inlet contrast sin^2(beta St pi t~)."""
    return np.sin(params.beta * params.St * np.pi * np.asarray(t_tilde, float)) ** 2


# --------------------------------------------------------------------------
# Field movies


@dataclass
class FieldMovie:
    grid: GridSpec
    times: np.ndarray  # nondimensional
    u_c: float  # cm/s
    H: float  # cm
    c: np.ndarray | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    p: np.ndarray | None = None
    lumen: np.ndarray | None = None
    roi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    FIELDS = ("c", "u", "v", "p")

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise ValueError("times must be a non-empty vector")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        shape = (len(self.times), self.grid.ny, self.grid.nx)
        for name in self.FIELDS:
            arr = getattr(self, name)
            if arr is not None and arr.shape != shape:
                raise ValueError(f"field {name} has shape {arr.shape}, expected {shape}")
        for name in ("lumen", "roi"):
            m = getattr(self, name)
            if m is not None and m.shape != shape[1:]:
                raise ValueError(f"{name} mask has shape {m.shape}, expected {shape[1:]}")

    @property
    def nt(self) -> int:
        return len(self.times)

    @property
    def time_scale(self) -> float:
        return self.H / self.u_c

    @property
    def seconds(self) -> np.ndarray:
        return self.times * self.time_scale

    @property
    def dx(self) -> float:
        """Pixel size in nondimensional units."""
        return self.grid.pixel_size / self.H

    def frame_at(self, name: str, t: float) -> np.ndarray:
        """Linear-in-time interpolation of a field at nondimensional time ``t``."""
        arr = getattr(self, name)
        if arr is None:
            raise ValueError(f"movie has no field {name!r}")
        k, w = _bracket(self.times, t)
        if w == 0.0:
            return np.asarray(arr[k], float)
        return (1 - w) * arr[k] + w * arr[k + 1]

    def sample(self, name: str, t, x, y) -> np.ndarray:
        """Bilinear-in-space, linear-in-time sample at physical points (cm)."""
        t = np.broadcast_to(np.asarray(t, float), np.shape(x))
        out = np.empty(np.shape(x))
        for tv in np.unique(t):
            sel = t == tv
            out[sel] = bilinear(self.frame_at(name, float(tv)), self.grid, np.asarray(x)[sel], np.asarray(y)[sel])
        return out


def _bracket(times: np.ndarray, t: float, tol: float = 1e-9):
    if len(times) == 1:
        if abs(t - times[0]) > tol:
            raise ValueError("time outside movie span")
        return 0, 0.0
    if t < times[0] - tol or t > times[-1] + tol:
        raise ValueError(f"time {t:.6g} outside movie span [{times[0]:.6g}, {times[-1]:.6g}]")
    k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
    w = float(np.clip((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0))
    if w == 1.0:
        return k + 1, 0.0
    return k, w


def bilinear(image: np.ndarray, grid: GridSpec, x, y) -> np.ndarray:
    """Bilinear interpolation between pixel centres; zero outside the grid."""
    fx = (np.asarray(x, float) + 0.5 * grid.fov_x) / grid.pixel_size - 0.5
    fy = (np.asarray(y, float) + 0.5 * grid.fov_y) / grid.pixel_size - 0.5
    i0 = np.floor(fx).astype(int)
    j0 = np.floor(fy).astype(int)
    wx = fx - i0
    wy = fy - j0
    out = np.zeros(np.shape(fx))
    for di, dj, w in ((0, 0, (1 - wx) * (1 - wy)), (1, 0, wx * (1 - wy)), (0, 1, (1 - wx) * wy), (1, 1, wx * wy)):
        i, j = i0 + di, j0 + dj
        ok = (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny)
        out[ok] += w[ok] * image[j[ok], i[ok]]
    return out


def save_field_movie(movie: FieldMovie, path, provenance: dict | None = None) -> Path:
    arrays = {name: None if getattr(movie, name) is None else np.asarray(getattr(movie, name), np.float32)
              for name in FieldMovie.FIELDS}
    arrays["times"] = movie.times.astype(np.float64)
    if movie.lumen is not None:
        arrays["lumen_mask"] = movie.lumen
    if movie.roi is not None:
        arrays["roi_mask"] = movie.roi
    meta = {
        "kind": "field_movie",
        "grid": movie.grid.to_dict(),
        "u_c": movie.u_c,
        "H": movie.H,
        "nt": movie.nt,
        "provenance": {**movie.meta, **(provenance or {})},
    }
    return write_artifact(path, arrays, meta)


def load_field_movie(path) -> FieldMovie:
    """Load and validate a movie; velocities outside the lumen are zeroed."""
    meta = read_meta(path)
    for key in ("grid", "u_c", "H"):
        if key not in meta:
            raise StoreError(f"{path}: missing metadata {key!r}")
    grid = GridSpec.from_dict(meta["grid"])
    times = read_array(path, meta, "times")
    if times is None:
        raise StoreError(f"{path}: missing times")
    if times.ndim != 1 or (len(times) > 1 and np.any(np.diff(times) <= 0)):
        raise StoreError(f"{path}: times must be strictly increasing")
    shape = (len(times), grid.ny, grid.nx)
    fields = {}
    for name in FieldMovie.FIELDS:
        entry = meta["arrays"].get(name)
        if entry is None:
            continue
        if tuple(entry["shape"]) != shape:
            raise StoreError(f"{path}: field {name} shape {entry['shape']} != {list(shape)}")
        fields[name] = read_array(path, meta, name, mmap=True)
    lumen = read_array(path, meta, "lumen_mask")
    roi = read_array(path, meta, "roi_mask")
    for m, nm in ((lumen, "lumen"), (roi, "roi")):
        if m is not None and m.shape != shape[1:]:
            raise StoreError(f"{path}: {nm} mask shape mismatch")
    if lumen is not None:
        outside = ~lumen
        for name in ("u", "v"):
            arr = fields.get(name)
            if arr is None:
                continue
            for k in range(arr.shape[0]):
                frame = arr[k]
                bad = outside & (frame != 0)
                if bad.any():  # only touched pages are copied
                    frame[bad] = 0.0
    try:
        return FieldMovie(grid, times, float(meta["u_c"]), float(meta["H"]), lumen=lumen, roi=roi,
                          meta=meta.get("provenance", {}), **fields)
    except ValueError as e:
        raise StoreError(f"{path}: {e}") from e


# --------------------------------------------------------------------------
# WENO3 transport


def _weno3(a, b, c, eps=1e-6):
    # face value upwind-biased towards b; stencils {a, b} and {b, c}, WENO-Z weights
    q0 = -0.5 * a + 1.5 * b
    q1 = 0.5 * b + 0.5 * c
    b0 = (b - a) ** 2
    b1 = (c - b) ** 2
    tau = np.abs(b1 - b0)
    a0 = (1.0 / 3.0) * (1.0 + (tau / (b0 + eps)) ** 2)
    a1 = (2.0 / 3.0) * (1.0 + (tau / (b1 + eps)) ** 2)
    return (a0 * q0 + a1 * q1) / (a0 + a1)


class _Stepper:
    """Bound-preserving WENO3 finite-volume operator on a cropped grid."""

    def __init__(self, dom, lumen, inlet, dx, dy, lo, hi):
        self.D = dom
        self.Lm = lumen
        self.inlet = inlet
        self.dx, self.dy = dx, dy
        self.lo, self.hi = lo, hi

    def _fluxes(self, c, vel, D, Lm, axis):
        r = lambda a, k: np.roll(a, -k, axis=axis)  # noqa: E731  r(a,k)[i] = a[i+k]
        cR, cL, cRR = r(c, 1), r(c, -1), r(c, 2)
        DR, DL, DRR = r(D, 1), r(D, -1), r(D, 2)
        vf = np.where(Lm & r(Lm, 1), 0.5 * (vel + r(vel, 1)), 0.0)
        pos = vf >= 0
        fp = _weno3(np.where(DL, cL, c), c, cR)
        fm = _weno3(np.where(DRR, cRR, cR), cR, c)
        inner = D & DR
        FH = np.where(inner, vf * np.where(pos, fp, fm), 0.0)
        FL = np.where(inner, vf * np.where(pos, c, cR), 0.0)
        # open faces into lumen outside the domain carry zero contrast inwards
        out_r = D & ~DR
        out_l = ~D & DR
        Fb = np.where(out_r, vf * np.where(pos, c, 0.0), 0.0) + np.where(out_l, vf * np.where(pos, 0.0, cR), 0.0)
        return FH + Fb, FL + Fb

    def euler(self, c, u, v, dt):
        D, Lm = self.D, self.Lm
        FH, FL = self._fluxes(c, u, D, Lm, axis=1)
        GH, GL = self._fluxes(c, v, D, Lm, axis=0)
        div = lambda F, G: (F - np.roll(F, 1, axis=1)) / self.dx + (G - np.roll(G, 1, axis=0)) / self.dy  # noqa: E731
        c_low = c - dt * div(FL, GL)
        Ax, Ay = FH - FL, GH - GL
        AxL, AyL = np.roll(Ax, 1, axis=1), np.roll(Ay, 1, axis=0)
        Pp = dt * ((np.maximum(AxL, 0) - np.minimum(Ax, 0)) / self.dx + (np.maximum(AyL, 0) - np.minimum(Ay, 0)) / self.dy)
        Pm = dt * ((np.maximum(Ax, 0) - np.minimum(AxL, 0)) / self.dx + (np.maximum(Ay, 0) - np.minimum(AyL, 0)) / self.dy)
        Qp = np.maximum(self.hi - c_low, 0.0)
        Qm = np.maximum(c_low - self.lo, 0.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            Rp = np.where(Pp > 0, np.minimum(1.0, Qp / Pp), 1.0)
            Rm = np.where(Pm > 0, np.minimum(1.0, Qm / Pm), 1.0)
        Cx = np.where(Ax >= 0, np.minimum(np.roll(Rp, -1, axis=1), Rm), np.minimum(Rp, np.roll(Rm, -1, axis=1)))
        Cy = np.where(Ay >= 0, np.minimum(np.roll(Rp, -1, axis=0), Rm), np.minimum(Rp, np.roll(Rm, -1, axis=0)))
        F = FL + Cx * Ax
        G = GL + Cy * Ay
        return np.where(D, c - dt * div(F, G), c)


def _movie_velocity(movie: FieldMovie):
    if movie.u is None or movie.v is None:
        raise ValueError("velocity movie needs u and v")
    for name in ("u", "v"):
        if not np.all(np.isfinite(getattr(movie, name))):
            raise ValueError("velocity contains NaN or inf")

    def vel(t):
        return movie.frame_at("u", t), movie.frame_at("v", t)

    vmax = max(float(np.max(np.hypot(movie.u[k], movie.v[k]))) for k in range(movie.nt))
    return vel, vmax


def advect_weno3(
    c_init: np.ndarray,
    velocity,
    dt: float,
    n_steps: int,
    inlet_bc: Callable[[float], float] | None = None,
    *,
    dx: float | None = None,
    dy: float | None = None,
    mask: np.ndarray | None = None,
    lumen: np.ndarray | None = None,
    inlet: np.ndarray | None = None,
    t0: float = 0.0,
    save_every: int = 1,
    periodic_x: bool = False,
    cfl_max: float = 0.3,
    bounds: tuple[float, float] | None = None,
) -> np.ndarray:
    """Solve dc/dt + div(u c) = 0 with WENO3 fluxes and SSP-RK3 steps.

    ``velocity`` is a FieldMovie (linear interpolation between frames) or a
    callable ``t -> (u, v)`` of cell-centred arrays. ``mask`` is the solution
    domain; faces to lumen cells outside it are open (outflow, zero inflow),
    faces to non-lumen cells are walls. ``inlet`` cells are held at
    ``inlet_bc(t)`` (default: leftmost domain column). A flux limiter keeps
    the solution within the initial/boundary range.

    Returns ``n_steps // save_every + 1`` frames, the first being ``c_init``.
    """
    c_init = np.asarray(c_init, float)
    ny, nx = c_init.shape
    if isinstance(velocity, FieldMovie):
        vel_fn, vmax = _movie_velocity(velocity)
        dx = velocity.dx if dx is None else dx
        if lumen is None and velocity.lumen is not None:
            lumen = velocity.lumen
    else:
        vel_fn, vmax = velocity, None
    if dx is None:
        raise ValueError("dx is required for callable velocities")
    dy = dx if dy is None else dy
    dom = np.ones((ny, nx), bool) if mask is None else np.asarray(mask, bool)
    lumen = dom if lumen is None else (np.asarray(lumen, bool) | dom)
    if inlet is None:
        inlet = np.zeros_like(dom)
        if inlet_bc is not None:
            cols = np.nonzero(dom.any(axis=0))[0]
            inlet[:, cols[0]] = dom[:, cols[0]]
    inlet = np.asarray(inlet, bool) & dom
    if vmax is not None and vmax * dt / min(dx, dy) > cfl_max + 1e-12:
        raise ValueError(f"CFL {vmax * dt / min(dx, dy):.3f} exceeds {cfl_max}")

    # crop to the domain bounding box plus ghost cells
    rows = np.nonzero(dom.any(axis=1))[0]
    cols = np.nonzero(dom.any(axis=0))[0]
    pad = 3
    r0, r1 = rows[0] - pad, rows[-1] + pad + 1
    if periodic_x:
        k0, k1 = 0, nx
    else:
        k0, k1 = cols[0] - pad, cols[-1] + pad + 1

    def crop(a, fill):
        out = np.full((r1 - r0, k1 - k0), fill, dtype=a.dtype)
        rs, re = max(r0, 0), min(r1, ny)
        cs, ce = max(k0, 0), min(k1, nx)
        out[rs - r0:re - r0, cs - k0:ce - k0] = a[rs:re, cs:ce]
        return out

    D, Lm, In = crop(dom, False), crop(lumen, False), crop(inlet, False)
    c = crop(c_init, 0.0)
    stage_times = t0 + dt * np.concatenate([np.arange(n_steps + 1), np.arange(n_steps) + 0.5])
    if bounds is None:
        vals = [0.0, float(c_init[dom].min()), float(c_init[dom].max())]
        if inlet_bc is not None and In.any():
            bc = np.asarray([inlet_bc(t) for t in stage_times], float)
            vals += [float(bc.min()), float(bc.max())]
        bounds = (min(vals), max(vals))
    st = _Stepper(D, Lm, In, dx, dy, *bounds)

    def vel(t):
        u, v = vel_fn(t)
        u, v = np.asarray(u, float), np.asarray(v, float)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("velocity contains NaN or inf")
        u, v = crop(u, 0.0), crop(v, 0.0)
        if vmax is None:
            cfl = float(np.max(np.hypot(u, v)[Lm], initial=0.0)) * dt / min(dx, dy)
            if cfl > cfl_max + 1e-12:
                raise ValueError(f"CFL {cfl:.3f} exceeds {cfl_max} at t={t:.4g}")
        return u, v

    def apply_bc(a, t):
        if inlet_bc is not None and In.any():
            a[In] = inlet_bc(t)
        return a

    c = apply_bc(c, t0)
    frames = [c_init.copy()]
    if inlet_bc is not None and inlet.any():
        frames[0][inlet] = inlet_bc(t0)
    for n in range(n_steps):
        t = t0 + n * dt
        u, v = vel(t)
        c1 = apply_bc(st.euler(c, u, v, dt), t + dt)
        u, v = vel(t + dt)
        c2 = apply_bc(0.75 * c + 0.25 * st.euler(c1, u, v, dt), t + 0.5 * dt)
        u, v = vel(t + 0.5 * dt)
        c = apply_bc(c / 3.0 + 2.0 / 3.0 * st.euler(c2, u, v, dt), t + dt)
        if (n + 1) % save_every == 0:
            full = c_init.copy()
            rs, re = max(r0, 0), min(r1, ny)
            cs, ce = max(k0, 0), min(k1, nx)
            full[rs:re, cs:ce] = np.where(dom[rs:re, cs:ce], c[rs - r0:re - r0, cs - k0:ce - k0], full[rs:re, cs:ce])
            frames.append(full)
    return np.stack(frames)


# --------------------------------------------------------------------------
# Self-contained channel ground truth


def synthesize_channel_case(
    params: FlowParams,
    grid: GridSpec,
    nt: int,
    *,
    duration: float,
    geometry: ChannelGeometry | None = None,
    spinup: float = 0.0,
    cfl: float = 0.3,
) -> FieldMovie:
    """Womersley channel flow with WENO3-transported inlet contrast.

    ``duration`` and ``spinup`` are nondimensional times; frames span
    ``[0, duration]`` and the contrast solve starts at ``-spinup`` from an
    empty channel.
    """
    geometry = geometry or ChannelGeometry(H=params.H)
    if not isinstance(geometry, ChannelGeometry):
        raise ValueError("synthesize_channel_case needs a straight channel geometry")
    if abs(geometry.H - params.H) > 1e-12:
        raise ValueError("geometry and flow parameters disagree on H")
    mask = build_bifurcation_mask(geometry, grid)
    X, Y = grid.mesh()
    lumen = mask.lumen
    yt = np.clip(Y / params.H, -0.5, 0.5)
    steady, osc = _womersley_parts(yt, params)
    steady = np.where(lumen, steady, 0.0)
    osc = np.where(lumen, osc, 0.0)
    times = np.linspace(0.0, duration, nt)

    def u_at(t):
        return steady + np.real(osc * np.exp(1j * params.St * t))

    zeros = np.zeros_like(steady)
    u = np.stack([u_at(t) for t in times])
    v = np.zeros_like(u)
    xt = X / params.H - geometry.x_start / params.H
    p = np.stack([np.where(lumen, womersley_pressure_gradient(t, params) * xt, 0.0) for t in times])

    dx = grid.pixel_size / params.H
    vmax = float(np.max(steady + np.abs(osc)))
    dt_frame = duration / (nt - 1)
    n_sub = max(1, math.ceil(dt_frame * vmax / (cfl * dx) - 1e-9))
    dt = dt_frame / n_sub
    n_spin = math.ceil(spinup / dt_frame - 1e-9) * n_sub if spinup > 0 else 0
    c = advect_weno3(
        np.zeros_like(steady),
        lambda t: (u_at(t), zeros),
        dt,
        n_spin + (nt - 1) * n_sub,
        lambda t: float(inlet_concentration(t, params)),
        dx=dx,
        mask=mask.roi,
        lumen=lumen,
        t0=-n_spin * dt,
        save_every=n_sub,
        cfl_max=cfl,
    )
    c = c[n_spin // n_sub:]
    meta = {"source": "womersley_channel", "flow": params.to_dict(), "geometry": geometry.to_dict(),
            "spinup": n_spin * dt}
    return FieldMovie(grid, times, params.u_c, params.H, c=c, u=u, v=v, p=p, lumen=lumen, roi=mask.roi, meta=meta)
