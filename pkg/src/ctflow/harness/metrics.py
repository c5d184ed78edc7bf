"""Error metrics on section velocity time series, outlet ratio and the
Strouhal gantry-speed threshold."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..flowgen import FieldMovie
from ..geometry import CrossSection
from ..pinn import FieldNetwork, evaluate_fields


class SectionError(ValueError):
    pass


def _section_normal_velocity(source, section: CrossSection, times, u_c=None, H=None) -> np.ndarray:
    """Normal velocity in cm/s at every section point, shape (T, P)."""
    pts = np.asarray(section.points, float)
    n = np.asarray(section.normal, float)
    if isinstance(source, FieldMovie):
        if source.u is None or source.v is None:
            raise ValueError("movie has no velocity fields")
        times = source.times if times is None else np.asarray(times, float)
        ix, iy = section.pixels[:, 0], section.pixels[:, 1]
        g = source.grid
        if ix.min() < 0 or iy.min() < 0 or ix.max() >= g.nx or iy.max() >= g.ny:
            raise SectionError(f"section {section.name!r} lies outside the movie grid")
        if source.lumen is not None and not source.lumen[iy, ix].all():
            raise SectionError(f"section {section.name!r} leaves the lumen")
        out = np.empty((len(times), len(pts)))
        for k, t in enumerate(times):
            u = bilinear_at(source, "u", t, pts)
            v = bilinear_at(source, "v", t, pts)
            out[k] = u * n[0] + v * n[1]
        return out * source.u_c
    if isinstance(source, FieldNetwork):
        if u_c is None or H is None:
            raise ValueError("network sources need the scales u_c (cm/s) and H (cm)")
        if times is None:
            raise ValueError("network sources need explicit sample times")
        times = np.asarray(times, float)
        T, P = len(times), len(pts)
        q = np.column_stack([np.repeat(times, P), np.tile(pts[:, 0], T) / H, np.tile(pts[:, 1], T) / H])
        try:
            f = evaluate_fields(source, q)
        except ValueError as e:
            raise SectionError(f"section {section.name!r}: {e}") from e
        return (f["u"] * n[0] + f["v"] * n[1]).reshape(T, P) * u_c
    raise TypeError(f"unsupported field source {type(source).__name__}")


def bilinear_at(movie: FieldMovie, name: str, t: float, pts: np.ndarray) -> np.ndarray:
    return movie.sample(name, t, pts[:, 0], pts[:, 1])


def velocity_timeseries(source, section: CrossSection, times=None, u_c=None, H=None) -> np.ndarray:
    """Section-mean normal velocity per time in m/s.

    Movies are sampled at their own frame times unless ``times`` is given;
    networks need ``times`` (nondimensional), ``u_c`` (cm/s) and ``H`` (cm).
    """
    return _section_normal_velocity(source, section, times, u_c, H).mean(axis=1) / 100.0


def section_flow(source, section: CrossSection, times=None, u_c=None, H=None) -> np.ndarray:
    """Volumetric flow per unit depth (cm^2/s): midpoint sum of u.n times spacing."""
    return _section_normal_velocity(source, section, times, u_c, H).sum(axis=1) * section.spacing


def decile_errors(pred, truth) -> tuple[float, float, float, float]:
    """(high_err, low_err, range_err, rmse) of two aligned series.

    High and low are means of the top and bottom tenth (at least one sample)
    of each series taken separately.
    """
    pred = np.asarray(pred, float)
    truth = np.asarray(truth, float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError("series must be 1-D and aligned")
    n = len(pred)
    if n < 10:
        raise ValueError("need at least 10 samples for decile statistics")
    k = max(1, int(math.ceil(0.1 * n - 1e-9)))
    ps, ts = np.sort(pred), np.sort(truth)
    hp, ht = ps[-k:].mean(), ts[-k:].mean()
    lp, lt = ps[:k].mean(), ts[:k].mean()
    return (float(abs(hp - ht)), float(abs(lp - lt)), float(abs((hp - lp) - (ht - lt))),
            float(np.sqrt(np.mean((pred - truth) ** 2))))


def outlet_ratio(source, upper: CrossSection, lower: CrossSection, times=None, u_c=None, H=None) -> float:
    """Time-averaged upper flow over time-averaged lower flow."""
    qu = section_flow(source, upper, times, u_c, H).mean()
    ql = section_flow(source, lower, times, u_c, H).mean()
    if abs(ql) < 1e-12:
        raise ValueError("lower outlet carries no flow")
    return float(qu / ql)


@dataclass(frozen=True)
class StrouhalInputs:
    St_flow: float
    omega_flow: float  # 1/s
    L_c_over_H: float
    H: float = 1.5  # cm
    u: float = 30.0  # cm/s

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")


def strouhal_threshold(inputs: StrouhalInputs) -> float:
    """Slowest gantry rotation frequency (Hz) that resolves the bolus front.

    The gantry Strouhal number must exceed the flow one by 2*pi*H/L_c, so
    omega_gantry = 2*pi*omega_flow / (St_flow * L_c/H) and the frequency is
    omega_gantry / (2*pi).
    """
    omega_g = 2 * math.pi * inputs.omega_flow / (inputs.St_flow * inputs.L_c_over_H)
    return omega_g / (2 * math.pi)


METRICS = ("conc_rmse", "vel_rmse", "vel_range_err", "high_vel_err", "low_vel_err", "outlet_ratio")


@dataclass
class MetricsRecord:
    """Errors of one sweep cell; velocities in m/s."""

    cell_id: str
    method: str
    grs: float
    theta0: float
    I0: float | None = None
    cnr: float | None = None
    duty_cycle: float = 1.0
    pulse_width: float | None = None
    status: str = "ok"
    conc_rmse: float | None = None
    vel_rmse: float | None = None
    vel_range_err: float | None = None
    high_vel_err: float | None = None
    low_vel_err: float | None = None
    outlet_ratio: float | None = None
    series: dict = field(default_factory=dict)  # section name -> relative file name
    error: str = ""
    config_hash: str = ""

    def __post_init__(self):
        if self.outlet_ratio is not None and not self.outlet_ratio > 0:
            raise ValueError("outlet ratio must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @property
    def condition(self) -> str:
        parts = [f"grs={self.grs:g}"]
        if self.cnr is not None:
            parts.append(f"cnr={self.cnr:g}")
        elif self.I0 is not None:
            parts.append(f"I0={self.I0:.3g}")
        if self.duty_cycle < 1:
            parts.append(f"duty={self.duty_cycle:g}")
        if self.pulse_width is not None:
            parts.append(f"pw={self.pulse_width:g}")
        return ",".join(parts)


def concentration_rmse(pred_c: np.ndarray, truth_c: np.ndarray, roi: np.ndarray) -> float:
    """RMSE over ROI pixels of all frames."""
    return float(np.sqrt(np.mean([(np.asarray(p)[roi] - np.asarray(t)[roi]) ** 2 for p, t in zip(pred_c, truth_c)])))
