"""Experiment configuration: YAML in, fully determined sweep cells out."""
from __future__ import annotations

import copy
import itertools
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from ..ctsim import FanBeamGeometry, ScanProtocol, rotations_for_window
from ..flowgen import FlowParams
from ..geometry import GridSpec, geometry_from_dict
from ..pinn import TrainConfig
from ..store import config_hash

KINDS = ("grs_sweep", "noise_sweep", "pulse_sweep", "single_run")
METHODS = ("imageflow", "sinoflow", "fbp")


class ConfigError(ValueError):
    pass


# Desk scale: 256^2 grid over 12.8 cm around a 9 cm channel, one second of flow.
# Sinogram lengths in pixels: with n_p equal to the grid size the quadrature step is one pixel.
DESK_TRAIN = dict(iterations=10_000, lr=1e-3, lr_final=1e-4, n_p=256, n_phys=1024, n_data=1024, n_rays=256,
                  length_unit="pixel", depth=6, width=64, history_every=500)


@dataclass
class ExperimentConfig:
    kind: str = "single_run"
    geometry: dict = field(default_factory=lambda: {"kind": "channel", "H": 1.5, "length": 9.0})
    flow: dict = field(default_factory=lambda: {"beta": 1 / math.pi})
    grid: dict = field(default_factory=lambda: {"n": 256, "fov": 12.8})
    fan: dict = field(default_factory=dict)  # FanBeamGeometry overrides; channel count defaults to the grid size
    ground_truth: dict = field(default_factory=lambda: {"source": "womersley_channel", "nt": 101, "duration_s": 1.0,
                                                        "spinup": 10.0})
    window_s: float | None = None  # analysed interval from t=0; defaults to the ground-truth duration
    grs: list = field(default_factory=lambda: [4.0])
    theta0: list = field(default_factory=lambda: [0.0])
    I0: list = field(default_factory=lambda: [None])  # None = noise-free
    cnr: list | None = None  # alternative to I0, converted with the packaged calibration table
    pulse: list = field(default_factory=lambda: [{"duty_cycle": 1.0, "pulse_width": None}])
    methods: list = field(default_factory=lambda: ["sinoflow"])
    train: dict = field(default_factory=lambda: dict(DESK_TRAIN))
    output_dir: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    # ---------------------------------------------------------------- io

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = copy.deepcopy(d)
        if "train" in d:
            d["train"] = {**DESK_TRAIN, **d["train"]}
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self, path=None) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    # ---------------------------------------------------------------- checks

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}")
        for name in ("grs", "theta0", "pulse"):
            if not isinstance(getattr(self, name), list) or not getattr(self, name):
                raise ConfigError(f"{name} must be a non-empty list")
        if any(not g > 0 for g in self.grs):
            raise ConfigError("gantry rotation speeds must be positive")
        if self.cnr is not None and self.I0 not in ([None], None):
            raise ConfigError("give either I0 or cnr levels, not both")
        try:
            self.geometry_obj()
            self.flow_params()
            self.grid_spec()
            self.fan_geometry()
            TrainConfig(mode="sinoflow", **self.train)
            for pulse in self.pulse:
                ScanProtocol(duty_cycle=pulse.get("duty_cycle", 1.0),
                             pulse_width=pulse.get("pulse_width") or math.inf)
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(str(e)) from e
        src = self.ground_truth.get("source")
        if src not in ("womersley_channel", "file"):
            raise ConfigError("ground_truth.source must be 'womersley_channel' or 'file'")
        if src == "file" and not self.ground_truth.get("path"):
            raise ConfigError("ground_truth.path is required for source 'file'")
        if src == "womersley_channel" and self.geometry.get("kind") != "channel":
            raise ConfigError("the analytic Womersley ground truth needs a channel geometry")

    # ---------------------------------------------------------------- builders

    def geometry_obj(self):
        return geometry_from_dict(self.geometry)

    def flow_params(self) -> FlowParams:
        return FlowParams(**self.flow)

    def grid_spec(self) -> GridSpec:
        return GridSpec.square(int(self.grid["n"]), float(self.grid["fov"]))

    def fan_geometry(self) -> FanBeamGeometry:
        grid = self.grid_spec()
        extra = {k: v for k, v in self.fan.items() if k != "n_channels"}
        return FanBeamGeometry.for_grid(grid, self.fan.get("n_channels"), **extra)

    @property
    def window(self) -> float:
        return float(self.window_s if self.window_s is not None else self.ground_truth.get("duration_s", 1.0))

    def noise_levels(self) -> list[dict]:
        if self.cnr is not None:
            from .calibration import i0_for_cnr

            return [{"I0": i0_for_cnr(float(c)), "cnr": float(c)} for c in self.cnr]
        return [{"I0": None if i0 is None else float(i0), "cnr": None} for i0 in (self.I0 or [None])]

    def cells(self) -> list[dict]:
        """Every (GRS, theta0, noise, pulse, method) combination as a self-contained dict."""
        shared = {"geometry": self.geometry, "flow": self.flow, "grid": self.grid, "fan": self.fan_geometry().to_dict(),
                  "ground_truth": self.ground_truth, "window_s": self.window, "train": self.train,
                  "seed": self.seed}
        out = []
        levels = self.noise_levels()
        for idx in itertools.product(range(len(self.grs)), range(len(self.theta0)), range(len(levels)),
                                     range(len(self.pulse))):
            ig, it, iz, ip = idx
            # noise stream depends on the scan indices only, so methods share a sinogram
            noise_seed = int(np.random.SeedSequence([self.seed, *idx]).generate_state(1)[0])
            grs = float(self.grs[ig])
            pulse = self.pulse[ip]
            scan = {"grs": grs, "theta0": float(self.theta0[it]), "I0": levels[iz]["I0"], "cnr": levels[iz]["cnr"],
                    "duty_cycle": float(pulse.get("duty_cycle", 1.0)), "pulse_width": pulse.get("pulse_width"),
                    "n_rotations": rotations_for_window(self.window, grs), "noise_seed": noise_seed}
            for method in self.methods:
                cell = {**copy.deepcopy(shared), "scan": scan, "method": method, "indices": list(idx)}
                cell["cell_id"] = config_hash(cell)
                out.append(cell)
        return out


def scan_protocol(scan: dict) -> ScanProtocol:
    noisy = scan.get("I0") is not None
    return ScanProtocol(grs=scan["grs"], theta0=scan["theta0"], I0=scan["I0"] if noisy else 1e15,
                        pulse_width=scan.get("pulse_width") or math.inf, duty_cycle=scan.get("duty_cycle", 1.0),
                        n_rotations=scan["n_rotations"], noise_enabled=noisy, seed=scan.get("noise_seed", 0))


def desk_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig.from_dict(overrides)
