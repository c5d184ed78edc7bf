"""ImageFlow / SinoFlow training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..ctsim import Sinogram
from ..flowgen import FieldMovie
from .losses import SinoflowRenderer, loss_imageflow_data, loss_physics
from .network import FieldNetwork
from .sampling import DomainSampler, ImageDataSampler, RaySampler

log = logging.getLogger(__name__)

MODES = ("imageflow", "sinoflow")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "sinoflow"
    iterations: int = 300_000
    lr: float = 1e-3
    lr_final: float | None = None  # exponential decay target; None keeps lr constant
    lambda0: float = 1.0
    n_p: int = 1600
    lambda1: float | None = None  # None -> 1/n_p
    Re: float = 1184.0
    n_phys: int = 4096
    n_data: int = 4096
    n_rays: int = 16
    depth: int = 10
    width: int = 200
    seed: int = 0
    derivative: str = "jet"
    length_unit: str = "cm"
    history_every: int = 100
    checkpoint_every: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.iterations < 1 or self.n_phys < 1:
            raise ValueError("iterations and n_phys must be positive")

    @property
    def lam1(self) -> float:
        return 1.0 / self.n_p if self.lambda1 is None else self.lambda1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingProblem:
    """Everything a training run needs besides the network."""

    geometry: object
    time_scale: float  # s per nondimensional time unit
    window: tuple[float, float]  # nondimensional
    half_fov: tuple[float, float]  # cm
    pixel_size: float  # cm
    recon: FieldMovie | None = None
    sinogram: Sinogram | None = None

    def domain(self) -> DomainSampler:
        return DomainSampler(self.geometry, self.window)


class TrainingAborted(RuntimeError):
    def __init__(self, reason: str, history: list, iteration: int):
        super().__init__(f"{reason} at iteration {iteration}")
        self.reason = reason
        self.history = history
        self.iteration = iteration


@dataclass
class TrainResult:
    net: FieldNetwork
    history: list[dict] = field(default_factory=list)
    iterations: int = 0
    wall_time: float = 0.0


def make_network(problem: TrainingProblem, config: TrainConfig) -> FieldNetwork:
    dom = problem.domain()
    return FieldNetwork(dom.lo, dom.hi, config.depth, config.width, config.seed, getattr(torch, config.dtype))


def save_checkpoint(path, net: FieldNetwork, config: TrainConfig, iteration: int, optimizer=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"state": net.state_dict(), "net_config": net.config(), "train_config": config.to_dict(),
            "iteration": iteration}
    if optimizer is not None:
        blob["optimizer"] = optimizer.state_dict()
    tmp = path.with_suffix(".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[FieldNetwork, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    net = FieldNetwork.from_config(blob["net_config"])
    net.load_state_dict(blob["state"])
    return net, blob


def write_history_csv(history: list[dict], path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["iteration", "L_physics", "L_data", "L_total"])
        w.writeheader()
        for row in history:
            w.writerow(row)


def read_history_csv(path) -> list[dict]:
    with open(path) as f:
        return [{"iteration": int(r["iteration"]), **{k: float(r[k]) for k in ("L_physics", "L_data", "L_total")}}
                for r in csv.DictReader(f)]


def train(net: FieldNetwork, problem: TrainingProblem, config: TrainConfig, checkpoint_dir=None,
          progress=None) -> TrainResult:
    """Adam on L_physics + L_data with batches redrawn every iteration.

    History rows hold the mean losses since the previous row (the first row
    is iteration 1 alone). A NaN loss or a loss above 1e3 x the first value
    for 1e3 consecutive iterations aborts with ``TrainingAborted`` after a
    checkpoint is written (when ``checkpoint_dir`` is given).
    """
    dtype = net.lo.dtype
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    domain = problem.domain()
    if config.mode == "imageflow":
        if problem.recon is None:
            raise ValueError("imageflow training needs a reconstructed movie")
        data = ImageDataSampler(problem.recon, domain)
    else:
        if problem.sinogram is None:
            raise ValueError("sinoflow training needs a sinogram")
        data = RaySampler(problem.sinogram, domain, problem.time_scale)
        renderer = SinoflowRenderer(config.n_p, problem.geometry.H, problem.half_fov, problem.geometry.roi,
                                    config.lam1, config.length_unit, problem.pixel_size)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    sched = None
    if config.lr_final is not None:
        gamma = (config.lr_final / config.lr) ** (1.0 / config.iterations)
        sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None

    history: list[dict] = []
    acc = np.zeros(3)
    n_acc = 0
    first = None
    above = 0
    t0 = time.time()
    for it in range(1, config.iterations + 1):
        phys = torch.as_tensor(domain.sample(config.n_phys, rng), dtype=dtype)
        lp = loss_physics(net, phys, config.Re, config.derivative)
        if config.mode == "imageflow":
            pts, c = data.sample(config.n_data, rng)
            ld = loss_imageflow_data(net, torch.as_tensor(pts, dtype=dtype), torch.as_tensor(c, dtype=dtype),
                                     config.lambda0)
        else:
            ld = renderer.loss(net, data.sample(config.n_rays, rng))
        loss = lp + ld
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()

        vals = np.array([lp.item(), ld.item(), loss.item()])
        if not np.all(np.isfinite(vals)):
            if ckpt_dir:
                save_checkpoint(ckpt_dir / "abort.pt", net, config, it, opt)
            log.warning("non-finite loss at iteration %d", it)
            raise TrainingAborted("non-finite loss", history, it)
        if first is None:
            first = vals[2]
        above = above + 1 if vals[2] > 1e3 * first else 0
        if above >= 1000:
            if ckpt_dir:
                save_checkpoint(ckpt_dir / "abort.pt", net, config, it, opt)
            log.warning("loss diverged at iteration %d", it)
            raise TrainingAborted("diverged", history, it)
        acc += vals
        n_acc += 1
        if it == 1 or it % config.history_every == 0 or it == config.iterations:
            m = acc / n_acc
            history.append({"iteration": it, "L_physics": m[0], "L_data": m[1], "L_total": m[2]})
            acc[:] = 0
            n_acc = 0
            if progress:
                progress(history[-1])
        if ckpt_dir and config.checkpoint_every and it % config.checkpoint_every == 0:
            save_checkpoint(ckpt_dir / "last.pt", net, config, it, opt)
    if ckpt_dir:
        save_checkpoint(ckpt_dir / "final.pt", net, config, config.iterations)
        write_history_csv(history, ckpt_dir / "history.csv")
    return TrainResult(net, history, config.iterations, time.time() - t0)
