"""Implicit neural field (t, x, y) -> (c, u, v, p)."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

OUTPUTS = ("c", "u", "v", "p")


class DomainError(ValueError):
    pass


class FieldNetwork(nn.Module):
    """SiLU MLP on inputs rescaled to [-1, 1] over ``lo``..``hi``.

    ``lo``/``hi`` are the (t, x, y) bounds in nondimensional units; they are
    stored as buffers so checkpoints carry the normalisation.
    """

    def __init__(self, lo, hi, depth: int = 10, width: int = 200, seed: int = 0, dtype=torch.float32):
        super().__init__()
        lo = torch.as_tensor(lo, dtype=dtype)
        hi = torch.as_tensor(hi, dtype=dtype)
        if lo.shape != (3,) or hi.shape != (3,) or not torch.all(hi > lo):
            raise ValueError("bounds must be 3-vectors with hi > lo")
        self.register_buffer("lo", lo)
        self.register_buffer("hi", hi)
        self.depth, self.width, self.seed = depth, width, seed
        sizes = [3] + [width] * depth + [4]
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:]))
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for lin in self.layers:
                fan_in, fan_out = lin.weight.shape[1], lin.weight.shape[0]
                std = (2.0 / (fan_in + fan_out)) ** 0.5
                lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen, dtype=dtype) * std)
                lin.bias.zero_()

    @property
    def scale(self) -> torch.Tensor:
        return 2.0 / (self.hi - self.lo)

    def config(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "depth": self.depth, "width": self.width,
                "seed": self.seed, "dtype": str(self.lo.dtype).replace("torch.", "")}

    @classmethod
    def from_config(cls, cfg: dict) -> "FieldNetwork":
        return cls(cfg["lo"], cfg["hi"], cfg["depth"], cfg["width"], cfg["seed"], getattr(torch, cfg.get("dtype", "float32")))

    def check_domain(self, pts: torch.Tensor, tol: float = 1e-6):
        span = self.hi - self.lo
        low = pts < self.lo - tol * span
        high = pts > self.hi + tol * span
        if bool(low.any() or high.any()):
            raise DomainError("points outside the network domain (t, x, y) bounds")

    def forward(self, pts: torch.Tensor) -> torch.Tensor:
        h = (pts - self.lo) * self.scale - 1.0
        for lin in self.layers[:-1]:
            h = nn.functional.silu(lin(h))
        return self.layers[-1](h)

    def jet(self, pts: torch.Tensor):
        """Outputs with first (t, x, y) and second (xx, yy) input derivatives.

        Forward-mode propagation through the MLP; returns ``value`` (N, 4),
        ``d1`` (3, N, 4) and ``d2`` (2, N, 4) in nondimensional units.
        """
        z = (pts - self.lo) * self.scale - 1.0
        first = self.layers[0]
        z = first(z)
        # d z / d input_k is constant for the first layer
        dz = (first.weight * self.scale[None, :]).T[:, None, :].expand(3, z.shape[0], -1)
        d2z = None
        for lin in self.layers[1:]:
            sg = torch.sigmoid(z)
            h = z * sg
            a1 = sg * (1 + z * (1 - sg))
            a2 = sg * (1 - sg) * (2 + z * (1 - 2 * sg))
            dh = a1[None] * dz
            d2h = a2[None] * dz[1:] ** 2
            if d2z is not None:
                d2h = d2h + a1[None] * d2z
            z = lin(h)
            w = lin.weight.T
            dz = dh @ w
            d2z = d2h @ w
        return z, dz, d2z


def evaluate_fields(net: FieldNetwork, points, batch: int = 65536) -> dict[str, np.ndarray]:
    """Batched deterministic evaluation at (t, x, y) points (nondimensional)."""
    pts = torch.as_tensor(np.asarray(points), dtype=net.lo.dtype)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (N, 3)")
    net.check_domain(pts)
    outs = []
    with torch.no_grad():
        for i in range(0, len(pts), batch):
            outs.append(net(pts[i:i + batch]))
    out = torch.cat(outs).cpu().numpy() if outs else np.zeros((0, 4))
    return {name: out[:, k] for k, name in enumerate(OUTPUTS)}
