"""Transport and incompressible Navier-Stokes residuals of the field network."""
from __future__ import annotations

import torch

from .network import FieldNetwork


def residuals_from_derivatives(val, d1, d2, Re: float):
    """e1..e4 from values (N, 4), first derivatives (3, N, 4) over (t, x, y)
    and second derivatives (2, N, 4) over (xx, yy)."""
    c, u, v = val[:, 0], val[:, 1], val[:, 2]
    dt, dx, dy = d1[0], d1[1], d1[2]
    lap = d2[0] + d2[1]
    e1 = dt[:, 0] + u * dx[:, 0] + v * dy[:, 0]
    e2 = dt[:, 1] + u * dx[:, 1] + v * dy[:, 1] + dx[:, 3] - lap[:, 1] / Re
    e3 = dt[:, 2] + u * dx[:, 2] + v * dy[:, 2] + dy[:, 3] - lap[:, 2] / Re
    e4 = dx[:, 1] + dy[:, 2]
    return e1, e2, e3, e4


def autograd_derivatives(net: FieldNetwork, pts: torch.Tensor):
    """Reverse-mode reference for ``FieldNetwork.jet``."""
    pts = pts.detach().requires_grad_(True)
    out = net(pts)
    d1 = []
    d2 = []
    for k in range(4):
        g = torch.autograd.grad(out[:, k].sum(), pts, create_graph=True)[0]
        d1.append(g)
        if k in (1, 2):
            gxx = torch.autograd.grad(g[:, 1].sum(), pts, create_graph=True)[0][:, 1]
            gyy = torch.autograd.grad(g[:, 2].sum(), pts, create_graph=True)[0][:, 2]
        else:
            gxx = gyy = torch.zeros_like(g[:, 0])
        d2.append(torch.stack([gxx, gyy]))
    d1 = torch.stack(d1, dim=-1).permute(1, 0, 2)  # (3, N, 4)
    d2 = torch.stack(d2, dim=-1)  # (2, N, 4)
    return out, d1, d2


def physics_residuals(net: FieldNetwork, points: torch.Tensor, Re: float, method: str = "jet"):
    """Residuals (e1, e2, e3, e4) per point.

    ``method='jet'`` propagates derivatives forward through the MLP;
    ``'autograd'`` uses nested reverse-mode differentiation.
    """
    if method == "jet":
        val, d1, d2 = net.jet(points)
    elif method == "autograd":
        val, d1, d2 = autograd_derivatives(net, points)
    else:
        raise ValueError(f"unknown derivative method {method!r}")
    if d1 is None or d2 is None:
        raise RuntimeError("network did not provide input derivatives")
    return residuals_from_derivatives(val, d1, d2, Re)
