"""Selective state-space scan and the four cross-scan orderings of a 2-D feature map.

The recurrence is ``h_t = abar_t * h_{t-1} + bbar_t * u_t`` with ``h_{-1} = 0`` and
readout ``y_t = <c_t, h_t> + d * u_t``. ``ssm_recurrence_naive`` is the step-by-step
reference; ``ssm_recurrence`` evaluates the same recurrence as a blocked parallel scan
(Hillis-Steele inside fixed-size chunks, then a second scan over chunk carries).
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

DIRECTIONS = ("LR", "RL", "TB", "BT")


def cross_scan(m: torch.Tensor, direction: str) -> torch.Tensor:
    """Flatten the trailing (C, T) map of ``m`` into a sequence of length C*T."""
    *lead, c, t = m.shape
    if direction == "LR":
        return m.reshape(*lead, c * t)
    if direction == "RL":
        return m.reshape(*lead, c * t).flip(-1)
    if direction == "TB":
        return m.transpose(-1, -2).reshape(*lead, c * t)
    if direction == "BT":
        return m.transpose(-1, -2).reshape(*lead, c * t).flip(-1)
    raise ValueError(f"unknown scan direction {direction!r}")


def cross_unscan(seq: torch.Tensor, direction: str, shape: tuple) -> torch.Tensor:
    """Inverse of :func:`cross_scan`; ``shape`` is the (C, T) map shape."""
    c, t = shape
    lead = seq.shape[:-1]
    if direction == "LR":
        return seq.reshape(*lead, c, t)
    if direction == "RL":
        return seq.flip(-1).reshape(*lead, c, t)
    if direction == "TB":
        return seq.reshape(*lead, t, c).transpose(-1, -2)
    if direction == "BT":
        return seq.flip(-1).reshape(*lead, t, c).transpose(-1, -2)
    raise ValueError(f"unknown scan direction {direction!r}")


def _hillis_steele(a, b, dim):
    # Inclusive scan of the affine maps h -> a*h + b along ``dim``.
    # Returns (cumulative products of a, states with zero initial state).
    n = a.shape[dim]
    off = 1
    while off < n:
        a_hi = a.narrow(dim, off, n - off)
        b_new = torch.cat(
            [b.narrow(dim, 0, off), a_hi * b.narrow(dim, 0, n - off) + b.narrow(dim, off, n - off)],
            dim,
        )
        a = torch.cat([a.narrow(dim, 0, off), a_hi * a.narrow(dim, 0, n - off)], dim)
        b = b_new
        off *= 2
    return a, b


def linear_recurrence(a: torch.Tensor, b: torch.Tensor, chunk: int = 64) -> torch.Tensor:
    """Solve ``h_t = a_t * h_{t-1} + b_t`` along dim 1 with ``h_{-1} = 0``."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    batch, length = a.shape[:2]
    rest = a.shape[2:]
    k = max(1, min(chunk, length))
    m = -(-length // k)
    pad = m * k - length
    if pad:
        a = torch.cat([a, a.new_ones((batch, pad, *rest))], 1)
        b = torch.cat([b, b.new_zeros((batch, pad, *rest))], 1)
    a = a.reshape(batch, m, k, *rest)
    b = b.reshape(batch, m, k, *rest)
    a_cum, h = _hillis_steele(a, b, 2)
    if m > 1:
        _, ends = _hillis_steele(a_cum[:, :, -1], h[:, :, -1], 1)
        enter = torch.cat([torch.zeros_like(ends[:, :1]), ends[:, :-1]], 1)
        h = h + a_cum * enter.unsqueeze(2)
    return h.reshape(batch, m * k, *rest)[:, :length]


def ssm_recurrence(abar, bbar, c, u, d, chunk: int = 64) -> torch.Tensor:
    """Blocked evaluation of the discretized selective recurrence.

    Args:
        abar, bbar: (B, L, D, N) discretized transition and input gains.
        c: (B, L, N) readout vectors.
        u: (B, L, D) input sequence.
        d: (D,) skip coefficients.
    """
    h = linear_recurrence(abar, bbar * u.unsqueeze(-1), chunk)
    return (h * c.unsqueeze(2)).sum(-1) + d * u


def ssm_recurrence_naive(abar, bbar, c, u, d) -> torch.Tensor:
    """Sequential reference for :func:`ssm_recurrence`; one step per time index."""
    batch, length, dch, n = abar.shape
    h = abar.new_zeros(batch, dch, n)
    ys = []
    for t in range(length):
        h = abar[:, t] * h + bbar[:, t] * u[:, t].unsqueeze(-1)
        ys.append((h * c[:, t].unsqueeze(1)).sum(-1) + d * u[:, t])
    return torch.stack(ys, 1)


def discretize(delta, a, b):
    """Zero-order-hold style discretization: abar = exp(delta*A), bbar = delta*B."""
    abar = torch.exp(delta.unsqueeze(-1) * a)
    bbar = delta.unsqueeze(-1) * b.unsqueeze(2)
    return abar, bbar


def _check_finite(y):
    if torch.isfinite(y).all():
        return
    bad = (~torch.isfinite(y)).flatten(2).any(-1).any(0)
    step = int(torch.nonzero(bad)[0])
    raise FloatingPointError(f"selective scan produced a non-finite state at step {step}")


def selective_scan(u, delta, a, b, c, d, chunk: int = 64, naive: bool = False) -> torch.Tensor:
    """Run the input-dependent scan for (B, L, D) inputs with per-step (B, L, D) steps."""
    if u.shape[1] == 0:
        raise ValueError("selective scan needs a nonempty sequence")
    abar, bbar = discretize(delta, a, b)
    if naive:
        y = ssm_recurrence_naive(abar, bbar, c, u, d)
    else:
        y = ssm_recurrence(abar, bbar, c, u, d, chunk)
    _check_finite(y)
    return y


class SelectiveScan(nn.Module):
    """Input-dependent (Mamba-style) scan over a (B, L, D) sequence.

    Delta, B and C are projected from each input step; A is diagonal and negative,
    stored as ``a_log`` so that ``A = -exp(a_log)``.
    """

    def __init__(self, d_inner: int, state_dim: int = 16, chunk: int = 64,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        if state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        self.chunk = chunk
        self.proj_delta = nn.Linear(d_inner, d_inner)
        self.proj_b = nn.Linear(d_inner, state_dim, bias=False)
        self.proj_c = nn.Linear(d_inner, state_dim, bias=False)
        a = torch.arange(1, state_dim + 1, dtype=torch.float32).repeat(d_inner, 1)
        self.a_log = nn.Parameter(torch.log(a))
        self.d = nn.Parameter(torch.ones(d_inner))

        # log-step bias: softplus(bias) spans [dt_min, dt_max] at init
        dt = torch.exp(torch.rand(d_inner) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min))
        with torch.no_grad():
            self.proj_delta.bias.copy_(dt + torch.log(-torch.expm1(-dt)))
            self.proj_delta.weight.mul_(0.1)

    def forward(self, u: torch.Tensor, naive: bool = False) -> torch.Tensor:
        delta = F.softplus(self.proj_delta(u))
        return selective_scan(
            u, delta, -torch.exp(self.a_log), self.proj_b(u), self.proj_c(u), self.d,
            chunk=self.chunk, naive=naive,
        )
