"""Building blocks: Conv-LSTM cell and the concatenation non-local block."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM cell with a single fused gate convolution."""

    def __init__(self, in_channels: int, hidden: int, kernel_size: int = 3):
        super().__init__()
        self.hidden = hidden
        self.gates = nn.Conv2d(in_channels + hidden, 4 * hidden, kernel_size, padding=kernel_size // 2)

    def init_state(self, x):
        B, _, H, W = x.shape
        z = x.new_zeros(B, self.hidden, H, W)
        return z, z

    def forward(self, x, state=None):
        h, c = self.init_state(x) if state is None else state
        i, f, o, g = torch.chunk(self.gates(torch.cat([x, h], dim=1)), 4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, (h, c)


def pairwise_relu_sum(a, b, g, impl: str = "sorted"):
    """``q_i = mean_j relu(a_i + b_j) * g_j`` for every position ``i``.

    ``a`` and ``b`` are ``(B, N)``, ``g`` is ``(B, N, C)``.  The ``sorted``
    path is exact and O(N log N): for fixed ``i`` only the ``j`` with
    ``b_j > -a_i`` contribute, which is a suffix of ``b`` in sorted order, so
    the sum reduces to ``a_i * S_g + S_bg`` over that suffix.  ``dense``
    materialises the ``N x N`` matrix.
    """
    B, N, C = g.shape
    if impl == "dense":
        f = F.relu(a[:, :, None] + b[:, None, :])
        return torch.bmm(f, g) / N
    if impl != "sorted":
        raise ValueError(f"unknown pairwise implementation {impl!r}")
    b_sorted, order = torch.sort(b, dim=1)
    g_sorted = torch.gather(g, 1, order[..., None].expand(B, N, C))
    pad = g.new_zeros(B, 1, C)
    suffix_g = torch.cat([torch.flip(torch.cumsum(torch.flip(g_sorted, [1]), 1), [1]), pad], 1)
    bg = b_sorted[..., None] * g_sorted
    suffix_bg = torch.cat([torch.flip(torch.cumsum(torch.flip(bg, [1]), 1), [1]), pad], 1)
    start = torch.searchsorted(b_sorted.detach().contiguous(), (-a).detach().contiguous(), right=True)
    idx = start[..., None].expand(B, N, C)
    return (a[..., None] * torch.gather(suffix_g, 1, idx) + torch.gather(suffix_bg, 1, idx)) / N


class NonLocalBlock(nn.Module):
    """Space-time non-local block with the concatenation pairwise function.

    ``f(z_i, z_j) = relu(w . [theta(z_i), phi(z_j)] + bias)`` and the
    response is normalised by the number of space-time positions.  With
    ``shared_theta`` the same projection is used for both arguments.
    ``forward`` returns only the social term ``S(z)``; callers add the
    residual.
    """

    def __init__(self, channels: int, inter_channels: int | None = None,
                 shared_theta: bool = False, impl: str = "sorted"):
        super().__init__()
        inter = inter_channels or max(channels // 2, 1)
        self.inter = inter
        self.shared_theta = shared_theta
        self.impl = impl
        self.theta = nn.Conv3d(channels, inter, 1)
        self.phi = None if shared_theta else nn.Conv3d(channels, inter, 1)
        self.g = nn.Conv3d(channels, inter, 1, bias=False)
        self.pair = nn.Linear(2 * inter, 1)
        self.out = nn.Conv3d(inter, channels, 1, bias=False)

    def response(self, z):
        """Normalised pairwise aggregation ``q`` with shape ``(B, inter, T, H, W)``."""
        B, _, T, H, W = z.shape
        th = self.theta(z).flatten(2)
        ph = th if self.shared_theta else self.phi(z).flatten(2)
        w = self.pair.weight[0]
        a = torch.einsum("c,bcn->bn", w[: self.inter], th) + self.pair.bias
        b = torch.einsum("c,bcn->bn", w[self.inter :], ph)
        g = self.g(z).flatten(2).transpose(1, 2)
        q = pairwise_relu_sum(a, b, g, self.impl)
        return q.transpose(1, 2).reshape(B, self.inter, T, H, W)

    def forward(self, z):
        return self.out(self.response(z))
