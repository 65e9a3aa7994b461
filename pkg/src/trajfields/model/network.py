"""Encoder / interaction / decoder network emitting composite fields."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import kernels
from ..dataset import IMAGE, SEMANTIC_CLASSES
from ..fields import GRID
from .layers import ConvLSTMCell, NonLocalBlock

VARIANTS = ("none", "I1", "I2", "I3", "I4")
INPUT_RADIUS = 10


@dataclass
class ModelConfig:
    variant: str = "I4"
    T_obs: int = 8
    T_pred: int = 12
    enc_channels: tuple = (16, 32)
    hidden: int = 32
    dec_hidden: int = 32
    sem_channels: int = 16
    kernel_size: int = 3
    norm_groups: int = 4
    inter_channels: int | None = None
    shared_theta: bool = False
    nonlocal_impl: str = "sorted"
    head_prior: float | None = 0.01

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.head_prior is not None and not 0 < self.head_prior < 1:
            raise ValueError("head_prior must lie in (0, 1)")
        self.enc_channels = tuple(self.enc_channels)

    def arch_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def rasterize_past(past, radius: float = INPUT_RADIUS) -> np.ndarray:
    """Binary maps ``(T_obs, 256, 256)`` marking agents' Manhattan diamonds."""
    past = np.asarray(past, dtype=np.float64)
    if past.ndim == 2:
        past = past[:, None]
    T = past.shape[1]
    return np.stack([kernels.rasterize(past[:, t], float(radius), IMAGE) for t in range(T)])


def batch_inputs(samples, semantic_maps=None, dtype=torch.float32):
    """Stack samples into ``(B, T_obs, 1, 256, 256)`` maps and ``(B, 5, 256, 256)`` context."""
    maps = np.stack([rasterize_past(s.past) for s in samples])[:, :, None]
    maps_t = torch.from_numpy(maps).to(dtype)
    sem_t = None
    if semantic_maps is not None:
        sem_t = torch.from_numpy(np.stack([np.asarray(m) for m in semantic_maps])).to(dtype)
    return maps_t, sem_t


class PastEncoder(nn.Module):
    """Strided convs (256 -> 64) followed by two normalised Conv-LSTM layers."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2 = cfg.enc_channels
        k = cfg.kernel_size
        self.convs = nn.Sequential(
            nn.Conv2d(1, c1, k, stride=2, padding=k // 2), nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, k, stride=2, padding=k // 2), nn.ReLU(inplace=True),
        )
        self.lstm1 = ConvLSTMCell(c2, cfg.hidden, k)
        self.norm1 = nn.GroupNorm(cfg.norm_groups, cfg.hidden)
        self.lstm2 = ConvLSTMCell(cfg.hidden, cfg.hidden, k)
        self.norm2 = nn.GroupNorm(cfg.norm_groups, cfg.hidden)

    def forward(self, maps):
        """``maps``: ``(B, T, 1, H, W)`` -> ``X_e`` ``(B, C, T, H/4, W/4)`` and final states."""
        B, T = maps.shape[:2]
        feats = self.convs(maps.flatten(0, 1)).unflatten(0, (B, T))
        s1 = s2 = None
        hidden = []
        for t in range(T):
            h1, s1 = self.lstm1(feats[:, t], s1)
            h2, s2 = self.lstm2(self.norm1(h1), s2)
            hidden.append(self.norm2(h2))
        return torch.stack(hidden, dim=2), (s1, s2)


class SemanticExtractor(nn.Module):
    """Four conv layers mapping a 5-class map to 64x64 context features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, k, p = cfg.sem_channels, cfg.kernel_size, cfg.kernel_size // 2
        self.net = nn.Sequential(
            nn.Conv2d(len(SEMANTIC_CLASSES), c, k, stride=2, padding=p), nn.ReLU(inplace=True),
            nn.Conv2d(c, c, k, stride=2, padding=p), nn.ReLU(inplace=True),
            nn.Conv2d(c, c, k, padding=p), nn.ReLU(inplace=True),
            nn.Conv2d(c, c, k, padding=p),
        )

    def forward(self, semantic):
        return self.net(semantic)


class Interaction(nn.Module):
    """Social / environmental interaction on the past encoding.

    ``none`` passes ``X_e`` through; I1 fuses the time-concatenated features
    with a 1x1 conv; I2 is a small 3D conv net; I3 is ``S(X_e) + X_e``; I4
    adds the semantic gate ``X_e * J``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.variant = cfg.variant
        C, T = cfg.hidden, cfg.T_obs
        if cfg.variant == "I1":
            self.fuse = nn.Conv2d(C * T, C * T, 1)
        elif cfg.variant == "I2":
            k = cfg.kernel_size
            self.net3d = nn.Sequential(
                nn.Conv3d(C, C, k, padding=k // 2), nn.ReLU(inplace=True),
                nn.Conv3d(C, C, k, padding=k // 2),
            )
        if cfg.variant in ("I3", "I4"):
            self.social = NonLocalBlock(C, cfg.inter_channels, cfg.shared_theta, cfg.nonlocal_impl)
        if cfg.variant == "I4":
            self.attention = nn.Conv2d(cfg.sem_channels, 1, 1)

    def heatmap(self, psi):
        """Attention map ``J`` in ``[0, 1]`` with shape ``(B, 1, N, N)``."""
        return torch.sigmoid(self.attention(psi))

    def forward(self, x_e, psi=None, attention=None):
        v = self.variant
        if v == "none":
            return x_e
        if v == "I1":
            B, C, T, H, W = x_e.shape
            return self.fuse(x_e.reshape(B, C * T, H, W)).reshape(B, C, T, H, W)
        if v == "I2":
            return self.net3d(x_e)
        s = self.social(x_e)
        if v == "I3":
            return s + x_e
        if attention is None:
            if psi is None:
                raise ValueError("variant I4 needs semantic features")
            attention = self.heatmap(psi)
        e = x_e * attention.unsqueeze(2)
        return s + e + x_e


class FutureDecoder(nn.Module):
    """Conv-LSTM decoder producing one (L, A) field pair per future step."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k = cfg.kernel_size
        self.context = nn.Conv2d(cfg.hidden * cfg.T_obs, cfg.dec_hidden, 1)
        self.lstm1 = ConvLSTMCell(cfg.dec_hidden + 3, cfg.dec_hidden, k)
        self.norm1 = nn.GroupNorm(cfg.norm_groups, cfg.dec_hidden)
        self.lstm2 = ConvLSTMCell(cfg.dec_hidden, cfg.dec_hidden, k)
        self.norm2 = nn.GroupNorm(cfg.norm_groups, cfg.dec_hidden)
        self.loc_head = nn.Conv2d(cfg.dec_hidden, 3, 1)
        self.assoc_head = nn.Conv2d(cfg.dec_hidden, 5, 1)

    @torch.no_grad()
    def init_heads(self, prior: float):
        """Start from near-empty fields: zero offsets and confidence ``prior`` everywhere.

        Ground-truth fields are zero on almost every cell, so a He-initialised
        head spends its first epochs unlearning large random outputs.
        """
        logit = math.log(prior / (1 - prior))
        for head, n_off in ((self.loc_head, 2), (self.assoc_head, 4)):
            head.weight[:n_off].zero_()
            head.weight[n_off:].mul_(0.01)
            head.bias[:n_off].zero_()
            head.bias[n_off:].fill_(logit)

    def project(self, x_i):
        B, C, T, H, W = x_i.shape
        return self.context(x_i.reshape(B, C * T, H, W))

    def step(self, ctx, L_prev, state=None):
        """One decoding step; returns ``(L_t, A_t, state)``."""
        s1, s2 = (None, None) if state is None else state
        h1, s1 = self.lstm1(torch.cat([ctx, L_prev], dim=1), s1)
        h2, s2 = self.lstm2(self.norm1(h1), s2)
        h = self.norm2(h2)
        loc = self.loc_head(h)
        assoc = self.assoc_head(h)
        loc = torch.cat([loc[:, :2], torch.sigmoid(loc[:, 2:])], dim=1)
        assoc = torch.cat([assoc[:, :4], torch.sigmoid(assoc[:, 4:])], dim=1)
        return loc, assoc, (s1, s2)


def seed_field(last_map):
    """First-step stand-in for ``L_obs``: the last binary map pooled to 64x64, tiled to 3 channels."""
    factor = last_map.shape[-1] // GRID
    pooled = F.avg_pool2d(last_map, factor)
    return pooled.expand(-1, 3, -1, -1).contiguous()


class TrajectoryNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.encoder = PastEncoder(self.cfg)
        self.semantic = SemanticExtractor(self.cfg) if self.cfg.variant == "I4" else None
        self.interaction = Interaction(self.cfg)
        self.decoder = FutureDecoder(self.cfg)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.Linear)):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        if self.cfg.head_prior is not None:
            self.decoder.init_heads(self.cfg.head_prior)

    def encode(self, maps, semantic=None, attention=None):
        x_e, _ = self.encoder(maps)
        psi = None
        if self.semantic is not None and semantic is not None:
            psi = self.semantic(semantic)
        return self.interaction(x_e, psi, attention)

    def forward(self, maps, semantic=None, teacher=None, T_pred=None, attention=None):
        """Predict ``(L, A)`` of shapes ``(B, T_pred, 3, 64, 64)`` / ``(B, T_pred, 5, 64, 64)``.

        ``teacher`` (``(B, T_pred, 3, 64, 64)``), when given, replaces the
        decoder's own previous localization field from the second step on.
        """
        T_pred = T_pred or self.cfg.T_pred
        if self.cfg.variant == "I4" and semantic is None and attention is None:
            semantic = maps.new_zeros(maps.shape[0], len(SEMANTIC_CLASSES), *maps.shape[-2:])
            semantic[:, 0] = 1.0
        x_i = self.encode(maps, semantic, attention)
        ctx = self.decoder.project(x_i)
        L_prev = seed_field(maps[:, -1])
        state = None
        Ls, As = [], []
        for t in range(T_pred):
            loc, assoc, state = self.decoder.step(ctx, L_prev, state)
            Ls.append(loc)
            As.append(assoc)
            L_prev = teacher[:, t] if teacher is not None else loc
        return torch.stack(Ls, 1), torch.stack(As, 1)
