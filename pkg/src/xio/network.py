"""Dual-stage-attention displacement network.

A 1-second, 6-axis IMU window is split into segments per axis, linearly
embedded with positional terms, and run through a hierarchical encoder whose
layers each apply (a) temporal self-attention within every axis and (b)
router-mediated attention across axes, halving the segment count between
layers.  A mirrored decoder cross-attends to every encoder resolution and a
linear head emits the 3-D displacement plus per-axis log-standard-deviations
(covariance = diag(exp(2s)), positive definite by construction).

Everything runs in float64; construction is deterministic in the config
seed.  Forward/backward on one instance is serial; inference with frozen
parameters is safe from multiple threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoints import load_into, read_checkpoint, save_checkpoint
from .errors import MalformedInput, OddSegmentCount, ShapeMismatch
from .types import DisplacementEstimate, ImuSequence

DTYPE = torch.float64


@dataclass
class NetConfig:
    L: int = 200            # window length [samples]
    L_seg: int = 25         # segment length [samples]
    D: int = 6              # input axes (3 gyro + 3 accel)
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 3       # encoder depth (decoder gets n_layers + 1)
    c_routers: int = 2
    mlp_hidden: int = 0     # 0 -> 2 * d_model
    seed: int = 0

    def __post_init__(self):
        if self.mlp_hidden == 0:
            self.mlp_hidden = 2 * self.d_model
        if self.L % self.L_seg != 0:
            raise MalformedInput("L must be divisible by L_seg")
        if self.d_model % self.n_heads != 0:
            raise MalformedInput("d_model must be divisible by n_heads")
        if self.n_layers < 1:
            raise MalformedInput("n_layers must be >= 1")
        if (self.L // self.L_seg) % (2 ** (self.n_layers - 1)) != 0:
            raise MalformedInput(
                "L/L_seg must be divisible by 2^(n_layers-1)")

    @property
    def n_seg(self) -> int:
        return self.L // self.L_seg


def _linear(n_in: int, n_out: int, gen: torch.Generator,
            zero: bool = False) -> nn.Linear:
    """Linear layer with symmetric uniform fan-in init (bias zero)."""
    lin = nn.Linear(n_in, n_out, dtype=DTYPE)
    with torch.no_grad():
        if zero:
            lin.weight.zero_()
        else:
            bound = 1.0 / math.sqrt(n_in)
            lin.weight.uniform_(-bound, bound, generator=gen)
        lin.bias.zero_()
    return lin


def _embedding(shape, gen: torch.Generator) -> nn.Parameter:
    t = torch.empty(*shape, dtype=DTYPE)
    with torch.no_grad():
        t.normal_(0.0, 0.02, generator=gen)
    return nn.Parameter(t)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention, softmax(Q K^T / sqrt(d_k)) V."""

    def __init__(self, d_model: int, n_heads: int, gen: torch.Generator):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = _linear(d_model, d_model, gen)
        self.wk = _linear(d_model, d_model, gen)
        self.wv = _linear(d_model, d_model, gen)
        self.wo = _linear(d_model, d_model, gen)

    def forward(self, q: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        b, nq, d = q.shape
        nk = kv.shape[1]
        h, dh = self.n_heads, self.d_head
        qh = self.wq(q).view(b, nq, h, dh).transpose(1, 2)
        kh = self.wk(kv).view(b, nk, h, dh).transpose(1, 2)
        vh = self.wv(kv).view(b, nk, h, dh).transpose(1, 2)
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
        out = torch.softmax(scores, dim=-1) @ vh
        return self.wo(out.transpose(1, 2).reshape(b, nq, d))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int, gen: torch.Generator):
        super().__init__()
        self.fc1 = _linear(d_model, hidden, gen)
        self.fc2 = _linear(hidden, d_model, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class TemporalSelfAttention(nn.Module):
    """Self-attention over the segment axis, independently per input axis
    (no mixing across axes), pre-norm residual blocks."""

    def __init__(self, cfg: NetConfig, gen: torch.Generator):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, gen)
        self.norm2 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.mlp = FeedForward(cfg.d_model, cfg.mlp_hidden, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d_axes, dm = x.shape
        y = x.permute(0, 2, 1, 3).reshape(b * d_axes, n, dm)
        yn = self.norm1(y)
        y = y + self.attn(yn, yn)
        y = y + self.mlp(self.norm2(y))
        return y.view(b, d_axes, n, dm).permute(0, 2, 1, 3)


class DimensionalSelfAttention(nn.Module):
    """Two-hop router attention across the axis dimension per segment:
    learnable routers aggregate from the axes, then the axes redistribute
    from the routers (cost linear in the axis count)."""

    def __init__(self, cfg: NetConfig, gen: torch.Generator):
        super().__init__()
        self.routers = _embedding((cfg.c_routers, cfg.d_model), gen)
        self.norm1 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.aggregate = MultiHeadAttention(cfg.d_model, cfg.n_heads, gen)
        self.distribute = MultiHeadAttention(cfg.d_model, cfg.n_heads, gen)
        self.norm2 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.mlp = FeedForward(cfg.d_model, cfg.mlp_hidden, gen)

    def router_attention(self, y: torch.Tensor) -> torch.Tensor:
        """The bare two-hop map on (B', D, d_model) features."""
        routers = self.routers.unsqueeze(0).expand(y.shape[0], -1, -1)
        hub = self.aggregate(routers, y)
        return self.distribute(y, hub)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d_axes, dm = x.shape
        y = x.reshape(b * n, d_axes, dm)
        y = y + self.router_attention(self.norm1(y))
        y = y + self.mlp(self.norm2(y))
        return y.view(b, n, d_axes, dm)


class DualStageBlock(nn.Module):
    def __init__(self, cfg: NetConfig, gen: torch.Generator):
        super().__init__()
        self.temporal = TemporalSelfAttention(cfg, gen)
        self.dimensional = DimensionalSelfAttention(cfg, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.dimensional(self.temporal(x))


class MergeSegments(nn.Module):
    """Concatenate adjacent segment pairs and project back to d_model."""

    def __init__(self, cfg: NetConfig, gen: torch.Generator):
        super().__init__()
        self.proj = _linear(2 * cfg.d_model, cfg.d_model, gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[1]
        if n % 2 != 0:
            raise OddSegmentCount(f"cannot merge {n} segments")
        paired = torch.cat([x[:, 0::2], x[:, 1::2]], dim=-1)
        return self.proj(paired)


class SegmentEmbedding(nn.Module):
    """h[i,j] = H @ x_seg[i,j] + E_pos[i,j]."""

    def __init__(self, cfg: NetConfig, gen: torch.Generator):
        super().__init__()
        self.cfg = cfg
        bound = 1.0 / math.sqrt(cfg.L_seg)
        h = torch.empty(cfg.d_model, cfg.L_seg, dtype=DTYPE)
        with torch.no_grad():
            h.uniform_(-bound, bound, generator=gen)
        self.proj = nn.Parameter(h)
        self.pos = _embedding((cfg.n_seg, cfg.D, cfg.d_model), gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if x.shape[-2:] != (cfg.D, cfg.L):
            raise ShapeMismatch(f"expected input (*, {cfg.D}, {cfg.L}), "
                                f"got {tuple(x.shape)}")
        segs = x.view(x.shape[0], cfg.D, cfg.n_seg, cfg.L_seg)
        emb = torch.einsum("ml,bdnl->bndm", self.proj, segs)
        return emb + self.pos


class DecoderLayer(nn.Module):
    """Dual-stage attention on the decoder state, then per-axis
    cross-attention against one encoder resolution, then an MLP."""

    def __init__(self, cfg: NetConfig, gen: torch.Generator):
        super().__init__()
        self.dsa = DualStageBlock(cfg, gen)
        self.norm_q = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.norm_kv = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.cross = MultiHeadAttention(cfg.d_model, cfg.n_heads, gen)
        self.norm2 = nn.LayerNorm(cfg.d_model, dtype=DTYPE)
        self.mlp = FeedForward(cfg.d_model, cfg.mlp_hidden, gen)

    def forward(self, z: torch.Tensor, enc: torch.Tensor) -> torch.Tensor:
        z = self.dsa(z)
        b, nz, d_axes, dm = z.shape
        nk = enc.shape[1]
        zq = z.permute(0, 2, 1, 3).reshape(b * d_axes, nz, dm)
        ek = enc.permute(0, 2, 1, 3).reshape(b * d_axes, nk, dm)
        zq = zq + self.cross(self.norm_q(zq), self.norm_kv(ek))
        z = zq.view(b, d_axes, nz, dm).permute(0, 2, 1, 3)
        return z + self.mlp(self.norm2(z))


class DisplacementNet(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        self.embed = SegmentEmbedding(config, gen)
        self.enc_blocks = nn.ModuleList(
            [DualStageBlock(config, gen) for _ in range(config.n_layers)])
        self.merges = nn.ModuleList(
            [MergeSegments(config, gen) for _ in range(config.n_layers - 1)])
        self.dec_seed = _embedding((1, config.D, config.d_model), gen)
        self.dec_layers = nn.ModuleList(
            [DecoderLayer(config, gen) for _ in range(config.n_layers + 1)])
        self.final_norm = nn.LayerNorm(config.d_model, dtype=DTYPE)
        # zero weights + log-std bias so the covariance starts at 0.01 I
        self.head = _linear(config.D * config.d_model, 6, gen, zero=True)
        with torch.no_grad():
            self.head.bias[3:] = math.log(0.1)

    def embed_segments(self, x: torch.Tensor) -> torch.Tensor:
        return self.embed(x)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Multi-resolution features; element 0 is the embedding itself."""
        y = self.embed(x)
        outs = [y]
        cur = y
        for i, block in enumerate(self.enc_blocks):
            if i > 0:
                cur = self.merges[i - 1](cur)
            cur = block(cur)
            outs.append(cur)
        return outs

    def decode_and_regress(self, encs: list[torch.Tensor]
                           ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (displacement, log_std), each (B, 3)."""
        b = encs[0].shape[0]
        z = self.dec_seed.unsqueeze(0).expand(b, -1, -1, -1)
        for k, layer in enumerate(self.dec_layers):
            z = layer(z, encs[k])
        z = self.final_norm(z)
        out = self.head(z.reshape(b, -1))
        return out[:, :3], out[:, 3:]

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.decode_and_regress(self.encode(x))

    @torch.no_grad()
    def predict(self, window: ImuSequence) -> DisplacementEstimate:
        """Inference on one (already gravity-aligned) window."""
        x = window_to_tensor(window).unsqueeze(0)
        d, s = self.forward(x)
        sigma = torch.diag(torch.exp(2.0 * s[0]))
        return DisplacementEstimate(d=d[0].numpy(), cov=sigma.numpy())


def window_to_tensor(window: ImuSequence) -> torch.Tensor:
    """Stack a window into the (D, L) network input: gyro rows then accel."""
    arr = np.concatenate([window.w.T, window.a.T], axis=0)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(DTYPE)


def save_displacement_checkpoint(path, net: DisplacementNet) -> None:
    save_checkpoint(path, net, kind="displacement")


def load_displacement_checkpoint(path) -> DisplacementNet:
    cfg_dict, params = read_checkpoint(path, expect_kind="displacement")
    net = DisplacementNet(NetConfig(**cfg_dict))
    load_into(net, params, path)
    net.eval()
    return net
