"""Uncertainty-aware training: Huber-Gaussian loss, window extraction,
Adam, and finite-difference gradient verification.

The displacement loss is

    L = L_huber(d_hat - d) + lambda * L_gauss(d_hat - d, Sigma)

with the Huber term applied per axis and summed, and the Gaussian term the
exact negative log-likelihood 0.5 e^T Sigma^-1 e + 0.5 ln det Sigma.  Batch
reduction is the mean.  Shuffling is deterministic in the run seed; gradient
accumulation and optimizer steps are serial.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InsufficientData, MalformedInput, NonPDCovariance
from .eskf import rotate_window
from .geometry import rot_z, yaw_of
from .network import DTYPE, DisplacementNet, window_to_tensor
from .types import ImuSequence, Trajectory


@dataclass
class LossConfig:
    delta: float = 0.005   # Huber knee [m]
    lam: float = 1e-4      # Gaussian-term weight

    def __post_init__(self):
        if self.delta <= 0:
            raise MalformedInput("delta must be > 0")
        if self.lam < 0:
            raise MalformedInput("lambda must be >= 0")


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise MalformedInput("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise MalformedInput("learning_rate must be > 0")


@dataclass
class WindowSample:
    """A gravity-aligned IMU window with its displacement label in the same
    heading-free frame."""
    window: ImuSequence
    d: np.ndarray


# -- loss -----------------------------------------------------------------------

def huber(e, delta: float):
    """Componentwise Huber penalty summed over axes."""
    e = torch.as_tensor(e, dtype=DTYPE)
    abs_e = e.abs()
    quad = 0.5 * e * e
    lin = delta * abs_e - 0.5 * delta * delta
    return torch.where(abs_e <= delta, quad, lin).sum(dim=-1)


def gaussian_nll(e, cov):
    """0.5 e^T cov^-1 e + 0.5 ln det cov (batched over leading dims)."""
    e = torch.as_tensor(e, dtype=DTYPE)
    cov = torch.as_tensor(cov, dtype=DTYPE)
    with torch.no_grad():
        asym = (cov - cov.transpose(-1, -2)).abs().max().item()
        scale = max(1.0, cov.abs().max().item())
    if asym > 1e-9 * scale:
        raise NonPDCovariance("covariance is not symmetric")
    try:
        chol = torch.linalg.cholesky(cov)
    except torch.linalg.LinAlgError:
        raise NonPDCovariance("covariance is not positive definite") from None
    sol = torch.cholesky_solve(e.unsqueeze(-1), chol).squeeze(-1)
    quad = 0.5 * (e * sol).sum(dim=-1)
    half_logdet = torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)).sum(dim=-1)
    return quad + half_logdet


def total_loss(d_hat, cov, d, cfg: LossConfig):
    """Huber term plus lambda-weighted Gaussian NLL; mean over the batch."""
    d_hat = torch.as_tensor(d_hat, dtype=DTYPE)
    d = torch.as_tensor(d, dtype=DTYPE)
    e = d_hat - d
    return (huber(e, cfg.delta) + cfg.lam * gaussian_nll(e, cov)).mean()


def cov_from_logstd(s: torch.Tensor) -> torch.Tensor:
    """Diagonal covariance diag(exp(2s)); PD for every s."""
    return torch.diag_embed(torch.exp(2.0 * s))


# -- windowing ---------------------------------------------------------------------

def make_windows(traj: Trajectory, imu: ImuSequence, length: int,
                 stride: int) -> list[WindowSample]:
    """Cut the stream into gravity-aligned windows with displacement labels.

    A window covers samples [k, k+length); its label is the ground-truth
    position change over the same span, expressed in the window-start
    heading-free frame (matching the rotate_window convention).
    """
    n = len(imu)
    if n < length:
        raise InsufficientData(f"stream has {n} samples, window needs {length}")
    if length < 1 or stride < 1:
        raise MalformedInput("length and stride must be >= 1")
    dt = imu.dt
    samples = []
    for start in range(0, n - length + 1, stride):
        t0 = float(imu.t[start])
        t1 = float(imu.t[start + length]) if start + length < n \
            else float(imu.t[-1]) + dt
        if t0 < traj.t[0] - 1e-9 or t1 > traj.t[-1] + dt + 1e-9:
            raise InsufficientData(
                f"trajectory does not cover window [{t0}, {t1}]")
        if t1 > traj.t[-1]:
            # endpoint up to one sample past the stored poses (files store
            # poses at IMU times): extrapolate with the final velocity
            p1 = traj.p[-1] + traj.v[-1] * (t1 - traj.t[-1])
        else:
            p1 = traj.position_at(t1)
        r0 = traj.rotation_at(t0)
        dp = p1 - traj.position_at(t0)
        label = rot_z(-yaw_of(r0)) @ dp
        window = rotate_window(imu.slice(start, start + length), r0)
        samples.append(WindowSample(window=window, d=label))
    return samples


def stack_windows(samples: list[WindowSample]
                  ) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch a window list into network input (N, D, L) and labels (N, 3)."""
    x = torch.stack([window_to_tensor(s.window) for s in samples])
    d = torch.as_tensor(np.stack([s.d for s in samples]), dtype=DTYPE)
    return x, d


# -- optimizer ---------------------------------------------------------------------

def adam_step(params: list[torch.Tensor], grads: list[torch.Tensor],
              moments: tuple[list, list], cfg: TrainConfig,
              step_index: int) -> list[torch.Tensor]:
    """One in-place Adam update with bias correction (step_index >= 1)."""
    if step_index < 1:
        raise MalformedInput("step_index must be >= 1")
    m, v = moments
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** step_index
    bc2 = 1.0 - b2 ** step_index
    with torch.no_grad():
        for p, g, mk, vk in zip(params, grads, m, v):
            mk.mul_(b1).add_(g, alpha=1.0 - b1)
            vk.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(mk / bc1, (vk / bc2).sqrt().add_(cfg.eps),
                       value=-cfg.learning_rate)
    return params


class Adam:
    """Stateful wrapper around adam_step for a model's parameter list."""

    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads=None):
        self.t += 1
        if grads is None:
            grads = [p.grad if p.grad is not None else torch.zeros_like(p)
                     for p in self.params]
        adam_step(self.params, grads, (self.m, self.v), self.cfg, self.t)

    def zero_grad(self):
        for p in self.params:
            if p.grad is not None:
                p.grad = None


# -- gradient verification -----------------------------------------------------------

@dataclass
class GradCheckReport:
    per_param: dict
    max_rel_err: float
    worst_param: str
    tolerance: float
    passed: bool


def grad_check(net: DisplacementNet, batch, eps: float = 1e-5,
               loss_cfg: LossConfig | None = None,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of the total loss against central
    finite differences, per parameter (double precision, small configs)."""
    loss_cfg = loss_cfg or LossConfig()
    x, d = batch

    def loss_value() -> torch.Tensor:
        d_hat, s = net(x)
        return total_loss(d_hat, cov_from_logstd(s), d, loss_cfg)

    for p in net.parameters():
        p.grad = None
    loss_value().backward()
    analytic = {name: (p.grad.detach().clone() if p.grad is not None
                       else torch.zeros_like(p))
                for name, p in net.named_parameters()}

    report = {}
    with torch.no_grad():
        for name, p in net.named_parameters():
            flat = p.view(-1)
            num = torch.zeros_like(flat)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                up = loss_value().item()
                flat[k] = orig - eps
                down = loss_value().item()
                flat[k] = orig
                num[k] = (up - down) / (2.0 * eps)
            ana = analytic[name].view(-1)
            denom = torch.clamp(ana.abs() + num.abs(), min=1e-8)
            report[name] = float(((ana - num).abs() / denom).max())

    worst = max(report, key=report.get)
    worst_err = report[worst]
    return GradCheckReport(per_param=report, max_rel_err=worst_err,
                           worst_param=worst, tolerance=tolerance,
                           passed=worst_err < tolerance)


# -- training loop ------------------------------------------------------------------

def train_displacement(net: DisplacementNet, samples: list[WindowSample],
                       loss_cfg: LossConfig, train_cfg: TrainConfig,
                       max_steps: int | None = None,
                       log_path=None) -> list[dict]:
    """Train an expert on window samples; returns the per-step history and
    optionally writes it as CSV (step, loss, huber, nll, grad_norm)."""
    x_all, d_all = stack_windows(samples)
    n = x_all.shape[0]
    rng = np.random.default_rng(train_cfg.seed)
    opt = Adam(net.parameters(), train_cfg)
    steps_per_epoch = max(1, math.ceil(n / train_cfg.batch_size))
    budget = max_steps if max_steps is not None \
        else train_cfg.max_epochs * steps_per_epoch

    history = []
    step = 0
    while step < budget:
        order = rng.permutation(n)
        for b0 in range(0, n, train_cfg.batch_size):
            if step >= budget:
                break
            idx = order[b0:b0 + train_cfg.batch_size]
            xb = x_all[idx]
            db = d_all[idx]
            opt.zero_grad()
            d_hat, s = net(xb)
            e = d_hat - db
            hub = huber(e, loss_cfg.delta).mean()
            nll = gaussian_nll(e, cov_from_logstd(s)).mean()
            loss = hub + loss_cfg.lam * nll
            loss.backward()
            gnorm = math.sqrt(sum(float((p.grad ** 2).sum())
                                  for p in net.parameters()
                                  if p.grad is not None))
            opt.step()
            step += 1
            history.append({"step": step, "loss": loss.item(),
                            "huber": hub.item(), "nll": nll.item(),
                            "grad_norm": gnorm})

    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["step", "loss", "huber", "nll", "grad_norm"])
            writer.writeheader()
            writer.writerows(history)
    return history


# -- training manifest ----------------------------------------------------------------

@dataclass
class TrainManifest:
    task: str = "expert"            # "expert" | "classifier"
    data: list = field(default_factory=list)            # xio-v1 paths
    data_human: list = field(default_factory=list)      # classifier only
    data_quadruped: list = field(default_factory=list)
    window_len: int = 200
    stride: int = 200
    max_steps: int = 0              # 0 -> epoch budget
    net: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)


def load_train_manifest(path) -> TrainManifest:
    from .eskf import parse_kv_file
    kv = parse_kv_file(path)
    man = TrainManifest()
    for key, val in kv.items():
        if key == "task":
            if val not in ("expert", "classifier"):
                raise MalformedInput(f"unknown task '{val}'")
            man.task = val
        elif key == "data":
            man.data = val.split()
        elif key == "data.human":
            man.data_human = val.split()
        elif key == "data.quadruped":
            man.data_quadruped = val.split()
        elif key in ("window_len", "stride", "max_steps"):
            setattr(man, key, int(val))
        elif key.startswith("net."):
            name = key[4:]
            man.net[name] = int(val)
        elif key.startswith("loss."):
            man.loss[key[5:]] = float(val)
        elif key.startswith("train."):
            name = key[6:]
            conv = int if name in ("batch_size", "max_epochs", "seed") else float
            man.train[name] = conv(val)
        else:
            raise MalformedInput(f"unknown manifest key '{key}'")
    return man
