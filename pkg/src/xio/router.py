"""Platform classifier and rule-based expert selection.

A three-layer stacked 1-D convolutional block (conv -> batch norm -> ReLU ->
max pool, per layer) feeds adaptive average pooling and a fully connected
layer producing two logits: class 0 = quadruped, class 1 = human.  A plain
if-else rule then routes each window to the matching expert network.

Inference-mode classification (frozen batch-norm statistics) is
deterministic and safe to run concurrently on a shared parameter set.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import torch
from torch import nn

from .checkpoints import load_into, read_checkpoint, save_checkpoint
from .errors import InputTooShort, MalformedInput, MissingExpert
from .network import DTYPE, window_to_tensor
from .training import Adam, TrainConfig
from .types import ImuSequence


class PlatformLabel(IntEnum):
    QUADRUPED = 0
    HUMAN = 1


@dataclass
class PlatformDecision:
    label: PlatformLabel
    confidence: float  # argmax-class probability, in [0.5, 1] for 2 classes


@dataclass
class ClassifierConfig:
    in_channels: int = 6
    channels: tuple = (32, 64, 128)
    kernel: int = 5
    pool: int = 2
    adaptive_len: int = 4
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) != 3:
            raise MalformedInput("classifier uses exactly three conv layers")
        if self.n_classes != 2:
            raise MalformedInput("classifier is a two-way platform decision")


def conv_block(x: torch.Tensor, conv: nn.Conv1d, bn: nn.BatchNorm1d,
               pool: nn.MaxPool1d) -> torch.Tensor:
    """MaxPool(relu(BN(Conv1d(x)))), exactly in that order."""
    if x.shape[-1] < conv.kernel_size[0]:
        raise InputTooShort(f"input length {x.shape[-1]} shorter than "
                            f"kernel {conv.kernel_size[0]}")
    return pool(torch.relu(bn(conv(x))))


class PlatformClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        chans = (config.in_channels,) + config.channels
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        self.pools = nn.ModuleList()
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            conv = nn.Conv1d(c_in, c_out, config.kernel, dtype=DTYPE)
            with torch.no_grad():
                # Kaiming normal, fan-in mode for the ReLU that follows
                std = math.sqrt(2.0 / (c_in * config.kernel))
                conv.weight.normal_(0.0, std, generator=gen)
                conv.bias.zero_()
            self.convs.append(conv)
            self.bns.append(nn.BatchNorm1d(c_out, dtype=DTYPE))
            self.pools.append(nn.MaxPool1d(config.pool))
        self.adaptive = nn.AdaptiveAvgPool1d(config.adaptive_len)
        fc_in = config.channels[-1] * config.adaptive_len
        self.fc = nn.Linear(fc_in, config.n_classes, dtype=DTYPE)
        with torch.no_grad():
            bound = 1.0 / math.sqrt(fc_in)
            self.fc.weight.uniform_(-bound, bound, generator=gen)
            self.fc.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv, bn, pool in zip(self.convs, self.bns, self.pools):
            x = conv_block(x, conv, bn, pool)
        x = self.adaptive(x)
        return self.fc(x.flatten(1))


def classify(window: ImuSequence, net: PlatformClassifier) -> PlatformDecision:
    """Inference-mode decision for one window; ties break to quadruped."""
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            logits = net(window_to_tensor(window).unsqueeze(0))[0]
            probs = torch.softmax(logits, dim=-1)
    finally:
        net.train(was_training)
    p = probs.numpy()
    label = PlatformLabel.QUADRUPED if p[0] >= p[1] else PlatformLabel.HUMAN
    return PlatformDecision(label=label, confidence=float(p[label]))


def route(window: ImuSequence, net: PlatformClassifier, experts: dict,
          log: list | None = None):
    """Return the expert for the classified platform; optionally append the
    (label, confidence) decision to a log list.  Never mutates the window."""
    decision = classify(window, net)
    if decision.label not in experts:
        raise MissingExpert(f"no expert registered for {decision.label.name}")
    if log is not None:
        log.append(decision)
    return experts[decision.label]


def write_routing_log(path, decisions: list) -> None:
    """CSV log: window index, label, confidence."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "label", "confidence"])
        for k, d in enumerate(decisions):
            writer.writerow([k, d.label.name, f"{d.confidence:.6f}"])


def train_classifier(net: PlatformClassifier, windows: list,
                     labels: list, cfg: TrainConfig,
                     max_steps: int | None = None) -> list[dict]:
    """Cross-entropy training with the same Adam settings as the experts."""
    x_all = torch.stack([window_to_tensor(w) for w in windows])
    y_all = torch.as_tensor([int(l) for l in labels], dtype=torch.long)
    n = x_all.shape[0]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.parameters(), cfg)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    budget = max_steps if max_steps is not None \
        else cfg.max_epochs * steps_per_epoch

    net.train()
    history = []
    step = 0
    while step < budget:
        order = rng.permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            if step >= budget:
                break
            idx = order[b0:b0 + cfg.batch_size]
            opt.zero_grad()
            logits = net(x_all[idx])
            loss = torch.nn.functional.cross_entropy(logits, y_all[idx])
            loss.backward()
            opt.step()
            step += 1
            history.append({"step": step, "loss": loss.item()})
    net.eval()
    return history


def save_classifier_checkpoint(path, net: PlatformClassifier) -> None:
    save_checkpoint(path, net, kind="classifier")


def load_classifier_checkpoint(path) -> PlatformClassifier:
    cfg_dict, params = read_checkpoint(path, expect_kind="classifier")
    cfg_dict["channels"] = tuple(cfg_dict["channels"])
    net = PlatformClassifier(ClassifierConfig(**cfg_dict))
    load_into(net, params, path)
    net.eval()
    return net
