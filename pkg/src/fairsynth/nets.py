"""MLP builders and the relaxed tabular output head."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

ACTIVATIONS = ("relu", "leaky_relu")
HEADS = ("sigmoid", "softmax", "gumbel_softmax", "linear")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths (output layer last), hidden activation and output head."""

    layer_widths: tuple
    activation: str = "relu"
    output_head: str = "linear"
    temperature: float = 0.2
    batch_norm: bool = False
    # hard one-hot forward pass, relaxed gradient (generator heads only)
    straight_through: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.layer_widths or any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_head not in HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")
        if self.output_head == "gumbel_softmax" and not self.temperature > 0:
            raise ValueError("gumbel temperature must be positive")

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activation": self.activation,
            "output_head": self.output_head,
            "temperature": self.temperature,
            "batch_norm": self.batch_norm,
            "straight_through": self.straight_through,
        }


def default_specs(n_features: int, n_classes: int) -> dict:
    """Architecture defaults: generator scales with the feature count, the rest are fixed."""
    return {
        "generator": NetworkSpec(
            (math.ceil(2 * n_features), math.ceil(1.5 * n_features), n_features),
            activation="relu", output_head="gumbel_softmax", temperature=0.2, batch_norm=True,
        ),
        "classifier": NetworkSpec((64, 128, 256, n_classes), activation="leaky_relu", output_head="softmax"),
        "discriminator": NetworkSpec((64, 64, 64, 1), activation="leaky_relu", output_head="sigmoid"),
        "statistic": NetworkSpec((8, 8, 1), activation="relu", output_head="linear"),
    }


def build_mlp(in_dim: int, spec: NetworkSpec) -> nn.Sequential:
    """Linear stack ending in raw logits; heads are applied by the caller."""
    layers, prev = [], in_dim
    widths = spec.layer_widths
    for i, width in enumerate(widths):
        layers.append(nn.Linear(prev, width))
        if i < len(widths) - 1:
            if spec.batch_norm and i == 0:
                layers.append(nn.BatchNorm1d(width))
            layers.append(nn.ReLU() if spec.activation == "relu" else nn.LeakyReLU(0.2))
        prev = width
    return nn.Sequential(*layers)


def _uniform(shape, generator, device=None):
    return torch.rand(shape, generator=generator, device=device).clamp_(1e-10, 1 - 1e-7)


def tabular_head(logits: torch.Tensor, spans: Sequence, temperature: float,
                 generator: Optional[torch.Generator] = None, relaxed: bool = True,
                 hard: bool = False) -> torch.Tensor:
    """Turn generator logits into a relaxed row in the encoded feature layout.

    Continuous columns go through a sigmoid. Categorical blocks are
    Gumbel-softmax samples and binary columns binary-concrete samples at the
    given temperature. With ``relaxed=False`` discrete blocks use plain
    softmax / sigmoid without noise. ``hard=True`` rounds discrete blocks to
    exact one-hots in the forward pass and keeps the relaxed gradient
    (straight-through), so a discriminator cannot tell fakes by softness.
    """
    parts = []
    for span in spans:
        block = logits[:, span.start:span.stop]
        if span.kind == "continuous":
            parts.append(torch.sigmoid(block))
        elif span.kind == "binary":
            if relaxed:
                u = _uniform(block.shape, generator, block.device)
                block = (block + torch.log(u) - torch.log1p(-u)) / temperature
            soft = torch.sigmoid(block)
            parts.append(soft + ((soft > 0.5).to(soft) - soft).detach() if hard else soft)
        else:
            if relaxed:
                g = -torch.log(-torch.log(_uniform(block.shape, generator, block.device)))
                block = (block + g) / temperature
            soft = F.softmax(block, dim=1)
            if hard:
                soft = soft + (F.one_hot(soft.argmax(dim=1), soft.shape[1]).to(soft) - soft).detach()
            parts.append(soft)
    return torch.cat(parts, dim=1)


class Generator(nn.Module):
    """x' = G(y, z): MLP on [z, onehot(y)] followed by the tabular head."""

    def __init__(self, noise_dim: int, n_classes: int, spans: Sequence, spec: NetworkSpec):
        super().__init__()
        self.noise_dim = noise_dim
        self.n_classes = n_classes
        self.spans = list(spans)
        self.temperature = spec.temperature
        self.hard = spec.straight_through
        self.body = build_mlp(noise_dim + n_classes, spec)

    def forward(self, y_onehot, z, generator=None):
        logits = self.body(torch.cat([z, y_onehot], dim=1))
        return tabular_head(logits, self.spans, self.temperature, generator, hard=self.hard)


class PairDiscriminator(nn.Module):
    """Scores (x, y) pairs; returns logits (probability is their sigmoid)."""

    def __init__(self, x_dim: int, n_classes: int, spec: NetworkSpec):
        super().__init__()
        self.body = build_mlp(x_dim + n_classes, spec)

    def forward(self, x, y_onehot):
        return self.body(torch.cat([x, y_onehot], dim=1)).squeeze(1)


class Classifier(nn.Module):
    """p(y | x); returns logits."""

    def __init__(self, x_dim: int, spec: NetworkSpec):
        super().__init__()
        self.body = build_mlp(x_dim, spec)

    def forward(self, x):
        return self.body(x)


class StatisticNet(nn.Module):
    """T(w, s) for the Donsker-Varadhan bound; returns one scalar per row."""

    def __init__(self, w_dim: int, s_dim: int, spec: NetworkSpec):
        super().__init__()
        self.body = build_mlp(w_dim + s_dim, spec)

    def forward(self, w, s):
        return self.body(torch.cat([w, s], dim=1)).squeeze(1)
