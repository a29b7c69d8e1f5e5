"""
layers.py
---------
Recurrent building blocks shared by the essential-term tagger and the
entailment model. Everything runs in float64.

Initialisation: weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases 0,
drawn from an explicit torch.Generator so a seed fully determines a model.
"""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn

DTYPE = torch.float64


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


@torch.no_grad()
def glorot_(tensor: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    fan_out, fan_in = tensor.shape[0], tensor.shape[1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return tensor.uniform_(-bound, bound, generator=generator)


@torch.no_grad()
def reset_linear(layer: nn.Linear, generator: Optional[torch.Generator] = None) -> None:
    glorot_(layer.weight, generator)
    if layer.bias is not None:
        layer.bias.zero_()


@torch.no_grad()
def reset_lstm(lstm: nn.LSTM, generator: Optional[torch.Generator] = None) -> None:
    for name, param in lstm.named_parameters():
        if name.startswith("weight"):
            glorot_(param, generator)
        else:
            param.zero_()


class BiLSTM(nn.Module):
    """One bidirectional layer; maps a (T, D) sequence to (T, 2h) states."""

    def __init__(self, input_dim: int, hidden: int,
                 generator: Optional[torch.Generator] = None) -> None:
        super().__init__()
        self.input_dim = input_dim
        self.hidden = hidden
        self.lstm = nn.LSTM(input_dim, hidden, num_layers=1, bidirectional=True, dtype=DTYPE)
        reset_lstm(self.lstm, generator)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        if inputs.dim() != 2 or inputs.shape[0] == 0:
            raise ValueError(f"expected a non-empty (T, D) sequence, got shape {tuple(inputs.shape)}")
        states, _ = self.lstm(inputs.unsqueeze(1))
        return states.squeeze(1)


class MatcherLSTM(nn.Module):
    """Unidirectional LSTM(m) returning every hidden state, (N, m)."""

    def __init__(self, input_dim: int, hidden: int,
                 generator: Optional[torch.Generator] = None) -> None:
        super().__init__()
        self.hidden = hidden
        self.lstm = nn.LSTM(input_dim, hidden, num_layers=1, dtype=DTYPE)
        reset_lstm(self.lstm, generator)

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        states, _ = self.lstm(inputs.unsqueeze(1))
        return states.squeeze(1)
