"""
crf.py
------
Linear-chain CRF over T positions and L labels.

    transitions[i, j]  score of label j following label i
    start[j], stop[j]  score of a path starting / ending in label j

    score(y) = start[y1] + sum_t emissions[t, y_t]
                         + sum_t transitions[y_{t-1}, y_t] + stop[y_T]
    log Z    = logsumexp over all L^T paths of score(y)

The partition function runs in the log domain (forward recursion with
logsumexp) and is differentiable; decoding is plain numpy.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from agents.layers import DTYPE

ArrayLike = Union[torch.Tensor, np.ndarray, Sequence]


def _tensor(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def _array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64, copy=False)
    return np.asarray(x, dtype=np.float64)


def crf_path_score(emissions: ArrayLike, transitions: ArrayLike, start: ArrayLike,
                   stop: ArrayLike, labels: Sequence[int]) -> torch.Tensor:
    """Unnormalised log-score of one label path."""
    e, tr, s, z = _tensor(emissions), _tensor(transitions), _tensor(start), _tensor(stop)
    y = torch.as_tensor(list(labels), dtype=torch.long)
    if y.shape[0] != e.shape[0]:
        raise ValueError(f"{y.shape[0]} labels for {e.shape[0]} positions")
    score = s[y[0]] + e[torch.arange(e.shape[0]), y].sum() + z[y[-1]]
    if y.shape[0] > 1:
        score = score + tr[y[:-1], y[1:]].sum()
    return score


def crf_log_partition(emissions: ArrayLike, transitions: ArrayLike, start: ArrayLike,
                      stop: ArrayLike) -> torch.Tensor:
    """log Z by the forward recursion."""
    e, tr, s, z = _tensor(emissions), _tensor(transitions), _tensor(start), _tensor(stop)
    if e.dim() != 2 or e.shape[0] < 1 or e.shape[1] < 1:
        raise ValueError(f"emissions must be (T>=1, L>=1), got {tuple(e.shape)}")
    alpha = s + e[0]
    for t in range(1, e.shape[0]):
        alpha = torch.logsumexp(alpha.unsqueeze(1) + tr, dim=0) + e[t]
    return torch.logsumexp(alpha + z, dim=0)


def crf_viterbi(emissions: ArrayLike, transitions: ArrayLike, start: ArrayLike,
                stop: ArrayLike) -> Tuple[List[int], float]:
    """Best path and its unnormalised score; ties go to the lower label index."""
    e, tr, s, z = _array(emissions), _array(transitions), _array(start), _array(stop)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ValueError(f"emissions must be (T>=1, L), got {e.shape}")
    score = s + e[0]
    backpointers = []
    for t in range(1, e.shape[0]):
        candidates = score[:, None] + tr
        best_prev = np.argmax(candidates, axis=0)
        backpointers.append(best_prev)
        score = candidates[best_prev, np.arange(e.shape[1])] + e[t]
    final = score + z
    last = int(np.argmax(final))
    path = [last]
    for best_prev in reversed(backpointers):
        path.append(int(best_prev[path[-1]]))
    path.reverse()
    return path, float(final[last])


class LinearChainCRF(nn.Module):
    """Trainable transition, start and stop scores (initialised to zero)."""

    def __init__(self, num_labels: int) -> None:
        super().__init__()
        if num_labels < 1:
            raise ValueError(f"invalid number of labels: {num_labels}")
        self.num_labels = num_labels
        self.transitions = nn.Parameter(torch.zeros(num_labels, num_labels, dtype=DTYPE))
        self.start = nn.Parameter(torch.zeros(num_labels, dtype=DTYPE))
        self.stop = nn.Parameter(torch.zeros(num_labels, dtype=DTYPE))

    def log_partition(self, emissions: torch.Tensor) -> torch.Tensor:
        return crf_log_partition(emissions, self.transitions, self.start, self.stop)

    def score(self, emissions: torch.Tensor, labels: Sequence[int]) -> torch.Tensor:
        return crf_path_score(emissions, self.transitions, self.start, self.stop, labels)

    def nll(self, emissions: torch.Tensor, labels: Sequence[int]) -> torch.Tensor:
        """Negative log-likelihood of the gold path: log Z - score(gold)."""
        return self.log_partition(emissions) - self.score(emissions, labels)

    def decode(self, emissions: torch.Tensor) -> Tuple[List[int], float]:
        return crf_viterbi(emissions, self.transitions, self.start, self.stop)
