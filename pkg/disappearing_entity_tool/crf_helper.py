#!/usr/bin/env python
"""
Linear-chain CRF over BILOU tags with hard transition constraints.

Scores are ``start[y0] + sum emissions + sum transitions + end[yT]``; masked
transitions (and masked start/end tags) are ``-inf`` so no illegal path carries
probability mass or can be decoded.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .bilou import TagSet, validate_bilou

# Configure logging
logger = logging.getLogger('det_tagger')

NEG_INF = float("-inf")
TIE_TOLERANCE = 1e-12


class MaskedCRF(nn.Module):
    """Transition, start and end weights with the tag set's legality masks applied."""

    def __init__(self, tagset: TagSet):
        super().__init__()
        self.tagset = tagset
        size = len(tagset)
        self.transitions = nn.Parameter(torch.zeros(size, size))
        self.start_transitions = nn.Parameter(torch.zeros(size))
        self.end_transitions = nn.Parameter(torch.zeros(size))
        self.register_buffer("transition_mask", torch.as_tensor(tagset.transition_mask), persistent=False)
        self.register_buffer("start_mask", torch.as_tensor(tagset.start_mask), persistent=False)
        self.register_buffer("end_mask", torch.as_tensor(tagset.end_mask), persistent=False)

    def masked_weights(self) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return (
            self.transitions.masked_fill(~self.transition_mask, NEG_INF),
            self.start_transitions.masked_fill(~self.start_mask, NEG_INF),
            self.end_transitions.masked_fill(~self.end_mask, NEG_INF),
        )

    def log_partition(self, emissions: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Batched forward algorithm: ``emissions`` is (batch, time, tags)."""
        trans, start, end = self.masked_weights()
        alpha = start.unsqueeze(0) + emissions[:, 0]
        for t in range(1, emissions.shape[1]):
            step = torch.logsumexp(alpha.unsqueeze(2) + trans.unsqueeze(0) + emissions[:, t].unsqueeze(1), dim=1)
            active = (lengths > t).unsqueeze(1)
            alpha = torch.where(active, step, alpha)
        return torch.logsumexp(alpha + end.unsqueeze(0), dim=1)

    def path_score(self, emissions: torch.Tensor, tags: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Score of the given (batch, time) tag paths; padding positions are ignored."""
        trans, start, end = self.masked_weights()
        batch, steps = tags.shape
        positions = torch.arange(steps, device=tags.device).unsqueeze(0)
        valid = positions < lengths.unsqueeze(1)
        emitted = emissions.gather(2, tags.unsqueeze(2)).squeeze(2)
        score = start[tags[:, 0]] + (emitted * valid).sum(dim=1)
        if steps > 1:
            moves = trans[tags[:, :-1], tags[:, 1:]]
            score = score + torch.where(valid[:, 1:], moves, torch.zeros_like(moves)).sum(dim=1)
        last = tags.gather(1, (lengths - 1).unsqueeze(1)).squeeze(1)
        return score + end[last]

    def nll(self, emissions: torch.Tensor, tags: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Per-sentence negative log-likelihood (non-negative for legal gold paths)."""
        for row, length in zip(tags.tolist(), lengths.tolist()):
            check_legal(self.tagset, row[:length])
        return self.log_partition(emissions, lengths) - self.path_score(emissions, tags, lengths)

    def numpy_weights(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        trans, start, end = self.masked_weights()
        return tuple(w.detach().cpu().double().numpy() for w in (trans, start, end))


def check_legal(tagset: TagSet, indices: Sequence[int]) -> None:
    validate_bilou(tagset.decode(indices))


# -------------------------------------------------------------------------
# Exact inference on one sentence (float64)
# -------------------------------------------------------------------------

def forward_score(emissions: np.ndarray, trans: np.ndarray, start: np.ndarray, end: np.ndarray) -> float:
    """log of the summed exp path scores over every legal path."""
    emissions = np.asarray(emissions, dtype=np.float64)
    alpha = start + emissions[0]
    for t in range(1, len(emissions)):
        alpha = np.logaddexp.reduce(alpha[:, None] + trans, axis=0) + emissions[t]
    return float(np.logaddexp.reduce(alpha + end))


def viterbi(
    emissions: np.ndarray,
    trans: np.ndarray,
    start: np.ndarray,
    end: np.ndarray,
) -> Tuple[List[int], float]:
    """Best legal path and its score.

    Among paths tied for the best score the lexicographically smallest tag
    index sequence wins: best completions are computed right to left, then
    the path is chosen left to right taking the smallest index that still
    reaches the optimum.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    steps, size = emissions.shape
    completion = np.empty((steps, size))
    completion[-1] = end
    for t in range(steps - 2, -1, -1):
        completion[t] = np.max(trans + (emissions[t + 1] + completion[t + 1])[None, :], axis=1)

    candidates = start + emissions[0] + completion[0]
    best = candidates.max()
    current = int(np.flatnonzero(candidates >= best - TIE_TOLERANCE)[0])
    prefix = start[current] + emissions[0, current]
    path = [current]
    for t in range(1, steps):
        candidates = prefix + trans[current] + emissions[t] + completion[t]
        best = candidates.max()
        current = int(np.flatnonzero(candidates >= best - TIE_TOLERANCE)[0])
        prefix = prefix + trans[path[-1], current] + emissions[t, current]
        path.append(current)
    return path, float(prefix + end[current])


def path_score(emissions: np.ndarray, trans: np.ndarray, start: np.ndarray, end: np.ndarray, path: Sequence[int]) -> float:
    score = start[path[0]] + emissions[0, path[0]]
    for t in range(1, len(path)):
        score += trans[path[t - 1], path[t]] + emissions[t, path[t]]
    return float(score + end[path[-1]])
