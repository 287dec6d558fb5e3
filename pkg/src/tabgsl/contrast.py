"""Dual-view contrastive machinery: augmentations, the shared graph
encoder with projector, the temperature-scaled contrastive objective, and
the moving-average update that feeds learned structure back into the
teacher graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .gcn import GCNLayer, gcn_normalize
from .graph import WeightedAdjacency


@dataclass
class GraphViewPair:
    """Augmented teacher/student views for one contrastive step."""

    a_anchor: WeightedAdjacency
    a_learner: WeightedAdjacency
    x_anchor: torch.Tensor
    x_learner: torch.Tensor
    seeds: dict[str, int] = field(default_factory=dict)


def mask_features(x: torch.Tensor, rho: float, seed: int) -> torch.Tensor:
    """Zero a random subset of columns, the same columns for every row.

    Each column is masked independently with probability rho. rho = 0
    reproduces the input bitwise, rho = 1 zeros everything.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"mask rate must be in [0, 1], got {rho}")
    gen = torch.Generator().manual_seed(seed)
    keep = (torch.rand(x.shape[1], generator=gen, dtype=torch.float64) >= rho)
    return x * keep.to(x.dtype)


def drop_edges(a: WeightedAdjacency, rho_edge: float, seed: int) -> WeightedAdjacency:
    """Drop each undirected edge independently with probability rho_edge.

    One Bernoulli draw per unordered pair, applied to both directions, so
    the result stays symmetric. Surviving weights are unchanged.
    """
    if not 0.0 <= rho_edge <= 1.0:
        raise ValueError(f"edge drop rate must be in [0, 1], got {rho_edge}")
    n = a.n
    gen = torch.Generator().manual_seed(seed)
    keep_upper = (torch.rand(n, n, generator=gen, dtype=torch.float64) >= rho_edge)
    keep_upper = keep_upper.triu(diagonal=1).to(a.w.dtype)
    keep = keep_upper + keep_upper.T
    return WeightedAdjacency(a.w * keep, a.tag)


class GraphEncoder(nn.Module):
    """Two GCN layers plus a two-layer projector, shared across views."""

    def __init__(self, in_dim: int, dim: int, dropout: float = 0.0):
        super().__init__()
        self.conv1 = GCNLayer(in_dim, dim, dropout)
        self.conv2 = GCNLayer(dim, dim, dropout)
        self.projector = nn.Sequential(
            nn.Linear(dim, dim, dtype=torch.float64),
            nn.ReLU(),
            nn.Linear(dim, dim, dtype=torch.float64),
        )

    def forward(self, a: WeightedAdjacency, x: torch.Tensor) -> torch.Tensor:
        a_norm = gcn_normalize(a).w
        out = torch.relu(self.conv1(x, a_norm))
        out = self.conv2(out, a_norm)
        return self.projector(out)


def encode_project(a: WeightedAdjacency, x: torch.Tensor, encoder: GraphEncoder) -> torch.Tensor:
    """Project one view's nodes; both views must use the same encoder."""
    return encoder(a, x)


def _row_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Unclamped cosine similarity of every row of a with every row of b."""
    norm_a = a.norm(dim=1)
    norm_b = b.norm(dim=1)
    unit_a = a / torch.where(norm_a == 0, torch.ones_like(norm_a), norm_a).unsqueeze(1)
    unit_b = b / torch.where(norm_b == 0, torch.ones_like(norm_b), norm_b).unsqueeze(1)
    return unit_a @ unit_b.T


def nt_xent(z_anchor: torch.Tensor, z_learner: torch.Tensor, temperature: float) -> torch.Tensor:
    """Symmetric temperature-scaled contrastive objective over paired rows.

    For each node the positive is its own row in the other view and the
    negatives are the other view's remaining rows; the positive pair is
    excluded from the denominator. Evaluated in log-sum-exp form and
    averaged over both directions and all nodes. Larger is better: the
    trainer maximizes this value.
    """
    if z_anchor.shape != z_learner.shape:
        raise ValueError("view embeddings must share a shape")
    n = z_anchor.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least two nodes")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")

    # logits[i, j] = cos(z_learner_i, z_anchor_j) / temperature
    logits = _row_cosine(z_learner, z_anchor) / temperature
    diag = torch.arange(n)
    exclude_diag = torch.zeros((n, n), dtype=logits.dtype)
    exclude_diag[diag, diag] = float("-inf")

    def directed(lg: torch.Tensor) -> torch.Tensor:
        positives = lg[diag, diag]
        negatives = torch.logsumexp(lg + exclude_diag, dim=1)
        return positives - negatives

    total = directed(logits).sum() + directed(logits.T).sum()
    return total / (2 * n)


def bootstrap(
    a_anchor: WeightedAdjacency, a_learner: WeightedAdjacency, tau: float
) -> WeightedAdjacency:
    """Convex combination pulling learned structure into the teacher graph."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if a_anchor.w.shape != a_learner.w.shape:
        raise ValueError("adjacency shapes differ")
    if tau == 1.0:
        return WeightedAdjacency(a_anchor.w.clone(), "anchor")
    if tau == 0.0:
        return WeightedAdjacency(a_learner.w.clone(), "anchor")
    return WeightedAdjacency(tau * a_anchor.w + (1.0 - tau) * a_learner.w, "anchor")
