"""Graph convolution: symmetric normalization, the classification head,
and the masked negative log-likelihood loss.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .graph import WeightedAdjacency

LOG_CLAMP = 1e-12


def gcn_normalize(a: WeightedAdjacency) -> WeightedAdjacency:
    """Symmetric degree normalization with self-loops.

    With self-loops added, every degree is at least 1, so the inverse
    square root is always defined. Rejects negative inputs, which would
    mean an upstream invariant was violated.
    """
    if a.w.detach().min().item() < 0:
        raise ValueError("adjacency has negative entries")
    with_loops = a.w + torch.eye(a.n, dtype=a.w.dtype)
    inv_sqrt_deg = with_loops.sum(dim=1).rsqrt()
    normalized = inv_sqrt_deg.unsqueeze(1) * with_loops * inv_sqrt_deg.unsqueeze(0)
    return WeightedAdjacency(normalized, "normalized")


class GCNLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, dropout: float = 0.0):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim, dtype=torch.float64)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, a_norm: torch.Tensor) -> torch.Tensor:
        return a_norm @ self.linear(self.dropout(x))


class GCNClassifier(nn.Module):
    """Stack of GCN layers plus a one-hidden-layer readout and softmax.

    ReLU follows every graph convolution except the last; the readout MLP
    keeps the hidden width of the convolutions.
    """

    def __init__(self, in_dim: int, hidden: int, layers: int, class_count: int,
                 dropout: float = 0.0):
        super().__init__()
        if layers not in (2, 3):
            raise ValueError(f"classifier supports 2 or 3 GCN layers, got {layers}")
        dims = [in_dim] + [hidden] * layers
        self.convs = nn.ModuleList(
            GCNLayer(d_in, d_out, dropout) for d_in, d_out in zip(dims[:-1], dims[1:])
        )
        self.readout = nn.Sequential(
            nn.Linear(hidden, hidden, dtype=torch.float64),
            nn.ReLU(),
            nn.Linear(hidden, class_count, dtype=torch.float64),
        )

    def forward(self, h: torch.Tensor, a: WeightedAdjacency) -> torch.Tensor:
        a_norm = a.w if a.tag == "normalized" else gcn_normalize(a).w
        out = h
        for i, conv in enumerate(self.convs):
            out = conv(out, a_norm)
            if i < len(self.convs) - 1:
                out = torch.relu(out)
        return torch.softmax(self.readout(out), dim=1)


def nll_loss(probs: torch.Tensor, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean negative log probability of the true class over masked rows."""
    if mask.numel() == 0:
        raise ValueError("loss mask is empty")
    picked = probs[mask, y[mask]]
    return -torch.log(picked.clamp(min=LOG_CLAMP)).mean()
