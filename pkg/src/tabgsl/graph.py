"""Instance graph construction: metric function, learner MLP, kNN pruning,
and the teacher graph built from a frozen classifier's probabilities.

All adjacencies are dense, symmetric, nonnegative, zero-diagonal weight
matrices over the n instances. The graph learner starts out as an
identity map (identity weights, unit-slope PReLU), so its initial output
is exactly the cosine-similarity graph of the input embeddings; training
then bends it away from identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .data import SplitIndices, TabularDataset, dense_features
from .evaluation import f1_scores
from .seeding import derive_seed

ADJACENCY_TAGS = ("raw", "knn", "anchor", "normalized")


@dataclass
class WeightedAdjacency:
    """Dense edge-weight matrix with a provenance tag."""

    w: torch.Tensor
    tag: str

    def __post_init__(self):
        if self.tag not in ADJACENCY_TAGS:
            raise ValueError(f"unknown adjacency tag {self.tag!r}")
        if self.w.dim() != 2 or self.w.shape[0] != self.w.shape[1]:
            raise ValueError("adjacency must be a square matrix")

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def numpy(self) -> np.ndarray:
        return self.w.detach().cpu().numpy()

    def validate(self, atol: float = 1e-9, knn_k: int | None = None) -> None:
        w = self.w.detach()
        if not torch.isfinite(w).all():
            raise ValueError("adjacency contains non-finite entries")
        if (w - w.T).abs().max().item() > atol:
            raise ValueError("adjacency is not symmetric")
        if w.min().item() < -atol or w.max().item() > 1 + atol:
            raise ValueError("adjacency entries outside [0, 1]")
        if self.tag != "normalized" and w.diagonal().abs().max().item() > atol:
            raise ValueError(f"{self.tag} adjacency must have a zero diagonal")
        if knn_k is not None:
            per_row = (w != 0).sum(dim=1).max().item()
            if per_row > 2 * knn_k:
                raise ValueError(f"kNN row has {per_row} nonzeros, bound is {2 * knn_k}")


def pairwise_cosine(v: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of all row pairs, clamped to [0, 1], zero diagonal.

    Rows with exactly zero norm get similarity 0 everywhere (degenerate
    case, no exception).
    """
    v = torch.as_tensor(v, dtype=torch.float64)
    norms = v.norm(dim=1)
    safe = torch.where(norms == 0, torch.ones_like(norms), norms)
    unit = v / safe.unsqueeze(1)
    sim = unit @ unit.T
    sim = sim.clamp(min=0.0)
    n = v.shape[0]
    off_diag = 1.0 - torch.eye(n, dtype=sim.dtype)
    return sim * off_diag


class GraphLearner(nn.Module):
    """MLP over instance embeddings followed by pairwise cosine.

    Each layer is a linear map initialized to the (rectangular) identity
    with zero bias and a PReLU whose slope starts at 1, so the whole
    network is the identity function at initialization and the first
    learned graph equals the plain cosine graph of the embeddings.
    """

    def __init__(self, in_dim: int, width: int, layers: int, dropout: float = 0.0):
        super().__init__()
        if layers not in (2, 3):
            raise ValueError(f"graph learner supports 2 or 3 layers, got {layers}")
        self.in_dim = in_dim
        dims = [in_dim] + [width] * layers
        blocks = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            linear = nn.Linear(d_in, d_out, dtype=torch.float64)
            with torch.no_grad():
                linear.weight.copy_(torch.eye(d_out, d_in, dtype=torch.float64))
                linear.bias.zero_()
            blocks.append(linear)
            blocks.append(nn.PReLU(init=1.0).to(torch.float64))
        self.mlp = nn.Sequential(*blocks)
        self.dropout = nn.Dropout(dropout)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[1] != self.in_dim:
            raise ValueError(f"embedding width {h.shape[1]} != learner input {self.in_dim}")
        out = h
        for block in self.mlp:
            if isinstance(block, nn.Linear):
                out = self.dropout(out)
            out = block(out)
        return out


def learn_adjacency(h: torch.Tensor, learner: GraphLearner) -> WeightedAdjacency:
    """Run the graph learner and return the raw weighted adjacency."""
    return WeightedAdjacency(pairwise_cosine(learner(h)), "raw")


def knn_sparsify(a: WeightedAdjacency, k: int) -> WeightedAdjacency:
    """Keep each row's k largest off-diagonal weights, then symmetrize.

    Ties break toward the lower column index. Symmetrization takes the
    elementwise max of the directed selections, so each row ends with at
    most 2k nonzeros. Gradients flow through the surviving weights; the
    selection itself is not differentiated.
    """
    n = a.n
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    key = a.w.detach().clone()
    key.fill_diagonal_(float("-inf"))
    # Stable descending sort keeps lower column indices first among ties.
    order = torch.sort(key, dim=1, descending=True, stable=True).indices
    mask = torch.zeros_like(a.w)
    mask.scatter_(1, order[:, :k], 1.0)
    kept = a.w * mask
    return WeightedAdjacency(torch.maximum(kept, kept.T), "knn")


class AnchorClassifier(nn.Module):
    """MLP with two hidden layers mapping dense features to class probabilities."""

    def __init__(self, in_dim: int, hidden: int, class_count: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden, dtype=torch.float64),
            nn.ReLU(),
            nn.Linear(hidden, hidden, dtype=torch.float64),
            nn.ReLU(),
            nn.Linear(hidden, class_count, dtype=torch.float64),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.net(x), dim=1)


@dataclass(frozen=True)
class AnchorTrainSettings:
    hidden: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.0
    max_epochs: int = 200
    patience: int = 20


def train_anchor_classifier(
    ds: TabularDataset,
    split: SplitIndices,
    seed: int,
    settings: AnchorTrainSettings = AnchorTrainSettings(),
) -> AnchorClassifier:
    """Fit the teacher classifier on the train split and freeze it.

    Full-batch Adam on cross-entropy, early-stopped on validation macro
    F1 (ties keep the earlier epoch). The returned model has gradients
    disabled.
    """
    train_y = ds.y[split.train]
    for cls in range(ds.class_count):
        if not (train_y == cls).any():
            raise ValueError(f"class {cls} absent from the train split")

    features = torch.as_tensor(dense_features(ds), dtype=torch.float64)
    labels = torch.as_tensor(ds.y, dtype=torch.long)
    train_idx = torch.as_tensor(split.train, dtype=torch.long)
    valid_idx = torch.as_tensor(split.valid, dtype=torch.long)

    torch.manual_seed(derive_seed(seed, "anchor-classifier"))
    model = AnchorClassifier(features.shape[1], settings.hidden, ds.class_count)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=settings.lr, weight_decay=settings.weight_decay
    )
    loss_fn = nn.CrossEntropyLoss()

    best_score = -float("inf")
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    since_best = 0
    for _ in range(settings.max_epochs):
        model.train()
        optimizer.zero_grad()
        logits = model.net(features[train_idx])
        loss = loss_fn(logits, labels[train_idx])
        loss.backward()
        optimizer.step()

        model.eval()
        with torch.no_grad():
            pred = model.net(features[valid_idx]).argmax(dim=1)
        _, macro = f1_scores(ds.y[split.valid], pred.numpy(), ds.class_count)
        if macro > best_score:
            best_score = macro
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            since_best = 0
        else:
            since_best += 1
            if since_best > settings.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    model.requires_grad_(False)
    return model


def build_anchor_adjacency(classifier: AnchorClassifier, ds: TabularDataset) -> WeightedAdjacency:
    """Cosine similarity of predicted class-probability vectors."""
    features = torch.as_tensor(dense_features(ds), dtype=torch.float64)
    with torch.no_grad():
        probs = classifier(features)
    return WeightedAdjacency(pairwise_cosine(probs), "anchor")
