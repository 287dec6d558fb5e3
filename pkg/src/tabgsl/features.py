"""Per-feature tokenization and transformer encoding of instances.

Every column of an instance becomes one token: categorical values index
an embedding table, numeric values scale a learned direction vector plus
bias. A shared classification token is prepended, a stack of pre-norm
transformer layers mixes the tokens of each instance (never across
instances), and the classification token's final state is the instance
embedding.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .data import TabularDataset


def _fan_in_uniform_(module: nn.Module) -> None:
    """Re-initialize linear-like weights to U(+-1/sqrt(fan_in)), biases to 0."""
    for name, param in module.named_parameters():
        if param.dim() >= 2:
            bound = 1.0 / param.shape[-1] ** 0.5
            nn.init.uniform_(param, -bound, bound)
        elif "bias" in name:
            nn.init.zeros_(param)


class FeatureTokenizer(nn.Module):
    """Map raw feature columns to a (n, m+1, dim) token tensor.

    Token 0 is the shared classification token. Embedding tables and the
    numeric direction vectors are drawn from N(0, 0.02^2); numeric biases
    start at zero.
    """

    def __init__(self, num_features: int, cat_cardinalities: list[int], dim: int):
        super().__init__()
        if num_features + len(cat_cardinalities) < 1:
            raise ValueError("tokenizer needs at least one feature column")
        self.num_features = num_features
        self.cat_cardinalities = list(cat_cardinalities)
        self.dim = dim
        self.cls_token = nn.Parameter(torch.empty(dim, dtype=torch.float64))
        self.num_weight = nn.Parameter(torch.empty(num_features, dim, dtype=torch.float64))
        self.num_bias = nn.Parameter(torch.zeros(num_features, dim, dtype=torch.float64))
        self.cat_tables = nn.ParameterList(
            nn.Parameter(torch.empty(card, dim, dtype=torch.float64))
            for card in cat_cardinalities
        )
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.num_weight, std=0.02)
        for table in self.cat_tables:
            nn.init.normal_(table, std=0.02)

    @property
    def token_count(self) -> int:
        return self.num_features + len(self.cat_cardinalities) + 1

    def forward(self, x_num: torch.Tensor, x_cat: torch.Tensor) -> torch.Tensor:
        n = x_num.shape[0] if self.num_features else x_cat.shape[0]
        parts = [self.cls_token.expand(n, 1, self.dim)]
        if self.num_features:
            parts.append(x_num.unsqueeze(-1) * self.num_weight + self.num_bias)
        for j, table in enumerate(self.cat_tables):
            codes = x_cat[:, j]
            if codes.min() < 0 or codes.max() >= table.shape[0]:
                raise ValueError(f"categorical column {j}: code outside embedding table")
            parts.append(table[codes].unsqueeze(1))
        return torch.cat(parts, dim=1)


class InstanceEmbedder(nn.Module):
    """Pre-norm transformer stack with classification-token readout.

    Heads = max(1, dim // 64), feed-forward width 2 * dim. Attention runs
    within each instance's token sequence only, so embeddings are
    independent across instances.
    """

    def __init__(self, dim: int, layers: int, dropout: float = 0.0):
        super().__init__()
        if layers < 1:
            raise ValueError("need at least one transformer layer")
        heads = max(1, dim // 64)
        if dim % heads != 0:
            raise ValueError(f"embedding dim {dim} not divisible by {heads} heads")
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=dim,
                nhead=heads,
                dim_feedforward=2 * dim,
                dropout=dropout,
                activation="gelu",
                batch_first=True,
                norm_first=True,
                dtype=torch.float64,
            )
            for _ in range(layers)
        )
        for layer in self.layers:
            _fan_in_uniform_(layer)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        out = tokens
        for layer in self.layers:
            out = layer(out)
        return out[:, 0, :]


def embed_instances(
    tokenizer: FeatureTokenizer, embedder: InstanceEmbedder, ds: TabularDataset
) -> torch.Tensor:
    """Convenience forward pass from a dataset to instance embeddings."""
    x_num, x_cat = dataset_tensors(ds)
    return embedder(tokenizer(x_num, x_cat))


def dataset_tensors(ds: TabularDataset) -> tuple[torch.Tensor, torch.Tensor]:
    x_num = torch.as_tensor(ds.x_num, dtype=torch.float64)
    x_cat = torch.as_tensor(ds.x_cat, dtype=torch.long)
    return x_num, x_cat
