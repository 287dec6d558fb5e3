"""Shared test utilities: synthetic datasets, CSV fixtures, and the
independent oracles (finite differences, brute-force metrics and losses)
that the library implementations are checked against.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from tabgsl.data import ColumnSchema, TabularDataset


def make_gaussian_dataset(n=300, d=10, sep=4.0, seed=0, class_balance=0.5) -> TabularDataset:
    """Two spherical Gaussian clusters with centers sep * noise-std apart."""
    rng = np.random.default_rng(seed)
    n0 = int(round(n * class_balance))
    n1 = n - n0
    delta = sep / (2 * math.sqrt(d))
    x = np.vstack([
        rng.normal(-delta, 1.0, size=(n0, d)),
        rng.normal(delta, 1.0, size=(n1, d)),
    ])
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    perm = rng.permutation(n)
    schema = [ColumnSchema(f"f{i}", "numeric") for i in range(d)]
    schema.append(ColumnSchema("label", "target"))
    return TabularDataset(
        x_num=x[perm],
        x_cat=np.zeros((n, 0), dtype=np.int64),
        y=y[perm],
        class_count=2,
        schema=schema,
        cat_cardinalities=[],
    )


def make_mixed_dataset(n=80, seed=0) -> TabularDataset:
    """Small dataset with numeric and categorical columns, 2 classes.

    The label depends on the sign of the first numeric column and on the
    categorical value, so it is learnable but not trivial.
    """
    rng = np.random.default_rng(seed)
    x_num = rng.normal(size=(n, 2))
    x_cat = rng.integers(0, 3, size=(n, 1))
    y = ((x_num[:, 0] + 0.5 * (x_cat[:, 0] == 1) + 0.1 * rng.normal(size=n)) > 0).astype(np.int64)
    # guarantee both classes appear
    y[0], y[1] = 0, 1
    schema = [
        ColumnSchema("amount", "numeric"),
        ColumnSchema("delta", "numeric"),
        ColumnSchema("city", "categorical"),
        ColumnSchema("label", "target"),
    ]
    return TabularDataset(
        x_num=x_num,
        x_cat=x_cat,
        y=y,
        class_count=2,
        schema=schema,
        cat_cardinalities=[3],
    )


def write_csv_dataset(ds: TabularDataset, directory: Path, stem="data") -> tuple[Path, Path]:
    """Serialize a dataset to CSV + schema JSON for CLI-level tests.

    Categorical codes are written as strings c<code>, labels as l<code>.
    """
    csv_path = directory / f"{stem}.csv"
    schema_path = directory / f"{stem}.schema.json"
    num_iter = iter(range(ds.m_num))
    cat_iter = iter(range(ds.m_cat))
    column_sources = []
    for col in ds.schema:
        if col.kind == "numeric":
            j = next(num_iter)
            column_sources.append(lambda r, j=j: repr(float(ds.x_num[r, j])))
        elif col.kind == "categorical":
            j = next(cat_iter)
            column_sources.append(lambda r, j=j: f"c{ds.x_cat[r, j]}")
        else:
            column_sources.append(lambda r: f"l{ds.y[r]}")
    lines = [",".join(c.name for c in ds.schema)]
    for r in range(ds.n):
        lines.append(",".join(src(r) for src in column_sources))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    schema_path.write_text(
        json.dumps([{"name": c.name, "kind": c.kind} for c in ds.schema]),
        encoding="utf-8",
    )
    return csv_path, schema_path


# ---- oracles ---------------------------------------------------------------


def central_difference_grad(f, param: torch.Tensor, eps=1e-5) -> torch.Tensor:
    """Finite-difference gradient of the scalar function f() w.r.t. param.

    Perturbs param in place entry by entry; f must re-run the forward
    pass from scratch on each call.
    """
    grad = torch.zeros_like(param, dtype=torch.float64)
    flat = param.data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + eps
        f_plus = float(f())
        flat[i] = original - eps
        f_minus = float(f())
        flat[i] = original
        grad_flat[i] = (f_plus - f_minus) / (2 * eps)
    return grad


def assert_grads_close(fd: torch.Tensor, bp: torch.Tensor, rtol=1e-4, atol=1e-7, label=""):
    fd = fd.detach().numpy()
    bp = bp.detach().numpy()
    err = np.abs(fd - bp)
    tol = atol + rtol * np.abs(bp)
    worst = (err - tol).max()
    assert (err <= tol).all(), (
        f"gradient mismatch {label}: worst excess {worst:.3e}, "
        f"max fd {np.abs(fd).max():.3e}, max bp {np.abs(bp).max():.3e}"
    )


def nt_xent_bruteforce(z_anchor: np.ndarray, z_learner: np.ndarray, temperature: float) -> float:
    """Direct double-loop evaluation without log-sum-exp."""

    def cos(u, v):
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            return 0.0
        return float(np.dot(u, v) / (nu * nv))

    n = z_anchor.shape[0]
    total = 0.0
    for i in range(n):
        # direction 1: learner row i against anchor rows
        numer = math.exp(cos(z_learner[i], z_anchor[i]) / temperature)
        denom = sum(
            math.exp(cos(z_learner[i], z_anchor[j]) / temperature) for j in range(n) if j != i
        )
        total += math.log(numer / denom)
        # direction 2: anchor row i against learner rows
        numer = math.exp(cos(z_anchor[i], z_learner[i]) / temperature)
        denom = sum(
            math.exp(cos(z_anchor[i], z_learner[j]) / temperature) for j in range(n) if j != i
        )
        total += math.log(numer / denom)
    return total / (2 * n)


def f1_bruteforce(y_true: np.ndarray, y_pred: np.ndarray, class_count: int):
    """Confusion-matrix based minority and macro F1."""
    confusion = np.zeros((class_count, class_count), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[t, p] += 1
    f1 = np.zeros(class_count)
    for c in range(class_count):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1[c] = 2 * tp / denom if denom else 0.0
    support = confusion.sum(axis=1)
    present = [c for c in range(class_count) if support[c] > 0]
    minority = min(present, key=lambda c: (support[c], c))
    return float(f1[minority]), float(f1.mean())


def wilcoxon_exact_bruteforce(diffs: np.ndarray) -> float:
    """Two-sided exact p by explicit enumeration of all sign assignments."""
    diffs = diffs[diffs != 0]
    n = len(diffs)
    mags = np.abs(diffs)
    order = np.argsort(mags, kind="stable")
    ranks = np.empty(n)
    i = 0
    sorted_mags = mags[order]
    while i < n:
        j = i
        while j + 1 < n and sorted_mags[j + 1] == sorted_mags[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    w_observed = ranks[diffs > 0].sum()
    w_values = []
    for bits in range(2**n):
        w = sum(ranks[i] for i in range(n) if bits >> i & 1)
        w_values.append(w)
    w_values = np.array(w_values)
    p_low = np.mean(w_values <= w_observed + 1e-12)
    p_high = np.mean(w_values >= w_observed - 1e-12)
    return min(1.0, 2 * min(p_low, p_high))
