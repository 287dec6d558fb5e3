"""Training orchestration for the joint graph-learning classifier.

Three strategies are provided. End-to-end optimizes the classification
loss minus the contrastive objective over all modules at once. Two-stage
first trains the feature extractor, graph learner, and contrastive
encoder on the contrastive objective alone, then freezes them and fits
only the classification head. Pretrain-finetune runs the same first
stage, then fine-tunes every module on the classification loss.

All randomness flows from TrainConfig.seed through labeled derived seeds,
so a run is reproducible bitwise from its config alone (wall time aside).
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import torch

from .contrast import GraphEncoder, GraphViewPair, bootstrap, drop_edges, mask_features, nt_xent
from .data import SplitIndices, TabularDataset
from .evaluation import primary_metric, primary_metric_name
from .features import FeatureTokenizer, InstanceEmbedder, dataset_tensors
from .gcn import GCNClassifier, nll_loss
from .graph import (
    AnchorClassifier,
    GraphLearner,
    WeightedAdjacency,
    build_anchor_adjacency,
    knn_sparsify,
    learn_adjacency,
    train_anchor_classifier,
)
from .seeding import derive_seed

STRATEGIES = ("end2end", "two_stage", "pt_ft")
CHECKPOINT_FORMAT = "tabgsl-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Raised when a training configuration field is invalid."""


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    Validation enforces the mathematically legal range of every field.
    The narrower tuning grid used by random_search lives in
    SEARCH_SPACE, not here, so sweeps and diagnostics may explore values
    outside the default grid (for example tau below 0.99).
    """

    fe_dim: int = 32
    fe_layers: int = 1
    knn_k: int = 10
    gl_dim: int = 32
    gl_layers: int = 2
    tau: float = 0.9999
    anchor_mask_rate: float = 0.6
    learner_mask_rate: float = 0.2
    edge_drop_rate: float = 0.3
    lr_gsl: float = 2e-3
    lr_head: float = 2e-3
    weight_decay_gsl: float = 0.0
    weight_decay_head: float = 0.0
    dropout_gsl: float = 0.0
    dropout_head: float = 0.0
    temperature: float = 0.2
    head_layers: int = 2
    head_dim: int = 32
    max_epochs: int = 500
    patience: int = 30
    seed: int = 0
    strategy: str = "end2end"

    def validate(self) -> None:
        def fail(name, why):
            raise ConfigError(f"config field {name!r} {why}")

        for name in ("fe_dim", "gl_dim", "head_dim", "knn_k", "max_epochs", "patience"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                fail(name, f"must be a positive integer, got {value!r}")
        if self.fe_layers not in (1, 2, 3, 4):
            fail("fe_layers", f"must be 1..4, got {self.fe_layers!r}")
        if self.gl_layers not in (2, 3):
            fail("gl_layers", f"must be 2 or 3, got {self.gl_layers!r}")
        if self.head_layers not in (2, 3):
            fail("head_layers", f"must be 2 or 3, got {self.head_layers!r}")
        if not 0.0 <= self.tau <= 1.0:
            fail("tau", f"must be in [0, 1], got {self.tau!r}")
        for name in ("anchor_mask_rate", "learner_mask_rate", "edge_drop_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                fail(name, f"must be in [0, 1], got {value!r}")
        for name in ("lr_gsl", "lr_head", "weight_decay_gsl", "weight_decay_head"):
            value = getattr(self, name)
            if not value >= 0.0:
                fail(name, f"must be nonnegative, got {value!r}")
        for name in ("dropout_gsl", "dropout_head"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                fail(name, f"must be in [0, 1), got {value!r}")
        if not self.temperature > 0.0:
            fail("temperature", f"must be positive, got {self.temperature!r}")
        if not isinstance(self.seed, int):
            fail("seed", f"must be an integer, got {self.seed!r}")
        if self.strategy not in STRATEGIES:
            fail("strategy", f"must be one of {STRATEGIES}, got {self.strategy!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def hash(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float | None
    loss_nc: float | None
    loss_gcl: float | None
    val_metric: float | None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PhaseSummary:
    name: str
    start_epoch: int
    end_epoch: int
    best_epoch: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    """Per-epoch history plus the selected epoch and final test score.

    In contrastive pretraining phases the val_metric column holds the
    full-graph contrastive objective evaluated without augmentation (the
    phase's model-selection signal); in supervised phases it holds the
    primary F1 metric on the validation split.
    """

    strategy: str
    metric_name: str
    epochs: list[EpochRecord] = field(default_factory=list)
    phases: list[PhaseSummary] = field(default_factory=list)
    best_epoch: int = -1
    test_metric: float = float("nan")
    wall_time_s: float = 0.0
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    graph_snapshot: str | None = None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "metric_name": self.metric_name,
            "epochs": [e.to_dict() for e in self.epochs],
            "phases": [p.to_dict() for p in self.phases],
            "best_epoch": self.best_epoch,
            "test_metric": self.test_metric,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
            "config_hash": self.config_hash,
            "graph_snapshot": self.graph_snapshot,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainReport":
        report = cls(
            strategy=raw["strategy"],
            metric_name=raw["metric_name"],
            epochs=[EpochRecord(**e) for e in raw["epochs"]],
            phases=[PhaseSummary(**p) for p in raw["phases"]],
            best_epoch=raw["best_epoch"],
            test_metric=raw["test_metric"],
            wall_time_s=raw["wall_time_s"],
            config=raw["config"],
            config_hash=raw["config_hash"],
            graph_snapshot=raw.get("graph_snapshot"),
        )
        return report


@dataclass
class TrainedModel:
    """All trained modules plus the teacher/student graphs at the best epoch."""

    tokenizer: FeatureTokenizer
    embedder: InstanceEmbedder
    graph_learner: GraphLearner
    encoder: GraphEncoder
    head: GCNClassifier
    anchor_classifier: AnchorClassifier
    anchor_w: torch.Tensor
    learner_w: torch.Tensor
    config: TrainConfig
    split: SplitIndices
    metric_name: str

    def modules(self) -> dict[str, torch.nn.Module]:
        return {
            "tokenizer": self.tokenizer,
            "embedder": self.embedder,
            "graph_learner": self.graph_learner,
            "encoder": self.encoder,
            "head": self.head,
            "anchor_classifier": self.anchor_classifier,
        }

    def eval_mode(self) -> None:
        for module in self.modules().values():
            module.eval()

    def embeddings(self, ds: TabularDataset) -> torch.Tensor:
        self.eval_mode()
        x_num, x_cat = dataset_tensors(ds)
        with torch.no_grad():
            return self.embedder(self.tokenizer(x_num, x_cat))

    def learner_adjacency(self, ds: TabularDataset) -> WeightedAdjacency:
        self.eval_mode()
        with torch.no_grad():
            h = self.embeddings(ds)
            return knn_sparsify(learn_adjacency(h, self.graph_learner), self.config.knn_k)

    def predict_probabilities(self, ds: TabularDataset) -> np.ndarray:
        self.eval_mode()
        with torch.no_grad():
            h = self.embeddings(ds)
            a = knn_sparsify(learn_adjacency(h, self.graph_learner), self.config.knn_k)
            return self.head(h, a).numpy()

    def evaluate(self, ds: TabularDataset, indices: np.ndarray) -> float:
        probs = self.predict_probabilities(ds)
        preds = probs.argmax(axis=1)
        return primary_metric(ds.y[indices], preds[indices], ds.class_count)

    def save(self, path) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "metric_name": self.metric_name,
            "dims": {
                "num_features": self.tokenizer.num_features,
                "cat_cardinalities": list(self.tokenizer.cat_cardinalities),
                "class_count": self.head.readout[-1].out_features,
            },
            "split": {
                "train": self.split.train.tolist(),
                "valid": self.split.valid.tolist(),
                "test": self.split.test.tolist(),
            },
            "state": {name: module.state_dict() for name, module in self.modules().items()},
            "anchor_w": self.anchor_w,
            "learner_w": self.learner_w,
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        payload = torch.load(path, weights_only=True)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a model checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        cfg = TrainConfig.from_dict(payload["config"])
        dims = payload["dims"]
        modules = _build_modules(
            cfg, dims["num_features"], list(dims["cat_cardinalities"]), dims["class_count"]
        )
        anchor_state = payload["state"]["anchor_classifier"]
        hidden, in_dim = anchor_state["net.0.weight"].shape
        anchor_classifier = AnchorClassifier(in_dim, hidden, dims["class_count"])
        modules["anchor_classifier"] = anchor_classifier
        for name, module in modules.items():
            module.load_state_dict(payload["state"][name])
            module.eval()
        split = SplitIndices(
            train=np.asarray(payload["split"]["train"], dtype=np.int64),
            valid=np.asarray(payload["split"]["valid"], dtype=np.int64),
            test=np.asarray(payload["split"]["test"], dtype=np.int64),
        )
        return cls(
            tokenizer=modules["tokenizer"],
            embedder=modules["embedder"],
            graph_learner=modules["graph_learner"],
            encoder=modules["encoder"],
            head=modules["head"],
            anchor_classifier=modules["anchor_classifier"],
            anchor_w=payload["anchor_w"],
            learner_w=payload["learner_w"],
            config=cfg,
            split=split,
            metric_name=payload["metric_name"],
        )


def _build_modules(
    cfg: TrainConfig, num_features: int, cat_cardinalities: list[int], class_count: int
) -> dict[str, torch.nn.Module]:
    torch.manual_seed(derive_seed(cfg.seed, "init"))
    return {
        "tokenizer": FeatureTokenizer(num_features, cat_cardinalities, cfg.fe_dim),
        "embedder": InstanceEmbedder(cfg.fe_dim, cfg.fe_layers, cfg.dropout_gsl),
        "graph_learner": GraphLearner(cfg.fe_dim, cfg.gl_dim, cfg.gl_layers, cfg.dropout_gsl),
        "encoder": GraphEncoder(cfg.fe_dim, cfg.gl_dim, cfg.dropout_gsl),
        "head": GCNClassifier(
            cfg.fe_dim, cfg.head_dim, cfg.head_layers, class_count, cfg.dropout_head
        ),
    }


class _EarlyStopper:
    """Maximizes a metric; ties keep the earliest epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_value = -float("inf")
        self.best_epoch = -1
        self.since_best = 0

    def update(self, value: float, epoch: int) -> bool:
        if value > self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            self.since_best = 0
            return True
        self.since_best += 1
        return False

    def should_stop(self) -> bool:
        return self.since_best >= self.patience


class _Run:
    """Shared state for one training run."""

    def __init__(self, ds: TabularDataset, split: SplitIndices, cfg: TrainConfig):
        cfg.validate()
        ds.validate()
        split.validate(ds.n)
        if cfg.knn_k > ds.n - 1:
            raise ConfigError(f"config field 'knn_k' must be at most n-1 = {ds.n - 1}")
        self.ds = ds
        self.split = split
        self.cfg = cfg
        self.x_num, self.x_cat = dataset_tensors(ds)
        self.y = torch.as_tensor(ds.y, dtype=torch.long)
        self.train_idx = torch.as_tensor(split.train, dtype=torch.long)
        self.metric_name = primary_metric_name(ds.class_count)

        anchor_seed = derive_seed(cfg.seed, "anchor")
        self.anchor_classifier = train_anchor_classifier(ds, split, seed=anchor_seed)
        self.anchor_w = build_anchor_adjacency(self.anchor_classifier, ds).w
        self.modules = _build_modules(cfg, ds.m_num, ds.cat_cardinalities, ds.class_count)

        self.records: list[EpochRecord] = []
        self.phases: list[PhaseSummary] = []
        self.started = time.perf_counter()

    # ---- forward helpers -------------------------------------------------

    def gsl_modules(self) -> list[torch.nn.Module]:
        m = self.modules
        return [m["tokenizer"], m["embedder"], m["graph_learner"], m["encoder"]]

    def gsl_parameters(self):
        return [p for module in self.gsl_modules() for p in module.parameters()]

    def set_mode(self, train: bool) -> None:
        for module in self.modules.values():
            module.train(train)

    def forward_graph(self) -> tuple[torch.Tensor, WeightedAdjacency]:
        m = self.modules
        h = m["embedder"](m["tokenizer"](self.x_num, self.x_cat))
        a_knn = knn_sparsify(learn_adjacency(h, m["graph_learner"]), self.cfg.knn_k)
        return h, a_knn

    def contrastive_views(self, h: torch.Tensor, a_learner: WeightedAdjacency,
                          epoch: int) -> GraphViewPair:
        cfg = self.cfg
        seeds = {
            "mask_anchor": derive_seed(cfg.seed, f"mask-anchor-{epoch}"),
            "mask_learner": derive_seed(cfg.seed, f"mask-learner-{epoch}"),
            "drop_anchor": derive_seed(cfg.seed, f"drop-anchor-{epoch}"),
            "drop_learner": derive_seed(cfg.seed, f"drop-learner-{epoch}"),
        }
        anchor = WeightedAdjacency(self.anchor_w, "anchor")
        return GraphViewPair(
            a_anchor=drop_edges(anchor, cfg.edge_drop_rate, seeds["drop_anchor"]),
            a_learner=drop_edges(a_learner, cfg.edge_drop_rate, seeds["drop_learner"]),
            x_anchor=mask_features(h, cfg.anchor_mask_rate, seeds["mask_anchor"]),
            x_learner=mask_features(h, cfg.learner_mask_rate, seeds["mask_learner"]),
            seeds=seeds,
        )

    def contrastive_objective(self, pair: GraphViewPair) -> torch.Tensor:
        encoder = self.modules["encoder"]
        z_anchor = encoder(pair.a_anchor, pair.x_anchor)
        z_learner = encoder(pair.a_learner, pair.x_learner)
        return nt_xent(z_anchor, z_learner, self.cfg.temperature)

    def eval_forward(self) -> tuple[torch.Tensor, WeightedAdjacency, torch.Tensor]:
        self.set_mode(False)
        with torch.no_grad():
            h, a_knn = self.forward_graph()
            probs = self.modules["head"](h, a_knn)
        return h, a_knn, probs

    def eval_contrastive(self, h: torch.Tensor, a_knn: WeightedAdjacency) -> float:
        encoder = self.modules["encoder"]
        with torch.no_grad():
            z_anchor = encoder(WeightedAdjacency(self.anchor_w, "anchor"), h)
            z_learner = encoder(a_knn, h)
            return nt_xent(z_anchor, z_learner, self.cfg.temperature).item()

    def metric_on(self, probs: torch.Tensor, indices: np.ndarray) -> float:
        preds = probs.argmax(dim=1).numpy()
        return primary_metric(self.ds.y[indices], preds[indices], self.ds.class_count)

    # ---- bookkeeping -----------------------------------------------------

    def snapshot_states(self) -> dict:
        return {
            name: copy.deepcopy(module.state_dict()) for name, module in self.modules.items()
        }

    def restore_states(self, states: dict) -> None:
        for name, state in states.items():
            self.modules[name].load_state_dict(state)

    def check_finite(self, loss: torch.Tensor, epoch: int) -> None:
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at epoch {epoch}", report=self.build_report(float("nan"), -1)
            )

    def build_report(self, test_metric: float, best_epoch: int) -> TrainReport:
        return TrainReport(
            strategy=self.cfg.strategy,
            metric_name=self.metric_name,
            epochs=list(self.records),
            phases=list(self.phases),
            best_epoch=best_epoch,
            test_metric=test_metric,
            wall_time_s=time.perf_counter() - self.started,
            config=asdict(self.cfg),
            config_hash=self.cfg.hash(),
        )

    def finish(self, best_anchor: torch.Tensor, best_learner: torch.Tensor,
               best_epoch: int) -> tuple[TrainedModel, TrainReport]:
        _, _, probs = self.eval_forward()
        test_metric = self.metric_on(probs, self.split.test)
        report = self.build_report(test_metric, best_epoch)
        model = TrainedModel(
            tokenizer=self.modules["tokenizer"],
            embedder=self.modules["embedder"],
            graph_learner=self.modules["graph_learner"],
            encoder=self.modules["encoder"],
            head=self.modules["head"],
            anchor_classifier=self.anchor_classifier,
            anchor_w=best_anchor,
            learner_w=best_learner,
            config=self.cfg,
            split=self.split,
            metric_name=self.metric_name,
        )
        return model, report


def train(ds: TabularDataset, split: SplitIndices, cfg: TrainConfig,
          epoch_callback=None) -> tuple[TrainedModel, TrainReport]:
    """Dispatch to the strategy named in cfg.strategy."""
    if cfg.strategy == "end2end":
        return train_end_to_end(ds, split, cfg, epoch_callback)
    if cfg.strategy == "two_stage":
        return train_two_stage(ds, split, cfg, epoch_callback)
    if cfg.strategy == "pt_ft":
        return train_pretrain_finetune(ds, split, cfg, epoch_callback)
    raise ConfigError(f"config field 'strategy' must be one of {STRATEGIES}")


def train_end_to_end(ds, split, cfg: TrainConfig,
                     epoch_callback=None) -> tuple[TrainedModel, TrainReport]:
    """Joint optimization of classification minus contrastive objective.

    Per epoch: embed, learn and sparsify the student graph, augment both
    views, take one Adam step over every trainable module, then refresh
    the teacher graph by the moving-average update. Early-stops on the
    validation metric and restores the best epoch's parameters.
    """
    run = _Run(ds, split, cfg)
    optimizer = torch.optim.Adam([
        {"params": run.gsl_parameters(), "lr": cfg.lr_gsl,
         "weight_decay": cfg.weight_decay_gsl},
        {"params": run.modules["head"].parameters(), "lr": cfg.lr_head,
         "weight_decay": cfg.weight_decay_head},
    ])
    stopper = _EarlyStopper(cfg.patience)
    best = {
        "states": run.snapshot_states(),
        "anchor": run.anchor_w.clone(),
        "learner": torch.zeros_like(run.anchor_w),
    }

    for epoch in range(cfg.max_epochs):
        torch.manual_seed(derive_seed(cfg.seed, f"epoch-{epoch}"))
        run.set_mode(True)
        h, a_knn = run.forward_graph()
        pair = run.contrastive_views(h, a_knn, epoch)
        loss_gcl = run.contrastive_objective(pair)
        probs = run.modules["head"](h, a_knn)
        loss_nc = nll_loss(probs, run.y, run.train_idx)
        loss = loss_nc - loss_gcl
        run.check_finite(loss, epoch)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        h_eval, a_knn_eval, probs_eval = run.eval_forward()
        val = run.metric_on(probs_eval, split.valid)
        run.anchor_w = bootstrap(
            WeightedAdjacency(run.anchor_w, "anchor"), a_knn_eval, cfg.tau
        ).w
        run.records.append(EpochRecord(
            epoch, "joint", loss.item(), loss_nc.item(), loss_gcl.item(), val
        ))
        if stopper.update(val, epoch):
            best = {
                "states": run.snapshot_states(),
                "anchor": run.anchor_w.clone(),
                "learner": a_knn_eval.w.clone(),
            }
        if epoch_callback is not None:
            epoch_callback(epoch, run.anchor_w, a_knn_eval.w)
        if stopper.should_stop():
            break

    run.phases.append(PhaseSummary("joint", 0, run.records[-1].epoch + 1, stopper.best_epoch))
    run.restore_states(best["states"])
    return run.finish(best["anchor"], best["learner"], stopper.best_epoch)


def _contrastive_phase(run: _Run, phase_name: str,
                       epoch_callback=None) -> tuple[dict, int]:
    """Optimize the contrastive objective alone over the GSL modules.

    Records carry no classification loss. Model selection and early
    stopping use the objective evaluated without augmentation. Returns
    the best states and the next global epoch index.
    """
    cfg = run.cfg
    optimizer = torch.optim.Adam(
        run.gsl_parameters(), lr=cfg.lr_gsl, weight_decay=cfg.weight_decay_gsl
    )
    stopper = _EarlyStopper(cfg.patience)
    best = {
        "states": run.snapshot_states(),
        "anchor": run.anchor_w.clone(),
        "learner": torch.zeros_like(run.anchor_w),
    }

    for epoch in range(cfg.max_epochs):
        torch.manual_seed(derive_seed(cfg.seed, f"epoch-{epoch}"))
        run.set_mode(True)
        h, a_knn = run.forward_graph()
        pair = run.contrastive_views(h, a_knn, epoch)
        loss_gcl = run.contrastive_objective(pair)
        loss = -loss_gcl
        run.check_finite(loss, epoch)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        run.set_mode(False)
        with torch.no_grad():
            h_eval, a_knn_eval = run.forward_graph()
        gcl_eval = run.eval_contrastive(h_eval, a_knn_eval)
        run.anchor_w = bootstrap(
            WeightedAdjacency(run.anchor_w, "anchor"), a_knn_eval, cfg.tau
        ).w
        run.records.append(EpochRecord(
            epoch, phase_name, loss.item(), None, loss_gcl.item(), gcl_eval
        ))
        if stopper.update(gcl_eval, epoch):
            best = {
                "states": run.snapshot_states(),
                "anchor": run.anchor_w.clone(),
                "learner": a_knn_eval.w.clone(),
            }
        if epoch_callback is not None:
            epoch_callback(epoch, run.anchor_w, a_knn_eval.w)
        if stopper.should_stop():
            break

    run.phases.append(PhaseSummary(
        phase_name, 0, run.records[-1].epoch + 1, stopper.best_epoch
    ))
    run.restore_states(best["states"])
    run.anchor_w = best["anchor"].clone()
    return best, run.records[-1].epoch + 1


def train_two_stage(ds, split, cfg: TrainConfig,
                    epoch_callback=None) -> tuple[TrainedModel, TrainReport]:
    """Contrastive pretraining, then a frozen-backbone classification stage."""
    run = _Run(ds, split, cfg)
    best_stage1, offset = _contrastive_phase(run, "gsl", epoch_callback)

    h_frozen, a_frozen, _ = run.eval_forward()
    h_frozen = h_frozen.detach()
    a_frozen = WeightedAdjacency(a_frozen.w.detach(), a_frozen.tag)

    head = run.modules["head"]
    optimizer = torch.optim.Adam(
        head.parameters(), lr=cfg.lr_head, weight_decay=cfg.weight_decay_head
    )
    stopper = _EarlyStopper(cfg.patience)
    best_head = copy.deepcopy(head.state_dict())

    for local_epoch in range(cfg.max_epochs):
        epoch = offset + local_epoch
        torch.manual_seed(derive_seed(cfg.seed, f"epoch-{epoch}"))
        head.train()
        probs = head(h_frozen, a_frozen)
        loss_nc = nll_loss(probs, run.y, run.train_idx)
        run.check_finite(loss_nc, epoch)
        optimizer.zero_grad()
        loss_nc.backward()
        optimizer.step()

        head.eval()
        with torch.no_grad():
            probs_eval = head(h_frozen, a_frozen)
        val = run.metric_on(probs_eval, split.valid)
        run.records.append(EpochRecord(epoch, "nc", loss_nc.item(), loss_nc.item(), None, val))
        if stopper.update(val, epoch):
            best_head = copy.deepcopy(head.state_dict())
        if stopper.should_stop():
            break

    run.phases.append(PhaseSummary("nc", offset, run.records[-1].epoch + 1, stopper.best_epoch))
    head.load_state_dict(best_head)
    return run.finish(best_stage1["anchor"], best_stage1["learner"], stopper.best_epoch)


def train_pretrain_finetune(ds, split, cfg: TrainConfig,
                            epoch_callback=None) -> tuple[TrainedModel, TrainReport]:
    """Contrastive pretraining, then fine-tuning of all modules on the
    classification loss alone."""
    run = _Run(ds, split, cfg)
    _, offset = _contrastive_phase(run, "gsl", epoch_callback)

    optimizer = torch.optim.Adam([
        {"params": run.gsl_parameters(), "lr": cfg.lr_gsl,
         "weight_decay": cfg.weight_decay_gsl},
        {"params": run.modules["head"].parameters(), "lr": cfg.lr_head,
         "weight_decay": cfg.weight_decay_head},
    ])
    stopper = _EarlyStopper(cfg.patience)
    best = {
        "states": run.snapshot_states(),
        "learner": torch.zeros_like(run.anchor_w),
    }

    for local_epoch in range(cfg.max_epochs):
        epoch = offset + local_epoch
        torch.manual_seed(derive_seed(cfg.seed, f"epoch-{epoch}"))
        run.set_mode(True)
        h, a_knn = run.forward_graph()
        probs = run.modules["head"](h, a_knn)
        loss_nc = nll_loss(probs, run.y, run.train_idx)
        run.check_finite(loss_nc, epoch)
        optimizer.zero_grad()
        loss_nc.backward()
        optimizer.step()

        _, a_knn_eval, probs_eval = run.eval_forward()
        val = run.metric_on(probs_eval, split.valid)
        run.records.append(EpochRecord(epoch, "nc", loss_nc.item(), loss_nc.item(), None, val))
        if stopper.update(val, epoch):
            best = {
                "states": run.snapshot_states(),
                "learner": a_knn_eval.w.clone(),
            }
        if stopper.should_stop():
            break

    run.phases.append(PhaseSummary("nc", offset, run.records[-1].epoch + 1, stopper.best_epoch))
    run.restore_states(best["states"])
    return run.finish(run.anchor_w.clone(), best["learner"], stopper.best_epoch)


# ---- random hyperparameter search -----------------------------------------

SEARCH_SPACE = {
    "fe_dim": [16, 32, 64, 128, 256, 512],
    "fe_layers": [1, 2, 3, 4],
    "knn_k": [5, 10, 15, 20, 25, 30, 35],
    "gl_dim": [64, 128, 256],
    "gl_layers": [2, 3],
    "tau": [0.99, 0.999, 0.9999, 0.99999, 1.0],
    "anchor_mask_rate": (0.6, 0.75),
    "learner_mask_rate": (0.0, 0.7),
    "edge_drop_rate": (0.25, 0.55),
    "lr_gsl": (5e-4, 5e-3),
    "lr_head": (5e-4, 5e-3),
    "weight_decay_gsl": (0.0, 1e-5),
    "weight_decay_head": (0.0, 1e-5),
    "dropout_gsl": (0.4, 0.8),
    "dropout_head": (0.4, 0.8),
    "temperature": [0.2, 0.3, 0.4],
    "head_layers": [2, 3],
    "head_dim": [16, 32, 64, 128],
}

_LOG_UNIFORM_FIELDS = ("lr_gsl", "lr_head")


def sample_config(rng: np.random.Generator, base: TrainConfig, seed: int) -> TrainConfig:
    """Draw one configuration from the tuning grid.

    Discrete fields are sampled uniformly from their grids, continuous
    rates uniformly from their half-open intervals, and learning rates
    log-uniformly. Fields outside the grid (epochs, patience, strategy)
    come from `base`.
    """
    values: dict = {}
    for name, space in SEARCH_SPACE.items():
        if isinstance(space, list):
            values[name] = space[int(rng.integers(len(space)))]
        elif name in _LOG_UNIFORM_FIELDS:
            low, high = np.log(space[0]), np.log(space[1])
            values[name] = float(np.exp(rng.uniform(low, high)))
        else:
            values[name] = float(rng.uniform(space[0], space[1]))
    return replace(base, seed=seed, **values)


def random_search(
    ds: TabularDataset,
    split: SplitIndices,
    budget: int,
    seed: int,
    base: TrainConfig | None = None,
) -> tuple[TrainConfig, list[dict]]:
    """Train `budget` randomly sampled configurations and rank them.

    Trial i's configuration depends only on (seed, i), so growing the
    budget extends the leaderboard without changing earlier trials.
    Returns the best configuration by validation metric plus one
    leaderboard row per trial.
    """
    if budget < 1:
        raise ConfigError("search budget must be at least 1")
    base = base or TrainConfig()
    leaderboard: list[dict] = []
    for i in range(budget):
        rng = np.random.default_rng(derive_seed(seed, f"search-trial-{i}"))
        cfg = sample_config(rng, base, seed=derive_seed(seed, f"search-run-{i}"))
        row = {"trial": i, "config": asdict(cfg)}
        try:
            _, report = train(ds, split, cfg)
            best_record = report.epochs[report.best_epoch]
            row["val_metric"] = best_record.val_metric
            row["test_metric"] = report.test_metric
            row["error"] = None
        except TrainingDiverged as exc:
            row["val_metric"] = None
            row["test_metric"] = None
            row["error"] = str(exc)
        leaderboard.append(row)
    ranked = sorted(
        leaderboard,
        key=lambda r: (-(r["val_metric"] if r["val_metric"] is not None else -np.inf),
                       r["trial"]),
    )
    best_cfg = TrainConfig.from_dict(ranked[0]["config"])
    return best_cfg, ranked
