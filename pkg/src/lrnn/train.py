"""Training loop, readout, stratified cross-validation and metric files."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import AdamState, Batch, GradientTape, ParameterStore, adam_step, init_params
from .errors import DataError, LrnnError
from .graph import ComputationGraph, compile_graph
from .grounder import ground
from .logic import Atom
from .parser import Example, Template, parse_atom

log = logging.getLogger(__name__)

READOUTS = ("mean-component", "learned-row")


@dataclass
class TrainConfig:
    steps: int = 2000
    d: int = 3
    folds: int = 5
    seed: int = 42
    layers: int = 3
    readout: str = "mean-component"
    lr: float = 1e-3
    jobs: int = 1
    bias: bool = False
    query: str = "q"

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.d < 1 or self.layers < 1:
            raise ValueError("d and layers must be positive")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")


@dataclass
class FoldResult:
    fold: int
    train_accuracy: float
    test_accuracy: float
    train_mse: float
    test_mse: float
    n_train: int
    n_test: int


@dataclass
class Metrics:
    accuracy: float
    mean_squared_error: float
    per_fold: List[FoldResult] = field(default_factory=list)

    @property
    def train_accuracy(self) -> float:
        return float(np.mean([f.train_accuracy for f in self.per_fold]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "split", "accuracy", "mse"])
        for f in self.per_fold:
            w.writerow([f.fold, "train", repr(f.train_accuracy), repr(f.train_mse)])
            w.writerow([f.fold, "test", repr(f.test_accuracy), repr(f.test_mse)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "accuracy": self.accuracy,
            "mse": self.mean_squared_error,
            "train_accuracy": self.train_accuracy,
            "folds": [asdict(f) for f in self.per_fold],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# readout and loss


def readout(output: np.ndarray, mode: str = "mean-component", row: Optional[np.ndarray] = None) -> np.ndarray:
    """Scalar prediction(s) from query vector(s); works on (d,) or (G, d)."""
    out = np.asarray(output, dtype=np.float64)
    if mode == "mean-component":
        return out.mean(axis=-1)
    if mode == "learned-row":
        if row is None:
            raise ValueError("learned-row readout needs a row vector")
        return np.tanh(out @ row)
    raise ValueError(f"unknown readout {mode!r}")


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    """Fraction with sign(pred) == sign(label); a zero prediction is always wrong."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    ok = (np.sign(pred) == np.sign(labels)) & (pred != 0)
    return float(ok.mean()) if len(ok) else 0.0


def mse(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(labels)) ** 2))


# ---------------------------------------------------------------------------
# graphs


def build_graphs(corpus: Sequence[Example], template: Template, params: ParameterStore,
                 query: str = "q", bias: bool = False) -> List[ComputationGraph]:
    q = parse_atom(query)
    graphs = []
    for ex in corpus:
        try:
            model = ground(template, ex)
            graphs.append(compile_graph(model, template, q, params, bias=bias))
        except LrnnError as exc:
            raise type(exc)(f"example {ex.id}: {exc}") from exc
    return graphs


def _labels(corpus: Sequence[Example]) -> np.ndarray:
    missing = [ex.id for ex in corpus if ex.label is None]
    if missing:
        raise DataError(f"examples without labels: {', '.join(missing[:5])}")
    return np.array([float(ex.label) for ex in corpus])


def _fresh_params(template: Template, config: TrainConfig) -> ParameterStore:
    return init_params(template, config.d, config.seed, bias=config.bias,
                       readout_row=config.readout == "learned-row")


class Trainer:
    """Full-batch ADAM on the mean squared error of the readout."""

    def __init__(self, graphs: Sequence[ComputationGraph], labels: np.ndarray,
                 params: ParameterStore, config: TrainConfig) -> None:
        self.batch = Batch(graphs, config.jobs)
        self.labels = np.asarray(labels, dtype=np.float64)
        self.params = params
        self.config = config
        self.tape = GradientTape()
        self.state = AdamState(lr=config.lr)

    def predict(self) -> np.ndarray:
        out = self.batch.forward(self.params)
        row = self.params["readout"] if self.config.readout == "learned-row" else None
        return readout(out, self.config.readout, row)

    def step(self) -> float:
        out = self.batch.forward(self.params)
        n, d = out.shape
        if self.config.readout == "mean-component":
            pred = out.mean(axis=1)
            dloss = 2.0 * (pred - self.labels) / n
            out_grad = np.repeat(dloss[:, None] / d, d, axis=1)
        else:
            row = self.params["readout"]
            pred = np.tanh(out @ row)
            dz = 2.0 * (pred - self.labels) / n * (1.0 - pred * pred)
            out_grad = dz[:, None] * row[None, :]
            self.tape.accumulate("readout", dz @ out)
        loss = float(np.mean((pred - self.labels) ** 2))
        self.batch.backward(self.params, out_grad, self.tape)
        adam_step(self.params, self.tape, self.state)
        return loss

    def run(self, steps: int) -> List[Tuple[int, float]]:
        history = [(t, self.step()) for t in range(steps)]
        history.append((steps, mse(self.predict(), self.labels)))
        return history

    def close(self) -> None:
        self.batch.close()


def train(corpus: Sequence[Example], template: Template,
          config: TrainConfig) -> Tuple[ParameterStore, List[Tuple[int, float]]]:
    """Train from a fresh seeded init; history holds the loss before each step
    plus the final loss at ``step == config.steps``."""
    labels = _labels(corpus)
    params = _fresh_params(template, config)
    graphs = build_graphs(corpus, template, params, config.query, config.bias)
    trainer = Trainer(graphs, labels, params, config)
    try:
        history = trainer.run(config.steps)
    finally:
        trainer.close()
    return params, history


def predict(corpus: Sequence[Example], template: Template, params: ParameterStore,
            config: TrainConfig) -> np.ndarray:
    graphs = build_graphs(corpus, template, params, config.query, config.bias)
    batch = Batch(graphs, config.jobs)
    try:
        out = batch.forward(params)
    finally:
        batch.close()
    row = params["readout"] if config.readout == "learned-row" else None
    return readout(out, config.readout, row)


def history_csv(history: Sequence[Tuple[int, float]]) -> str:
    lines = ["step,loss"] + [f"{t},{loss!r}" for t, loss in history]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# cross-validation


def stratified_folds(labels: Sequence[float], folds: int, seed: int) -> List[np.ndarray]:
    """Test-index arrays, one per fold; each class is shuffled then dealt round-robin."""
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError("cross-validation needs folds >= 2")
    if len(labels) < folds:
        raise DataError(f"{len(labels)} examples cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    buckets: List[List[int]] = [[] for _ in range(folds)]
    k = 0
    for cls in sorted(set(np.sign(labels).tolist())):
        idx = np.nonzero(np.sign(labels) == cls)[0]
        if len(idx) < folds:
            raise DataError(
                f"class {cls:+g} has {len(idx)} example(s); every one of the {folds} folds needs one"
            )
        for i in rng.permutation(idx):
            buckets[k % folds].append(int(i))
            k += 1
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def cross_validate(corpus: Sequence[Example], template: Template, config: TrainConfig) -> Metrics:
    labels = _labels(corpus)
    test_sets = stratified_folds(labels, config.folds, config.seed)
    probe = _fresh_params(template, config)
    graphs = build_graphs(corpus, template, probe, config.query, config.bias)
    results: List[FoldResult] = []
    for k, test_idx in enumerate(test_sets):
        mask = np.ones(len(corpus), dtype=bool)
        mask[test_idx] = False
        train_idx = np.nonzero(mask)[0]
        params = _fresh_params(template, config)
        trainer = Trainer([graphs[i] for i in train_idx], labels[train_idx], params, config)
        try:
            trainer.run(config.steps)
            train_pred = trainer.predict()
        finally:
            trainer.close()
        test_batch = Batch([graphs[i] for i in test_idx], config.jobs)
        try:
            out = test_batch.forward(params)
        finally:
            test_batch.close()
        row = params["readout"] if config.readout == "learned-row" else None
        test_pred = readout(out, config.readout, row)
        res = FoldResult(
            fold=k + 1,
            train_accuracy=accuracy(train_pred, labels[train_idx]),
            test_accuracy=accuracy(test_pred, labels[test_idx]),
            train_mse=mse(train_pred, labels[train_idx]),
            test_mse=mse(test_pred, labels[test_idx]),
            n_train=len(train_idx),
            n_test=len(test_idx),
        )
        log.info("fold %d: train acc %.3f, test acc %.3f", res.fold, res.train_accuracy, res.test_accuracy)
        results.append(res)
    return Metrics(
        accuracy=float(np.mean([r.test_accuracy for r in results])),
        mean_squared_error=float(np.mean([r.test_mse for r in results])),
        per_fold=results,
    )
