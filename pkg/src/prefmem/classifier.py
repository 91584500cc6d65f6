"""Binary preference detector: a small tanh MLP over encoder vectors.

One hidden layer, single sigmoid logit, mean binary cross-entropy, plain
mini-batch SGD with analytic gradients.  Everything is deterministic under
the config seed, including the init and the shuffle order.  The encoder is
frozen; only the four head tensors train.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoints import parse_header, read_checkpoint, write_checkpoint
from .errors import DataFormatError, DimensionError
from .numerics import Rng, as_vector, bce_loss, mix_seed, sigmoid

INIT_SCALE = 0.1
DEFAULT_HIDDEN = 32


@dataclass
class ClassifierParams:
    w1: np.ndarray  # (h, l)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (1, h)
    b2: np.ndarray  # (1,)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = as_vector(self.b1, "b1")
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = as_vector(self.b2, "b2")
        h, l = self.w1.shape
        if self.b1.shape != (h,):
            raise DimensionError(f"b1 has shape {self.b1.shape}, expected ({h},)")
        if self.w2.shape != (1, h):
            raise DimensionError(f"w2 has shape {self.w2.shape}, expected (1, {h})")
        if self.b2.shape != (1,):
            raise DimensionError(f"b2 has shape {self.b2.shape}, expected (1,)")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: Rng) -> "ClassifierParams":
        def u(*shape):
            return rng.uniform_array(shape, -INIT_SCALE, INIT_SCALE)
        return cls(w1=u(hidden_dim, input_dim), b1=u(hidden_dim),
                   w2=u(1, hidden_dim), b2=u(1))

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(w1=self.w1.copy(), b1=self.b1.copy(),
                                w2=self.w2.copy(), b2=self.b2.copy())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 0.05
    batch: int = 32
    seed: int = 7
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    hidden: int = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0 or self.batch < 1 or self.hidden < 1:
            raise ValueError("epochs must be >= 0, batch and hidden >= 1")
        if len(self.split) != 3 or any(s < 0 for s in self.split):
            raise ValueError("split needs three non-negative fractions")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(self.split)}, not 1")


def forward(params: ClassifierParams, e: np.ndarray) -> float:
    e = as_vector(e, "embedding")
    if e.shape[0] != params.input_dim:
        raise DimensionError(f"embedding has dim {e.shape[0]}, classifier "
                             f"expects {params.input_dim}")
    hidden = np.tanh(params.w1 @ e + params.b1)
    return float(params.w2[0] @ hidden + params.b2[0])


def predict(params: ClassifierParams, e: np.ndarray,
            threshold: float = 0.5) -> int:
    return 1 if sigmoid(forward(params, e)) >= threshold else 0


def _as_xy(dataset) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise ValueError("dataset is empty")
    X = np.stack([as_vector(e, "embedding") for e, _ in dataset])
    y = np.array([label for _, label in dataset], dtype=np.float64)
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("labels must be 0 or 1")
    return X, y


def batch_logits(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    hidden = np.tanh(X @ params.w1.T + params.b1)
    return hidden @ params.w2[0] + params.b2[0]


def mean_bce(params: ClassifierParams, X: np.ndarray, y: np.ndarray) -> float:
    logits = batch_logits(params, X)
    return float(np.mean([bce_loss(s, t) for s, t in zip(logits, y)]))


def batch_grads(params: ClassifierParams, X: np.ndarray, y: np.ndarray):
    """Analytic gradients of the mean BCE over the batch."""
    n = X.shape[0]
    hidden = np.tanh(X @ params.w1.T + params.b1)
    logits = hidden @ params.w2[0] + params.b2[0]
    g = (sigmoid(logits) - y) / n
    d_w2 = (g @ hidden).reshape(1, -1)
    d_b2 = np.array([float(np.sum(g))])
    d_hidden = np.outer(g, params.w2[0]) * (1.0 - hidden ** 2)
    d_w1 = d_hidden.T @ X
    d_b1 = d_hidden.sum(axis=0)
    return d_w1, d_b1, d_w2, d_b2


def split_dataset(records, fractions, seed: int, topic_of=None):
    """Partition records into train/val/test index lists.

    When topic_of is given, whole topics are assigned to a single split so
    evaluation never sees a topic trained on; otherwise rows are assigned
    independently.  Deterministic under seed.
    """
    n = len(records)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = Rng(mix_seed(seed, 1))
    if topic_of is None:
        order = list(range(n))
        rng.shuffle(order)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        return (order[:n_train], order[n_train:n_train + n_val],
                order[n_train + n_val:])
    by_topic: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_topic.setdefault(topic_of(rec), []).append(i)
    topics = sorted(by_topic)
    rng.shuffle(topics)
    splits: tuple[list[int], list[int], list[int]] = ([], [], [])
    cut_train, cut_val = fractions[0] * n, (fractions[0] + fractions[1]) * n
    assigned = 0
    for topic in topics:
        rows = by_topic[topic]
        if assigned < cut_train:
            splits[0].extend(rows)
        elif assigned < cut_val:
            splits[1].extend(rows)
        else:
            splits[2].extend(rows)
        assigned += len(rows)
    return splits


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None


def train(cfg: TrainConfig, dataset, val_set=None, init_params=None
          ) -> tuple[ClassifierParams, list[EpochStats]]:
    """Mini-batch SGD on mean BCE.  dataset and val_set are lists of
    (embedding, label) pairs; history reports post-epoch metrics.  Pass
    init_params to resume from an existing head instead of a fresh init."""
    X, y = _as_xy(dataset)
    if len(np.unique(y)) < 2:
        raise ValueError("training split contains a single class")
    Xv = yv = None
    if val_set:
        Xv, yv = _as_xy(val_set)
    rng = Rng(mix_seed(cfg.seed, 2))
    if init_params is not None:
        if init_params.input_dim != X.shape[1]:
            raise DimensionError(f"resumed classifier expects dim "
                                 f"{init_params.input_dim}, dataset has "
                                 f"{X.shape[1]}")
        params = init_params.copy()
    else:
        params = ClassifierParams.init(X.shape[1], cfg.hidden, rng)
    order = list(range(X.shape[0]))
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch):
            idx = order[start:start + cfg.batch]
            d_w1, d_b1, d_w2, d_b2 = batch_grads(params, X[idx], y[idx])
            params.w1 -= cfg.lr * d_w1
            params.b1 -= cfg.lr * d_b1
            params.w2 -= cfg.lr * d_w2
            params.b2 -= cfg.lr * d_b2
        entry = {"train_loss": mean_bce(params, X, y),
                 "train_accuracy": _accuracy(params, X, y)}
        if Xv is not None:
            entry["val_loss"] = mean_bce(params, Xv, yv)
            entry["val_accuracy"] = _accuracy(params, Xv, yv)
        history.append(EpochStats(epoch=epoch, **entry))
    return params, history


def _accuracy(params: ClassifierParams, X: np.ndarray, y: np.ndarray) -> float:
    preds = (sigmoid(batch_logits(params, X)) >= 0.5).astype(np.float64)
    return float(np.mean(preds == y))


@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def evaluate(params: ClassifierParams, dataset) -> EvalMetrics:
    if not dataset:
        raise ValueError("cannot evaluate an empty split")
    X, y = _as_xy(dataset)
    preds = (sigmoid(batch_logits(params, X)) >= 0.5).astype(int)
    truth = y.astype(int)
    return EvalMetrics(tp=int(np.sum((preds == 1) & (truth == 1))),
                       fp=int(np.sum((preds == 1) & (truth == 0))),
                       tn=int(np.sum((preds == 0) & (truth == 0))),
                       fn=int(np.sum((preds == 0) & (truth == 1))))


def save_classifier(path, params: ClassifierParams) -> None:
    header = f"prefclf v1 l={params.input_dim} h={params.hidden_dim}"
    write_checkpoint(path, header, [("w1", params.w1), ("b1", params.b1),
                                    ("w2", params.w2), ("b2", params.b2)])


def load_classifier(path) -> ClassifierParams:
    header, tensors = read_checkpoint(path)
    fields = parse_header(header, "prefclf")
    for key in ("l", "h"):
        if key not in fields:
            raise DataFormatError(f"classifier checkpoint header missing "
                                  f"{key}=", path=path)
    missing = [n for n in ("w1", "b1", "w2", "b2") if n not in tensors]
    if missing:
        raise DataFormatError(f"classifier checkpoint missing tensors: "
                              f"{', '.join(missing)}", path=path)
    params = ClassifierParams(w1=tensors["w1"], b1=tensors["b1"].ravel(),
                              w2=tensors["w2"], b2=tensors["b2"].ravel())
    if (params.input_dim, params.hidden_dim) != (fields["l"], fields["h"]):
        raise DataFormatError(f"classifier checkpoint header declares "
                              f"(l, h)=({fields['l']}, {fields['h']}) but "
                              f"tensors give ({params.input_dim}, "
                              f"{params.hidden_dim})", path=path)
    return params
