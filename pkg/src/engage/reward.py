"""Engagement scorer: hashed n-gram logistic model plus a remote-scorer client.

The in-process scorer maps (context, response) to P(engaging) via hashed
token and character n-gram features and a logistic regression trained with
plain SGD (deterministic for a fixed seed). Neural scorers can be mounted
through RemoteScorer, which speaks the gateway wire protocol.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .errors import (
    BudgetMismatchError,
    DegenerateLabelsError,
    ModelFormatError,
    ScoreOutOfRangeError,
    ScorerTimeoutError,
    ScorerTransportError,
    TrainingDivergedError,
)
from .labeler import CONTEXT_FORMAT_VERSION, LabeledRow, render_context

MODEL_FORMAT_VERSION = 1


class ScorerInterface(Protocol):
    def score(self, context_text: str, response_text: str) -> float: ...


@dataclass(frozen=True)
class FeaturizerConfig:
    token_orders: tuple[int, ...] = (1, 2, 3)
    char_orders: tuple[int, ...] = (3, 4, 5)
    hash_dimension: int = 1 << 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "token_orders", tuple(self.token_orders))
        object.__setattr__(self, "char_orders", tuple(self.char_orders))
        if self.hash_dimension < 1 << 10:
            raise ValueError("hash_dimension must be >= 2^10")
        if self.hash_dimension & (self.hash_dimension - 1):
            raise ValueError("hash_dimension must be a power of two")
        if not self.token_orders and not self.char_orders:
            raise ValueError("at least one n-gram order required")

    def to_dict(self) -> dict:
        return {
            "token_orders": list(self.token_orders),
            "char_orders": list(self.char_orders),
            "hash_dimension": self.hash_dimension,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturizerConfig":
        return cls(
            token_orders=tuple(d["token_orders"]),
            char_orders=tuple(d["char_orders"]),
            hash_dimension=d["hash_dimension"],
            seed=d["seed"],
        )


def _accumulate(counts: dict, text: str, namespace: str, config: FeaturizerConfig):
    mask = config.hash_dimension - 1
    base = zlib.crc32(f"{namespace}|{config.seed}".encode()) & 0xFFFFFFFF
    tokens = text.split()
    for n in config.token_orders:
        for i in range(len(tokens) - n + 1):
            key = zlib.crc32(" ".join(tokens[i : i + n]).encode(), base) & mask
            counts[key] = counts.get(key, 0.0) + 1.0
    for n in config.char_orders:
        for i in range(len(text) - n + 1):
            key = zlib.crc32(text[i : i + n].encode(), base ^ 0x9E3779B9) & mask
            counts[key] = counts.get(key, 0.0) + 1.0


def featurize(context_text: str, response_text: str,
              config: FeaturizerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Hashed n-gram counts, context and response in distinct namespaces,
    L2-normalized. Returns (indices, values); the model's bias is separate,
    so empty inputs yield an empty vector."""
    counts: dict[int, float] = {}
    _accumulate(counts, context_text, "ctx", config)
    _accumulate(counts, response_text, "rsp", config)
    if not counts:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    idx = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
    val = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
    val /= np.linalg.norm(val)
    return idx, val


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass
class TrainConfig:
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)
    epochs: int = 10
    learning_rate: float = 0.5
    val_fraction: float = 0.1
    seed: int = 0
    l2: float = 0.0
    context_budget: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0,1)")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


@dataclass
class TrainedScorer:
    featurizer: FeaturizerConfig
    weights: np.ndarray
    bias: float
    training_meta: dict

    @property
    def context_budget(self) -> int:
        return self.training_meta["context_budget"]

    def decision(self, context_text: str, response_text: str) -> float:
        idx, val = featurize(context_text, response_text, self.featurizer)
        return float(self.weights[idx] @ val) + self.bias

    def score(self, context_text: str, response_text: str) -> float:
        return _sigmoid(self.decision(context_text, response_text))

    def check_budget(self, budget: int, force: bool = False):
        if budget != self.context_budget and not force:
            raise BudgetMismatchError(
                f"model trained with context budget {self.context_budget}, "
                f"got {budget}; pass force to override")


def batch_loss_and_grad(weights: np.ndarray, bias: float,
                        features: list[tuple[np.ndarray, np.ndarray]],
                        labels: np.ndarray, l2: float):
    """Full-batch mean logistic loss and its analytic gradient.

    Used for gradient verification; SGD uses the same per-example terms.
    """
    n = len(features)
    grad_w = l2 * weights
    grad_b = 0.0
    loss = 0.5 * l2 * float(weights @ weights)
    for (idx, val), y in zip(features, labels):
        z = float(weights[idx] @ val) + bias
        p = _sigmoid(z)
        loss += (-(y * math.log(max(p, 1e-300)) + (1 - y) * math.log(max(1 - p, 1e-300)))) / n
        g = (p - y) / n
        np.add.at(grad_w, idx, g * val)
        grad_b += g
    return loss, grad_w, grad_b


def _mean_log_loss(weights, bias, features, labels) -> float:
    total = 0.0
    for (idx, val), y in zip(features, labels):
        p = _sigmoid(float(weights[idx] @ val) + bias)
        p = min(max(p, 1e-12), 1 - 1e-12)
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / len(labels)


def _split_by_conversation(labeled: list[LabeledRow], val_fraction: float,
                           seed: int) -> tuple[np.ndarray, np.ndarray]:
    by_conv: dict[str, list[int]] = {}
    for i, lr in enumerate(labeled):
        by_conv.setdefault(lr.row.conversation_id, []).append(i)
    conv_ids = sorted(by_conv)
    rng = np.random.default_rng(seed)
    rng.shuffle(conv_ids)
    target = val_fraction * len(labeled)
    val_idx: list[int] = []
    train_idx: list[int] = []
    for cid in conv_ids:
        bucket = val_idx if len(val_idx) < target else train_idx
        bucket.extend(by_conv[cid])
    return np.array(train_idx, dtype=np.int64), np.array(val_idx, dtype=np.int64)


def data_fingerprint(labeled: Iterable[LabeledRow]) -> str:
    h = hashlib.sha256()
    for lr in labeled:
        h.update(f"{lr.row.conversation_id}\x1f{lr.row.turn_index}\x1f{lr.label}\x1e".encode())
    return h.hexdigest()[:16]


def train(labeled: list[LabeledRow], config: TrainConfig) -> TrainedScorer:
    """SGD logistic regression; keeps the epoch minimizing validation loss.

    The validation split is deterministic from the seed and grouped by
    conversation so no conversation straddles the split.
    """
    labels_all = np.array([lr.label for lr in labeled], dtype=np.float64)
    if len(set(labels_all.tolist())) < 2:
        raise DegenerateLabelsError("all labels identical")
    train_idx, val_idx = _split_by_conversation(labeled, config.val_fraction, config.seed)
    y_train = labels_all[train_idx]
    y_val = labels_all[val_idx]
    for name, y in (("training", y_train), ("validation", y_val)):
        if len(y) == 0 or (y == 1).sum() < 1 or (y == 0).sum() < 1:
            raise DegenerateLabelsError(
                f"{name} split lacks both classes; need >= 2 examples of each")
    if (y_train == 1).sum() < 2 or (y_train == 0).sum() < 2:
        raise DegenerateLabelsError("need >= 2 training examples of each class")

    features = [
        featurize(render_context(lr.row, config.context_budget).text,
                  lr.row.response_text, config.featurizer)
        for lr in labeled
    ]
    feats_train = [features[i] for i in train_idx]
    feats_val = [features[i] for i in val_idx]

    dim = config.featurizer.hash_dimension
    w = np.zeros(dim)
    b = 0.0
    rng = np.random.default_rng(config.seed + 1)
    order = np.arange(len(train_idx))
    lr_ = config.learning_rate
    train_losses: list[float] = []
    val_losses: list[float] = []
    best = None
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        running = 0.0
        for j in order:
            idx, val = feats_train[j]
            y = y_train[j]
            z = float(w[idx] @ val) + b
            p = _sigmoid(z)
            pc = min(max(p, 1e-12), 1 - 1e-12)
            running += -(y * math.log(pc) + (1 - y) * math.log(1 - pc))
            g = p - y
            if idx.size:
                if config.l2:
                    w[idx] -= lr_ * (g * val + config.l2 * w[idx])
                else:
                    w[idx] -= lr_ * g * val
            b -= lr_ * g
        train_loss = running / len(order)
        if not math.isfinite(train_loss) or not math.isfinite(b):
            raise TrainingDivergedError(epoch)
        val_loss = _mean_log_loss(w, b, feats_val, y_val)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch)
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        if best is None or val_loss < best[1]:
            best = (epoch, val_loss, w.copy(), b)

    chosen_epoch, _, w_best, b_best = best
    strategy = labeled[0].strategy.describe()
    meta = {
        "epochs_run": config.epochs,
        "chosen_epoch": chosen_epoch,
        "train_loss_by_epoch": train_losses,
        "val_loss_by_epoch": val_losses,
        "label_strategy": strategy,
        "context_budget": config.context_budget,
        "context_format": CONTEXT_FORMAT_VERSION,
        "data_fingerprint": data_fingerprint(labeled),
        "learning_rate": config.learning_rate,
        "l2": config.l2,
        "seed": config.seed,
        "n_train": int(len(train_idx)),
        "n_val": int(len(val_idx)),
    }
    return TrainedScorer(featurizer=config.featurizer, weights=w_best,
                         bias=b_best, training_meta=meta)


def evaluate(model: ScorerInterface, labeled: list[LabeledRow],
             context_budget: int | None = None) -> dict:
    """Accuracy at 0.5, rank AUC (ties count 1/2), clamped mean log loss."""
    if not labeled:
        raise ValueError("labeled set is empty")
    if context_budget is None:
        context_budget = getattr(model, "context_budget", 256)
    y = np.array([lr.label for lr in labeled], dtype=np.float64)
    scores = np.array([
        model.score(render_context(lr.row, context_budget).text, lr.row.response_text)
        for lr in labeled
    ])
    acc = float(((scores >= 0.5) == (y == 1)).mean())
    p = np.clip(scores, 1e-12, 1 - 1e-12)
    log_loss = float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        auc = None
    else:
        from scipy.stats import rankdata

        ranks = rankdata(scores)
        auc = float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
    return {"accuracy": acc, "auc": auc, "log_loss": log_loss, "n": len(labeled)}


# ---------------------------------------------------------------------------
# Model persistence (npz container; see README for the field layout)


def save_model(model: TrainedScorer, path):
    np.savez_compressed(
        path,
        format_version=np.int64(MODEL_FORMAT_VERSION),
        weights=model.weights,
        bias=np.float64(model.bias),
        featurizer=np.bytes_(json.dumps(model.featurizer.to_dict()).encode()),
        training_meta=np.bytes_(json.dumps(model.training_meta).encode()),
    )


def load_model(path) -> TrainedScorer:
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != MODEL_FORMAT_VERSION:
                raise ModelFormatError(
                    f"unsupported model format version {version} "
                    f"(expected {MODEL_FORMAT_VERSION})")
            featurizer = FeaturizerConfig.from_dict(
                json.loads(bytes(data["featurizer"]).decode()))
            meta = json.loads(bytes(data["training_meta"]).decode())
            weights = np.asarray(data["weights"], dtype=np.float64)
            bias = float(data["bias"])
    except ModelFormatError:
        raise
    except Exception as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc
    if weights.shape != (featurizer.hash_dimension,) or not np.isfinite(weights).all():
        raise ModelFormatError("corrupt model file: bad weight vector")
    if "data_fingerprint" not in meta:
        raise ModelFormatError("corrupt model file: missing data_fingerprint")
    return TrainedScorer(featurizer=featurizer, weights=weights, bias=bias,
                         training_meta=meta)


# ---------------------------------------------------------------------------
# Remote scorer client


class RemoteScorer:
    """Scorer backed by an HTTP endpoint speaking the gateway /score protocol.

    Failures surface as typed errors, never as a silent 0.0.
    """

    def __init__(self, endpoint: str, timeout_ms: int = 5000, session=None):
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        self.endpoint = endpoint
        self.timeout_ms = timeout_ms
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def score(self, context_text: str, response_text: str) -> float:
        import requests

        try:
            resp = self._session.post(
                self.endpoint,
                json={"context": context_text, "response": response_text},
                timeout=self.timeout_ms / 1000.0,
            )
        except requests.Timeout as exc:
            raise ScorerTimeoutError(
                f"no response within {self.timeout_ms}ms") from exc
        except requests.RequestException as exc:
            raise ScorerTransportError(str(exc)) from exc
        if not 200 <= resp.status_code < 300:
            raise ScorerTransportError(
                f"scorer returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            value = resp.json()["score"]
        except (ValueError, KeyError) as exc:
            raise ScorerTransportError(f"malformed scorer response: {exc}") from exc
        if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
            raise ScoreOutOfRangeError(f"score out of range: {value!r}")
        return float(value)
