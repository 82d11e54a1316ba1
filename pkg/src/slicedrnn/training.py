"""Classification head, negative log-likelihood loss, Adam, and the
epoch loop with best-validation checkpoint selection.

Defaults mirror the experimental recipe: hidden dim 50, embedding dim
200, mini-batch 100, Adam(alpha=0.001, beta1=0.9, beta2=0.999,
eps=1e-8). Loss is averaged per mini-batch. The padding embedding row
(id 0) starts at zero and receives no gradient, so padded steps never
learn content.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .engine import SrnnModel, srnn_backward, srnn_forward_batch
from .errors import DimensionError
from .tensor import SeededRng, softmax


@dataclass
class ClassifierHead:
    """Readout: class logits = W_F @ F + b_F."""

    W_F: np.ndarray
    b_F: np.ndarray

    @classmethod
    def zeros(cls, classes: int, hidden_dim: int) -> "ClassifierHead":
        # zero init makes the initial loss exactly ln(classes)
        return cls(W_F=np.zeros((classes, hidden_dim)), b_F=np.zeros(classes))

    @property
    def classes(self) -> int:
        return self.W_F.shape[0]


@dataclass
class AdamState:
    """First/second moment buffers plus the shared hyperparameters."""

    m: dict
    v: dict
    t: int = 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, alpha: float = 0.001) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.items()},
            v={name: np.zeros_like(arr) for name, arr in params.items()},
            alpha=alpha,
        )


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 100
    seed: int = 0
    hidden_dim: int = 50
    embed_dim: int = 200
    workers: int = 1
    clip_norm: float | None = None  # escape hatch; off by default
    alpha: float = 0.001

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_acc: float
    seconds: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.val_acc:.4f}\t{self.seconds:.3f}"


@dataclass
class TrainResult:
    log: list
    best_epoch: int
    best_val_acc: float
    best_params: dict = field(repr=False)


def predict(head: ClassifierHead, f) -> np.ndarray:
    """Class probability vector for one document representation."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != head.W_F.shape[1]:
        raise DimensionError(
            f"representation has shape {f.shape}, head expects ({head.W_F.shape[1]},)"
        )
    return softmax(head.W_F @ f + head.b_F)


def predicted_label(probs) -> int:
    """Argmax with the documented lowest-index tie-break."""
    return int(np.argmax(probs))


def nll_loss(probs, label: int):
    """-log p[label] and the gradient w.r.t. the logits (p - onehot)."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"label {label} outside [0, {probs.shape[0]})")
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return float(-np.log(probs[label])), dlogits


def adam_update(state: AdamState, params: dict, grads: dict) -> None:
    """One bias-corrected Adam step, in place on the parameter arrays."""
    for name, arr in params.items():
        if grads[name].shape != arr.shape:
            raise DimensionError(
                f"gradient for {name} has shape {grads[name].shape}, "
                f"parameter has {arr.shape}"
            )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, arr in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr -= state.alpha * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


def build_model(vocab_size, classes, plan, hidden_dim, embed_dim, seed, embed=None):
    """Assemble a model: seeded cells per layer, zero head, given or
    seeded embedding (padding row forced to zero)."""
    from .cells import GruParams

    rng = SeededRng(seed)
    if embed is None:
        embed = rng.uniform(-0.05, 0.05, (vocab_size, embed_dim))
        embed[0] = 0.0
    cells = [GruParams.init(embed_dim, hidden_dim, rng.derive(1000))]
    for p in range(1, plan.k + 1):
        cells.append(GruParams.init(hidden_dim, hidden_dim, rng.derive(1000 + p)))
    head = ClassifierHead.zeros(classes, hidden_dim)
    return SrnnModel(plan=plan, embed=embed, cells=cells, head=head).validate()


def model_parameters(model: SrnnModel) -> dict:
    """Named views of every learnable array, in a fixed order."""
    params = {"embed": model.embed}
    for p, cell in enumerate(model.cells):
        for name, arr in cell.blocks():
            params[f"cell{p}.{name}"] = arr
    params["head.W_F"] = model.head.W_F
    params["head.b_F"] = model.head.b_F
    return params


def batch_loss_and_grads(model: SrnnModel, ids, labels, workers: int = 1):
    """Mean NLL over a batch plus gradients for every parameter."""
    head = model.head
    f_rows, trace = srnn_forward_batch(model, ids, workers=workers)
    logits = f_rows @ head.W_F.T + head.b_F
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    batch = ids.shape[0]
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - shifted[rows, labels]))

    dlogits = np.exp(shifted) / np.exp(log_norm)[:, None]
    dlogits[rows, labels] -= 1.0
    dlogits /= batch
    grads = {"head.W_F": dlogits.T @ f_rows, "head.b_F": dlogits.sum(axis=0)}
    df = dlogits @ head.W_F
    model_grads = srnn_backward(model, trace, df, workers=workers)
    model_grads.embed[0] = 0.0  # padding row is frozen
    grads["embed"] = model_grads.embed
    for p, cell_grad in enumerate(model_grads.cells):
        for name, arr in cell_grad.blocks():
            grads[f"cell{p}.{name}"] = arr
    return loss, grads


def _clip(grads: dict, clip_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale


def evaluate_accuracy(model: SrnnModel, split, workers: int = 1, batch_size: int = 256):
    """Fraction of documents whose argmax class matches the label."""
    if not split:
        raise ValueError("empty evaluation split")
    correct = 0
    for start in range(0, len(split), batch_size):
        chunk = split[start : start + batch_size]
        ids = np.array([doc.ids for doc in chunk])
        f_rows, _ = srnn_forward_batch(model, ids, workers=workers, keep_caches=False)
        logits = f_rows @ model.head.W_F.T + model.head.b_F
        preds = np.argmax(logits, axis=1)
        correct += int(sum(int(p) == doc.label for p, doc in zip(preds, chunk)))
    return correct / len(split)


def train(model: SrnnModel, corpus, cfg: TrainConfig) -> TrainResult:
    """Epoch loop: seeded shuffling, batched updates, per-epoch metrics,
    best-validation snapshot retained (partial final batch is kept)."""
    if not corpus.train or not corpus.val:
        raise ValueError("corpus must have non-empty train and validation splits")
    params = model_parameters(model)
    adam = AdamState.for_params(params, alpha=cfg.alpha)
    rng = SeededRng(cfg.seed)
    all_ids = np.array([doc.ids for doc in corpus.train])
    all_labels = np.array([doc.label for doc in corpus.train])

    log = []
    best_epoch, best_acc = -1, -1.0
    best_params = {name: arr.copy() for name, arr in params.items()}
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = rng.derive(epoch).permutation(len(corpus.train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            loss, grads = batch_loss_and_grads(
                model, all_ids[batch_idx], all_labels[batch_idx], workers=cfg.workers
            )
            if cfg.clip_norm is not None:
                _clip(grads, cfg.clip_norm)
            adam_update(adam, params, grads)
            losses.append(loss)
        val_acc = evaluate_accuracy(model, corpus.val, workers=cfg.workers)
        seconds = time.perf_counter() - started
        log.append(EpochStats(epoch, float(np.mean(losses)), val_acc, seconds))
        if val_acc > best_acc:
            best_epoch, best_acc = epoch, val_acc
            best_params = {name: arr.copy() for name, arr in params.items()}
    return TrainResult(log=log, best_epoch=best_epoch, best_val_acc=best_acc,
                       best_params=best_params)


def restore_params(model: SrnnModel, snapshot: dict) -> None:
    """Copy a parameter snapshot back into a model, in place."""
    params = model_parameters(model)
    for name, arr in params.items():
        arr[...] = snapshot[name]
