"""Semi-supervised training loop, the logistic-regression probe, and
classification/clustering metrics.

Training is full-batch and deterministic given the seed: the loss is the
summed cross-entropy over the training nodes, optimized with Adam, with
early stopping on validation loss restoring the best parameters. The probe
never sees held-out labels (the interface only accepts training labels).
"""

from __future__ import annotations

import math
import resource
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import RngStream
from .errors import ConfigError, DataError, NumericError
from .hin import LabelSplit
from .layers import GraphInputs, LayerStack, model_forward


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    epochs: int = 100
    patience: int = 30
    seed: int = 0
    train_ratio: float = 0.8
    val_ratio: float = 0.1

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (1 <= self.patience <= self.epochs):
            raise ConfigError("patience must be in [1, epochs]")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        cfg = TrainConfig()
        d = dict(d)
        for key in (
            "learning_rate", "epochs", "patience", "seed",
            "train_ratio", "val_ratio",
        ):
            if key in d:
                setattr(cfg, key, d.pop(key))
        if d:
            raise ConfigError(f"unknown train config keys: {sorted(d)}")
        return cfg

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "patience": self.patience,
            "seed": self.seed,
            "train_ratio": self.train_ratio,
            "val_ratio": self.val_ratio,
        }


@dataclass
class TrainReport:
    epochs_run: int
    train_loss: list[float]
    val_loss: list[float | None]
    val_macro_f1: list[float | None]
    best_epoch: int
    omegas: dict[int, list[float]]
    structures: list[str]
    wall_clock_seconds: float = 0.0
    peak_rss_bytes: int = 0

    def to_json_dict(self) -> dict:
        """Deterministic report fields; timing stays out (it goes into the
        run manifest, which is excluded from byte-level comparisons)."""
        return {
            "epochs_run": self.epochs_run,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_macro_f1": self.val_macro_f1,
            "best_epoch": self.best_epoch,
            "omegas": {str(k): v for k, v in self.omegas.items()},
            "structures": self.structures,
        }


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes), dtype=np.float64)
    rows = np.flatnonzero(labels >= 0)
    out[rows, labels[rows]] = 1.0
    return out


def _peak_rss_bytes() -> int:
    # ru_maxrss is in KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def train(
    stack: LayerStack,
    inputs: GraphInputs,
    labels: np.ndarray,
    split: LabelSplit,
    cfg: TrainConfig,
) -> tuple[LayerStack, TrainReport]:
    """Full-batch training of the stack on the split's training nodes."""
    cfg.validate()
    if split.train_ids.size == 0:
        raise DataError("empty training split")
    if np.any(labels[split.train_ids] < 0):
        raise DataError("training split contains unlabeled nodes")
    started = time.perf_counter()
    n_classes = stack.classifier_w.shape[0]
    if int(labels.max()) >= n_classes:
        raise ConfigError(
            f"labels go up to {int(labels.max())} but the head has {n_classes} classes"
        )
    one_hot = _one_hot(labels, n_classes)
    params = stack.parameters()
    state = ad.AdamState.for_params(params, cfg.learning_rate)
    drop_rng = RngStream(cfg.seed).child(7)
    has_val = split.val_ids.size > 0

    train_losses: list[float] = []
    val_losses: list[float | None] = []
    val_f1s: list[float | None] = []
    best_val = math.inf
    best_epoch = 0
    best_snap = stack.snapshot()
    stall = 0
    epochs_run = 0
    for epoch in range(cfg.epochs):
        epochs_run = epoch + 1
        try:
            _, logits = model_forward(stack, inputs, training=True, rng=drop_rng)
            loss = ad.cross_entropy_loss(logits, one_hot, split.train_ids)
        except NumericError as e:
            raise NumericError(f"epoch {epoch}: {e}") from e
        ad.backward(loss)
        ad.adam_step(params, state)
        train_losses.append(loss.item())

        if has_val:
            _, logits_eval = model_forward(stack, inputs, training=False)
            vl = ad.cross_entropy_loss(logits_eval, one_hot, split.val_ids).item()
            preds = logits_eval.values[split.val_ids].argmax(axis=1)
            f1, _ = macro_micro_f1(labels[split.val_ids], preds)
            val_losses.append(vl)
            val_f1s.append(f1)
            if vl < best_val:
                best_val = vl
                best_epoch = epoch
                best_snap = stack.snapshot()
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break
        else:
            val_losses.append(None)
            val_f1s.append(None)
            best_epoch = epoch

    if has_val:
        stack.restore(best_snap)
    report = TrainReport(
        epochs_run=epochs_run,
        train_loss=train_losses,
        val_loss=val_losses,
        val_macro_f1=val_f1s,
        best_epoch=best_epoch,
        omegas=stack.omegas(),
        structures=list(inputs.structures),
        wall_clock_seconds=time.perf_counter() - started,
        peak_rss_bytes=_peak_rss_bytes(),
    )
    return stack, report


def extract_embeddings(stack: LayerStack, inputs: GraphInputs) -> np.ndarray:
    """Eval-mode forward; returns the pre-head representations."""
    emb, _ = model_forward(stack, inputs, training=False)
    return emb.values.copy()


def logistic_probe(
    emb: np.ndarray,
    train_ids: np.ndarray,
    train_labels: np.ndarray,
    eval_ids: np.ndarray,
    seed: int = 0,
    l2: float = 1e-4,
    lr: float = 0.05,
    steps: int = 400,
) -> np.ndarray:
    """Multinomial logistic regression fit on the training embeddings with
    Adam; returns predicted classes for ``eval_ids``. Held-out labels are
    never part of the interface."""
    train_ids = np.asarray(train_ids, dtype=np.int64)
    eval_ids = np.asarray(eval_ids, dtype=np.int64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if train_ids.size == 0:
        raise DataError("empty probe training split")
    if train_ids.size != train_labels.size:
        raise ConfigError("train_ids and train_labels length mismatch")
    classes = np.unique(train_labels)
    if classes.size < 2:
        raise DataError("probe training split has a single class")
    remap = {int(c): k for k, c in enumerate(classes)}
    y = np.array([remap[int(c)] for c in train_labels])
    one_hot = _one_hot(y, classes.size)
    rng = RngStream(seed).child(3)
    w = ad.xavier_init(classes.size, emb.shape[1], rng, name="probe.w")
    b = ad.parameter(np.zeros((1, classes.size)), name="probe.b")
    params = [w, b]
    state = ad.AdamState.for_params(params, lr)
    x = ad.constant(emb[train_ids])
    ones = ad.constant(np.ones((train_ids.size, 1)))
    rows = np.arange(train_ids.size)
    for _ in range(steps):
        logits = ad.add(ad.matmul(x, ad.transpose(w)), ad.matmul(ones, b))
        ce = ad.cross_entropy_loss(logits, one_hot, rows)
        penalty = ad.scale(ad.sum_all(ad.hadamard(w, w)), l2)
        ad.backward(ad.add(ce, penalty))
        ad.adam_step(params, state)
    scores = emb[eval_ids] @ w.values.T + b.values
    return classes[scores.argmax(axis=1)]


def macro_micro_f1(y_true, y_pred) -> tuple[float, float]:
    """Unweighted per-class F1 average (macro) and global-count F1 (micro).

    Classes absent from both arguments are excluded from the macro average;
    classes with zero precision+recall contribute F1 = 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ConfigError(f"length mismatch {y_true.shape} vs {y_pred.shape}")
    classes = np.union1d(np.unique(y_true), np.unique(y_pred))
    f1s = []
    tp_total = fp_total = fn_total = 0
    for c in classes:
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = int(np.sum((y_true == c) & (y_pred != c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
        tp_total += tp
        fp_total += fp
        fn_total += fn
    micro_denom = 2 * tp_total + fp_total + fn_total
    micro = 2 * tp_total / micro_denom if micro_denom else 0.0
    return float(np.mean(f1s)), float(micro)


def kmeans(
    emb: np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> np.ndarray:
    """Lloyd iterations with k-means++ seeding; 10 restarts, best inertia
    kept; deterministic given the seed."""
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    if k <= 0 or k > n:
        raise ConfigError(f"k={k} outside [1, {n}]")
    best_assign: np.ndarray | None = None
    best_inertia = math.inf
    for r in range(restarts):
        rng = RngStream(seed).child(11, r)
        centers = _kmeanspp(emb, k, rng)
        for _ in range(max_iter):
            d2 = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            assign = d2.argmin(axis=1)
            new_centers = centers.copy()
            for c in range(k):
                members = emb[assign == c]
                if members.size:
                    new_centers[c] = members.mean(axis=0)
                else:
                    # re-seed an empty cluster at the worst-fit point
                    new_centers[c] = emb[d2.min(axis=1).argmax()]
            movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
            centers = new_centers
            if movement < tol:
                break
        d2 = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        inertia = d2.min(axis=1).sum()
        if inertia < best_inertia:
            best_inertia = inertia
            best_assign = assign
    return best_assign


def _kmeanspp(emb: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    n = emb.shape[0]
    centers = [emb[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            [((emb - c) ** 2).sum(axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(emb[int(rng.integers(n))])
            continue
        target = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), target))
        centers.append(emb[min(idx, n - 1)])
    return np.array(centers)


def _contingency(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    _, ui = np.unique(y_true, return_inverse=True)
    _, vi = np.unique(y_pred, return_inverse=True)
    table = np.zeros((ui.max() + 1, vi.max() + 1), dtype=np.int64)
    np.add.at(table, (ui, vi), 1)
    return table


def _entropy_terms(sizes: np.ndarray, n: int) -> np.ndarray:
    sizes = sizes[sizes > 0].astype(np.float64)
    return (sizes / n) * np.log(n / sizes)


def clustering_scores(y_true, y_pred) -> tuple[float, float, float]:
    """NMI (arithmetic-mean normalization), ARI (permutation-model adjusted
    index), and FMI (pairwise TP / sqrt((TP+FP)(TP+FN))), all from the
    contingency table.

    Sums of entropy/information terms are sorted before adding so a labeling
    scored against any relabeling of itself gives exactly 1.0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ConfigError(f"length mismatch {y_true.shape} vs {y_pred.shape}")
    table = _contingency(y_true, y_pred)
    n = int(table.sum())
    a = table.sum(axis=1)
    b = table.sum(axis=0)

    # NMI
    rows, cols = np.nonzero(table)
    nij = table[rows, cols].astype(np.float64)
    ai = a[rows].astype(np.float64)
    bj = b[cols].astype(np.float64)
    info_terms = (nij / n) * np.log((n * nij) / (ai * bj))
    info = float(np.sort(info_terms).sum())
    hu = float(np.sort(_entropy_terms(a, n)).sum())
    hv = float(np.sort(_entropy_terms(b, n)).sum())
    if hu + hv == 0.0:
        nmi = 1.0
    else:
        nmi = min(1.0, max(0.0, info / ((hu + hv) / 2.0)))

    # ARI and FMI in exact integer arithmetic
    comb2 = lambda x: x * (x - 1) // 2
    s_ij = int(sum(comb2(int(v)) for v in table.flat))
    s_a = int(sum(comb2(int(v)) for v in a))
    s_b = int(sum(comb2(int(v)) for v in b))
    t = comb2(n)
    denom = t * (s_a + s_b) - 2 * s_a * s_b
    if denom == 0:
        ari = 1.0
    else:
        ari = 2 * (t * s_ij - s_a * s_b) / denom
    if s_a == 0 or s_b == 0:
        fmi = 0.0
    else:
        fmi = float(s_ij) / math.sqrt(float(s_a) * float(s_b))
    return nmi, float(ari), fmi


def evaluate_embeddings(
    emb: np.ndarray,
    labels: np.ndarray,
    split: LabelSplit,
    seed: int = 0,
) -> dict[str, float]:
    """Probe classification on the held-out nodes plus k-means clustering of
    all labeled nodes; returns the five protocol metrics."""
    heldout = np.concatenate([split.val_ids, split.test_ids])
    heldout.sort()
    preds = logistic_probe(
        emb, split.train_ids, labels[split.train_ids], heldout, seed=seed
    )
    macro, micro = macro_micro_f1(labels[heldout], preds)
    labeled = np.flatnonzero(labels >= 0)
    k = int(labels[labeled].max()) + 1
    assign = kmeans(emb[labeled], k, seed=seed)
    nmi, ari, fmi = clustering_scores(labels[labeled], assign)
    return {
        "macro_f1": macro,
        "micro_f1": micro,
        "nmi": nmi,
        "ari": ari,
        "fmi": fmi,
    }
