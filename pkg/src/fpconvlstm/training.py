"""Loss, optimizer, epoch loop and the finite-difference gradient check."""
import csv
import io
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import metrics as M
from .model import ModelConfig, build_model, model_backward, model_forward
from .seeding import rng_for

log = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "split", "loss", "accuracy", "precision", "recall", "auc")
PROB_FLOOR = 1e-12


class TrainingError(ValueError):
    pass


class GradCheckError(RuntimeError):
    pass


# -- loss -----------------------------------------------------------------------

def cross_entropy_loss(probs, target):
    """Categorical cross-entropy and its gradient w.r.t. the pre-softmax logits.

    For a batch (rank-2 input) the loss is the batch mean and the gradient
    is scaled by ``1 / n`` accordingly.
    """
    p = np.asarray(probs)
    y = np.asarray(target, dtype=p.dtype)
    if p.shape != y.shape:
        raise ValueError(f"probs {p.shape} and target {y.shape} differ in shape")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValueError("target must be one-hot")
    losses = -np.sum(y * np.log(np.maximum(p, PROB_FLOOR)), axis=-1)
    grad = p - y
    if p.ndim == 2:
        return float(losses.mean()), grad / p.shape[0]
    return float(losses), grad


# -- Adam -----------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param, **hyper):
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_update(param, grad, state):
    """One bias-corrected Adam step, applied to ``param`` in place."""
    grad = np.asarray(grad)
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ValueError(f"Adam shape mismatch: param {param.shape}, grad {grad.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return param, state


class Adam:
    """Adam over every parameter of a :class:`~fpconvlstm.model.Model`."""

    def __init__(self, model, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.states = {
            name: AdamState.for_param(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for name, p in model.parameters().items()
        }

    def step(self, model, grads):
        for name, p in model.parameters().items():
            adam_update(p, grads[name], self.states[name])
        model.version += 1


# -- training log ---------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    precision: float
    recall: float
    auc: float
    confusion_accuracy: float = float("nan")


@dataclass
class TrainLog:
    """Per-epoch metrics. ``accuracy`` is the arg-max (categorical) accuracy;
    ``confusion_accuracy`` is the micro (TP+TN)/total figure, kept in memory
    only."""
    records: list = field(default_factory=list)

    def append(self, epoch, split, report):
        self.records.append(EpochRecord(epoch, split, report.loss, report.categorical_accuracy,
                                        report.precision, report.recall, report.auc,
                                        report.accuracy))

    def rows(self, split=None):
        return [r for r in self.records if split is None or r.split == split]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([r.epoch, r.split] + [f"{getattr(r, k):.6f}" for k in CSV_HEADER[2:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header!r}")
        log_ = cls()
        for row in reader:
            if not row:
                continue
            log_.records.append(EpochRecord(int(row[0]), row[1], *(float(v) for v in row[2:])))
        return log_

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path):
        with open(path) as fh:
            return cls.from_csv(fh.read())


# -- evaluation / training loop ------------------------------------------------

def predict_proba(model, frames, batch_size=64):
    out = [model_forward(model, frames[i:i + batch_size], mode="eval")[0]
           for i in range(0, len(frames), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def evaluate_dataset(model, dataset, batch_size=64):
    """:class:`~fpconvlstm.metrics.MetricReport` of ``model`` (eval mode) on ``dataset``."""
    probs = predict_proba(model, dataset.frames(), batch_size)
    targets = dataset.targets(probs.dtype)
    loss, _ = cross_entropy_loss(probs, targets)
    return M.evaluate(list(probs), list(targets), loss=loss)


class TrainResult(NamedTuple):
    model: object
    log: TrainLog
    best_epoch: int
    best_model: object


def _check_split(name, ds, num_classes):
    if len(ds) == 0:
        raise TrainingError(f"{name} split is empty")
    if ds.num_classes != num_classes or np.any(ds.labels >= num_classes):
        raise TrainingError(
            f"{name} split labels exceed the model's {num_classes} classes"
        )


def train_model(model, train_set, val_set, epochs, batch_size=32, seed=None, lr=1e-3,
                eval_batch_size=64):
    """Mini-batch Adam training with per-epoch evaluation of both splits.

    Epoch ``e`` shuffles the training set with ``rng_for(seed, SHUFFLE, e)``;
    each batch's gradient is the mean over its samples. The parameters with
    the highest validation (arg-max) accuracy are kept, earliest on ties.
    """
    if epochs < 0 or batch_size < 1:
        raise TrainingError("epochs must be >= 0 and batch_size >= 1")
    seed = model.config.seed if seed is None else seed
    log_ = TrainLog()
    if epochs == 0:
        return TrainResult(model, log_, None, model.copy())
    num_classes = model.config.num_classes
    _check_split("train", train_set, num_classes)
    _check_split("validation", val_set, num_classes)
    frames = train_set.frames().astype(model.dtype, copy=False)
    targets = train_set.targets(model.dtype)
    optimizer = Adam(model, lr=lr)
    best_acc, best_epoch, best_model = -1.0, None, None
    for epoch in range(1, epochs + 1):
        order = rng_for(seed, 0x5F1E, epoch).permutation(len(train_set))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            probs, cache = model_forward(model, frames[idx], mode="train")
            _, grad = cross_entropy_loss(probs, targets[idx])
            optimizer.step(model, model_backward(model, cache, grad))
        train_report = evaluate_dataset(model, train_set, eval_batch_size)
        val_report = evaluate_dataset(model, val_set, eval_batch_size)
        log_.append(epoch, "train", train_report)
        log_.append(epoch, "val", val_report)
        log.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f", epoch,
                 train_report.loss, train_report.categorical_accuracy, val_report.loss,
                 val_report.categorical_accuracy)
        if val_report.categorical_accuracy > best_acc:
            best_acc, best_epoch, best_model = val_report.categorical_accuracy, epoch, model.copy()
    return TrainResult(model, log_, best_epoch, best_model)


# -- gradient check -------------------------------------------------------------

def gradcheck_config(variant="convlstm", seed=0, num_classes=3):
    """The tiny configuration used for finite-difference checks."""
    return ModelConfig(num_classes=num_classes, variant=variant, timesteps=2, frame_height=4,
                       frame_width=4, hidden_channels=2, dropout_rate=0.0, dense_units=10,
                       seed=seed)


def gradcheck_sample(config, seed=0):
    """Random input in (0, 1) and a label, deterministic in ``seed``."""
    rng = rng_for(0x6C6, seed)
    x = rng.uniform(0.05, 1.0, size=config.input_shape)
    return x, int(rng.integers(config.num_classes))


def _sample_loss(model, x, target):
    probs, cache = model_forward(model, x, mode="eval")
    loss, grad = cross_entropy_loss(probs, target)
    if not np.isfinite(loss):
        raise GradCheckError("non-finite loss during gradient check")
    return loss, grad, cache


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def finite_diff_gradcheck(model, sample, step=1e-4, backward=model_backward):
    """Max relative error between analytic and central-difference gradients
    for every parameter block.

    ``sample`` is ``(frames, label)`` or a :class:`~fpconvlstm.data.Sample`.
    The model must be float64 with dropout disabled. ``backward`` can be
    swapped to check a deliberately broken implementation.
    """
    if model.config.dropout_rate > 0:
        raise GradCheckError(
            "gradient check needs dropout_rate == 0; random masks make the loss "
            "non-deterministic between perturbations"
        )
    if model.dtype != np.float64:
        raise GradCheckError("gradient check needs a float64 model")
    x, label = (sample.frames, sample.subject) if hasattr(sample, "frames") else sample
    x = np.asarray(x, dtype=np.float64)
    target = np.eye(model.config.num_classes)[label]
    _, grad, cache = _sample_loss(model, x, target)
    analytic = backward(model, cache, grad)
    report = {}
    for name, param in model.parameters().items():
        numeric = np.empty_like(param)
        flat = param.reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            lp = _sample_loss(model, x, target)[0]
            flat[k] = orig - step
            lm = _sample_loss(model, x, target)[0]
            flat[k] = orig
            num_flat[k] = (lp - lm) / (2 * step)
        report[name] = float(np.max(relative_error(np.asarray(analytic[name]), numeric)))
    return report


def run_gradcheck(variant="convlstm", seed=0, step=1e-4, backward=model_backward):
    """Build the tiny float64 model for ``seed`` and check it."""
    cfg = gradcheck_config(variant, seed)
    model = build_model(cfg, dtype=np.float64)
    return finite_diff_gradcheck(model, gradcheck_sample(cfg, seed), step, backward)

