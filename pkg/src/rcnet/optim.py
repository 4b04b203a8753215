"""Plain SGD training with median-frequency class weighting.

The loop is define-by-run: each batch records a fresh tape, pulls gradients
from one backward pass, and applies w <- w - lr * g to every learnable.
Parameter updates rebind new tensors (tensors stay immutable values), and
batch norm running statistics are refreshed by the forward pass itself, not
by the optimizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import model as M
from .autograd import Tape
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    class_weights: tuple[float, float] | str = "auto"
    deterministic: bool = True
    max_train_samples: int = 0  # 0 = use all; mainly for quick runs and tests

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if isinstance(self.class_weights, str):
            if self.class_weights != "auto":
                raise ValueError(
                    f"class_weights must be 'auto' or a pair, got "
                    f"{self.class_weights!r}")
        else:
            w = tuple(float(v) for v in self.class_weights)
            if len(w) != 2 or min(w) <= 0:
                raise ValueError(f"class weights must be two positive "
                                 f"values, got {self.class_weights}")
            object.__setattr__(self, "class_weights", w)
        if self.max_train_samples < 0:
            raise ValueError("max_train_samples must be >= 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    train_acc: float
    wall_seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochStats]
    class_weights: tuple[float, float]

    def to_csv(self) -> str:
        lines = ["epoch,mean_loss,train_acc,wall_seconds"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.mean_loss:.6f},{e.train_acc:.6f},"
                         f"{e.wall_seconds:.3f}")
        return "\n".join(lines) + "\n"


def median_frequency_weights(samples) -> tuple[float, float]:
    """Class weights from frequency over the images containing each class:
    f_c = (class-c FOV pixels over those images) / (their total FOV pixels);
    w_c = median(f) / f_c, the median of two values being their mean."""
    pixels = np.zeros(2)
    fov_totals = np.zeros(2)
    for s in samples:
        m = s.fov != 0
        n_fov = int(np.count_nonzero(m))
        n_vessel = int(np.count_nonzero(s.label[m]))
        counts = (n_fov - n_vessel, n_vessel)
        for c in (0, 1):
            if counts[c] > 0:
                pixels[c] += counts[c]
                fov_totals[c] += n_fov
    if (fov_totals == 0).any():
        missing = int(np.argmax(fov_totals == 0))
        raise ValueError(f"class {missing} absent from every training image")
    f = pixels / fov_totals
    med = (f[0] + f[1]) / 2.0
    return float(med / f[0]), float(med / f[1])


def sgd_step(params: M.ModelParams, grads: dict[str, Tensor],
             learning_rate: float) -> None:
    """w <- w - lr * g for every learnable with a gradient; running stats
    are not learnables and are never touched here."""
    for name, w in params.named_learnables().items():
        g = grads.get(name)
        if g is None:
            continue
        if tuple(g.shape) != tuple(w.shape):
            raise ValueError(f"{name}: gradient shape {g.shape} != "
                             f"parameter shape {w.shape}")
        if not np.all(np.isfinite(g.data)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        params.set_tensor(
            name, Tensor(w.data - w.data.dtype.type(learning_rate) * g.data))


def _stack_batch(samples):
    hw = {tuple(s.label.shape) for s in samples}
    if len(hw) != 1:
        raise ValueError(f"batch mixes image sizes {sorted(hw)}")
    x = np.stack([s.image.data for s in samples])
    target = np.stack([s.label for s in samples])
    fov = np.stack([s.fov for s in samples])
    return Tensor(np.ascontiguousarray(x)), target, fov


def train(params: M.ModelParams, samples, config: TrainConfig
          ) -> tuple[M.ModelParams, TrainLog]:
    """Updates params in place over epochs x batches; returns them with the
    per-epoch log.  samples is any sequence of Sample (lazily realized ones
    included)."""
    n = len(samples)
    if config.max_train_samples:
        n = min(n, config.max_train_samples)
    if n == 0:
        raise ValueError("training split is empty")
    if config.class_weights == "auto":
        weights = median_frequency_weights([samples[i] for i in range(n)])
    else:
        weights = config.class_weights
    rng = np.random.default_rng(
        config.seed if config.deterministic else None)
    log: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.time()
        order = rng.permutation(n)
        loss_sum = 0.0
        batches = 0
        correct = 0
        counted = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [samples[int(i)] for i in idx]
            x, target, fov = _stack_batch(batch)
            tape = Tape()
            probs_nid, param_nids = M.forward_on_tape(tape, params, x,
                                                      mode="train")
            loss_nid = tape.record("weighted_cross_entropy", (probs_nid,),
                                   target=target, weights=weights, fov=fov)
            loss = tape.value(loss_nid).item()
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss {loss} at epoch {epoch}, "
                    f"batch {batches + 1}")
            node_grads = tape.backward(loss_nid)
            grads = {name: node_grads[nid]
                     for name, nid in param_nids.items() if nid in node_grads}
            probs = tape.value(probs_nid).data
            pred = (probs[:, 1] >= probs[:, 0])
            m = fov != 0
            correct += int(np.count_nonzero((pred == (target != 0)) & m))
            counted += int(np.count_nonzero(m))
            sgd_step(params, grads, config.learning_rate)
            loss_sum += loss
            batches += 1
        log.append(EpochStats(epoch, loss_sum / batches, correct / counted,
                              time.time() - t0))
    return params, TrainLog(log, weights)
