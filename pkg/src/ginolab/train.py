"""AdamW training loop with global-norm clipping and held-out metric history."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._alloc import tune_allocator
from .errors import DivergenceDetected, ShapeMismatch
from .grid import MetricSpec, apply_symbol, energy_weights, metrics_triplet, resolution_of
from .sampler import ForcingSpec, SeededRng, sample_batch

EVAL_STREAM = 0x5EED_E7A1
TRAIN_STREAM = 0x7EA1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch: int = 16
    lr: float = 1e-2
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    eval_every: int = 100
    eval_batch: int = 64
    energy_weight: float = 0.0
    smooth_weight: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.eval_every < 1:
            raise ValueError("steps >= 0, batch >= 1 and eval_every >= 1 required")
        if self.steps and self.eval_every > self.steps:
            raise ValueError("eval_every must not exceed steps")
        if not (self.lr > 0 and self.clip_norm > 0):
            raise ValueError("lr and clip_norm must be positive")
        if min(self.weight_decay, self.energy_weight, self.smooth_weight) < 0:
            raise ValueError("weights must be non-negative")


@dataclass
class AdamWState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamWState":
        return cls({k: np.zeros_like(a, dtype=np.float64) for k, a in params.items()},
                   {k: np.zeros_like(a, dtype=np.float64) for k, a in params.items()})


@dataclass
class MetricHistory:
    records: list = field(default_factory=list)

    columns = ("step", "mse", "rel_l2", "rel_energy")

    def append(self, step: int, metrics: dict):
        if self.records and step <= self.records[-1][0]:
            raise ValueError("history steps must be strictly increasing")
        self.records.append((int(step), metrics["mse"], metrics["rel_l2"], metrics["rel_energy"]))

    def last(self) -> dict:
        return dict(zip(self.columns, self.records[-1]))

    def __len__(self):
        return len(self.records)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(np.square(g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, clip_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adamw_step(params: dict, grads: dict, state: AdamWState,
               config: TrainConfig) -> tuple[dict, AdamWState]:
    """One decoupled-weight-decay Adam update after global-norm clipping."""
    if params.keys() != grads.keys():
        raise ShapeMismatch("parameter and gradient keys differ")
    lr = config.lr
    b1, b2 = config.beta1, config.beta2
    grads, _ = clip_by_global_norm(grads, config.clip_norm)
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, expected {np.shape(p)}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        decayed = p * (1 - lr * config.weight_decay)
        new_p[k] = decayed - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamWState(new_m, new_v, t)


def as_forms(x: np.ndarray) -> np.ndarray:
    """View a ``(..., n, n, 2h)`` output as ``(..., h, n, n, 2)`` stacked 1-forms."""
    if x.shape[-1] == 2:
        return x
    if x.shape[-1] % 2:
        raise ShapeMismatch(f"expected an even channel count, got {x.shape[-1]}")
    return np.moveaxis(x.reshape(x.shape[:-1] + (x.shape[-1] // 2, 2)), -2, -4)


def from_forms(x: np.ndarray, channels: int) -> np.ndarray:
    """Inverse of :func:`as_forms`."""
    if channels == 2:
        return x
    return np.moveaxis(x, -4, -2).reshape(x.shape[:-4] + x.shape[-3:-1] + (channels,))


def loss_and_grad(model, batch_f: np.ndarray, targets: np.ndarray, config: TrainConfig,
                  metric: MetricSpec | None = None) -> tuple[float, dict]:
    """Batch loss ``MSE + energy_weight * energy + smooth_weight * penalty`` and its gradient.

    MSE is the mean over grid points and channels of one sample, averaged over
    the batch. Outputs may stack several 1-forms along the channel axis. The
    energy term is ``<e, (Delta_g + alpha) e>`` under the same normalization,
    so with ``lambda = 0`` and ``alpha = 1`` it equals the MSE.
    """
    if batch_f.shape[:-1] != targets.shape[:-1]:
        raise ShapeMismatch(f"inputs {batch_f.shape} and targets {targets.shape} differ")
    n = resolution_of(batch_f)
    batch = batch_f.shape[0]
    out, cache = model.forward(batch_f)
    if out.shape != targets.shape:
        raise ShapeMismatch(f"model output {out.shape} and targets {targets.shape} differ")
    err = out - targets
    scale = 1.0 / (err.shape[-1] * n * n * batch)
    loss = scale * float(np.sum(err * err))
    g_out = 2 * scale * err
    if config.energy_weight:
        metric = metric or model.metric
        weighted = from_forms(apply_symbol(as_forms(err), energy_weights(n, metric)), err.shape[-1])
        loss += config.energy_weight * scale * float(np.sum(err * weighted))
        g_out = g_out + config.energy_weight * 2 * scale * weighted
    grads, _ = model.backward(cache, g_out)
    if config.smooth_weight and hasattr(model, "penalty"):
        value, pgrads = model.penalty()
        loss += config.smooth_weight * value
        for k, g in pgrads.items():
            grads[k] = grads[k] + config.smooth_weight * g
    return loss, grads


def evaluate(model, inputs: np.ndarray, targets: np.ndarray, metric: MetricSpec,
             chunk: int = 16) -> dict:
    """Held-out metrics, evaluating ``chunk`` samples at a time.

    Outputs with several 1-forms stacked along the channel axis are scored
    form by form and averaged.
    """
    preds = np.concatenate([model.forward(inputs[i:i + chunk])[0] for i in range(0, len(inputs), chunk)])
    return metrics_triplet(as_forms(preds), as_forms(targets), metric)


def heldout_batch(spec: ForcingSpec, seed: int, count: int) -> np.ndarray:
    return sample_batch(spec, SeededRng(seed, EVAL_STREAM), count)


def train_operator(model, task, spec: ForcingSpec, config: TrainConfig, log=None):
    """Fit ``model`` to ``task`` (a map from forcing batches to targets).

    Fresh training batches come from ``(seed, TRAIN_STREAM)``; metrics are
    recorded every ``eval_every`` steps (and at step 0) on a fixed held-out
    batch from ``(seed, EVAL_STREAM)``.

    Raises
    ------
    DivergenceDetected
        If the loss becomes non-finite; the partial history is attached.
    """
    tune_allocator()
    history = MetricHistory()
    eval_f = heldout_batch(spec, config.seed, config.eval_batch)
    eval_u = task(eval_f)
    history.append(0, evaluate(model, eval_f, eval_u, spec.metric))
    if config.steps == 0:
        return model, history
    rng = SeededRng(config.seed, TRAIN_STREAM)
    state = AdamWState.zeros_like(model.params)
    params = model.params
    for step in range(1, config.steps + 1):
        f = sample_batch(spec, rng, config.batch)
        loss, grads = loss_and_grad(model, f, task(f), config, spec.metric)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceDetected(f"non-finite loss at step {step}", history=history, step=step)
        params, state = adamw_step(params, grads, state, config)
        model = model.with_params(params)
        params = model.params
        if step % config.eval_every == 0 or step == config.steps:
            metrics = evaluate(model, eval_f, eval_u, spec.metric)
            history.append(step, metrics)
            if log:
                log(f"step {step:5d} loss {loss:.3e} rel_l2 {metrics['rel_l2']:.3e} "
                    f"rel_energy {metrics['rel_energy']:.3e}")
    return model, history


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
