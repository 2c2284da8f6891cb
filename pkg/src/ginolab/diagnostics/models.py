"""Model construction and training shared by the experiments.

Trained models are memoized per process on everything that determines them,
so E2, E3 and E4 reuse the GINO from E1 and the CNN from E2 instead of
retraining.
"""

from __future__ import annotations

import numpy as np

from ..cnn import init_cnn
from ..gino import LinearGinoModel, init_gino
from ..grid import MetricSpec
from ..oracle import resolvent_apply
from ..sampler import ForcingSpec
from ..train import TrainConfig, train_operator

CNN_INIT = 0xC0DE
HODGE_INIT = 0x40D6

_CACHE: dict = {}


def clear_cache():
    _CACHE.clear()


def base_metric(config: dict) -> MetricSpec:
    return MetricSpec.euclidean(config["data.alpha"])


def forcing_spec(config: dict, n: int | None = None, metric: MetricSpec | None = None) -> ForcingSpec:
    return ForcingSpec(beta=config["data.beta"], lambda_cut=config["data.lambda_cut"],
                       n=n or config["data.n"], metric=metric or base_metric(config))


def train_config(config: dict, **changes) -> TrainConfig:
    kwargs = dict(
        steps=config["train.steps"],
        batch=config["train.batch"],
        lr=config["train.lr"],
        weight_decay=config["train.weight_decay"],
        clip_norm=config["train.clip_norm"],
        eval_every=config["train.eval_every"],
        eval_batch=config["train.eval_batch"],
        energy_weight=config["train.energy_weight"],
        smooth_weight=config["train.smooth_weight"],
        seed=config["seed"],
    )
    kwargs.update(changes)
    # short runs still need eval_every <= steps
    kwargs["eval_every"] = min(kwargs["eval_every"], max(kwargs["steps"], 1))
    return TrainConfig(**kwargs)


def resolvent_task(metric: MetricSpec):
    return lambda f: resolvent_apply(f, metric)


def _memo(key, build):
    if key not in _CACHE:
        _CACHE[key] = build()
    return _CACHE[key]


def trained_gino(config: dict, *, n: int | None = None, steps: int | None = None,
                 lambda_max: float | None = None, smooth_weight: float | None = None,
                 seed: int | None = None, linear: bool = False, log=None):
    """GINO fitted to the base resolvent; returns ``(model, history)``.

    ``linear`` holds the radial gain at zero throughout training.
    """
    n = n or config["data.n"]
    steps = config["train.steps"] if steps is None else steps
    lambda_max = config["model.lambda_max"] if lambda_max is None else lambda_max
    smooth_weight = config["train.smooth_weight"] if smooth_weight is None else smooth_weight
    seed = config["seed"] if seed is None else seed
    tc = train_config(config, steps=steps, smooth_weight=smooth_weight, seed=seed)
    metric = base_metric(config)
    spec = forcing_spec(config, n=n)
    key = ("gino", tc, spec.beta, spec.lambda_cut, n, metric.key, lambda_max,
           config["model.degree"], config["model.hidden"], config["model.gain"], linear)

    def build():
        model = init_gino(np.random.default_rng(seed), degree=config["model.degree"],
                          hidden=config["model.hidden"], lambda_max=lambda_max,
                          metric=metric, gain=0.0 if linear else config["model.gain"])
        if linear:
            model = LinearGinoModel(model.params, model.lambda_max, model.metric)
        return train_operator(model, resolvent_task(metric), spec, tc, log=log)

    return _memo(key, build)


def trained_cnn(config: dict, log=None):
    """CoordCNN fitted to the base resolvent at the default resolution."""
    tc = train_config(config, steps=config["cnn.steps"], batch=config["cnn.batch"],
                      lr=config["cnn.lr"], eval_every=config["cnn.eval_every"],
                      energy_weight=0.0, smooth_weight=0.0)
    metric = base_metric(config)
    spec = forcing_spec(config)
    key = ("cnn", tc, spec.beta, spec.lambda_cut, spec.n, metric.key)

    def build():
        model = init_cnn(np.random.default_rng([tc.seed, CNN_INIT]))
        return train_operator(model, resolvent_task(metric), spec, tc, log=log)

    return _memo(key, build)
