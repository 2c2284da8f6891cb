"""
Numerical checks of the truncation, multiplier-error and combined Sobolev bounds.

With ``S`` the resolvent, ``P`` the projection onto ``lambda <= Lambda`` and
``T`` a GINO trained with its radial gain held at zero (so ``T = m(lambda)`` per mode, zero above
``Lambda``), every sample must satisfy

    (a) |S (f - P f)|_{s+1}  <=  C (1 + Lambda)^(-gamma/2) |f|_{s-1+gamma}
    (b) |(T - S) P f|_{s+1}  <=  (1 + Lambda) eps |P f|_{s-1}
    (c) |(T - S) f|_{s+1}    <=  rhs(a) + (1 + Lambda) eps |f|_{s-1}

with ``C = max(1, 1/alpha)`` and ``eps`` the sup of ``|m - 1/(lambda + alpha)|``
on ``[0, Lambda]``. The sup is taken on a uniform grid and padded by the
error's slope times the grid spacing, which covers the gaps between nodes.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import BoundViolation
from ..gino import fit_multiplier, linear_gino
from ..grid import apply_symbol, sobolev_norm, symbol_grid
from ..oracle import resolvent_apply
from ..sampler import ForcingSpec, SeededRng, sample_batch
from .experiments import new_report
from .models import base_metric, trained_gino

BOUNDS_STREAM = 0xB0
LEMMAS = ("truncation", "multiplier", "combined")
INJECT_DEGREE = 64


def multiplier_error(model, alpha: float, points: int) -> tuple[float, float]:
    """Grid sup of the composed multiplier's error and its Lipschitz margin.

    The error is ``e = m1 m2 - 1/(lambda + alpha)``; the margin is ``h`` times
    the grid max of ``|e'|``, with ``m'`` from exact coefficient
    differentiation and ``h`` the grid spacing.
    """
    lam = np.linspace(0.0, model.lambda_max, points)
    m1, m2 = model.mult1, model.mult2
    err = np.abs(m1(lam) * m2(lam) - 1.0 / (lam + alpha))
    slope = m1.derivative()(lam) * m2(lam) + m1(lam) * m2.derivative()(lam) + 1.0 / (lam + alpha) ** 2
    return float(err.max()), float(np.max(np.abs(slope))) * (lam[1] - lam[0])


def bound_checks(config: dict, log=None, raise_on_violation: bool = True):
    """Check all three inequalities on every sample.

    With ``bounds.inject`` set, the trained model is replaced by a close
    least-squares fit of the resolvent symbol (degree ``INJECT_DEGREE``) that
    is then applied with its multiplier stretched over ``4 Lambda``, while the
    bound is still computed for ``Lambda`` and the fit's own small error. That
    wrong bookkeeping must be caught.

    Raises
    ------
    BoundViolation
        For the first violated inequality; the full report is attached as
        ``.report``.
    """
    metric = base_metric(config)
    alpha = metric.alpha
    s, gamma = config["bounds.s"], config["bounds.gamma"]
    if config["bounds.inject"]:
        fit = fit_multiplier(lambda lam: 1.0 / (lam + alpha), config["model.lambda_max"], INJECT_DEGREE)
        model = linear_gino(fit, metric)
        applied = replace(model, lambda_max=4 * model.lambda_max)
    else:
        model, _ = trained_gino(config, steps=config["bounds.steps"], linear=True, log=log)
        applied = model
    lam_max = model.lambda_max
    eps_grid, margin = multiplier_error(model, alpha, config["bounds.grid"])
    eps = eps_grid + margin

    spec = ForcingSpec(beta=config["bounds.beta"], lambda_cut=config["bounds.lambda_cut"],
                       n=config["data.n"], metric=metric)
    f = sample_batch(spec, SeededRng(config["seed"], BOUNDS_STREAM), config["bounds.samples"])
    lam = symbol_grid(spec.n, metric)
    pf = apply_symbol(f, (lam <= lam_max).astype(np.float64))
    c_alpha = max(1.0, 1.0 / alpha)

    def norm(u, r):
        return sobolev_norm(u, r, metric)

    lhs = {
        "truncation": norm(resolvent_apply(f - pf, metric), s + 1),
        "multiplier": norm(applied.forward(pf)[0] - resolvent_apply(pf, metric), s + 1),
        "combined": norm(applied.forward(f)[0] - resolvent_apply(f, metric), s + 1),
    }
    bias = c_alpha * (1 + lam_max) ** (-gamma / 2) * norm(f, s - 1 + gamma)
    rhs = {
        "truncation": bias,
        "multiplier": (1 + lam_max) * eps * norm(pf, s - 1),
        "combined": bias + (1 + lam_max) * eps * norm(f, s - 1),
    }
    report = new_report("bounds", config, ("sample", "lemma", "lhs", "rhs", "ratio"))
    violations = []
    for i in range(len(f)):
        for lemma in LEMMAS:
            left, right = float(lhs[lemma][i]), float(rhs[lemma][i])
            ratio = left / right if right > 0 else (0.0 if left == 0 else float("inf"))
            report.add(i, lemma, left, right, ratio)
            if left > right:
                violations.append((lemma, i, left, right))
    report.summary.update(
        epsilon=eps,
        epsilon_grid=eps_grid,
        lipschitz_margin=margin,
        violations=len(violations),
        injected=int(config["bounds.inject"]),
    )
    for lemma in LEMMAS:
        report.summary[f"max_ratio_{lemma}"] = float(max(r[4] for r in report.where(lemma=lemma)))
    if violations and raise_on_violation:
        lemma, i, left, right = violations[0]
        err = BoundViolation(f"{lemma} bound violated on sample {i}: {left:.6g} > {right:.6g} "
                             f"({len(violations)} violations in total)", lemma=lemma, sample=i)
        err.report = report
        raise err
    return report

