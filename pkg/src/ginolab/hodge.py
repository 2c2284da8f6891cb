"""
Two-headed GINO for the exact / coexact split of a 1-form.

Each head is ``multiplier -> radial -> split multiplier``. The last stage acts on
the packed spectrum ``W(k)`` as

    U(k) = a(lambda) W(k) + b(lambda) q(k) conj(W(-k)),    q = exp(-2i phi) kappa^2,

with ``kappa = (k1 + i k2)/|k|`` and ``phi`` the angle of the frame the
coefficients are expressed in. ``a`` and ``b`` are Chebyshev multipliers. With
``a = b = c/2`` this is ``c`` times the projector onto ``k``, and with
``a = -b = c/2`` the projector onto ``k``-perpendicular, so both targets are
representable exactly. ``q conj(W(-k))`` is the 1-form direction ``dk``
written in the frame, so rotating the frame by ``theta`` while rotating the
coefficients by ``theta`` rotates the output by ``theta`` (see
:func:`gauge_error`). A head without ``b`` (``split=False``) is the plain
scalar-multiplier stack. Its output cannot depend on the direction of ``k``.

Both heads vanish at ``k = 0``; the mean is the harmonic part and is not
predicted.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CacheMismatch
from .gino import (
    MAX_GAIN,
    _correlation,
    _radial_backward,
    _radial_forward,
    smoothness_penalty,
    spectral_plan,
    ChebMultiplier,
)
from .grid import MetricSpec, from_complex, nyquist_lines, resolution_of, rotate_frame, to_complex

HEADS = ("ex", "co")


def frame_symbol(plan, frame: float) -> np.ndarray:
    """``exp(-2i phi) kappa^2`` on the plan's box; zero at ``k = 0`` and on Nyquist lines."""
    k1, k2 = plan.wavenumbers()
    ksq = k1 * k1 + k2 * k2
    nyq = nyquist_lines(plan.n)[np.ix_(plan.rows, plan.cols)]
    keep = (ksq > 0) & ~nyq
    kappa_sq = np.where(keep, (k1 + 1j * k2) ** 2 / np.where(keep, ksq, 1.0), 0.0)
    return np.exp(-2j * frame) * kappa_sq


@dataclass(frozen=True)
class HodgeModel:
    """Parameters ``{head}.mult1``, ``{head}.rho.*``, ``{head}.even`` and, for split heads, ``{head}.odd``."""

    params: dict
    lambda_max: float
    frame: float = 0.0
    metric: MetricSpec = MetricSpec.euclidean()

    @property
    def split(self) -> bool:
        return "ex.odd" in self.params

    @property
    def degree(self) -> int:
        return self.params["ex.mult1"].size - 1

    def with_params(self, params: dict) -> "HodgeModel":
        p = dict(params)
        for h in HEADS:
            p[f"{h}.rho.gain"] = np.clip(p[f"{h}.rho.gain"], -MAX_GAIN, MAX_GAIN)
        return replace(self, params=p)

    def with_frame(self, frame: float) -> "HodgeModel":
        return replace(self, frame=float(frame))

    def forward(self, f):
        return hodge_forward(self, f)

    def backward(self, cache, grad_out, need_input_grad=False):
        return hodge_backward(self, cache, grad_out, need_input_grad)

    def multipliers(self) -> dict:
        names = ("mult1", "even", "odd") if self.split else ("mult1", "even")
        return {f"{h}.{m}": ChebMultiplier(self.params[f"{h}.{m}"], self.lambda_max)
                for h in HEADS for m in names}

    def penalty(self):
        value, grads = 0.0, {}
        for key, mult in self.multipliers().items():
            v, g = smoothness_penalty(mult)
            value += v
            grads[key] = g
        return value, grads


def init_hodge(rng: np.random.Generator, degree: int = 16, hidden: int = 16,
               lambda_max: float = 100.0, split: bool = True, gain: float = 0.1) -> HodgeModel:
    """Both heads start as half the identity on the band, plus small noise."""
    params = {}
    names = ("mult1", "even", "odd") if split else ("mult1", "even")
    for h in HEADS:
        for m in names:
            params[f"{h}.{m}"] = rng.normal(0.0, 0.01, degree + 1)
        params[f"{h}.mult1"][0] = 1.0
        params[f"{h}.even"][0] = 0.5 / (1.0 + gain)
        params[f"{h}.rho.w1"] = rng.normal(0.0, 0.5, hidden)
        params[f"{h}.rho.b1"] = np.zeros(hidden)
        params[f"{h}.rho.w2"] = rng.normal(0.0, 0.5, hidden)
        params[f"{h}.rho.b2"] = np.array(0.0)
        params[f"{h}.rho.gain"] = np.array(float(gain))
    return HodgeModel(params, float(lambda_max))


def _symbols(model: HodgeModel, plan, head: str):
    p = model.params
    m1 = plan.symbol(p[f"{head}.mult1"])
    a = plan.symbol(p[f"{head}.even"])
    b = plan.symbol(p[f"{head}.odd"]) if model.split else None
    return m1, a, b


def _zero_mode(plan):
    """Box mask that is False only at ``k = 0``."""
    k1, k2 = plan.wavenumbers()
    return (k1 != 0) | (k2 != 0)


def hodge_forward(model: HodgeModel, f: np.ndarray):
    """Outputs stacked as ``(..., n, n, 4)``: exact channels then coexact channels."""
    n = resolution_of(f)
    plan = spectral_plan(n, model.metric, model.lambda_max, model.degree)
    keep = _zero_mode(plan)
    q = frame_symbol(plan, model.frame) if model.split else None
    z_spec = plan.analyze(to_complex(f))
    outs, heads = [], {}
    for h in HEADS:
        m1, a, b = _symbols(model, plan, h)
        a = a * keep
        v = plan.synthesize(m1 * z_spec)
        w, rcache = _radial_forward(model.params, v, f"{h}.rho.")
        w_spec = plan.analyze(w)
        u_spec = a * w_spec
        w_neg = None
        if b is not None:
            w_neg = np.conj(plan.negate(w_spec))
            u_spec = u_spec + b * q * w_neg
        outs.append(from_complex(plan.synthesize(u_spec)))
        heads[h] = {"m1": m1, "a": a, "b": b, "w_spec": w_spec, "w_neg": w_neg, "radial": rcache}
    cache = {
        "layout": {k: np.shape(v) for k, v in model.params.items()},
        "n": n,
        "plan": plan,
        "q": q,
        "keep": keep,
        "z_spec": z_spec,
        "heads": heads,
    }
    return np.concatenate(outs, axis=-1), cache


def hodge_backward(model: HodgeModel, cache: dict, grad_out: np.ndarray, need_input_grad: bool = False):
    layout = {k: np.shape(v) for k, v in model.params.items()}
    if cache.get("layout") != layout or grad_out.shape[-2] != cache["n"] or grad_out.shape[-1] != 4:
        raise CacheMismatch("cache was produced by a model with different parameter shapes or grid")
    plan, q, keep = cache["plan"], cache["q"], cache["keep"]
    n2 = cache["n"] ** 2
    grads = {}
    gz_spec = 0.0
    for idx, h in enumerate(HEADS):
        hc = cache["heads"][h]
        g_spec = plan.analyze(to_complex(grad_out[..., 2 * idx:2 * idx + 2]))
        grads[f"{h}.even"] = plan.coeff_grad(_correlation(g_spec, hc["w_spec"]) * keep) / n2
        h_spec = hc["a"] * g_spec
        if hc["b"] is not None:
            grads[f"{h}.odd"] = plan.coeff_grad(_correlation(g_spec, q * hc["w_neg"])) / n2
            h_spec = h_spec + hc["b"] * q * np.conj(plan.negate(g_spec))
        gw = plan.synthesize(h_spec)
        gv = _radial_backward(model.params, hc["radial"], gw, grads, f"{h}.rho.")
        gv_spec = plan.analyze(gv)
        grads[f"{h}.mult1"] = plan.coeff_grad(_correlation(gv_spec, cache["z_spec"])) / n2
        if need_input_grad:
            gz_spec = gz_spec + hc["m1"] * gv_spec
    grad_in = from_complex(plan.synthesize(gz_spec)) if need_input_grad else None
    grads = {k: np.asarray(grads[k], dtype=np.float64).reshape(layout[k]) for k in model.params}
    return grads, grad_in


def rotate_heads(u: np.ndarray, theta: float) -> np.ndarray:
    """Rotate the frame of both 2-channel heads of a ``(..., 4)`` output."""
    return np.concatenate([rotate_frame(u[..., :2], theta), rotate_frame(u[..., 2:], theta)], axis=-1)


def gauge_error(model: HodgeModel, f: np.ndarray, theta: float) -> float:
    """``|F_{phi+theta}(R f) - R F_phi(f)| / |F_phi(f)|`` with ``R`` the frame rotation by ``theta``."""
    base = model.forward(f)[0]
    turned = model.with_frame(model.frame + theta).forward(rotate_frame(f, theta))[0]
    return float(np.linalg.norm(turned - rotate_heads(base, theta)) / np.linalg.norm(base))
