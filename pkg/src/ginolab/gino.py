"""
Gauge-equivariant intrinsic neural operator (GINO) on the flat torus.

The model is ``u = T2 sigma(T1 f)`` where ``T1``, ``T2`` are truncated spectral
multipliers ``m(lambda_g(k))`` parameterized by Chebyshev series on
``[0, lambda_max]`` and ``sigma(v)(x) = rho(|v(x)|) v(x)`` is a radial
nonlinearity. Internally the two channels are packed as ``z = f0 + i f1``; a
frame rotation is then multiplication by ``exp(-i theta)``, which commutes
with every stage.

Parameters live in a flat ``dict`` so the optimizer can treat all models alike:

    mult1, mult2            Chebyshev coefficients, shape (J+1,)
    rho.w1, rho.b1, rho.w2  hidden layer of rho, shape (H,)
    rho.b2, rho.gain        scalars stored as 0-d arrays
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .errors import CacheMismatch
from .grid import MetricSpec, from_complex, resolution_of, symbol_grid, to_complex

MAX_GAIN = 0.9
RADIUS_EPS = 1e-12


# ---------------------------------------------------------------------------
# Chebyshev multipliers


@dataclass(frozen=True)
class ChebMultiplier:
    coeffs: np.ndarray
    lambda_max: float

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("need at least one Chebyshev coefficient")
        if not np.all(np.isfinite(c)):
            raise ValueError("Chebyshev coefficients must be finite")
        if not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, lam):
        return cheb_eval(self, lam)

    def derivative(self) -> "ChebMultiplier":
        """Multiplier whose values are ``dm/dlambda`` (exact coefficient differentiation)."""
        d = cheb_derivative_coeffs(self.coeffs) * (2.0 / self.lambda_max)
        return ChebMultiplier(d, self.lambda_max)


def clenshaw(coeffs: np.ndarray, t) -> np.ndarray:
    """Evaluate ``sum_j c_j T_j(t)`` by the Clenshaw recurrence."""
    t = np.asarray(t, dtype=np.float64)
    b1 = np.zeros_like(t)
    b2 = np.zeros_like(t)
    for c in coeffs[:0:-1]:
        b1, b2 = c + 2.0 * t * b1 - b2, b1
    return coeffs[0] + t * b1 - b2


def to_unit_interval(lam, lambda_max: float) -> np.ndarray:
    return 2.0 * np.asarray(lam, dtype=np.float64) / lambda_max - 1.0


def cheb_eval(mult: ChebMultiplier, lam):
    """Truncated multiplier value: Chebyshev series on ``[0, lambda_max]``, zero beyond."""
    lam = np.asarray(lam, dtype=np.float64)
    val = clenshaw(mult.coeffs, to_unit_interval(lam, mult.lambda_max))
    out = np.where(lam <= mult.lambda_max, val, 0.0)
    return out if out.ndim else float(out)


def cheb_basis(degree: int, t) -> np.ndarray:
    """Rows ``T_0(t) .. T_degree(t)`` stacked along a new leading axis."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty((degree + 1,) + t.shape)
    out[0] = 1.0
    if degree >= 1:
        out[1] = t
    for j in range(2, degree + 1):
        out[j] = 2.0 * t * out[j - 1] - out[j - 2]
    return out


def cheb_derivative_coeffs(c: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of ``d/dt sum_j c_j T_j(t)``."""
    c = np.asarray(c, dtype=np.float64)
    J = c.size - 1
    if J == 0:
        return np.zeros(1)
    d = np.zeros(J + 2)
    for j in range(J, 0, -1):
        d[j - 1] = d[j + 1] + 2.0 * j * c[j]
    d[0] *= 0.5
    return d[:J]


def derivative_basis(degree: int, lam: np.ndarray, lambda_max: float) -> np.ndarray:
    """``d phi_j / d lambda`` at ``lam`` for each basis function (shape ``(J+1, len(lam))``)."""
    t = to_unit_interval(lam, lambda_max)
    rows = []
    for j in range(degree + 1):
        e = np.zeros(degree + 1)
        e[j] = 1.0
        rows.append(clenshaw(cheb_derivative_coeffs(e), t))
    return np.array(rows) * (2.0 / lambda_max)


def roughness(mult: ChebMultiplier, points: int = 1024) -> float:
    """``max |m'(lambda)|`` over a uniform grid on ``[0, lambda_max]``."""
    lam = np.linspace(0.0, mult.lambda_max, points)
    return float(np.max(np.abs(cheb_eval(mult.derivative(), lam))))


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    dx = np.diff(x)
    w[0], w[-1] = dx[0] / 2, dx[-1] / 2
    w[1:-1] = (dx[:-1] + dx[1:]) / 2
    return w


def smoothness_penalty(mult: ChebMultiplier, nodes: int = 256) -> tuple[float, np.ndarray]:
    """Trapezoid estimate of ``int_0^Lambda m'(lambda)^2 dlambda`` and its gradient.

    The quadrature is the quadratic form ``theta^T Q theta`` with
    ``Q = D^T diag(w) D``, so the gradient is ``2 Q theta``.
    """
    lam = np.linspace(0.0, mult.lambda_max, nodes)
    D = derivative_basis(mult.degree, lam, mult.lambda_max)
    w = _trapezoid_weights(lam)
    slope = mult.coeffs @ D
    value = float(np.sum(w * slope * slope))
    grad = 2.0 * D @ (w * slope)
    return value, grad


def fit_multiplier(fn, lambda_max: float, degree: int, points: int | None = None) -> ChebMultiplier:
    """Least-squares Chebyshev fit of ``fn`` at Chebyshev nodes of ``[0, lambda_max]``."""
    points = points or 4 * (degree + 1)
    t = np.cos(np.pi * (np.arange(points) + 0.5) / points)
    lam = 0.5 * (t + 1.0) * lambda_max
    coeffs = np.polynomial.chebyshev.chebfit(t, fn(lam), degree)
    return ChebMultiplier(coeffs, lambda_max)


# ---------------------------------------------------------------------------
# radial nonlinearity


@dataclass(frozen=True)
class RadialParams:
    """``rho(r) = 1 + gain * tanh(w2 . tanh(w1 r + b1) + b2)``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    gain: float

    def __post_init__(self):
        if abs(self.gain) > MAX_GAIN:
            raise ValueError(f"|gain| must be <= {MAX_GAIN}, got {self.gain}")
        for name in ("w1", "b1", "w2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.w1.shape == self.b1.shape == self.w2.shape) or self.w1.ndim != 1:
            raise ValueError("w1, b1, w2 must be vectors of equal length")

    @classmethod
    def from_params(cls, p: dict, prefix: str = "rho.") -> "RadialParams":
        return cls(p[prefix + "w1"], p[prefix + "b1"], p[prefix + "w2"],
                   float(p[prefix + "b2"]), float(p[prefix + "gain"]))


RADIAL_CHUNK = 8192


def _hidden(p: dict, r: np.ndarray, prefix: str = "rho.") -> np.ndarray:
    """Hidden activations for a flat radius vector, laid out as ``(H, r.size)``."""
    hidden = p[prefix + "w1"][:, None] * r
    hidden += p[prefix + "b1"][:, None]
    return np.tanh(hidden, out=hidden)


def _rho_parts(p: dict, r: np.ndarray, prefix: str = "rho.", keep: list | None = None):
    """``tanh`` of the output pre-activation, evaluated in cache-sized chunks.

    When ``keep`` is a list the hidden chunks are appended to it for reuse.
    """
    flat = np.ravel(r)
    tz = np.empty_like(flat)
    for i in range(0, flat.size, RADIAL_CHUNK):
        hidden = _hidden(p, flat[i:i + RADIAL_CHUNK], prefix)
        tz[i:i + RADIAL_CHUNK] = p[prefix + "w2"] @ hidden
        if keep is not None:
            keep.append(hidden)
    tz += p[prefix + "b2"]
    return np.tanh(tz, out=tz).reshape(np.shape(r))


def rho_value(rho: RadialParams, r):
    """``rho(r)`` for scalar or array ``r``."""
    p = {"rho.w1": rho.w1, "rho.b1": rho.b1, "rho.w2": rho.w2, "rho.b2": rho.b2, "rho.gain": rho.gain}
    tz = _rho_parts(p, np.asarray(r, dtype=np.float64))
    return 1.0 + rho.gain * tz


def radial_apply(rho: RadialParams, u: np.ndarray) -> np.ndarray:
    """Pointwise ``rho(|u(x)|) u(x)`` with the Euclidean channel norm."""
    r = np.sqrt(np.sum(u * u, axis=-1))
    return rho_value(rho, r)[..., None] * u


def _radial_forward(p: dict, v: np.ndarray, prefix: str = "rho."):
    r = np.abs(v)
    hidden = []
    tz = _rho_parts(p, r, prefix, hidden)
    rho = 1.0 + p[prefix + "gain"] * tz
    return rho * v, (v, r, tz, rho, hidden)


def _radial_backward(p: dict, cache, gw: np.ndarray, grads: dict, prefix: str = "rho."):
    """Accumulate parameter gradients into ``grads``; return the input gradient.

    Reuses the hidden activations kept by the forward pass.
    """
    v, r, tz, rho, kept = cache
    s = p[prefix + "gain"]
    w1, w2 = p[prefix + "w1"], p[prefix + "w2"]
    q = np.real(np.conj(gw) * v)  # dL/drho at each point
    dtz = s * (1.0 - tz * tz)
    dz = q * dtz
    flat_dz, flat_r = dz.ravel(), r.ravel()
    # with sech^2 = 1 - h^2 each sum splits into a plain sum minus an h^2 term
    g_w2, g_h2 = np.zeros_like(w2), np.zeros((w1.size, 2))
    dslope = np.empty_like(flat_r)
    w12 = w1 * w2
    for i, hidden in zip(range(0, flat_r.size, RADIAL_CHUNK), kept):
        sl = slice(i, i + RADIAL_CHUNK)
        d = flat_dz[sl]
        g_w2 += hidden @ d
        h2 = hidden * hidden
        g_h2 += h2 @ np.stack([d * flat_r[sl], d], axis=1)
        dslope[sl] = w12 @ h2
    dslope = w12.sum() - dslope
    g_w1 = np.sum(flat_dz * flat_r) - g_h2[:, 0]
    g_b1 = np.sum(flat_dz) - g_h2[:, 1]
    grads[prefix + "gain"] = grads.get(prefix + "gain", 0.0) + np.sum(q * tz)
    grads[prefix + "b2"] = grads.get(prefix + "b2", 0.0) + np.sum(dz)
    grads[prefix + "w2"] = grads.get(prefix + "w2", 0.0) + g_w2
    grads[prefix + "w1"] = grads.get(prefix + "w1", 0.0) + w2 * g_w1
    grads[prefix + "b1"] = grads.get(prefix + "b1", 0.0) + w2 * g_b1
    # d rho / d r; the Jacobian term rho'(r) v v^T / r vanishes as r -> 0
    drho = dtz * dslope.reshape(r.shape)
    safe_r = np.where(r < RADIUS_EPS, 1.0, r)
    radial_term = np.where(r < RADIUS_EPS, 0.0, drho * q / safe_r)
    return rho * gw + radial_term * v


# ---------------------------------------------------------------------------
# spectral plumbing shared by the multiplier stages


class SpectralPlan:
    """Band-limited Chebyshev evaluation data for one grid and metric.

    Spectra live on the box of rows and columns that contain a retained mode.
    When the box is small the transforms are dense partial DFTs, otherwise full
    FFTs; both give the unnormalized forward transform and ``ifft2`` scaling.
    """

    def __init__(self, n: int, metric: MetricSpec, lambda_max: float, degree: int):
        self.n = n
        lam = symbol_grid(n, metric)
        full_mask = lam <= lambda_max
        rows = np.flatnonzero(full_mask.any(axis=1))
        cols = np.flatnonzero(full_mask.any(axis=0))
        self.partial = max(len(rows), len(cols)) <= n // 2
        if not self.partial:
            rows = cols = np.arange(n)
        self.rows, self.cols = rows, cols
        self.mask = full_mask[np.ix_(rows, cols)]
        self.lam = lam[np.ix_(rows, cols)][self.mask]
        self.basis = cheb_basis(degree, to_unit_interval(self.lam, lambda_max))
        x = np.arange(n)
        self._er = np.exp(-2j * np.pi * np.outer(rows, x) / n)
        self._ec_t = np.exp(-2j * np.pi * np.outer(x, cols) / n)
        self._er_inv = self._er.conj().T / n
        self._ec_inv = self._ec_t.conj().T / n
        self.neg_rows = _negated_positions(rows, n)
        self.neg_cols = _negated_positions(cols, n)

    def wavenumbers(self):
        """Signed wavenumbers ``(k1, k2)`` on the box, shape ``(rows, cols)`` each."""
        n = self.n
        k1 = np.where(self.rows < (n + 1) // 2, self.rows, self.rows - n)
        k2 = np.where(self.cols < (n + 1) // 2, self.cols, self.cols - n)
        return np.meshgrid(k1.astype(np.float64), k2.astype(np.float64), indexing="ij")

    def negate(self, spec: np.ndarray) -> np.ndarray:
        """``spec(-k)`` on the box, which is symmetric under ``k -> -k``."""
        return spec[..., self.neg_rows, :][..., self.neg_cols]

    def analyze(self, z: np.ndarray) -> np.ndarray:
        """Unnormalized forward transform of ``z`` restricted to the box."""
        if not self.partial:
            return fft2(z)
        return (self._er @ z) @ self._ec_t

    def synthesize(self, spec: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`analyze` for spectra supported on the box."""
        if not self.partial:
            return ifft2(spec)
        return (self._er_inv @ spec) @ self._ec_inv

    def symbol(self, coeffs: np.ndarray) -> np.ndarray:
        m = np.zeros(self.mask.shape)
        m[self.mask] = coeffs @ self.basis
        return m

    def coeff_grad(self, corr: np.ndarray) -> np.ndarray:
        """``sum_k phi_j(lambda_k) corr(k)`` over the retained modes."""
        return self.basis @ corr[self.mask]


def _negated_positions(idx: np.ndarray, n: int) -> np.ndarray:
    pos = {int(v): i for i, v in enumerate(idx)}
    return np.array([pos[int(-v % n)] for v in idx], dtype=np.int64)


_PLANS: dict = {}


def spectral_plan(n: int, metric: MetricSpec, lambda_max: float, degree: int) -> SpectralPlan:
    key = (n, metric.key, float(lambda_max), degree)
    plan = _PLANS.get(key)
    if plan is None:
        if len(_PLANS) > 64:
            _PLANS.clear()
        plan = _PLANS[key] = SpectralPlan(n, metric, lambda_max, degree)
    return plan


def fft2(z):
    return sfft.fft2(z, axes=(-2, -1))


def ifft2(z):
    return sfft.ifft2(z, axes=(-2, -1))


def _correlation(g_spec: np.ndarray, x_spec: np.ndarray) -> np.ndarray:
    """``Re(conj(G) X)`` summed over batch axes; both are unnormalized FFTs."""
    c = np.real(np.conj(g_spec) * x_spec)
    return c.reshape((-1,) + c.shape[-2:]).sum(axis=0)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class GinoModel:
    params: dict
    lambda_max: float
    metric: MetricSpec

    @property
    def degree(self) -> int:
        return self.params["mult1"].size - 1

    @property
    def mult1(self) -> ChebMultiplier:
        return ChebMultiplier(self.params["mult1"], self.lambda_max)

    @property
    def mult2(self) -> ChebMultiplier:
        return ChebMultiplier(self.params["mult2"], self.lambda_max)

    @property
    def rho(self) -> RadialParams:
        return RadialParams.from_params(self.params)

    def with_params(self, params: dict) -> "GinoModel":
        p = dict(params)
        p["rho.gain"] = np.clip(p["rho.gain"], -MAX_GAIN, MAX_GAIN)
        return replace(self, params=p)

    def rebind(self, metric: MetricSpec) -> "GinoModel":
        """Same learned multipliers evaluated on another metric's spectrum."""
        return replace(self, metric=metric)

    def linearized(self) -> "GinoModel":
        """Copy with zero gain, i.e. ``rho == 1``."""
        p = dict(self.params)
        p["rho.gain"] = np.array(0.0)
        return replace(self, params=p)

    def composed_multiplier(self, lam):
        """Effective linear multiplier ``m2 * m1`` of the gain-zero model."""
        return cheb_eval(self.mult1, lam) * cheb_eval(self.mult2, lam)

    def forward(self, f):
        return forward(self, f)

    def backward(self, cache, grad_out, need_input_grad=False):
        return backward(self, cache, grad_out, need_input_grad)

    def penalty(self):
        """Summed smoothness penalty of both multipliers and its gradient dict."""
        v1, g1 = smoothness_penalty(self.mult1)
        v2, g2 = smoothness_penalty(self.mult2)
        return v1 + v2, {"mult1": g1, "mult2": g2}

    def roughness(self) -> tuple[float, float]:
        return roughness(self.mult1), roughness(self.mult2)


def init_gino(rng: np.random.Generator, degree: int = 16, hidden: int = 16,
              lambda_max: float = 100.0, metric: MetricSpec | None = None,
              gain: float = 0.1) -> GinoModel:
    """Start near a constant linear operator with the resolvent's DC gain."""
    metric = metric or MetricSpec.euclidean()
    m1 = rng.normal(0.0, 0.01, degree + 1)
    m2 = rng.normal(0.0, 0.01, degree + 1)
    m1[0] = 1.0 / metric.alpha
    m2[0] = 1.0 / (1.0 + gain)
    params = {
        "mult1": m1,
        "mult2": m2,
        "rho.w1": rng.normal(0.0, 0.5, hidden),
        "rho.b1": np.zeros(hidden),
        "rho.w2": rng.normal(0.0, 0.5, hidden),
        "rho.b2": np.array(0.0),
        "rho.gain": np.array(float(gain)),
    }
    return GinoModel(params, float(lambda_max), metric)


@dataclass(frozen=True)
class LinearGinoModel(GinoModel):
    """GINO whose radial gain stays at zero, so the map is the multiplier ``m2 m1``."""

    def with_params(self, params: dict) -> "LinearGinoModel":
        p = dict(params)
        p["rho.gain"] = np.array(0.0)
        return replace(self, params=p)


def linear_gino(mult: ChebMultiplier, metric: MetricSpec, hidden: int = 16) -> LinearGinoModel:
    """Gain-zero GINO with ``mult1 = mult`` and ``mult2 = 1``."""
    ones = np.zeros_like(mult.coeffs)
    ones[0] = 1.0
    params = {
        "mult1": mult.coeffs.copy(),
        "mult2": ones,
        "rho.w1": np.zeros(hidden),
        "rho.b1": np.zeros(hidden),
        "rho.w2": np.zeros(hidden),
        "rho.b2": np.array(0.0),
        "rho.gain": np.array(0.0),
    }
    return LinearGinoModel(params, mult.lambda_max, metric)


def multiplier_apply(mult: ChebMultiplier, f: np.ndarray, metric: MetricSpec) -> np.ndarray:
    """Apply ``m(lambda_g(k))`` to both channels, zeroing modes above ``lambda_max``."""
    n = resolution_of(f)
    m = cheb_eval(mult, symbol_grid(n, metric))
    z = to_complex(f)
    return from_complex(ifft2(m * fft2(z)))


def forward(model: GinoModel, f: np.ndarray):
    """Evaluate the model on a field or a batch of fields.

    Returns the output (same shape as ``f``) and the cache for :func:`backward`.
    """
    n = resolution_of(f)
    p = model.params
    plan = spectral_plan(n, model.metric, model.lambda_max, model.degree)
    m1 = plan.symbol(p["mult1"])
    m2 = plan.symbol(p["mult2"])
    z_spec = plan.analyze(to_complex(f))
    v = plan.synthesize(m1 * z_spec)
    w, rcache = _radial_forward(p, v)
    w_spec = plan.analyze(w)
    u = plan.synthesize(m2 * w_spec)
    cache = {
        "layout": {k: np.shape(a) for k, a in p.items()},
        "n": n,
        "plan": plan,
        "m1": m1,
        "m2": m2,
        "z_spec": z_spec,
        "w_spec": w_spec,
        "radial": rcache,
    }
    return from_complex(u), cache


def backward(model: GinoModel, cache: dict, grad_out: np.ndarray, need_input_grad: bool = False):
    """Reverse-mode gradients of a scalar loss whose output gradient is ``grad_out``.

    Returns ``(grads, grad_in)``; ``grad_in`` is ``None`` unless requested.
    """
    layout = {k: np.shape(a) for k, a in model.params.items()}
    if cache.get("layout") != layout or grad_out.shape[-2] != cache["n"]:
        raise CacheMismatch("cache was produced by a model with different parameter shapes or grid")
    p = model.params
    plan = cache["plan"]
    n2 = cache["n"] ** 2
    g_spec = plan.analyze(to_complex(grad_out))
    grads = {}
    # stage 2: u = ifft(m2 fft(w))
    grads["mult2"] = plan.coeff_grad(_correlation(g_spec, cache["w_spec"])) / n2
    gw = plan.synthesize(cache["m2"] * g_spec)
    gv = _radial_backward(p, cache["radial"], gw, grads)
    gv_spec = plan.analyze(gv)
    grads["mult1"] = plan.coeff_grad(_correlation(gv_spec, cache["z_spec"])) / n2
    grad_in = from_complex(plan.synthesize(cache["m1"] * gv_spec)) if need_input_grad else None
    grads = {k: np.asarray(grads[k], dtype=np.float64).reshape(layout[k]) for k in p}
    return grads, grad_in


def stack_forward(blocks, readout: ChebMultiplier, f: np.ndarray, metric: MetricSpec, gates=None):
    """Deeper recursion ``h <- sigma_l(T_l h) + B_l h`` followed by a readout multiplier.

    ``blocks`` is a list of ``(ChebMultiplier, RadialParams)`` pairs and
    ``gates`` an optional list of pointwise scalar fields ``B_l`` of shape
    ``(n, n)``. This is an opt-in hook: :class:`GinoModel` is the single-block,
    gate-free case, and nothing in the library trains deeper stacks.
    Forward evaluation only.
    """
    gates = [None] * len(blocks) if gates is None else list(gates)
    if len(gates) != len(blocks):
        raise ValueError("need one gate (or None) per block")
    h = f
    for (mult, rho), gate in zip(blocks, gates):
        nxt = radial_apply(rho, multiplier_apply(mult, h, metric))
        if gate is not None:
            nxt = nxt + np.asarray(gate)[..., None] * h
        h = nxt
    return multiplier_apply(readout, h, metric)
