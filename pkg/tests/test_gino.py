import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_difference
from ginolab.errors import CacheMismatch
from ginolab.gino import (
    ChebMultiplier,
    GinoModel,
    RadialParams,
    cheb_eval,
    fit_multiplier,
    init_gino,
    linear_gino,
    multiplier_apply,
    radial_apply,
    rho_value,
    roughness,
    smoothness_penalty,
    stack_forward,
)
from ginolab.grid import (
    MetricSpec,
    band_limit,
    fft_forward,
    fft_inverse,
    l2_norm,
    prolong,
    rotate_frame,
    symbol_grid,
)
from ginolab.oracle import resolvent_apply

G = MetricSpec.euclidean()


def unit(j, size):
    c = np.zeros(size)
    c[j] = 1.0
    return c


def random_model(seed, gain=0.3, metric=G, lambda_max=100.0):
    rng = np.random.default_rng(seed)
    model = init_gino(rng, degree=8, lambda_max=lambda_max, metric=metric, gain=gain)
    p = dict(model.params)
    p["mult1"] = p["mult1"] + rng.normal(0, 0.3, 9)
    p["mult2"] = p["mult2"] + rng.normal(0, 0.3, 9)
    p["rho.b1"] = rng.normal(0, 0.5, p["rho.b1"].shape)
    p["rho.b2"] = np.array(rng.normal(0, 0.5))
    return model.with_params(p)


def test_cheb_eval_trivial_cases():
    const = ChebMultiplier(unit(0, 5), 10.0)
    assert np.array_equal(cheb_eval(const, [0.0, 3.0, 10.0, 10.5]), [1, 1, 1, 0])
    lin = ChebMultiplier(unit(1, 5), 10.0)
    assert cheb_eval(lin, 10.0) == 1.0 and cheb_eval(lin, 5.0) == 0.0


def test_cheb_eval_matches_power_basis(rng):
    c = rng.normal(size=9)
    lam = np.linspace(0, 7.0, 100)
    t = 2 * lam / 7.0 - 1
    direct = np.polynomial.polynomial.polyval(t, np.polynomial.chebyshev.cheb2poly(c))
    assert np.abs(cheb_eval(ChebMultiplier(c, 7.0), lam) - direct).max() < 1e-12


def test_multiplier_invariants():
    for bad in (np.array([]), np.array([1.0, np.nan])):
        with pytest.raises(ValueError):
            ChebMultiplier(bad, 1.0)
    with pytest.raises(ValueError):
        ChebMultiplier(np.ones(2), 0.0)
    with pytest.raises(ValueError):
        RadialParams(np.zeros(2), np.zeros(2), np.zeros(2), 0.0, 0.95)


def test_multiplier_apply_cases(rng):
    one = ChebMultiplier(unit(0, 4), 20.0)
    f = band_limit(rng.normal(size=(32, 32, 2)), 6)
    assert np.abs(multiplier_apply(one, f, G) - f).max() < 1e-14
    # every mode with |k|^2 > 20 is removed
    c = fft_forward(rng.normal(size=(32, 32, 2)))
    c[symbol_grid(32, G) <= 20] = 0
    above = fft_inverse(c)
    assert np.abs(multiplier_apply(one, above, G)).max() < 1e-14


def test_multiplier_fit_reproduces_resolvent(rng):
    # the pole at lambda = -1 limits the degree-32 fit to about 1e-9 once the cutoff reaches 10
    fit = fit_multiplier(lambda lam: 1 / (lam + 1), 5.0, 32)
    lam = np.linspace(0, 5, 2001)
    assert np.abs(fit(lam) - 1 / (lam + 1)).max() < 1e-9
    c = fft_forward(rng.normal(size=(32, 32, 2)))
    c[symbol_grid(32, G) > 5] = 0
    f = fft_inverse(c)
    assert np.abs(multiplier_apply(fit, f, G) - resolvent_apply(f, G)).max() < 1e-9


def test_multiplier_and_radial_commute_with_rotation(rng):
    u = rng.normal(size=(16, 16, 2))
    mult = ChebMultiplier(rng.normal(size=6), 50.0)
    rho = random_model(1).rho
    for theta in rng.uniform(-np.pi, np.pi, 5):
        a = multiplier_apply(mult, rotate_frame(u, theta), G)
        b = rotate_frame(multiplier_apply(mult, u, G), theta)
        assert l2_norm(a - b) / l2_norm(b) < 1e-14
        a = radial_apply(rho, rotate_frame(u, theta))
        b = rotate_frame(radial_apply(rho, u), theta)
        assert l2_norm(a - b) / l2_norm(b) < 1e-14


def test_radial_trivial_cases_and_range(rng):
    rho = random_model(2, gain=0.6).rho
    assert np.array_equal(radial_apply(rho, np.zeros((8, 8, 2))), np.zeros((8, 8, 2)))
    u = 3 * rng.normal(size=(8, 8, 2))
    flat = RadialParams(rho.w1, rho.b1, rho.w2, rho.b2, 0.0)
    assert np.array_equal(radial_apply(flat, u), u)
    r = np.linspace(0, 50, 500)
    values = rho_value(rho, r)
    assert values.min() >= 0.4 and values.max() <= 1.6
    out = np.linalg.norm(radial_apply(rho, u), axis=-1)
    assert np.all(out <= 1.6 * np.linalg.norm(u, axis=-1) + 1e-15)


def test_forward_trivial_cases(rng):
    model = linear_gino(ChebMultiplier(unit(0, 5), 30.0), G)
    f = rng.normal(size=(32, 32, 2))
    c = fft_forward(f)
    c[symbol_grid(32, G) > 30] = 0
    assert np.abs(model.forward(f)[0] - fft_inverse(c)).max() < 1e-13
    assert np.array_equal(random_model(3).forward(np.zeros((16, 16, 2)))[0], np.zeros((16, 16, 2)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), theta=st.floats(-10, 10), n=st.sampled_from([16, 32, 64]),
       delta=st.floats(0, 0.3))
def test_forward_is_gauge_equivariant(seed, theta, n, delta):
    model = random_model(seed, metric=MetricSpec.anisotropic(delta, 0.3))
    f = np.random.default_rng(seed + 1).normal(size=(2, n, n, 2))
    a = model.forward(rotate_frame(f, theta))[0]
    b = rotate_frame(model.forward(f)[0], theta)
    assert l2_norm(a - b).max() / l2_norm(b).min() < 1e-12


def test_forward_matches_stage_composition(rng):
    model = random_model(4)
    f = rng.normal(size=(32, 32, 2))
    ref = multiplier_apply(model.mult2, radial_apply(model.rho, multiplier_apply(model.mult1, f, G)), G)
    assert np.abs(model.forward(f)[0] - ref).max() < 1e-13
    stacked = stack_forward([(model.mult1, model.rho)], model.mult2, f, G)
    assert np.abs(stacked - ref).max() < 1e-13


def test_stack_forward_gates(rng):
    f = rng.normal(size=(16, 16, 2))
    one = ChebMultiplier(unit(0, 3), 1e3)
    flat = RadialParams(np.zeros(2), np.zeros(2), np.zeros(2), 0.0, 0.0)
    gate = np.full((16, 16), 0.5)
    out = stack_forward([(one, flat), (one, flat)], one, f, G, gates=[gate, None])
    assert np.abs(out - 1.5 * f).max() < 1e-13
    with pytest.raises(ValueError):
        stack_forward([(one, flat)], one, f, G, gates=[gate, gate])


def test_resolution_transfer_linear(rng):
    model = random_model(5, gain=0.0)
    f = band_limit(rng.normal(size=(32, 32, 2)), 16)
    fine = model.forward(prolong(f, 64))[0]
    assert np.abs(prolong(model.forward(f)[0], 64) - fine).max() < 1e-10 * np.abs(fine).max()


def test_resolution_transfer_nonlinear_is_close(rng):
    # the pointwise nonlinearity creates modes above the coarse band, so only approximate
    model = random_model(5, gain=0.3)
    f = band_limit(rng.normal(size=(64, 64, 2)), 8)
    fine = model.forward(prolong(f, 128))[0]
    coarse = prolong(model.forward(f)[0], 128)
    assert l2_norm(coarse - fine) / l2_norm(fine) < 1e-3


def test_roughness_values(rng):
    assert roughness(ChebMultiplier(unit(0, 6), 40.0)) == 0.0
    affine = ChebMultiplier(np.array([20.0, 20.0]), 40.0)  # m(lambda) = lambda
    assert np.isclose(roughness(affine), 1.0, rtol=1e-14)
    mult = ChebMultiplier(rng.normal(size=9), 40.0)
    lam = np.linspace(0, 40, 200_001)
    dense = np.max(np.abs(np.diff(mult(lam)) / np.diff(lam)))
    assert abs(roughness(mult) - dense) < 0.01 * dense


def test_smoothness_penalty(rng):
    value, grad = smoothness_penalty(ChebMultiplier(unit(0, 5), 3.0))
    assert value == 0.0 and not grad.any()
    value, _ = smoothness_penalty(ChebMultiplier(np.array([0.5, 0.5]), 1.0))
    assert abs(value - 1.0) < 1e-10
    coeffs = rng.normal(size=7)

    def loss(p):
        return smoothness_penalty(ChebMultiplier(p["c"], 5.0))[0]

    _, grad = smoothness_penalty(ChebMultiplier(coeffs, 5.0))
    for j in range(7):
        fd = central_difference(loss, {"c": coeffs}, "c", j, h=1e-5)
        assert abs(fd - grad[j]) <= 1e-8 * max(abs(grad).max(), 1.0)


def test_backward_zero_and_mismatch(rng):
    model = random_model(6)
    f = rng.normal(size=(16, 16, 2))
    _, cache = model.forward(f)
    grads, grad_in = model.backward(cache, np.zeros_like(f), need_input_grad=True)
    assert all(not g.any() for g in grads.values()) and not grad_in.any()
    other = init_gino(rng, degree=4)
    with pytest.raises(CacheMismatch):
        other.backward(cache, np.ones_like(f))
    with pytest.raises(CacheMismatch):
        model.backward(cache, np.ones((32, 32, 2)))


def gradient_errors(model, f, probe, picks):
    def loss(p):
        return float(np.sum(model.with_params(p).forward(f)[0] * probe))

    out, cache = model.forward(f)
    grads, _ = model.backward(cache, probe)
    errors = []
    for key, index in picks:
        fd = central_difference(loss, model.params, key, index)
        an = grads[key].flat[index]
        errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return errors


def test_gradient_single_multiplier_path(rng):
    # gain zero: the loss is bilinear in each multiplier's coefficients
    model = random_model(7, gain=0.0)
    f = rng.normal(size=(16, 16, 2))
    probe = rng.normal(size=f.shape)
    picks = [("mult1", j) for j in range(9)] + [("mult2", j) for j in range(9)]
    assert max(gradient_errors(model, f, probe, picks)) < 1e-6


def test_gradient_all_parameters(rng):
    model = random_model(8, gain=0.4)
    f = rng.normal(size=(2, 16, 16, 2))
    probe = rng.normal(size=f.shape)
    sizes = {k: np.size(v) for k, v in model.params.items()}
    keys = list(sizes)
    picks = [(k, 0) for k in keys]
    while len(picks) < 24:
        k = keys[rng.integers(len(keys))]
        picks.append((k, int(rng.integers(sizes[k]))))
    assert max(gradient_errors(model, f, probe, picks)) < 1e-5


def test_input_gradient(rng):
    model = random_model(9)
    f = rng.normal(size=(8, 8, 2))
    probe = rng.normal(size=f.shape)
    _, cache = model.forward(f)
    _, grad_in = model.backward(cache, probe, need_input_grad=True)
    for idx in rng.integers(0, f.size, 6):
        step = np.zeros(f.size)
        step[idx] = 1e-6
        step = step.reshape(f.shape)
        fd = (np.sum(model.forward(f + step)[0] * probe) - np.sum(model.forward(f - step)[0] * probe)) / 2e-6
        assert abs(fd - grad_in.flat[idx]) <= 1e-6 * max(abs(fd), 1e-3)


def test_gain_is_clipped_and_linear_model_stays_linear(rng):
    model = random_model(10)
    p = dict(model.params)
    p["rho.gain"] = np.array(5.0)
    assert float(model.with_params(p).params["rho.gain"]) == 0.9
    lin = linear_gino(ChebMultiplier(unit(0, 3), 10.0), G)
    assert float(lin.with_params(p).params["rho.gain"]) == 0.0
    assert isinstance(model, GinoModel)
