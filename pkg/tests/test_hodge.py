import numpy as np
import pytest

from conftest import central_difference
from ginolab.errors import CacheMismatch
from ginolab.grid import band_limit, fft_forward, fft_inverse, rotate_frame, wavenumbers
from ginolab.hodge import gauge_error, init_hodge, rotate_heads
from ginolab.oracle import hodge_decompose


def projector_model(split=True, degree=4, lambda_max=1e4):
    """Gain-zero heads whose last stage is the exact / coexact projector."""
    model = init_hodge(np.random.default_rng(0), degree=degree, lambda_max=lambda_max, split=split, gain=0.0)
    p = {k: np.zeros_like(v) for k, v in model.params.items()}
    for sign, head in ((1.0, "ex"), (-1.0, "co")):
        p[f"{head}.mult1"][0] = 1.0
        p[f"{head}.even"][0] = 0.5
        if split:
            p[f"{head}.odd"][0] = 0.5 * sign
    return model.with_params(p)


def exact_projection(f):
    n = f.shape[-2]
    k1, k2 = (k.astype(float) for k in wavenumbers(n))
    ksq = np.where(k1**2 + k2**2 > 0, k1**2 + k2**2, 1.0)
    c = fft_forward(f)
    dot = (k1 * c[..., 0] + k2 * c[..., 1]) / ksq
    return fft_inverse(np.stack([k1 * dot, k2 * dot], axis=-1))


def random_hodge(seed, split=True, gain=0.3):
    rng = np.random.default_rng(seed)
    model = init_hodge(rng, degree=6, lambda_max=80.0, split=split, gain=gain)
    p = {k: v + (0.2 * rng.normal(size=np.shape(v)) if "gain" not in k else 0) for k, v in model.params.items()}
    return model.with_params(p)


def test_projector_heads_are_exact(rng):
    f = band_limit(rng.normal(size=(32, 32, 2)), 16)
    out = projector_model().forward(f)[0]
    ex = exact_projection(f)
    mean = f.mean(axis=(0, 1))
    assert np.abs(out[..., :2] - ex).max() < 1e-13
    assert np.abs(out[..., 2:] - (f - mean - ex)).max() < 1e-13


def test_projector_heads_approach_regularized_targets(rng):
    # the regularized split differs from the projectors by alpha / (|k|^2 + alpha)
    f = band_limit(rng.normal(size=(32, 32, 2)), 16)
    out = projector_model().forward(f)[0]
    parts = hodge_decompose(f, 1e-9)
    assert np.abs(out[..., :2] - parts.exact).max() < 1e-8
    assert np.abs(out[..., 2:] - parts.coexact).max() < 1e-8


def test_scalar_heads_cannot_split(rng):
    f = band_limit(rng.normal(size=(32, 32, 2)), 16)
    out = projector_model(split=False).forward(f)[0]
    assert np.allclose(out[..., :2], out[..., 2:], atol=1e-14)


@pytest.mark.parametrize("split", [True, False])
def test_gauge_error_is_at_machine_precision(rng, split):
    model = random_hodge(1, split=split)
    f = rng.normal(size=(2, 32, 32, 2))
    for theta in (np.pi / 2, np.pi, 2.1, -0.4):
        assert gauge_error(model, f, theta) < 1e-12


def test_frame_change_without_rotation_breaks_equivariance(rng):
    model = random_hodge(2)
    f = band_limit(rng.normal(size=(32, 32, 2)), 16)
    base = model.forward(f)[0]
    # rotating the data but not the frame is not a gauge change
    wrong = model.forward(rotate_frame(f, 0.8))[0]
    right = rotate_heads(base, 0.8)
    assert np.linalg.norm(wrong - right) > 1e-3 * np.linalg.norm(right)


def test_output_layout_and_zero_mode(rng):
    f = rng.normal(size=(3, 16, 16, 2)) + 5.0
    out = random_hodge(3).forward(f)[0]
    assert out.shape == (3, 16, 16, 4)
    assert np.abs(out.mean(axis=(1, 2))).max() < 1e-13


def test_backward_zero_and_mismatch(rng):
    model = random_hodge(4)
    f = rng.normal(size=(16, 16, 2))
    out, cache = model.forward(f)
    grads, grad_in = model.backward(cache, np.zeros_like(out), need_input_grad=True)
    assert all(not np.any(g) for g in grads.values()) and not grad_in.any()
    with pytest.raises(CacheMismatch):
        model.backward(cache, np.zeros((16, 16, 2)))
    with pytest.raises(CacheMismatch):
        random_hodge(4, split=False).backward(cache, np.zeros_like(out))


@pytest.mark.parametrize("split", [True, False])
def test_gradients_match_finite_differences(rng, split):
    model = random_hodge(5, split=split).with_frame(0.3)
    f = rng.normal(size=(2, 16, 16, 2))
    probe = rng.normal(size=(2, 16, 16, 4))

    def loss(p):
        return float(np.sum(model.with_params(p).forward(f)[0] * probe))

    _, cache = model.forward(f)
    grads, grad_in = model.backward(cache, probe, need_input_grad=True)
    keys = sorted(model.params)
    for t in range(2 * len(keys)):
        key = keys[t % len(keys)]
        index = int(rng.integers(np.size(model.params[key])))
        fd = central_difference(loss, model.params, key, index)
        an = grads[key].flat[index]
        assert abs(fd - an) <= 1e-5 * max(abs(fd), abs(an), 1e-8), key
    for idx in rng.integers(0, f.size, 4):
        step = np.zeros(f.size)
        step[idx] = 1e-6
        step = step.reshape(f.shape)
        fd = (np.sum(model.forward(f + step)[0] * probe) - np.sum(model.forward(f - step)[0] * probe)) / 2e-6
        assert abs(fd - grad_in.flat[idx]) <= 1e-6 * max(abs(fd), 1e-3)


def test_penalty_covers_every_multiplier():
    model = random_hodge(6)
    value, grads = model.penalty()
    assert value > 0
    assert set(grads) == {k for k in model.params if not k.split(".")[1] == "rho"}
