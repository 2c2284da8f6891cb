"""
Seeded band-limited random forcings.

Each sample is drawn from its own Philox stream keyed by ``(seed, stream,
index)``, so a batch is a pure function of the seed and can be generated in
any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBand
from .grid import (
    MetricSpec,
    check_resolution,
    nyquist_lines,
    symbol_grid,
)


@dataclass(frozen=True)
class ForcingSpec:
    beta: float = 2.0
    lambda_cut: float = 100.0
    n: int = 64
    metric: MetricSpec = field(default_factory=MetricSpec.euclidean)

    def __post_init__(self):
        check_resolution(self.n)
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta!r}")
        if not self.lambda_cut > 0:
            raise ValueError(f"lambda_cut must be positive, got {self.lambda_cut!r}")

    def band(self) -> np.ndarray:
        """Boolean mask of the modes the forcing may populate."""
        lam = symbol_grid(self.n, self.metric)
        return (lam <= self.lambda_cut) & ~nyquist_lines(self.n)

    def amplitude(self) -> np.ndarray:
        lam = symbol_grid(self.n, self.metric)
        return np.where(self.band(), (1.0 + lam) ** (-0.5 * self.beta), 0.0)


class SeededRng:
    """Counter-based source of independent per-sample generators."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream)
        self.counter = 0

    def generator(self, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.stream, int(index)])
        return np.random.Generator(np.random.Philox(ss))

    def take(self, count: int = 1) -> range:
        start = self.counter
        self.counter += count
        return range(start, start + count)


def box_muller(gen: np.random.Generator, size: int) -> np.ndarray:
    """``size`` standard normal variates from pairs of uniforms."""
    pairs = (size + 1) // 2
    u = gen.random((2, pairs))
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))
    angle = 2.0 * np.pi * u[1]
    return np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:size]


def _draw(gen: np.random.Generator, amp_band: np.ndarray) -> np.ndarray:
    """Complex Gaussian coefficients for the in-band modes of one sample."""
    z = box_muller(gen, 4 * amp_band.size).reshape(2, amp_band.size, 2)
    return (z[0] + 1j * z[1]) * amp_band[:, None]


def sample_forcing(spec: ForcingSpec, rng: SeededRng) -> np.ndarray:
    """One RMS-normalized band-limited forcing of shape ``(n, n, 2)``."""
    return sample_batch(spec, rng, 1)[0]


_SYNTHESIS: dict = {}


def _box_synthesis(spec: ForcingSpec):
    """Band mask on its bounding box of rows and columns, plus real synthesis matrices.

    A field supported on the box is ``Re(er @ c @ ec)``; the second factor is
    stored as the real matrix ``[Re ec; Im ec]`` acting on ``[Re P, -Im P]``.
    """
    key = (spec.n, spec.metric.key, spec.lambda_cut)
    if key not in _SYNTHESIS:
        band = spec.band()
        rows = np.flatnonzero(band.any(axis=1))
        cols = np.flatnonzero(band.any(axis=0))
        x = np.arange(spec.n)
        er = np.exp(2j * np.pi * np.outer(x, rows) / spec.n)
        ec = np.exp(2j * np.pi * np.outer(cols, x) / spec.n)
        if len(_SYNTHESIS) > 32:
            _SYNTHESIS.clear()
        _SYNTHESIS[key] = (band[np.ix_(rows, cols)], er, np.concatenate([ec.real, ec.imag]))
    return _SYNTHESIS[key]


def sample_batch(spec: ForcingSpec, rng: SeededRng, count: int) -> np.ndarray:
    """``count`` independent forcings stacked along a leading axis.

    Raises
    ------
    EmptyBand
        If no wavenumber satisfies the cutoff.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    amp = spec.amplitude()
    band = amp > 0
    if not band.any():
        raise EmptyBand(f"no mode with lambda <= {spec.lambda_cut}")
    box_band, er, ec_real = _box_synthesis(spec)
    amp_band = amp[band]
    noise = np.zeros((count, 2) + box_band.shape, dtype=np.complex128)
    for row, i in enumerate(rng.take(count)):
        noise[row][:, box_band] = _draw(rng.generator(i), amp_band).T
    # the real part of the synthesis equals synthesizing the Hermitian-symmetrized noise
    partial = er @ noise
    f = np.concatenate([partial.real, -partial.imag], axis=-1) @ ec_real
    f = np.moveaxis(f, 1, -1)
    rms = np.sqrt(np.mean(f * f, axis=(1, 2, 3), keepdims=True))
    return np.ascontiguousarray(f / rms)
