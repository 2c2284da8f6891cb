"""Closed-form Fourier ground truth on the flat torus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    MetricSpec,
    apply_symbol,
    energy_weights,
    fft_forward,
    fft_inverse,
    nyquist_lines,
    resolution_of,
    wavenumbers,
)


def resolvent_apply(f: np.ndarray, metric: MetricSpec) -> np.ndarray:
    """Solve ``(Delta_g + alpha) u = f`` exactly: ``u_k = f_k / (k^T A k + alpha)``."""
    return apply_symbol(f, 1.0 / energy_weights(resolution_of(f), metric))


def energy_apply(u: np.ndarray, metric: MetricSpec) -> np.ndarray:
    """Apply ``Delta_g + alpha`` in Fourier space (inverse of :func:`resolvent_apply`)."""
    return apply_symbol(u, energy_weights(resolution_of(u), metric))


@dataclass
class HodgeParts:
    exact: np.ndarray
    coexact: np.ndarray
    harmonic: np.ndarray
    residual: np.ndarray

    def total(self) -> np.ndarray:
        return self.exact + self.coexact + self.harmonic + self.residual


def hodge_symbols(n: int, alpha_reg: float):
    """Per-mode 2x2 symbols of the regularized exact and coexact projectors.

    Returns ``(exact, coexact, residual)`` where the first two have shape
    ``(n, n, 2, 2)`` and ``residual`` is the scalar ``alpha_reg/(|k|^2+alpha_reg)``.
    All three vanish at ``k = 0``. On Nyquist lines the off-diagonal
    ``k1 k2`` entries are dropped so the symbols stay even in ``k``.
    """
    k1, k2 = (k.astype(np.float64) for k in wavenumbers(n))
    ksq = k1 * k1 + k2 * k2
    denom = ksq + alpha_reg
    cross = np.where(nyquist_lines(n), 0.0, k1 * k2)
    exact = np.empty((n, n, 2, 2))
    exact[..., 0, 0] = k1 * k1
    exact[..., 0, 1] = exact[..., 1, 0] = cross
    exact[..., 1, 1] = k2 * k2
    coexact = np.empty((n, n, 2, 2))
    coexact[..., 0, 0] = k2 * k2
    coexact[..., 0, 1] = coexact[..., 1, 0] = -cross
    coexact[..., 1, 1] = k1 * k1
    exact /= denom[..., None, None]
    coexact /= denom[..., None, None]
    residual = alpha_reg / denom
    residual[0, 0] = 0.0
    return exact, coexact, residual


def hodge_decompose(f: np.ndarray, alpha_reg: float = 0.1) -> HodgeParts:
    """Regularized Helmholtz-Hodge split of a 1-form under the Euclidean metric.

    ``exact + coexact + harmonic + residual`` reproduces ``f``; the residual is
    the part removed by the regularizer and the harmonic part is the mean.
    """
    if not alpha_reg > 0:
        raise ValueError(f"alpha_reg must be positive, got {alpha_reg!r}")
    n = resolution_of(f)
    F = fft_forward(f)
    ex_sym, co_sym, res_sym = hodge_symbols(n, alpha_reg)
    harm = np.zeros_like(F)
    harm[..., 0, 0, :] = F[..., 0, 0, :]
    return HodgeParts(
        exact=fft_inverse(np.einsum("...ij,...j->...i", ex_sym, F)),
        coexact=fft_inverse(np.einsum("...ij,...j->...i", co_sym, F)),
        harmonic=fft_inverse(harm),
        residual=fft_inverse(res_sym[..., None] * F),
    )
