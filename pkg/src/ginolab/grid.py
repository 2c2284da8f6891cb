"""
Periodic-grid fields on the flat torus [0, 2*pi)^2.

A grid field is a real array of shape ``(..., n, n, 2)``: two leading spatial
axes (x1, then x2) and a trailing channel axis holding the frame coefficients
of a 1-form. Any number of leading batch axes is allowed.

Spectra use the FFT index order, so entry ``[i, j]`` holds the integer
wavenumber ``k = (kf[i], kf[j])`` with ``kf = fftfreq(n) * n``, i.e. values in
``{-n/2, ..., n/2 - 1}``. The forward transform carries the ``1/n^2`` factor so
that the ``k = 0`` coefficient is the field mean. With this normalization and
the RMS-style norm ``l2_norm(f)**2 = sum(f**2) / n**2``, Parseval reads
``l2_norm(f)**2 == sum(|coeffs|**2)`` independently of ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import (
    DegenerateReference,
    InvalidMetric,
    InvalidResolution,
    InvalidResolutionPair,
    NonHermitianInput,
)

SPATIAL_AXES = (-3, -2)


def check_resolution(n) -> int:
    """Validate a grid size and return it as ``int``."""
    if int(n) != n or n < 4 or n % 2:
        raise InvalidResolution(f"grid size must be an even integer >= 4, got {n!r}")
    return int(n)


def resolution_of(f: np.ndarray) -> int:
    if f.ndim < 3 or f.shape[-1] != 2 or f.shape[-2] != f.shape[-3]:
        raise InvalidResolution(f"expected a (..., n, n, 2) field, got shape {f.shape}")
    return check_resolution(f.shape[-2])


@lru_cache(maxsize=None)
def wavenumbers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer wavenumber arrays ``(k1, k2)`` of shape ``(n, n)`` in FFT order."""
    n = check_resolution(n)
    kf = np.rint(sfft.fftfreq(n) * n).astype(np.int64)
    k1, k2 = np.meshgrid(kf, kf, indexing="ij")
    k1.setflags(write=False)
    k2.setflags(write=False)
    return k1, k2


def nyquist_lines(n: int) -> np.ndarray:
    """Boolean mask of modes with either component equal to ``-n/2``."""
    k1, k2 = wavenumbers(n)
    return (k1 == -n // 2) | (k2 == -n // 2)


# ---------------------------------------------------------------------------
# metric


@dataclass(frozen=True, eq=False)
class MetricSpec:
    """Constant metric tensor ``m``, its inverse ``a`` and the resolvent shift ``alpha``."""

    m: np.ndarray
    a: np.ndarray
    alpha: float

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        a = np.array(self.a, dtype=np.float64)
        if m.shape != (2, 2) or a.shape != (2, 2):
            raise InvalidMetric("metric and inverse must be 2x2")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(a))):
            raise InvalidMetric("metric entries must be finite")
        if m[0, 1] != m[1, 0] or a[0, 1] != a[1, 0]:
            raise InvalidMetric("metric must be symmetric")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise InvalidMetric("metric must be positive definite")
        if np.abs(a @ m - np.eye(2)).max() > 1e-12:
            raise InvalidMetric("a must be the inverse of m")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidMetric(f"alpha must be positive, got {self.alpha!r}")
        m.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def euclidean(cls, alpha: float = 1.0) -> "MetricSpec":
        return cls(np.eye(2), np.eye(2), alpha)

    @classmethod
    def from_tensor(cls, m, alpha: float = 1.0) -> "MetricSpec":
        m = np.asarray(m, dtype=np.float64)
        a = np.linalg.inv(m)
        a = 0.5 * (a + a.T)
        return cls(m, a, alpha)

    @classmethod
    def anisotropic(cls, delta: float, angle: float, alpha: float = 1.0) -> "MetricSpec":
        """``M = R diag(1+delta, 1-delta) R^T`` with ``R`` the rotation by ``angle``.

        Both ``M`` and ``A = M^-1`` are assembled as identity plus a rotated
        diagonal correction, so ``delta = 0`` gives the identity exactly.
        """
        if not 0 <= delta < 1:
            raise InvalidMetric(f"delta must lie in [0, 1), got {delta!r}")
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        m = np.eye(2) + rot @ np.diag([delta, -delta]) @ rot.T
        a = np.eye(2) + rot @ np.diag([1 / (1 + delta) - 1, 1 / (1 - delta) - 1]) @ rot.T
        m = 0.5 * (m + m.T)
        a = 0.5 * (a + a.T)
        return cls(m, a, alpha)

    @property
    def key(self) -> tuple:
        return (float(self.a[0, 0]), float(self.a[0, 1]), float(self.a[1, 1]), self.alpha)

    def with_alpha(self, alpha: float) -> "MetricSpec":
        return MetricSpec(self.m, self.a, alpha)

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "a": self.a.tolist(), "alpha": self.alpha}


def spectral_symbol(k, metric: MetricSpec) -> float:
    """Hodge eigenvalue ``k^T A k`` of the plane wave with wavenumber ``k``."""
    k = np.asarray(k, dtype=np.float64)
    return float(k @ metric.a @ k)


@lru_cache(maxsize=64)
def _symbol_grid(n: int, a11: float, a12: float, a22: float) -> np.ndarray:
    k1, k2 = wavenumbers(n)
    cross = np.where(nyquist_lines(n), 0.0, 2.0 * a12 * k1 * k2)
    lam = a11 * k1 * k1 + a22 * k2 * k2 + cross
    lam.setflags(write=False)
    return lam


def symbol_grid(n: int, metric: MetricSpec) -> np.ndarray:
    """``lambda_g(k)`` on the whole ``n x n`` lattice (FFT order).

    On Nyquist lines ``k`` and ``-k`` alias to the same index pair only up to a
    sign flip of the other component, so the cross term ``2 a12 k1 k2`` is
    dropped there. This keeps the symbol even under ``k -> -k`` (mod n) and
    therefore keeps filtered fields real.
    """
    a = metric.a
    return _symbol_grid(check_resolution(n), float(a[0, 0]), float(a[0, 1]), float(a[1, 1]))


# ---------------------------------------------------------------------------
# transforms


def fft_forward(f: np.ndarray) -> np.ndarray:
    """Fourier coefficients ``(1/n^2) sum_x f(x) exp(-i k.x)`` per channel."""
    n = resolution_of(f)
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite entries")
    return sfft.fft2(f, axes=SPATIAL_AXES) / (n * n)


def fft_inverse(coeffs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Real field whose ``fft_forward`` is ``coeffs``.

    Raises
    ------
    NonHermitianInput
        If the imaginary part of the synthesized field exceeds ``tol`` times
        its real norm.
    """
    n = resolution_of(coeffs)
    f = sfft.ifft2(coeffs, axes=SPATIAL_AXES) * (n * n)
    scale = max(float(np.abs(f.real).max(initial=0.0)), np.finfo(float).tiny)
    resid = float(np.abs(f.imag).max(initial=0.0))
    if resid > tol * scale and resid > 1e-300:
        raise NonHermitianInput(f"imaginary residue {resid:.3e} exceeds {tol:g} of field scale {scale:.3e}")
    return np.ascontiguousarray(f.real)


def hermitian_symmetrize(coeffs: np.ndarray) -> np.ndarray:
    """Average each coefficient with the conjugate of its ``-k`` partner."""
    flipped = np.roll(np.flip(coeffs, axis=SPATIAL_AXES), 1, axis=SPATIAL_AXES)
    return 0.5 * (coeffs + np.conj(flipped))


def apply_symbol(f: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Multiply every channel's spectrum by a real, even ``(n, n)`` weight."""
    n = resolution_of(f)
    half = sfft.rfft2(f, axes=SPATIAL_AXES) * weights[..., : n // 2 + 1, None]
    return sfft.irfft2(half, s=(n, n), axes=SPATIAL_AXES)


# ---------------------------------------------------------------------------
# norms and metrics


def l2_norm(f: np.ndarray, axis=(-3, -2, -1)):
    """RMS-style L2 norm ``sqrt(sum(f**2) / n**2)`` (torus area normalized to 1)."""
    n = f.shape[-2]
    return np.sqrt(np.sum(f * f, axis=axis)) / n


def sobolev_norm(f: np.ndarray, r: float, metric: MetricSpec):
    """Spectral Sobolev norm ``sqrt(sum_k (1 + lambda_g(k))^r |f_k|^2)``.

    Uses the discrete mode sum with no quadrature correction; ``r = 0``
    reproduces :func:`l2_norm`.
    """
    n = resolution_of(f)
    if not np.isfinite(r):
        raise ValueError("Sobolev order must be finite")
    weight = (1.0 + symbol_grid(n, metric)) ** r
    power = np.sum(np.abs(fft_forward(f)) ** 2, axis=-1)
    return np.sqrt(np.sum(weight * power, axis=(-2, -1)))


def energy_weights(n: int, metric: MetricSpec) -> np.ndarray:
    return symbol_grid(n, metric) + metric.alpha


def metrics_triplet(u_hat: np.ndarray, u: np.ndarray, metric: MetricSpec) -> dict:
    """MSE, relative L2 and relative energy error of a prediction.

    For batched inputs the relative errors are averaged over samples and the
    MSE is taken over all entries.
    """
    if u_hat.shape != u.shape:
        raise ValueError(f"shape mismatch {u_hat.shape} vs {u.shape}")
    n = resolution_of(u)
    err = u_hat - u
    ref = l2_norm(u)
    if np.any(ref == 0):
        raise DegenerateReference("reference field has zero L2 norm")
    w = energy_weights(n, metric)[..., None]
    err_hat, u_hat_spec = fft_forward(err), fft_forward(u)
    e_num = np.sqrt(np.sum(np.abs(w * err_hat) ** 2, axis=(-3, -2, -1)))
    e_den = np.sqrt(np.sum(np.abs(w * u_hat_spec) ** 2, axis=(-3, -2, -1)))
    return {
        "mse": float(np.mean(err * err)),
        "rel_l2": float(np.mean(l2_norm(err) / ref)),
        "rel_energy": float(np.mean(e_num / e_den)),
    }


# ---------------------------------------------------------------------------
# gauge action


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotate_frame(f: np.ndarray, theta: float) -> np.ndarray:
    """Frame coefficients after rotating the frame by ``theta``: ``R(theta)^T f(x)``."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty_like(f)
    out[..., 0] = c * f[..., 0] + s * f[..., 1]
    out[..., 1] = -s * f[..., 0] + c * f[..., 1]
    return out


def to_complex(f: np.ndarray) -> np.ndarray:
    """Pack the two channels as ``f0 + i f1``; frame rotation becomes ``exp(-i theta)``.

    The result may be a view sharing memory with ``f``; treat it as read-only.
    """
    if f.shape[-1] != 2:
        raise ValueError(f"expected two channels, got {f.shape[-1]}")
    return np.ascontiguousarray(f, dtype=np.float64).view(np.complex128)[..., 0]


def from_complex(z: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_complex`, as a channel-last real view where possible."""
    z = np.ascontiguousarray(z, dtype=np.complex128)
    return z.view(np.float64).reshape(z.shape + (2,))


# ---------------------------------------------------------------------------
# resolution transfer


def _band_indices(n_coarse: int, n_fine: int):
    """Index arrays mapping coarse-grid wavenumbers into the fine lattice."""
    kc = np.rint(sfft.fftfreq(n_coarse) * n_coarse).astype(np.int64)
    return kc, np.mod(kc, n_fine)


def _check_pair(n_coarse: int, n_fine: int):
    n_coarse, n_fine = check_resolution(n_coarse), check_resolution(n_fine)
    if n_coarse >= n_fine:
        raise InvalidResolutionPair(f"coarse grid {n_coarse} must be smaller than fine grid {n_fine}")
    return n_coarse, n_fine


def restrict(f: np.ndarray, n_coarse: int) -> np.ndarray:
    """Spectral restriction onto an ``n_coarse`` grid.

    Keeps the modes with ``|k1|, |k2| < n_coarse/2``; the coarse Nyquist lines
    are left empty.
    """
    n_fine = resolution_of(f)
    n_coarse, n_fine = _check_pair(n_coarse, n_fine)
    kc, idx = _band_indices(n_coarse, n_fine)
    F = fft_forward(f)
    C = F[..., idx[:, None], idx[None, :], :].copy()
    nyq = kc == -n_coarse // 2
    C[..., nyq, :, :] = 0.0
    C[..., :, nyq, :] = 0.0
    return fft_inverse(C)


def prolong(f: np.ndarray, n_fine: int) -> np.ndarray:
    """Spectral prolongation (zero padding) onto an ``n_fine`` grid.

    Coarse Nyquist content is split evenly between ``+n_coarse/2`` and
    ``-n_coarse/2`` so the result is the real trigonometric interpolant and
    agrees with ``f`` at the coarse nodes.
    """
    n_coarse = resolution_of(f)
    n_coarse, n_fine = _check_pair(n_coarse, n_fine)
    C = fft_forward(f)
    h = n_coarse // 2
    # split both Nyquist lines; the corner gets split in both directions
    C_ext = np.zeros(C.shape[:-3] + (n_coarse + 1, n_coarse + 1, 2), dtype=complex)
    ext = np.arange(-h, h + 1)
    src = np.mod(ext, n_coarse)
    C_ext[...] = C[..., src[:, None], src[None, :], :]
    edge = np.abs(ext) == h
    C_ext[..., edge, :, :] *= 0.5
    C_ext[..., :, edge, :] *= 0.5
    F = np.zeros(C.shape[:-3] + (n_fine, n_fine, 2), dtype=complex)
    dst = np.mod(ext, n_fine)
    F[..., dst[:, None], dst[None, :], :] = C_ext
    return fft_inverse(F)


def band_limit(f: np.ndarray, n_band: int) -> np.ndarray:
    """Zero every mode outside ``|k1|, |k2| < n_band/2`` (same grid)."""
    n = resolution_of(f)
    k1, k2 = wavenumbers(n)
    keep = (np.abs(k1) < n_band // 2) & (np.abs(k2) < n_band // 2)
    return fft_inverse(fft_forward(f) * keep[..., None])
