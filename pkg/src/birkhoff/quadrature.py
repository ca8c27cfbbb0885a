"""Shared numerical kernels: quadrature nodes, exponential panel moments,
uniform cubic interpolation and operator-norm estimators."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    t, w = np.polynomial.legendre.leggauss(m)
    return (t + 1.0) / 2.0, w / 2.0


def safe_exp(w: np.ndarray) -> np.ndarray:
    """exp with the real part clipped to the double range.

    Evaluations outside valid regions (stray Newton iterates, masked kernel
    sides) saturate instead of raising overflow warnings; genuine uses keep
    Re(w) <= O(1).
    """
    w = np.asarray(w, dtype=complex)
    return np.exp(np.clip(w.real, -745.0, 709.0) + 1j * w.imag)


def l2_norm(values: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(weights * np.abs(values) ** 2)))


def inner(u: np.ndarray, v: np.ndarray, weights: np.ndarray) -> complex:
    return complex(np.sum(weights * u * np.conj(v)))


def exp_moments(beta: complex, rmax: int = 3) -> np.ndarray:
    """Moments m_r = int_0^1 e^(beta*t) t^r dt for r = 0..rmax.

    Uses the upward recurrence m_r = (e^beta - r m_{r-1})/beta, which is
    stable for the |beta| >= 0.5 regime it is called in; small |beta|
    switches to the series sum_l beta^l / (l! (r+l+1)).
    """
    out = np.empty(rmax + 1, dtype=complex)
    if abs(beta) < 0.5:
        for r in range(rmax + 1):
            term = 1.0 / (r + 1.0)
            total = term
            fact = 1.0
            power = 1.0 + 0j
            for l in range(1, 40):
                fact *= l
                power *= beta
                term = power / (fact * (r + l + 1.0))
                total += term
                if abs(term) < 1e-18 * max(1.0, abs(total)):
                    break
            out[r] = total
        return out
    eb = np.exp(beta)
    out[0] = (eb - 1.0) / beta
    for r in range(1, rmax + 1):
        out[r] = (eb - r * out[r - 1]) / beta
    return out


# Newton-type coefficients of the cubic through values at local nodes
# tau = -1, 0, 1, 2; row r gives the tau^r coefficient.
_CUBIC_FROM_STENCIL = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [-1.0 / 3.0, -1.0 / 2.0, 1.0, -1.0 / 6.0],
        [1.0 / 2.0, -1.0, 1.0 / 2.0, 0.0],
        [-1.0 / 6.0, 1.0 / 2.0, -1.0 / 2.0, 1.0 / 6.0],
    ]
)


def panel_cubic_coefficients(samples: np.ndarray) -> np.ndarray:
    """Per-panel cubic coefficients from uniform-grid samples.

    samples has shape (..., M+1); returns (..., M, 4) with c[..., i, r] the
    tau^r coefficient on panel i, tau in [0, 1] local coordinates. Interior
    panels use the centered 4-point stencil; the first and last panel reuse
    their neighbor's cubic (shifted), which keeps the same order.
    """
    m = samples.shape[-1] - 1
    if m < 3:
        raise ValueError("need at least 3 panels")
    stacked = np.stack(
        [samples[..., 0:m - 2], samples[..., 1:m - 1], samples[..., 2:m], samples[..., 3:m + 1]],
        axis=-1,
    )
    interior = stacked @ _CUBIC_FROM_STENCIL.T  # (..., M-2, 4), panels 1..M-2
    coeffs = np.empty(samples.shape[:-1] + (m, 4), dtype=samples.dtype)
    coeffs[..., 1:m - 1, :] = interior
    # shift the cubic of panel 1 to panel 0: tau_0 = tau_1 - 1
    coeffs[..., 0, :] = _shift_cubic(interior[..., 0, :], -1.0)
    coeffs[..., m - 1, :] = _shift_cubic(interior[..., m - 3, :], 1.0)
    return coeffs


def _shift_cubic(c: np.ndarray, offset: float) -> np.ndarray:
    """Re-center sum c_r tau^r as a polynomial in (tau - offset)... evaluated at tau+offset."""
    out = np.empty_like(c)
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    a = offset
    out[..., 0] = c0 + c1 * a + c2 * a * a + c3 * a * a * a
    out[..., 1] = c1 + 2 * c2 * a + 3 * c3 * a * a
    out[..., 2] = c2 + 3 * c3 * a
    out[..., 3] = c3
    return out


def cubic_interpolate(grid_values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate uniform-grid samples on [0, 1] at points x by local cubics.

    grid_values: (..., M+1); x: (K,). Returns (..., K).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = grid_values.shape[-1] - 1
    idx = np.clip((x * m).astype(int), 0, m - 1)
    base = np.clip(idx - 1, 0, m - 3)
    tau = x * m - base - 1.0  # local coordinate of the centered stencil
    nodes = np.stack([grid_values[..., base + k] for k in range(4)], axis=-1)
    coeffs = nodes @ _CUBIC_FROM_STENCIL.T
    return ((coeffs[..., 3] * tau + coeffs[..., 2]) * tau + coeffs[..., 1]) * tau + coeffs[..., 0]


def operator_norms(kernel: np.ndarray, weights_x: np.ndarray, weights_xi: np.ndarray,
                   iterations: int = 30, seed: int = 0x5EED) -> tuple[float, float]:
    """(Hilbert-Schmidt bound, power-iteration estimate) of an integral operator.

    kernel[i, j] = K(x_i, xi_j) on the given quadrature grids. HS dominates
    the operator norm, so the pair brackets it.
    """
    hs = float(np.sqrt(np.abs(weights_x @ (np.abs(kernel) ** 2) @ weights_xi)))
    a = kernel * np.sqrt(weights_xi)[None, :] * np.sqrt(weights_x)[:, None]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[1]) + 1j * rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    ah = a.conj().T
    sigma = 0.0
    for _ in range(iterations):
        w = ah @ (a @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return hs, 0.0
        v = w / nw
        sigma = nw
    return hs, float(np.sqrt(sigma))
