"""Fundamental systems with exponential asymptotics, canonical scaling and
rho-derivative families.

Every system is stored in anchored bracket form: solution j is

    z_j(x) = exp(i rho eps_j (x - xhat_j)) * T_0j(x),
    D^m z_j(x) = (rho eps_j)^m T_mj(x) exp(i rho eps_j (x - xhat_j)),

with anchor xhat_j = 0 for the p decaying directions and 1 for the growing
ones, so every stored quantity and every exponent evaluated on [0, 1] stays
O(1) at any |rho| in the closed sector. This reproduces the canonical
scaling (unscaled decaying solutions, growing ones divided by their value
growth across the interval) without ever forming an overflowing factor.

Three constructors:
  * exact mode (all p_k = 0): T = 1 identically;
  * constant coefficients: characteristic-root quasi-exponentials, exact;
  * variable coefficients: fixed-point iteration on the Birkhoff integral
    equation. Each correction mode is integrated from the end that keeps its
    kernel bounded (forward if it decays relative to solution j, backward
    otherwise), so no direction is ever integrated against its growth. The
    oscillatory factors are integrated exactly per panel (cubic-in-the-
    smooth-part Filon moments), which keeps the grid requirement independent
    of the contraction analysis and mild in |rho|.

A Runge-Kutta fallback on the peeled companion system is available as
method="rk" for cross-checks at moderate |rho|; it loses absolute accuracy
like exp(2 Im(rho eps) ) deep in the sector, which is why it is not the
default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .config import DEFAULTS
from .errors import NumericalError, SpecError
from .model import DifferentialExpression, zero_expression
from .quadrature import (cubic_interpolate, exp_moments, gauss_legendre,
                         panel_cubic_coefficients, safe_exp)
from .regularity import SectorIndex, p_value, unit_roots

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class RhoPoint:
    """A spectral parameter: rho = lambda^(1/n) on the branch arg lambda in [0, 2pi)."""

    rho: complex
    lam: complex
    n: int

    def __post_init__(self):
        if self.lam == 0:
            raise SpecError("lambda must be nonzero")
        if abs(self.rho ** self.n - self.lam) > 1e-12 * abs(self.lam):
            raise SpecError("rho**n does not reproduce lambda to 1e-12")

    @property
    def branch_arg(self) -> float:
        return float(np.angle(self.lam)) % TWO_PI

    @property
    def sector(self) -> int:
        return sector_of(self.rho, self.n)


def rho_from_lambda(lam: complex, n: int) -> RhoPoint:
    """Principal characteristic value of lambda: arg rho = arg(lambda)/n in [0, 2pi/n)."""
    lam = complex(lam)
    if lam == 0:
        raise SpecError("lambda must be nonzero")
    arg = float(np.angle(lam)) % TWO_PI
    rho = abs(lam) ** (1.0 / n) * np.exp(1j * arg / n)
    return RhoPoint(rho=complex(rho), lam=lam, n=n)


def rho_point(rho: complex, n: int) -> RhoPoint:
    rho = complex(rho)
    return RhoPoint(rho=rho, lam=rho ** n, n=n)


def sector_of(rho: complex, n: int) -> int:
    """Sector index of rho in S_0 cup S_1; values outside raise."""
    a = float(np.angle(rho)) % TWO_PI
    if a > TWO_PI - 1e-12:
        a = 0.0
    if a <= np.pi / n:
        return 0
    if a <= TWO_PI / n + 1e-12:
        return 1
    raise SpecError(f"arg rho = {a:.6f} lies outside S_0 cup S_1 for n = {n}")


class FundamentalSystem:
    """Anchored fundamental system; subclasses fill in the bracket functions."""

    mode = "abstract"

    def __init__(self, expr: DifferentialExpression, rho: RhoPoint, sector: SectorIndex,
                 warnings: tuple = ()):
        if sector.n != expr.order:
            raise SpecError("sector order mismatch")
        self.expr = expr
        self.rho = rho
        self.sector = sector
        self.n = expr.order
        self.p = sector.p
        self.eps = unit_roots(self.n)
        self.rho_eps = rho.rho * self.eps
        self.anchors = np.where(np.arange(self.n) < self.p, 0.0, 1.0)
        self.warnings = tuple(warnings)

    # bracket values T[m, j, i] at points x (shape (n, n, len(x)))
    def bracket(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def uniform_bracket(self) -> bool:
        """True when T does not depend on x (exact exponential mode)."""
        return False

    def anchored_exponent(self, x: np.ndarray) -> np.ndarray:
        """exp(i rho eps_j (x - xhat_j)), shape (n, len(x)); Re exponent <= O(1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return safe_exp(1j * self.rho_eps[:, None] * (x[None, :] - self.anchors[:, None]))

    def z_derivs(self, x) -> np.ndarray:
        """D^m z_j(x) in canonical scaling, shape (n, n, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = self.bracket(x)
        powers = self.rho_eps[None, :] ** np.arange(self.n)[:, None]  # (m, j)
        return powers[:, :, None] * t * self.anchored_exponent(x)[None, :, :]

    def derivs(self, x) -> np.ndarray:
        """D^m y_j(x) in the unscaled normalization y_j ~ exp(i rho eps_j x).

        Restores the anchor factor, so this can overflow for large Im(rho eps);
        intended for moderate rho and tests.
        """
        scale = np.exp(1j * self.rho_eps * self.anchors)
        return self.z_derivs(x) * scale[None, :, None]

    def bracket_matrix(self, x) -> np.ndarray:
        """Mhat[k, j] = eps_j^k T_kj(x), shape (len(x), n, n); O(1)-conditioned."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = self.bracket(x)
        vander = self.eps[None, :] ** np.arange(self.n)[:, None]
        return np.moveaxis(vander[:, :, None] * t, 2, 0)

    def tilde_bracket(self, x) -> np.ndarray:
        """F_t(x) = n eps_t^(n-1) (Mhat^-1)_{t, n-1}; the bracket of u_t. Shape (n, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.uniform_bracket:
            inv = np.linalg.inv(self.bracket_matrix(x[:1])[0])
            col = inv[:, self.n - 1]
            out = np.repeat(col[:, None], x.size, axis=1)
        else:
            inv = np.linalg.inv(self.bracket_matrix(x))
            out = inv[:, :, self.n - 1].T
        return self.n * (self.eps ** (self.n - 1))[:, None] * out

    def wronskian_scaled(self, x) -> np.ndarray:
        """det Mhat(x); vanishing means a degenerate system (scale-free test)."""
        return np.linalg.det(self.bracket_matrix(x))

    def wronskian(self, x) -> np.ndarray:
        """The unscaled Wronskian det[D^k y_j(x)]; moderate rho only."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = self.derivs(x)
        return np.linalg.det(np.moveaxis(d, 2, 0))

    def tilde_y(self, j: int, x) -> np.ndarray:
        """Cofactor ratio W_j / W for the unscaled system.

        Asymptotically exp(-i rho eps_j x) / (n (rho eps_j)^(n-1)).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        fac = self.tilde_bracket(x)[j]
        expo = np.exp(-1j * self.rho_eps[j] * x)
        return fac * expo / (self.n * self.rho_eps[j] ** (self.n - 1))


class ExactSystem(FundamentalSystem):
    """p_k = 0: y_j = exp(i rho eps_j x) exactly."""

    mode = "exact"

    def __init__(self, rho: RhoPoint, sector: SectorIndex):
        super().__init__(zero_expression(sector.n), rho, sector)

    @property
    def uniform_bracket(self) -> bool:
        return True

    def bracket(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.ones((self.n, self.n, x.size), dtype=complex)


class ConstantSystem(FundamentalSystem):
    """Constant p_k: exact quasi-exponentials exp(i mu_j x) with the
    characteristic roots mu_j matched to the free directions rho eps_j."""

    mode = "constant"

    def __init__(self, expr: DifferentialExpression, rho: RhoPoint, sector: SectorIndex):
        values = expr.constant_values
        if values is None:
            raise SpecError("ConstantSystem requires constant coefficients")
        super().__init__(expr, rho, sector)
        n = self.n
        # mu^n + sum_k c_k mu^k = rho^n
        poly = np.zeros(n + 1, dtype=complex)
        poly[0] = 1.0
        for k, c in enumerate(values):
            poly[n - k] += c
        poly[n] -= rho.lam
        roots = np.roots(poly)
        self.mu = _match_roots(roots, self.rho_eps)

    def bracket(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ratio = self.mu / self.rho_eps
        shift = np.exp(1j * (self.mu - self.rho_eps)[:, None]
                       * (x[None, :] - self.anchors[:, None]))
        powers = ratio[None, :] ** np.arange(self.n)[:, None]
        return powers[:, :, None] * shift[None, :, :]


def _match_roots(roots: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Assign each characteristic root to its nearest free direction, injectively."""
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(roots[:, None] - targets[None, :])
    rows, cols = linear_sum_assignment(cost)
    out = np.empty_like(targets)
    out[cols] = roots[rows]
    return out


class IntegratedSystem(FundamentalSystem):
    """Variable coefficients: Birkhoff integral equation on a uniform grid."""

    mode = "integrated"

    def __init__(self, expr: DifferentialExpression, rho: RhoPoint, sector: SectorIndex,
                 grid: int, table: np.ndarray, warnings: tuple):
        super().__init__(expr, rho, sector, warnings)
        self.grid_panels = grid
        self.grid = np.linspace(0.0, 1.0, grid + 1)
        self._table = table  # (n_deriv, n_sol, grid+1)

    def bracket(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size == self.grid.size and np.allclose(x, self.grid, atol=1e-15):
            return self._table
        return cubic_interpolate(self._table, x)


def exact_fss(n: int, rho: RhoPoint, nu: int | None = None) -> ExactSystem:
    """Fundamental system for zero coefficients (exponential solutions)."""
    if nu is None:
        nu = rho.sector
    return ExactSystem(rho, SectorIndex(n, nu))


def make_system(expr: DifferentialExpression, rho: RhoPoint, nu: int | None = None,
                **kwargs) -> FundamentalSystem:
    """Dispatch to the cheapest valid constructor for the expression."""
    if nu is None:
        nu = rho.sector
    sector = SectorIndex(expr.order, nu)
    if expr.is_zero:
        return ExactSystem(rho, sector)
    if expr.constant_values is not None:
        return ConstantSystem(expr, rho, sector)
    return integrated_fss(expr, rho, nu, **kwargs)


def integrated_fss(expr: DifferentialExpression, rho: RhoPoint, nu: int | None = None,
                   grid: int | None = None, tol: float = DEFAULTS.fss_tol,
                   max_iter: int = DEFAULTS.fss_max_iter,
                   method: str = "picard") -> IntegratedSystem:
    """Construct a Birkhoff fundamental system for variable coefficients.

    Args:
        expr: the differential expression (order n, coefficients p_k).
        rho: spectral point; |rho| below the asymptotic radius R0 only sets a
            warning flag, the construction itself stays well posed as long as
            the iteration contracts.
        nu: sector index (defaults to the sector of rho).
        grid: number of uniform panels (default from config, raised with |rho|).
        tol: fixed-point stopping tolerance on the bracket table.
        max_iter: iteration cap; exceeding it raises unless the residual is
            already near roundoff.
        method: "picard" (default, stable at any |rho|) or "rk"
            (companion-system Runge-Kutta cross-check for moderate |rho|).

    Returns:
        IntegratedSystem with warnings ("below_r0", "slow_convergence") when
        applicable.
    """
    if nu is None:
        nu = rho.sector
    sector = SectorIndex(expr.order, nu)
    n = expr.order
    if n < 2:
        raise SpecError("integrated systems need order >= 2")
    if grid is None:
        grid = max(DEFAULTS.fss_grid, _next_pow2(6.0 * abs(rho.rho)))

    warnings = []
    if abs(rho.rho) < expr.r0():
        warnings.append("below_r0")

    if method == "rk":
        table = _rk_table(expr, rho, sector, grid)
        return IntegratedSystem(expr, rho, sector, grid, table, tuple(warnings))
    if method != "picard":
        raise SpecError(f"unknown fss method {method!r}")

    table, converged = _picard_table(expr, rho, sector, grid, tol, max_iter)
    if not converged:
        warnings.append("slow_convergence")
    return IntegratedSystem(expr, rho, sector, grid, table, tuple(warnings))


def _next_pow2(x: float) -> int:
    m = 1
    while m < x:
        m *= 2
    return m


def _picard_table(expr, rho, sector, grid, tol, max_iter):
    n = expr.order
    p = sector.p
    eps = unit_roots(n)
    rho_eps = rho.rho * eps
    h = 1.0 / grid
    x = np.linspace(0.0, 1.0, grid + 1)
    pk = expr.eval_coefficients(x)  # (n-1, grid+1)
    k_idx = np.arange(n)

    table = np.ones((n, n, grid + 1), dtype=complex)
    converged = True
    for j in range(n):
        mu = 1j * (rho_eps - rho_eps[j])  # relative exponents of the correction modes
        forward = mu.real <= 0.0
        forward[j] = j < p  # tie on the diagonal follows the anchor
        # C[m, k]: prefactor of mode m in the k-th derivative bracket
        c_mk = (1j / n) * (eps[:, None] / eps[j]) ** k_idx[None, :] \
            * rho_eps[:, None] ** (1 - n)
        weights = [_panel_weights(mu[m], h, bool(forward[m])) for m in range(n)]
        powers_j = rho_eps[j] ** np.arange(max(n - 1, 0))

        t = np.ones((n, grid + 1), dtype=complex)
        ok = False
        for _ in range(max_iter):
            if pk.shape[0]:
                s = np.einsum("ki,k->i", pk * t[: n - 1], powers_j)
            else:
                s = np.zeros(grid + 1, dtype=complex)
            coeffs = panel_cubic_coefficients(s)  # (grid, 4)
            phi = np.empty((n, grid + 1), dtype=complex)
            for m in range(n):
                phi[m] = _mode_integral(coeffs, weights[m], mu[m], h, bool(forward[m]))
            t_new = 1.0 + c_mk.T @ phi
            delta = np.max(np.abs(t_new - t))
            t = t_new
            if delta < tol * max(1.0, float(np.max(np.abs(t)))):
                ok = True
                break
        if not ok:
            converged = False
        # normalize to value 1 at the anchor; the fixed point is the exact
        # solution only up to a 1 + O(1/rho^2) scalar
        anchor_idx = 0 if j < p else grid
        t /= t[0, anchor_idx]
        table[:, j, :] = t
    return table, converged


def _panel_weights(mu: complex, h: float, forward: bool) -> np.ndarray:
    """Weights w_r so that the panel integral is h * sum_r c_r w_r."""
    if forward:
        return np.exp(mu * h) * exp_moments(-mu * h)
    return exp_moments(-mu * h)


def _mode_integral(coeffs: np.ndarray, w: np.ndarray, mu: complex, h: float,
                   forward: bool) -> np.ndarray:
    """phi(x_i) = -int_a^x exp(mu (x - xi)) s(xi) dxi on the grid, stable direction."""
    q = h * (coeffs @ w)  # per-panel local integrals
    if forward:
        decay = np.exp(mu * h)  # |.| <= 1 by the direction choice
        acc = lfilter([1.0], [1.0, -decay], q)
        return -np.concatenate(([0.0], acc))
    decay = np.exp(-mu * h)
    acc = lfilter([1.0], [1.0, -decay], q[::-1])[::-1]
    return np.concatenate((acc, [0.0]))


def _rk_table(expr, rho, sector, grid):
    from scipy.integrate import solve_ivp

    n = expr.order
    p = sector.p
    eps = unit_roots(n)
    rho_eps = rho.rho * eps
    x_grid = np.linspace(0.0, 1.0, grid + 1)
    table = np.empty((n, n, grid + 1), dtype=complex)
    shift = np.eye(n, k=1, dtype=complex)
    shift[n - 1, 0] = 1.0
    shift -= np.eye(n)

    for j in range(n):
        rej = rho_eps[j]
        scalars = rej ** (np.arange(n - 1) + 1 - n)

        def rhs(x, v, rej=rej, scalars=scalars):
            out = 1j * rej * (shift @ v)
            if n >= 2:
                pvals = np.array([c(x) for c in expr.coefficients], dtype=complex)
                out[n - 1] -= 1j * np.sum(pvals * scalars * v[: n - 1])
            return out

        if j < p:
            span, y0 = (0.0, 1.0), np.ones(n, dtype=complex)
            ts = x_grid
        else:
            span, y0 = (1.0, 0.0), np.ones(n, dtype=complex)
            ts = x_grid[::-1]
        sol = solve_ivp(rhs, span, y0, t_eval=ts, method="DOP853",
                        rtol=1e-10, atol=1e-12)
        if not sol.success:
            raise NumericalError(f"companion integration failed: {sol.message}")
        vals = sol.y if j < p else sol.y[:, ::-1]
        table[:, j, :] = vals
    return table


# ---------------------------------------------------------------------------
# canonical systems
# ---------------------------------------------------------------------------

class CanonicalSystem:
    """Canonically scaled solutions z_k and the paired functions u_t.

    z_k is the anchored solution itself (decaying solutions keep their x = 0
    normalization, growing ones are normalized at x = 1); u_t is the scaled
    cofactor ratio with asymptotics exp(i rho eps_t (1 - xi)) for t < p and
    exp(-i rho eps_t xi) for t >= p.
    """

    def __init__(self, fs: FundamentalSystem):
        self.fs = fs
        self.n = fs.n
        self.p = fs.p
        self.rho = fs.rho
        self.eps = fs.eps
        self.rho_eps = fs.rho_eps
        self.sector = fs.sector

    def z_derivs(self, x) -> np.ndarray:
        return self.fs.z_derivs(x)

    def z(self, x) -> np.ndarray:
        """z_k(x), shape (n, len(x))."""
        return self.fs.z_derivs(x)[0]

    def z_end_derivs(self) -> tuple[np.ndarray, np.ndarray]:
        """(D^m z_k(0), D^m z_k(1)), each (n_deriv, n_sol)."""
        d = self.fs.z_derivs(np.array([0.0, 1.0]))
        return d[:, :, 0], d[:, :, 1]

    def u(self, xi) -> np.ndarray:
        """u_t(xi), shape (n, len(xi)); bounded on [0, 1] in the closed sector."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        fac = self.fs.tilde_bracket(xi)
        sharp = np.where(np.arange(self.n) < self.p, 1.0, 0.0)
        expo = safe_exp(1j * self.rho_eps[:, None] * (sharp[:, None] - xi[None, :]))
        return fac * expo

    def mode_products(self, x, xi) -> np.ndarray:
        """y_k(x) tilde_y_k(xi) n (rho eps_k)^(n-1), shape (n, len(x), len(xi)).

        Only the boundedness side of each mode is meant to be consumed:
        k < p for x > xi and k >= p for x < xi.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        t0 = self.fs.bracket(x)[0]  # (n, len(x))
        fac = self.fs.tilde_bracket(xi)  # (n, len(xi))
        diff = x[None, :, None] - xi[None, None, :]
        expo = safe_exp(1j * self.rho_eps[:, None, None] * diff)
        return t0[:, :, None] * fac[:, None, :] * expo

    def z_norm(self, k: int, quad_points: int = DEFAULTS.quad_points) -> float:
        xq, wq = gauss_legendre(quad_points)
        vals = self.z(xq)[k]
        return float(np.sqrt(np.sum(wq * np.abs(vals) ** 2)))

    def u_norm(self, t: int, quad_points: int = DEFAULTS.quad_points) -> float:
        xq, wq = gauss_legendre(quad_points)
        vals = self.u(xq)[t]
        return float(np.sqrt(np.sum(wq * np.abs(vals) ** 2)))


def canonical(fs: FundamentalSystem) -> CanonicalSystem:
    return CanonicalSystem(fs)


def omega(factory, rho: RhoPoint, l: int, q: int, x,
          contour_points: int = DEFAULTS.contour_points,
          radius: float | None = None) -> np.ndarray:
    """Scaled rho-derivative family omega_lq(x) = (1/q!) d^q/drho^q z_l(x).

    Args:
        factory: callable rho_complex -> CanonicalSystem at that rho (fixed
            sector). For q = 0 it is called once at rho itself.
        rho: center point.
        l: solution index.
        q: derivative order, 0 <= q <= 5.
        x: evaluation points.
        contour_points: trapezoid nodes of the Cauchy circle.
        radius: circle radius (default min(0.25, |rho|/20)).

    The derivative is taken as a Cauchy integral over a small circle, which
    is uniformly accurate in q; finite differences lose h^-q in noise.
    """
    if q < 0 or q > 5:
        raise SpecError("derivative order q must be in [0, 5]")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if q == 0:
        return factory(rho.rho).z(x)[l]
    r = radius if radius is not None else min(0.25, abs(rho.rho) / 20.0)
    theta = 2.0 * np.pi * np.arange(contour_points) / contour_points
    acc = np.zeros(x.size, dtype=complex)
    for th in theta:
        zeta = rho.rho + r * np.exp(1j * th)
        vals = factory(zeta).z(x)[l]
        acc += vals * np.exp(-1j * q * th)
    return acc / (contour_points * r ** q)


def exact_omega(cs: CanonicalSystem, l: int, q: int, x) -> np.ndarray:
    """Closed-form omega_lq for the exact exponential system."""
    if cs.fs.mode != "exact":
        raise SpecError("exact_omega requires the exact mode")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    anchor = 0.0 if l < cs.p else 1.0
    base = np.exp(1j * cs.rho_eps[l] * (x - anchor))
    from math import factorial

    return (1j * cs.eps[l] * (x - anchor)) ** q / factorial(q) * base
