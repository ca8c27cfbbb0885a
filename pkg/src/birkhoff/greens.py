"""Green's function of the boundary value problem in two equivalent forms,
the modified characteristic matrix and its large-rho limit.

With Delta(rho) the characteristic determinant, z^T the row of canonical
solutions at x, H(xi) the boundary form of the truncated kernel and g the
scaled one-sided kernel, the Green's function is the bordered determinant

    G(x, xi, rho) = (-1)^n / (n rho^(n-1) Delta) * i * det [[z^T, g], [Dmat, H]]

and equivalently the rank-n expansion

    G = g0 - (2 pi i / (n rho^(n-1))) sum_{t,k} a_tk z_k(x) u_t(xi),

where column t of the modified characteristic matrix solves
Dmat A_t = sign_t (eps_t / 2pi) [B_t^#], sign_t = +1 and # = 1 for the
decaying directions t < p, sign_t = -1 and # = 0 otherwise. The columns are
obtained by one batched linear solve; Cramer ratios would give the same
values with worse conditioning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULTS
from .errors import AtCharacteristicValue, NumericalError, SpecError
from .fss import CanonicalSystem, RhoPoint, canonical, make_system
from .model import DifferentialExpression, NormalizedBoundaryConditions, complex_pair, matrix_pairs
from .quadrature import gauss_legendre, operator_norms, safe_exp
from .regularity import classify, hadamard_scale, theta_matrix, unit_roots
from .spectrum import CharacteristicData, boundary_form_V, char_matrix, row_scaling


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def g0_kernel(cs: CanonicalSystem, x, xi) -> np.ndarray:
    """Particular-solution kernel g0(x, xi) on the grid x cross xi.

    i * (decaying modes) for x > xi and -i * (growing modes) for x < xi; the
    diagonal uses the x > xi branch. The induced integral operator has norm
    O(|rho|^-n).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    products = cs.mode_products(x, xi)  # (n, X, Xi)
    prefactors = 1.0 / (cs.n * cs.rho_eps ** (cs.n - 1))
    upper = np.tensordot(prefactors[: cs.p], products[: cs.p], axes=(0, 0))
    lower = np.tensordot(prefactors[cs.p:], products[cs.p:], axes=(0, 0))
    mask = x[:, None] >= xi[None, :]
    return 1j * np.where(mask, upper, -lower)


def bracket_boundary_vectors(nbc: NormalizedBoundaryConditions, cs: CanonicalSystem) -> np.ndarray:
    """Finite-rho bracket vectors [B_t^#], one column per t.

    For t < p this is the x = 1 part of V applied to z_t with the growth
    factor cancelled; for t >= p the x = 0 part. Both reduce to scaled
    bracket values, so the evaluation never forms a large exponential.
    """
    tend = cs.fs.bracket(np.array([0.0, 1.0]))  # (m, t, 2)
    powers = cs.rho_eps[None, :] ** np.arange(cs.n)[:, None]  # (m, t)
    scale = row_scaling(nbc, cs.rho.rho)[:, None]
    at_zero = scale * (nbc.a @ (powers * tend[:, :, 0]))
    at_one = scale * (nbc.b @ (powers * tend[:, :, 1]))
    take_one = np.arange(cs.n) < cs.p
    return np.where(take_one[None, :], at_one, at_zero)


def h_vector(nbc: NormalizedBoundaryConditions, cs: CanonicalSystem, xi) -> np.ndarray:
    """H(xi) = V_x(g), expanded as sum_t (-1)^(1-#) [B_t^#] eps_t u_t(xi).

    Shape (n, len(xi)).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    brackets = bracket_boundary_vectors(nbc, cs)  # (rows, t)
    signs = np.where(np.arange(cs.n) < cs.p, 1.0, -1.0)
    u = cs.u(xi)  # (t, K)
    return (brackets * (signs * cs.eps)[None, :]) @ u


def h_vector_direct(nbc: NormalizedBoundaryConditions, cs: CanonicalSystem, xi) -> np.ndarray:
    """H(xi) evaluated from the definition: the boundary form applied to g over x.

    Independent route for verification; the x = 0 values use the x < xi
    branch of the kernel, the x = 1 values the x > xi branch.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    n, p = cs.n, cs.p
    # D^m y_k tilde_y_k n (rho eps_k)^(n-1) = powers * T * F * exponent
    exps = cs.rho_eps[None, :] ** (np.arange(n)[:, None] + 1 - n)  # (m, k)
    t_end = cs.fs.bracket(np.array([0.0, 1.0]))  # (m, k, 2)
    tilde = cs.fs.tilde_bracket(xi)  # (k, K)
    scale = row_scaling(nbc, cs.rho.rho)[:, None]
    rho_pow = cs.rho.rho ** (n - 1)

    expo0 = safe_exp(-1j * cs.rho_eps[:, None] * xi[None, :])  # (k, K)
    dmg0 = -rho_pow * np.einsum("mk,kK->mK",
                                exps[:, p:] * t_end[:, p:, 0],
                                tilde[p:] * expo0[p:])

    expo1 = safe_exp(1j * cs.rho_eps[:, None] * (1.0 - xi[None, :]))
    dmg1 = rho_pow * np.einsum("mk,kK->mK",
                               exps[:, :p] * t_end[:, :p, 1],
                               tilde[:p] * expo1[:p])

    return scale * (nbc.a @ dmg0 + nbc.b @ dmg1)


# ---------------------------------------------------------------------------
# modified characteristic matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModifiedCharacteristicMatrix:
    rho: RhoPoint
    columns: np.ndarray  # columns[:, t] = A_t, i.e. columns[k, t] = a_tk
    residual: float
    char: CharacteristicData

    def a_tk(self, t: int, k: int) -> complex:
        return complex(self.columns[k, t])

    @property
    def entries(self) -> np.ndarray:
        """a[t, k] with the row index t of the defining coefficients."""
        return self.columns.T

    @property
    def frobenius(self) -> float:
        return float(np.linalg.norm(self.columns))

    @property
    def coefficient_sum(self) -> float:
        """sum |a_tk|^2, the boundedness functional."""
        return float(np.sum(np.abs(self.columns) ** 2))


def mcm(nbc: NormalizedBoundaryConditions, cs: CanonicalSystem,
        det_floor: float = 1e-12) -> ModifiedCharacteristicMatrix:
    """Solve the defining system Dmat A_t = (-1)^(1-#) (eps_t/2pi) [B_t^#] for all t."""
    data = char_matrix(nbc, cs)
    scale = hadamard_scale(data.matrix)
    if abs(data.det) <= det_floor * max(scale, 1e-300):
        raise AtCharacteristicValue("characteristic matrix is singular at this rho")
    signs = np.where(np.arange(cs.n) < cs.p, 1.0, -1.0)
    rhs = bracket_boundary_vectors(nbc, cs) * (signs * cs.eps / (2.0 * math.pi))[None, :]
    cols = np.linalg.solve(data.matrix, rhs)
    residual = float(np.max(np.abs(data.matrix @ cols - rhs)))
    if residual > 1e-10 * max(1.0, float(np.max(np.abs(rhs)))):
        raise NumericalError(f"mcm solve residual {residual:.2e} above tolerance")
    return ModifiedCharacteristicMatrix(rho=cs.rho, columns=cols, residual=residual, char=data)


@dataclass(frozen=True)
class LimitMatrix:
    a_inf: np.ndarray
    d_matrix: np.ndarray
    theta_forward: np.ndarray
    theta_swapped: np.ndarray

    def to_document(self) -> dict:
        return {"a_inf": matrix_pairs(self.a_inf), "d": matrix_pairs(self.d_matrix)}


def a_infinity(nbc: NormalizedBoundaryConditions, nu: int,
               theta_tol: float = DEFAULTS.theta_tol) -> LimitMatrix:
    """Limit matrix Theta_p(b0,b1)^-1 Theta_p(b1,b0) D of the mcm.

    D = diag(eps_0..eps_{p-1}, -eps_p..-eps_{n-1}) / (2 pi). Requires the
    forward Theta matrix to be invertible, i.e. a regular problem.
    """
    n = nbc.order
    from .regularity import p_value

    p = p_value(n, nu)
    m_fwd = theta_matrix(nbc, nu)
    m_swp = theta_matrix(nbc, nu, swap=True)
    det = complex(np.linalg.det(m_fwd))
    if abs(det) <= theta_tol * hadamard_scale(m_fwd):
        raise NumericalError("irregular: limit undefined by the invertibility hypotheses")
    eps = unit_roots(n)
    signs = np.where(np.arange(n) < p, 1.0, -1.0)
    d = np.diag(signs * eps / (2.0 * math.pi))
    a_inf = np.linalg.solve(m_fwd, m_swp @ d)
    return LimitMatrix(a_inf=a_inf, d_matrix=d, theta_forward=m_fwd, theta_swapped=m_swp)


# ---------------------------------------------------------------------------
# Green's function
# ---------------------------------------------------------------------------

def greens_kernel_grid(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                       rho: RhoPoint, x, xi, nu: int | None = None,
                       cs: CanonicalSystem | None = None) -> np.ndarray:
    """G(x, xi, rho) on a grid via the rank-n expansion (fast path)."""
    if cs is None:
        cs = canonical(make_system(expr, rho, nu=nu))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    m = mcm(nbc, cs)
    g0 = g0_kernel(cs, x, xi)
    zvals = cs.z(x)  # (k, X)
    uvals = cs.u(xi)  # (t, Xi)
    correction = zvals.T @ m.columns @ uvals  # sum_{t,k} a_tk z_k(x) u_t(xi)
    factor = 2.0 * math.pi * 1j / (cs.n * cs.rho.rho ** (cs.n - 1))
    return g0 - factor * correction


def green(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
          rho: RhoPoint, x, xi, form: str = "determinant",
          nu: int | None = None, cs: CanonicalSystem | None = None) -> np.ndarray:
    """Green's function values at paired points (x_i, xi_i).

    form="determinant" evaluates the bordered determinant; form="expansion"
    the rank-n series. Both agree identically up to roundoff; the pair is
    the built-in consistency check.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if x.shape != xi.shape:
        raise SpecError("x and xi must have matching shapes (paired evaluation)")
    if cs is None:
        cs = canonical(make_system(expr, rho, nu=nu))
    if form == "expansion":
        out = np.empty(x.size, dtype=complex)
        for i in range(x.size):
            out[i] = greens_kernel_grid(nbc, expr, rho, x[i:i + 1], xi[i:i + 1], cs=cs)[0, 0]
        return out
    if form != "determinant":
        raise SpecError(f"unknown Green form {form!r}")

    data = char_matrix(nbc, cs)
    scale = hadamard_scale(data.matrix)
    if abs(data.det) <= 1e-12 * max(scale, 1e-300):
        raise AtCharacteristicValue("rho is a characteristic value")
    n = cs.n
    hvals = h_vector(nbc, cs, xi)  # (n, K)
    zvals = cs.z(x)  # (n, K)
    gvals = np.empty(x.size, dtype=complex)
    for i in range(x.size):
        g_scalar = (n * cs.rho.rho ** (n - 1) / 1j) * g0_kernel(cs, x[i:i + 1], xi[i:i + 1])[0, 0]
        bordered = np.empty((n + 1, n + 1), dtype=complex)
        bordered[0, :n] = zvals[:, i]
        bordered[0, n] = g_scalar
        bordered[1:, :n] = data.matrix
        bordered[1:, n] = hvals[:, i]
        gvals[i] = 1j * np.linalg.det(bordered)
    return (-1.0) ** n * gvals / (n * cs.rho.rho ** (n - 1) * data.det)


def apply_kernel(kernel: np.ndarray, f_vals: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Integral operator application on a quadrature grid."""
    return kernel @ (weights * f_vals)


class GreensKernel:
    """Reusable evaluator of G(x, xi, rho): one system and one mcm per rho."""

    def __init__(self, nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                 rho: RhoPoint, nu: int | None = None):
        self.nbc = nbc
        self.expr = expr
        self.rho = rho
        self.cs = canonical(make_system(expr, rho, nu=nu))
        self.m = mcm(nbc, self.cs)
        self.n = self.cs.n
        self._factor = 2.0 * math.pi * 1j / (self.n * rho.rho ** (self.n - 1))

    def grid(self, x, xi) -> np.ndarray:
        """Expansion-form values on the grid x cross xi."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        g0 = g0_kernel(self.cs, x, xi)
        correction = self.cs.z(x).T @ self.m.columns @ self.cs.u(xi)
        return g0 - self._factor * correction

    def pointwise(self, x, xi, form: str = "expansion") -> np.ndarray:
        return green(self.nbc, self.expr, self.rho, x, xi, form=form, cs=self.cs)

    def apply(self, f, x_out, quad_points: int = DEFAULTS.quad_points) -> np.ndarray:
        """y(x) = int_0^1 G(x, xi) f(xi) dxi with the quadrature split at xi = x.

        The kernel is smooth on each side of the diagonal but only continuous
        across it; splitting restores spectral accuracy.
        """
        x_out = np.atleast_1d(np.asarray(x_out, dtype=float))
        t, w = gauss_legendre(quad_points)
        out = np.empty(x_out.size, dtype=complex)
        for i, xv in enumerate(x_out):
            acc = 0.0 + 0.0j
            if xv > 0.0:
                nodes = xv * t
                vals = self.grid([xv], nodes)[0]
                acc += xv * np.sum(w * vals * np.asarray(f(nodes), dtype=complex))
            if xv < 1.0:
                nodes = xv + (1.0 - xv) * t
                vals = self.grid([xv], nodes)[0]
                acc += (1.0 - xv) * np.sum(w * vals * np.asarray(f(nodes), dtype=complex))
            out[i] = acc
        return out


def solve_bvp_via_green(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                        rho: RhoPoint, f, x_out,
                        quad_points: int = DEFAULTS.quad_points) -> np.ndarray:
    """y(x) = int G(x, xi) f(xi) dxi, the solution of (l - lambda) y = f with U(y) = 0."""
    return GreensKernel(nbc, expr, rho).apply(f, x_out, quad_points=quad_points)


def finite_rank_part(nbc: NormalizedBoundaryConditions, cs: CanonicalSystem,
                     quad_points: int = DEFAULTS.quad_points) -> dict:
    """Norm data of the kernel P(x, xi) = sum a_tk z_k(x) u_t(xi).

    Returns the coefficient functional sum |a_tk|^2, its norm surrogate
    sqrt(sum)/|rho| and the power-iteration operator norm; their ratio is
    the double-sided estimate under test.
    """
    m = mcm(nbc, cs)
    xq, wq = gauss_legendre(quad_points)
    kernel = cs.z(xq).T @ m.columns @ cs.u(xq)
    hs, power = operator_norms(kernel, wq, wq, iterations=DEFAULTS.power_iterations,
                               seed=DEFAULTS.seed)
    surrogate = math.sqrt(m.coefficient_sum) / abs(cs.rho.rho)
    return {
        "coefficient_sum": m.coefficient_sum,
        "surrogate": surrogate,
        "power_norm": power,
        "hs_norm": hs,
        "ratio": power / surrogate if surrogate > 0 else math.inf,
    }


# ---------------------------------------------------------------------------
# Theorem-2 style convergence report
# ---------------------------------------------------------------------------

def verify_theorem2(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                    nu: int, probes) -> dict:
    """Convergence of Dmat(rho) to Theta and of the mcm to its limit matrix.

    probes: RhoPoint list (or complex values) inside S_nu(eps) satisfying the
    minimal-resolvent-growth bound. Reports per-probe errors, the fitted
    power-law exponent of |A(rho) - A_inf| and smallest singular values as
    the invertibility witness.
    """
    from .fss import rho_point

    limit = a_infinity(nbc, nu)
    theta_m = limit.theta_forward
    rows = []
    for probe in probes:
        rho = probe if isinstance(probe, RhoPoint) else rho_point(complex(probe), nbc.order)
        cs = canonical(make_system(expr, rho, nu=nu))
        m = mcm(nbc, cs)
        a_err = float(np.linalg.norm(m.columns - limit.a_inf))
        d_err = float(np.max(np.abs(m.char.matrix - theta_m)))
        rows.append({
            "rho": complex_pair(rho.rho),
            "abs_rho": abs(rho.rho),
            "a_error": a_err,
            "delta_error": d_err,
            "a_min_singular": float(np.linalg.svd(m.columns, compute_uv=False)[-1]),
            "delta_min_singular": float(np.linalg.svd(m.char.matrix, compute_uv=False)[-1]),
        })
    rows.sort(key=lambda r: r["abs_rho"])
    radii = np.array([r["abs_rho"] for r in rows])
    a_errors = np.array([max(r["a_error"], 1e-300) for r in rows])
    exponent = float("nan")
    if len(rows) >= 2 and np.all(a_errors > 0):
        exponent = float(np.polyfit(np.log(radii), np.log(a_errors), 1)[0])
    return {
        "nu": nu,
        "a_inf": matrix_pairs(limit.a_inf),
        "rows": rows,
        "fitted_exponent": exponent,
        "max_delta_error_at_largest": rows[-1]["delta_error"] if rows else float("nan"),
    }
