"""Algebraic regularity classification of normalized boundary conditions.

Conventions (epsilon_j = exp(2 pi i j / n), q = floor(n/2)):

  * B_k^i stacks the blocks b_j^i * epsilon_k^j over ascending leading order j.
  * Theta matrix for sector nu: columns B_k^0 for k < p, B_k^1 for k >= p,
    where p is the number of decaying directions in the sector (p = q for
    even n; p = q+1 in S_0 and p = q in S_1 for odd n).
  * F(s) for n = 2q replaces the boundary columns 0 and q by the affine
    pencils B_0^0 + s B_0^1 and s B_q^0 + B_q^1; strong regularity needs two
    simple roots of det F(s).

Classes: SR (strongly regular), WR (weakly regular), IRR (irregular).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import DEFAULTS
from .errors import SpecError
from .model import NormalizedBoundaryConditions, RawBoundaryConditions, complex_pair, matrix_pairs


@lru_cache(maxsize=64)
def unit_roots(n: int) -> np.ndarray:
    """The n-th roots of unity epsilon_0..epsilon_{n-1}."""
    if n < 1:
        raise SpecError("order must be >= 1")
    roots = np.exp(2j * np.pi * np.arange(n) / n)
    roots.setflags(write=False)
    return roots


def p_value(n: int, nu: int) -> int:
    """Number of exponentially decaying solution directions in sector S_nu."""
    if nu not in (0, 1):
        raise SpecError("sector index must be 0 or 1")
    q = n // 2
    if n % 2 == 0:
        return q
    return q + 1 if nu == 0 else q


@dataclass(frozen=True)
class SectorIndex:
    """A sector choice together with its decay count p."""

    n: int
    nu: int

    @property
    def p(self) -> int:
        return p_value(self.n, self.nu)

    @property
    def bisector_angle(self) -> float:
        return (self.nu + 0.5) * np.pi / self.n


class RegularityClass(enum.Enum):
    STRONGLY_REGULAR = "SR"
    WEAKLY_REGULAR = "WR"
    IRREGULAR = "IRR"


def build_B(nbc: NormalizedBoundaryConditions, k: int, i: int) -> np.ndarray:
    """Column vector B_k^i, one entry per boundary row."""
    if i not in (0, 1):
        raise SpecError("superscript must be 0 or 1")
    eps = unit_roots(nbc.order)
    lead0, lead1 = nbc.leading_columns()
    lead = lead0 if i == 0 else lead1
    orders = np.asarray(nbc.row_orders)
    return lead * eps[k] ** orders


def _b_tables(nbc: NormalizedBoundaryConditions) -> tuple[np.ndarray, np.ndarray]:
    """B0[:, k] = B_k^0 and B1[:, k] = B_k^1 for all k."""
    n = nbc.order
    eps = unit_roots(n)
    lead0, lead1 = nbc.leading_columns()
    orders = np.asarray(nbc.row_orders)
    powers = eps[None, :] ** orders[:, None]  # (row, k)
    return lead0[:, None] * powers, lead1[:, None] * powers


def theta_matrix(nbc: NormalizedBoundaryConditions, nu: int, swap: bool = False) -> np.ndarray:
    """Columns B_k^0 (k < p) then B_k^1 (k >= p); swap exchanges the superscripts."""
    n = nbc.order
    p = p_value(n, nu)
    b0, b1 = _b_tables(nbc)
    first, second = (b1, b0) if swap else (b0, b1)
    return np.concatenate([first[:, :p], second[:, p:]], axis=1)


def theta(nbc: NormalizedBoundaryConditions, nu: int) -> tuple[complex, np.ndarray]:
    """Regularity determinant Theta(S_nu) and its matrix."""
    m = theta_matrix(nbc, nu)
    return complex(np.linalg.det(m)), m


def hadamard_scale(m: np.ndarray) -> float:
    """Product of column norms; the natural scale for a determinant zero test."""
    return float(np.prod(np.linalg.norm(m, axis=0)))


def f_polynomial(nbc: NormalizedBoundaryConditions) -> np.ndarray:
    """Exact coefficients (F0, F1, F2) of F(s), for even order only.

    The determinant is affine in s through two columns, so expanding by
    multilinearity gives the quadratic exactly from four determinants.
    """
    n = nbc.order
    if n % 2:
        raise SpecError("F(s) defined only for even order")
    q = n // 2
    b0, b1 = _b_tables(nbc)

    def det_with(first_col, q_col):
        cols = [first_col] + [b0[:, k] for k in range(1, q)] + [q_col] \
            + [b1[:, k] for k in range(q + 1, n)]
        return complex(np.linalg.det(np.column_stack(cols)))

    f00 = det_with(b0[:, 0], b1[:, q])
    f01 = det_with(b0[:, 0], b0[:, q])
    f10 = det_with(b1[:, 0], b1[:, q])
    f11 = det_with(b1[:, 0], b0[:, q])
    return np.array([f00, f01 + f10, f11], dtype=complex)


def quadratic_roots(coeffs: np.ndarray) -> np.ndarray:
    """Roots of F0 + F1 s + F2 s^2, degree-aware."""
    f0, f1, f2 = (complex(c) for c in coeffs)
    scale = max(abs(f0), abs(f1), abs(f2))
    if scale == 0.0:
        return np.array([], dtype=complex)
    if abs(f2) <= 1e-14 * scale:
        if abs(f1) <= 1e-14 * scale:
            return np.array([], dtype=complex)
        return np.array([-f0 / f1], dtype=complex)
    disc = np.sqrt(f1 * f1 - 4.0 * f2 * f0 + 0j)
    # pick the sign that avoids cancellation in -f1 -+ disc
    u = -f1 - disc if abs(-f1 - disc) >= abs(-f1 + disc) else -f1 + disc
    if u == 0:
        return np.array([0.0, 0.0], dtype=complex)
    r1 = u / (2.0 * f2)
    r2 = (2.0 * f0) / u
    return np.array([r1, r2], dtype=complex)


@dataclass(frozen=True)
class RegularityReport:
    theta0: complex
    theta1: complex
    f_coeffs: np.ndarray | None
    f_roots: np.ndarray
    klass: RegularityClass
    theta_matrices: tuple
    plucker: np.ndarray | None = None

    @property
    def is_regular(self) -> bool:
        return self.klass is not RegularityClass.IRREGULAR

    def to_document(self) -> dict:
        doc = {
            "theta": [complex_pair(self.theta0), complex_pair(self.theta1)],
            "f_coeffs": [complex_pair(c) for c in self.f_coeffs] if self.f_coeffs is not None else None,
            "f_roots": [complex_pair(r) for r in self.f_roots],
            "class": self.klass.value,
        }
        if self.plucker is not None:
            doc["plucker"] = [complex_pair(p) for p in self.plucker]
        return doc


def classify(nbc: NormalizedBoundaryConditions,
             theta_tol: float = DEFAULTS.theta_tol,
             root_gap_tol: float = DEFAULTS.root_gap_tol) -> RegularityReport:
    """Classify boundary conditions as SR, WR or IRR.

    Irregular iff either determinant vanishes relative to its Hadamard scale.
    For odd order, regular implies strongly regular; for even order strong
    regularity additionally needs deg F = 2 with a simple root pair.
    """
    t0, m0 = theta(nbc, 0)
    t1, m1 = theta(nbc, 1)
    irregular = (abs(t0) <= theta_tol * hadamard_scale(m0)
                 or abs(t1) <= theta_tol * hadamard_scale(m1))

    f_coeffs = None
    roots = np.array([], dtype=complex)
    if nbc.order % 2 == 0:
        f_coeffs = f_polynomial(nbc)
        roots = quadratic_roots(f_coeffs)

    if irregular:
        klass = RegularityClass.IRREGULAR
    elif nbc.order % 2 == 1:
        klass = RegularityClass.STRONGLY_REGULAR
    else:
        klass = RegularityClass.WEAKLY_REGULAR
        scale = max(abs(f_coeffs[0]), abs(f_coeffs[1]), abs(f_coeffs[2]))
        if scale > 0 and abs(f_coeffs[2]) > 1e-14 * scale and len(roots) == 2:
            gap = abs(roots[0] - roots[1])
            if gap > root_gap_tol * max(1.0, abs(roots[0]), abs(roots[1])):
                klass = RegularityClass.STRONGLY_REGULAR

    return RegularityReport(
        theta0=t0, theta1=t1, f_coeffs=f_coeffs, f_roots=roots,
        klass=klass, theta_matrices=(m0, m1),
    )


_PLUCKER_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def plucker(raw: RawBoundaryConditions) -> dict:
    """The six 2x2 minors of [a|b] in column order (y(0), Dy(0), y(1), Dy(1)).

    These coordinates classify second-order two-point conditions up to the
    quadratic relation p01 p23 + p02 p13 + p03 p12 = 0, which is returned as
    a residual for verification.
    """
    if raw.order != 2:
        raise SpecError("Plucker coordinates defined for order 2 only")
    m = np.column_stack([raw.a[:, 0], raw.a[:, 1], raw.b[:, 0], raw.b[:, 1]])
    coords = {f"p{i}{j}": complex(m[0, i] * m[1, j] - m[0, j] * m[1, i]) for i, j in _PLUCKER_PAIRS}
    residual = (coords["p01"] * coords["p23"]
                + coords["p02"] * coords["p13"]
                + coords["p03"] * coords["p12"])
    coords["relation_residual"] = residual
    return coords
