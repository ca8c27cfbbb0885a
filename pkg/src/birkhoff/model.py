"""Problem data model: differential expressions, boundary conditions and the
normalization of boundary conditions into leading-order form.

A problem on [0, 1] consists of an expression

    l(y) = D^n y + sum_{k=0}^{n-2} p_k(x) D^k y,    D = -i d/dx,

and n boundary rows U_j(y) = sum_k (a_jk D^k y(0) + b_jk D^k y(1)) = 0.
Normalization groups the rows by their leading derivative order j, with
r_j in {0, 1, 2} rows per order, full-rank leading 2-blocks and an identity
block when r_j = 2. Lower-order leftovers ("tails") are kept verbatim; the
regularity invariants do not depend on them, exact determinant evaluation
does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .config import DEFAULTS
from .errors import RankAmbiguityError, SpecError

_COEFF_KINDS = ("poly", "samples")


@dataclass(frozen=True)
class CoefficientFunction:
    """A complex coefficient on [0, 1]: polynomial (exact) or uniform samples (cubic spline)."""

    kind: str
    values: tuple  # polynomial coefficients (ascending) or sample values

    def __post_init__(self):
        if self.kind not in _COEFF_KINDS:
            raise SpecError(f"unknown coefficient kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim != 1 or vals.size == 0:
            raise SpecError("coefficient values must be a non-empty 1-d list")
        if not np.all(np.isfinite(vals)):
            raise SpecError("coefficient values must be finite")
        if self.kind == "samples" and vals.size < 4:
            raise SpecError("sampled coefficients need at least 4 points")
        object.__setattr__(self, "values", tuple(complex(v) for v in vals))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vals = np.asarray(self.values, dtype=complex)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(x, vals)
        grid = np.linspace(0.0, 1.0, vals.size)
        return CubicSpline(grid, vals)(x)

    @property
    def is_zero(self) -> bool:
        return self.kind == "poly" and all(v == 0 for v in self.values)

    @property
    def constant_value(self):
        """The constant value if the coefficient is exactly constant, else None."""
        if self.kind == "poly" and all(v == 0 for v in self.values[1:]):
            return self.values[0]
        if self.kind == "samples":
            vals = self.values
            if all(v == vals[0] for v in vals):
                return vals[0]
        return None

    def l1_norm(self, points: int = 257) -> float:
        x = np.linspace(0.0, 1.0, points)
        return float(np.trapezoid(np.abs(self(x)), x))


def poly_coefficient(*coeffs) -> CoefficientFunction:
    return CoefficientFunction("poly", tuple(complex(c) for c in coeffs))


ZERO = poly_coefficient(0.0)


@dataclass(frozen=True)
class DifferentialExpression:
    """Order n and the n-1 lower coefficients p_0..p_{n-2} (slot n-1 does not exist)."""

    order: int
    coefficients: tuple = ()

    def __post_init__(self):
        if self.order < 1:
            raise SpecError("order must be >= 1", field="order")
        coeffs = tuple(self.coefficients)
        if len(coeffs) != max(self.order - 1, 0):
            raise SpecError(
                f"expected {max(self.order - 1, 0)} coefficient slots for order {self.order}, "
                f"got {len(coeffs)}",
                field="coefficients",
            )
        for k, c in enumerate(coeffs):
            if not isinstance(c, CoefficientFunction):
                raise SpecError("coefficients must be CoefficientFunction", field=f"coefficients[{k}]")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def is_zero(self) -> bool:
        return all(c.is_zero for c in self.coefficients)

    @property
    def constant_values(self):
        """Tuple of constants if every p_k is constant, else None."""
        vals = []
        for c in self.coefficients:
            v = c.constant_value
            if v is None:
                return None
            vals.append(v)
        return tuple(vals)

    def eval_coefficients(self, x) -> np.ndarray:
        """Matrix p[k, i] = p_k(x_i), shape (n-1, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.coefficients:
            return np.zeros((0, x.size), dtype=complex)
        return np.stack([np.atleast_1d(c(x)) for c in self.coefficients])

    def l1_sum(self) -> float:
        return sum(c.l1_norm() for c in self.coefficients)

    def r0(self, factor: float = DEFAULTS.r0_factor) -> float:
        """Radius beyond which the exponential asymptotics is trusted."""
        return factor * (1.0 + self.l1_sum())


def zero_expression(order: int) -> DifferentialExpression:
    return DifferentialExpression(order, tuple(ZERO for _ in range(max(order - 1, 0))))


def constant_expression(order: int, *values) -> DifferentialExpression:
    if len(values) != max(order - 1, 0):
        raise SpecError("constant_expression needs n-1 values")
    return DifferentialExpression(order, tuple(poly_coefficient(v) for v in values))


@dataclass(frozen=True)
class RawBoundaryConditions:
    """Row j encodes U_j(y) = sum_k (a[j,k] D^k y(0) + b[j,k] D^k y(1))."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=complex)
        b = np.array(self.b, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise SpecError("matrix a must be square", field="boundary.a")
        if b.shape != a.shape:
            raise SpecError("matrices a and b must have equal shape", field="boundary.b")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise SpecError("boundary matrices must be finite", field="boundary")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        n = a.shape[0]
        sv = np.linalg.svd(np.hstack([a, b]), compute_uv=False)
        if sv[-1] <= DEFAULTS.rank_tol * sv[0]:
            raise SpecError("boundary rank deficient: rank([a|b]) < order", field="boundary")

    @property
    def order(self) -> int:
        return self.a.shape[0]

    def stacked(self) -> np.ndarray:
        return np.hstack([self.a, self.b])


@dataclass(frozen=True)
class NormalizedBoundaryConditions:
    """Boundary rows in leading-order form, grouped by ascending order.

    Row i has leading derivative order row_orders[i]; its leading pair is
    (a[i, j], b[i, j]) with j = row_orders[i] and all entries of higher order
    vanish. ranks[j] = r_j counts the rows of leading order j.
    """

    order: int
    ranks: tuple
    a: np.ndarray
    b: np.ndarray
    row_orders: tuple

    def __post_init__(self):
        a = np.array(self.a, dtype=complex)
        b = np.array(self.b, dtype=complex)
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if sum(self.ranks) != self.order:
            raise SpecError("normalized ranks must sum to the order")
        if any(r not in (0, 1, 2) for r in self.ranks):
            raise SpecError("each r_j must be 0, 1 or 2")

    def leading_block(self, j: int) -> np.ndarray:
        """The r_j x 2 block (b_j^0 b_j^1) of leading coefficients at order j."""
        rows = [i for i, lo in enumerate(self.row_orders) if lo == j]
        return np.stack([[self.a[i, j], self.b[i, j]] for i in rows]) if rows else np.zeros((0, 2), complex)

    def leading_columns(self) -> tuple[np.ndarray, np.ndarray]:
        """Vectors (over rows) of leading coefficients at 0 and at 1."""
        idx = np.arange(self.order)
        orders = np.asarray(self.row_orders)
        return self.a[idx, orders].copy(), self.b[idx, orders].copy()

    def to_raw(self) -> RawBoundaryConditions:
        return RawBoundaryConditions(self.a, self.b)

    def apply(self, derivs0: np.ndarray, derivs1: np.ndarray) -> np.ndarray:
        """U_i(y) for all rows, given D^k y(0) and D^k y(1), k = 0..n-1."""
        return self.a @ derivs0 + self.b @ derivs1


def normalize(raw: RawBoundaryConditions, rank_tol: float = DEFAULTS.rank_tol
              ) -> NormalizedBoundaryConditions:
    """Bring boundary rows to leading-order normal form.

    Gaussian elimination by descending derivative order: at each order j the
    active rows' 2-column block (coefficients at D^j y(0), D^j y(1)) is
    rank-revealed; pivot rows become the order-j group and the block is
    eliminated from the remaining rows. Row space is preserved exactly; the
    rank decision is relative to the largest entry of the active block and a
    decision inside the band [tol/100, 100 tol] raises RankAmbiguityError.

    Args:
        raw: full-rank boundary conditions.
        rank_tol: relative tolerance for the block rank decision.

    Returns:
        NormalizedBoundaryConditions with sum r_j = n and canonical blocks.
    """
    n = raw.order
    work = raw.stacked().astype(complex)  # columns: a_0..a_{n-1}, b_0..b_{n-1}
    active = list(range(n))
    groups: dict[int, list[int]] = {}

    for j in range(n - 1, -1, -1):
        if not active:
            break
        block = work[np.ix_(active, [j, n + j])]
        scale = np.max(np.abs(block))
        if scale == 0.0:
            groups[j] = []
            continue
        threshold = rank_tol * scale
        _check_ambiguity(block, threshold)

        pivots: list[int] = []
        for _ in range(2):
            sub = work[np.ix_(active, [j, n + j])]
            flat = np.abs(sub)
            if flat.size == 0 or flat.max() <= threshold:
                break
            r_loc, c_loc = np.unravel_index(int(flat.argmax()), flat.shape)
            pivot_row = active[r_loc]
            col = (n + j) if c_loc else j
            piv = work[pivot_row, col]
            for i in list(active):
                if i != pivot_row:
                    factor = work[i, col] / piv
                    work[i, :] -= factor * work[pivot_row, :]
                    work[i, col] = 0.0
            pivots.append(pivot_row)
            active.remove(pivot_row)
        groups[j] = pivots
        _canonicalize_group(work, pivots, j, n)

    if active:
        raise SpecError("boundary rank deficient: rows left without leading order", field="boundary")

    ranks = tuple(len(groups.get(j, [])) for j in range(n))
    row_list: list[int] = []
    row_orders: list[int] = []
    for j in range(n):
        for i in groups.get(j, []):
            row_list.append(i)
            row_orders.append(j)
            # entries above the leading order are below the rank threshold by
            # construction; zero them so powers of rho cannot amplify them
            work[i, j + 1:n] = 0.0
            work[i, n + j + 1:] = 0.0
    ordered = work[row_list, :]
    return NormalizedBoundaryConditions(
        order=n,
        ranks=ranks,
        a=ordered[:, :n],
        b=ordered[:, n:],
        row_orders=tuple(row_orders),
    )


def _check_ambiguity(block: np.ndarray, threshold: float) -> None:
    sv = np.linalg.svd(block, compute_uv=False)
    for s in sv:
        if threshold / 100.0 < s < threshold * 100.0:
            raise RankAmbiguityError(
                f"boundary block singular value {s:.3e} inside the tolerance band "
                f"around {threshold:.3e}; refusing to decide the rank silently"
            )


def _canonicalize_group(work: np.ndarray, pivots: list[int], j: int, n: int) -> None:
    """Scale/mix the group rows so the leading block is canonical."""
    if len(pivots) == 2:
        block = work[np.ix_(pivots, [j, n + j])]
        work[pivots, :] = np.linalg.solve(block, work[pivots, :])
        work[np.ix_(pivots, [j, n + j])] = np.eye(2)
    elif len(pivots) == 1:
        i = pivots[0]
        pair = work[i, [j, n + j]]
        piv = pair[0] if abs(pair[0]) >= abs(pair[1]) else pair[1]
        work[i, :] /= piv


# ---------------------------------------------------------------------------
# problem specification documents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BvpSpec:
    expression: DifferentialExpression
    boundary: RawBoundaryConditions
    label: str = ""
    _normalized: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.boundary.order != self.expression.order:
            raise SpecError(
                f"boundary matrices are {self.boundary.order}x{self.boundary.order} "
                f"but expression order is {self.expression.order}",
                field="boundary",
            )

    @property
    def order(self) -> int:
        return self.expression.order

    def normalized(self) -> NormalizedBoundaryConditions:
        if not self._normalized:
            self._normalized.append(normalize(self.boundary))
        return self._normalized[0]


def _complex_from_pair(value, path: str) -> complex:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise SpecError("complex values must be [re, im] number pairs", field=path)
    return complex(float(value[0]), float(value[1]))


def _complex_matrix(value, n: int, path: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != n:
        raise SpecError(f"expected {n} rows", field=path)
    out = np.empty((n, n), dtype=complex)
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != n:
            raise SpecError(f"expected {n} entries", field=f"{path}[{i}]")
        for k, entry in enumerate(row):
            out[i, k] = _complex_from_pair(entry, f"{path}[{i}][{k}]")
    return out


def parse_spec(document) -> BvpSpec:
    """Parse and validate a BVP specification document.

    Args:
        document: dict (already decoded) or JSON text conforming to the spec
            schema: {"label", "order", "coefficients": [{"k", "kind",
            "values": [[re, im], ...]}], "boundary": {"a", "b"}}.

    Returns:
        A validated BvpSpec.

    Raises:
        SpecError: with the offending field path in the message.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise SpecError("document must be a JSON object")

    label = document.get("label", "")
    if not isinstance(label, str):
        raise SpecError("label must be a string", field="label")

    order = document.get("order")
    if not isinstance(order, int) or isinstance(order, bool) or order < 1:
        raise SpecError("order must be a positive integer", field="order")

    slots: dict[int, CoefficientFunction] = {}
    coeff_docs = document.get("coefficients", [])
    if not isinstance(coeff_docs, list):
        raise SpecError("coefficients must be a list", field="coefficients")
    for idx, cdoc in enumerate(coeff_docs):
        path = f"coefficients[{idx}]"
        if not isinstance(cdoc, dict):
            raise SpecError("coefficient entries must be objects", field=path)
        k = cdoc.get("k")
        if not isinstance(k, int) or isinstance(k, bool) or not (0 <= k <= order - 2):
            raise SpecError(f"k must be an integer in [0, {order - 2}]", field=f"{path}.k")
        if k in slots:
            raise SpecError(f"duplicate coefficient for k={k}", field=f"{path}.k")
        kind = cdoc.get("kind")
        if kind not in _COEFF_KINDS:
            raise SpecError("kind must be 'poly' or 'samples'", field=f"{path}.kind")
        values = cdoc.get("values")
        if not isinstance(values, list) or not values:
            raise SpecError("values must be a non-empty list of [re, im] pairs", field=f"{path}.values")
        parsed = [_complex_from_pair(v, f"{path}.values[{i}]") for i, v in enumerate(values)]
        try:
            slots[k] = CoefficientFunction(kind, tuple(parsed))
        except SpecError as exc:
            raise SpecError(str(exc), field=f"{path}.values") from exc

    coefficients = tuple(slots.get(k, ZERO) for k in range(max(order - 1, 0)))
    expression = DifferentialExpression(order, coefficients)

    bdoc = document.get("boundary")
    if not isinstance(bdoc, dict):
        raise SpecError("boundary must be an object with matrices a and b", field="boundary")
    a = _complex_matrix(bdoc.get("a"), order, "boundary.a")
    b = _complex_matrix(bdoc.get("b"), order, "boundary.b")
    if len(a) != order:
        raise SpecError("row count != order", field="boundary.a")
    boundary = RawBoundaryConditions(a, b)

    return BvpSpec(expression=expression, boundary=boundary, label=label)


def complex_pair(z: complex) -> list[float]:
    """Serialize a complex number as the [re, im] pair used everywhere."""
    z = complex(z)
    return [float(z.real), float(z.imag)]


def matrix_pairs(m: np.ndarray) -> list:
    return [[complex_pair(v) for v in row] for row in np.asarray(m, dtype=complex)]


def spec_to_document(spec: BvpSpec) -> dict:
    coeffs = []
    for k, c in enumerate(spec.expression.coefficients):
        if not c.is_zero:
            coeffs.append({"k": k, "kind": c.kind, "values": [complex_pair(v) for v in c.values]})
    return {
        "label": spec.label,
        "order": spec.order,
        "coefficients": coeffs,
        "boundary": {"a": matrix_pairs(spec.boundary.a), "b": matrix_pairs(spec.boundary.b)},
    }
