"""Eigenfunctions, spectral projectors by contour integration, projector-norm
scaling, almost-orthogonality measurements and expansion experiments.

Projectors are realized as quadrature of the Green's kernel over a circle
around the eigenvalue group: P = -(1/2pi i) \oint G(.,.,rho(lambda)) dlambda
on a Gauss-Legendre grid. The integrated kernel is analytic across the
x = xi diagonal (the one-sided particular-solution part is annihilated by
the contour), so plain quadrature of the projector kernel is spectrally
accurate even though single resolvent kernels have a derivative jump.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULTS
from .errors import NotACharacteristicValue, NumericalError, SpecError
from .fss import RhoPoint, canonical, make_system, rho_from_lambda, rho_point
from .greens import GreensKernel
from .model import DifferentialExpression, NormalizedBoundaryConditions, complex_pair
from .quadrature import gauss_legendre
from .spectrum import CvEntry, Spectrum, boundary_form_V, char_matrix

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# eigenfunctions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenRecord:
    rho: complex
    lam: complex
    multiplicity: int
    coefficients: np.ndarray      # (mult, n) rows d_l over the canonical system
    grid: np.ndarray
    weights: np.ndarray
    values: np.ndarray            # (mult, K) normalized samples
    boundary_residual: float
    system_residual: float        # max |Dmat d| over the null vectors

    def function(self, which: int = 0):
        cs = self._cs()
        d = self.coefficients[which]
        norm = self._norms[which]

        def u(x):
            return (d @ cs.z(np.atleast_1d(np.asarray(x, dtype=float)))) / norm

        return u

    def _cs(self):
        return self._cs_ref[0]

    # set post-construction to avoid dataclass comparison on heavy objects
    _cs_ref: list = field(default_factory=list, compare=False, repr=False)
    _norms: tuple = field(default=(), compare=False, repr=False)


def eigenfunction(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                  rho_j: complex, multiplicity: int | None = None,
                  null_tol: float = 1e-6,
                  quad_points: int = DEFAULTS.quad_points) -> EigenRecord:
    """Eigenfunction(s) at a verified characteristic value.

    Null vectors of the characteristic matrix supply the coefficients over
    the canonical system; the functions are normalized in L2 and validated
    against the raw boundary conditions.

    Raises NotACharacteristicValue when the matrix has no numerical null
    space, NumericalError when the null-space dimension disagrees with the
    expected multiplicity.
    """
    rp = rho_point(complex(rho_j), nbc.order)
    cs = canonical(make_system(expr, rp))
    data = char_matrix(nbc, cs)
    u_svd, s_svd, vh = np.linalg.svd(data.matrix)
    scale = s_svd[0] if s_svd[0] > 0 else 1.0
    null_dim = int(np.sum(s_svd <= null_tol * scale))
    if null_dim == 0:
        raise NotACharacteristicValue(
            f"characteristic matrix not singular at rho={rho_j} (smallest sv {s_svd[-1]:.2e})")
    if multiplicity is not None and null_dim != multiplicity:
        raise NumericalError(
            f"null-space dimension {null_dim} != recorded multiplicity {multiplicity}")
    coeffs = vh.conj()[-null_dim:, :]  # rows: null vectors d

    xq, wq = gauss_legendre(quad_points)
    zvals = cs.z(xq)  # (n, K)
    raw_vals = coeffs @ zvals  # (mult, K)
    norms = np.sqrt(np.sum(wq[None, :] * np.abs(raw_vals) ** 2, axis=1))
    values = raw_vals / norms[:, None]

    d0, d1 = cs.z_end_derivs()
    ends = nbc.a @ d0 + nbc.b @ d1  # rows applied to each z_l
    boundary_residual = float(np.max(np.abs(ends @ coeffs.T) / norms[None, :]))
    system_residual = float(np.max(np.abs(data.matrix @ coeffs.T)))

    rec = EigenRecord(
        rho=complex(rho_j), lam=rp.lam, multiplicity=null_dim,
        coefficients=coeffs, grid=xq, weights=wq, values=values,
        boundary_residual=boundary_residual, system_residual=system_residual,
    )
    rec._cs_ref.append(cs)
    object.__setattr__(rec, "_norms", tuple(float(n) for n in norms))
    return rec


# ---------------------------------------------------------------------------
# projectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectorRecord:
    index: int
    lam: complex
    rho: complex
    radius: float
    rank: int
    norm: float
    ratio: float                  # norm * (1 + |Im rho|) / exp(|Im rho|)
    idempotency_residual: float
    grid: np.ndarray = field(compare=False, repr=False)
    weights: np.ndarray = field(compare=False, repr=False)
    kernel: np.ndarray = field(compare=False, repr=False)

    def apply(self, f_vals: np.ndarray) -> np.ndarray:
        return self.kernel @ (self.weights * f_vals)

    def to_document(self) -> dict:
        return {
            "index": self.index,
            "lambda": complex_pair(self.lam),
            "rho": complex_pair(self.rho),
            "radius": self.radius,
            "rank": self.rank,
            "norm": self.norm,
            "ratio": self.ratio,
            "idempotency_residual": self.idempotency_residual,
        }


def projector(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
              lambda_m: complex, radius: float, index: int = 0,
              expected_rank: int | None = None,
              quad_points: int = DEFAULTS.quad_points,
              contour_points: int = DEFAULTS.contour_points,
              seed: int = DEFAULTS.seed) -> ProjectorRecord:
    """Riesz projector of the eigenvalue group inside |lambda - lambda_m| = radius.

    The kernel is accumulated from Green's kernels along the contour; rank,
    norm (power iteration) and idempotency on random test vectors are
    recorded. A rank above the expected multiplicity means the contour
    encloses foreign spectrum.
    """
    lambda_m = complex(lambda_m)
    n = nbc.order
    xq, wq = gauss_legendre(quad_points)
    kernel = np.zeros((quad_points, quad_points), dtype=complex)
    for q in range(contour_points):
        theta = TWO_PI * (q + 0.5) / contour_points
        lam = lambda_m + radius * cmath.exp(1j * theta)
        gk = GreensKernel(nbc, expr, rho_from_lambda(lam, n))
        # dlambda = i radius e^{i theta} dtheta, prefactor -(1/2 pi i)
        kernel += gk.grid(xq, xq) * (radius * cmath.exp(1j * theta) / contour_points)
    kernel *= -1.0

    weighted = kernel * np.sqrt(wq)[None, :] * np.sqrt(wq)[:, None]
    eigvals = np.linalg.eigvals(weighted)
    rank = int(np.sum(np.abs(eigvals) > 0.5))
    if expected_rank is not None and rank > expected_rank:
        raise NumericalError(
            f"contour around {lambda_m} encloses foreign spectrum (rank {rank} > {expected_rank})")

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(quad_points) + 1j * rng.standard_normal(quad_points)
    norm = 0.0
    m_h = weighted.conj().T
    vv = v / np.linalg.norm(v)
    for _ in range(DEFAULTS.power_iterations):
        w = m_h @ (weighted @ vv)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        vv = w / nw
        norm = math.sqrt(nw)

    idem = 0.0
    for _ in range(4):
        t = rng.standard_normal(quad_points) + 1j * rng.standard_normal(quad_points)
        t /= math.sqrt(float(np.sum(wq * np.abs(t) ** 2)))
        pt = kernel @ (wq * t)
        ppt = kernel @ (wq * pt)
        idem = max(idem, math.sqrt(float(np.sum(wq * np.abs(ppt - pt) ** 2))))

    rho_m = rho_from_lambda(lambda_m, n).rho
    h = abs(rho_m.imag)
    ratio = norm * (1.0 + h) / math.exp(h)
    return ProjectorRecord(index=index, lam=lambda_m, rho=rho_m, radius=radius,
                           rank=rank, norm=norm, ratio=ratio,
                           idempotency_residual=idem, grid=xq, weights=wq, kernel=kernel)


def contour_radius(lam: complex, spectrum: Spectrum, group: list | None = None,
                   floor: float = 1e-3) -> float:
    """Half the distance to the nearest foreign eigenvalue, floored."""
    lam = complex(lam)
    group_lams = {complex(e.lam) for e in (group or [])}
    foreign = [e.lam for e in spectrum.entries if complex(e.lam) not in group_lams]
    if not foreign:
        return max(floor, 0.5 * abs(lam) if lam != 0 else 1.0)
    dist = min(abs(lam - fl) for fl in foreign)
    inner = max((abs(lam - complex(e.lam)) for e in (group or [])), default=0.0)
    radius = max(floor, 0.5 * (dist + inner))
    if radius <= inner:
        radius = 0.5 * (inner + dist)
    return radius


def projector_norm_scaling(records) -> dict:
    """Spread of the sharp-norm ratio over simple eigenvalues."""
    for rec in records:
        if rec.rank != 1:
            raise SpecError("projector_norm_scaling requires simple eigenvalues")
    ratios = np.array([rec.norm * (1.0 + abs(rec.rho.imag)) / math.exp(abs(rec.rho.imag))
                       for rec in records])
    return {
        "ratios": ratios.tolist(),
        "min": float(ratios.min()),
        "max": float(ratios.max()),
        "spread": float(ratios.max() / ratios.min()),
    }


# ---------------------------------------------------------------------------
# almost orthogonality
# ---------------------------------------------------------------------------

def almost_orthogonality_ratio(cs, trials: int = 200, seed: int = DEFAULTS.seed,
                               system: str = "z",
                               quad_points: int = DEFAULTS.quad_points) -> tuple[float, float]:
    """(min, max) of |sum c_k y_k|^2 / sum |c_k|^2 |y_k|^2 over random unit c.

    The ratio is invariant under per-solution rescaling, so it is evaluated
    on the bounded canonical representatives. Deterministic under seed.
    """
    xq, wq = gauss_legendre(quad_points)
    vals = cs.z(xq) if system == "z" else cs.u(xq)
    gram = (vals * wq[None, :]) @ vals.conj().T
    norms = np.sqrt(np.real(np.diag(gram)))
    if np.any(norms == 0):
        raise NumericalError("degenerate system member with zero norm")
    corr = gram / np.outer(norms, norms)
    rng = np.random.default_rng(seed)
    n = vals.shape[0]
    if n == 1:
        return 1.0, 1.0
    lo, hi = math.inf, -math.inf
    for _ in range(trials):
        c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        c /= np.linalg.norm(c)
        r = float(np.real(c.conj() @ corr @ c))
        lo, hi = min(lo, r), max(hi, r)
    return lo, hi


# ---------------------------------------------------------------------------
# eigenvalue groups and the expansion experiment
# ---------------------------------------------------------------------------

def group_eigenvalues(spectrum: Spectrum, paired: bool, pair_tol: float | None = None) -> list:
    """Partition cvs into expansion groups ordered by |lambda|.

    Unpaired: every distinct cv is its own group. Paired: consecutive cvs
    (in |lambda| order) closer than pair_tol are parenthesized together;
    the default tolerance is a fifth of the median consecutive gap.
    """
    entries = sorted(spectrum.entries, key=lambda e: (abs(e.lam), e.lam.real, e.lam.imag))
    if not paired or len(entries) < 2:
        return [[e] for e in entries]
    gaps = np.array([abs(entries[i + 1].lam - entries[i].lam) for i in range(len(entries) - 1)])
    tol = pair_tol if pair_tol is not None else 0.2 * float(np.median(gaps)) if len(gaps) else 0.0
    groups, current = [], [entries[0]]
    for prev, nxt in zip(entries, entries[1:]):
        if abs(nxt.lam - prev.lam) <= tol and len(current) < 2:
            current.append(nxt)
        else:
            groups.append(current)
            current = [nxt]
    groups.append(current)
    return groups


def _group_functions(nbc, expr, groups, quad_points):
    """Eigenfunction samples per group: list of (mult_total, K) blocks."""
    xq, wq = gauss_legendre(quad_points)
    blocks = []
    for group in groups:
        rows = []
        for entry in group:
            rec = eigenfunction(nbc, expr, entry.rho, multiplicity=entry.multiplicity,
                                quad_points=quad_points)
            rows.append(rec.values)
        blocks.append(np.vstack(rows))
    return xq, wq, blocks


def gram_condition(blocks, wq, orthonormalize_groups: bool) -> float:
    """Condition number of the Gram matrix of the stacked (optionally
    group-orthonormalized) functions."""
    rows = []
    for block in blocks:
        if orthonormalize_groups and block.shape[0] > 1:
            scaled = (block * np.sqrt(wq)[None, :]).T
            q, _ = np.linalg.qr(scaled)
            rows.append((q / np.sqrt(wq)[:, None]).T)
        else:
            rows.append(block)
    stack = np.vstack(rows)
    gram = (stack * wq[None, :]) @ stack.conj().T
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 0:
        return math.inf
    return float(eig[-1] / eig[0])


def expansion_experiment(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                         spectrum: Spectrum, k_values, paired: bool = False,
                         f=None, quad_points: int = 512,
                         with_partial_sums: bool = False,
                         contour_points: int = DEFAULTS.contour_points,
                         pair_tol: float | None = None) -> dict:
    """Riesz-constant estimates (and optional partial sums) for the first K groups.

    For each K in k_values reports the condition number of the Gram matrix
    of the normalized eigenfunctions of the first K groups; paired mode
    orthonormalizes within each group first (the parenthesized expansion).
    With with_partial_sums and a function f, the projector partial sums
    S_K f are accumulated and their L2 errors recorded.
    """
    k_values = sorted(int(k) for k in k_values)
    k_max = k_values[-1]
    groups = group_eigenvalues(spectrum, paired=paired, pair_tol=pair_tol)
    if len(groups) < k_max:
        raise SpecError(f"spectrum holds {len(groups)} groups, need {k_max}")
    groups = groups[:k_max]
    xq, wq, blocks = _group_functions(nbc, expr, groups, quad_points)

    conditions = {k: gram_condition(blocks[:k], wq, orthonormalize_groups=paired)
                  for k in k_values}

    report = {
        "paired": paired,
        "k_values": k_values,
        "gram_condition": conditions,
        "group_sizes": [sum(e.multiplicity for e in g) for g in groups],
    }

    if with_partial_sums and f is not None:
        fv = np.asarray(f(xq), dtype=complex)
        f_norm = math.sqrt(float(np.sum(wq * np.abs(fv) ** 2)))
        running = np.zeros_like(fv)
        errors = []
        records = []
        for i, group in enumerate(groups):
            lam_c = np.mean([e.lam for e in group])
            radius = contour_radius(lam_c, spectrum, group=group)
            rank = sum(e.multiplicity for e in group)
            rec = projector(nbc, expr, lam_c, radius, index=i, expected_rank=rank,
                            quad_points=quad_points, contour_points=contour_points)
            records.append(rec)
            running = running + rec.apply(fv)
            err = math.sqrt(float(np.sum(wq * np.abs(running - fv) ** 2)))
            errors.append(err / max(f_norm, 1e-300))
        report["partial_sum_errors"] = errors
        report["projectors"] = records
    return report
