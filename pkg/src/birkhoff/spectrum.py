"""Characteristic determinants, eigenvalue localization and sector geometry.

The characteristic matrix stacks the scaled boundary forms of the canonical
solutions: column k is V(z_k) with V(z)_i = rho^(-l_i) U_i(z), l_i the
leading order of boundary row i. Its zeros in the canonical branch
arg rho in [0, 2pi/n) are the characteristic values; the argument principle
over rectangles with recursive subdivision localizes them, Newton polishes
them, and winding numbers on verification circles supply multiplicities.

Search notes: boxes extend slightly past the branch rays so zeros sitting on
the real axis are interior; every candidate is then mapped to its canonical
representative through lambda = rho^n and kept only if the determinant
actually vanishes there, which removes aliases from the overshoot region.
For exact and constant-coefficient problems the determinant evaluation is
vectorized over rho arrays; variable coefficients fall back to per-point
systems (each evaluation builds one fundamental system).
"""

from __future__ import annotations

import cmath
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULTS, worker_count
from .errors import AtCharacteristicValue, ContourError, NumericalError, SpecError
from .fss import CanonicalSystem, RhoPoint, canonical, make_system, rho_from_lambda, rho_point
from .model import DifferentialExpression, NormalizedBoundaryConditions, complex_pair
from .quadrature import gauss_legendre, safe_exp
from .regularity import SectorIndex, p_value, unit_roots

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# sector geometry and the hyperbolic metric
# ---------------------------------------------------------------------------

def blaschke(lam: complex, z: complex):
    """Normalized Blaschke factor of the upper half-plane.

    |b_lam(z)| < 1 for z, lam in the open upper half-plane, b_lam(lam) = 0,
    |b_lam(x)| = 1 on the real axis.
    """
    lam = complex(lam)
    z = np.asarray(z, dtype=complex)
    if np.any(z == np.conj(lam)):
        raise SpecError("Blaschke factor has a pole at conj(lambda)")
    ratio = (z - lam) / (z - np.conj(lam))
    if lam == 1j:
        out = ratio
    else:
        w = lam * lam + 1.0
        out = (abs(w) / w) * ratio
    return complex(out) if np.isscalar(z) or out.ndim == 0 else out


@dataclass(frozen=True)
class SectorGeometry:
    """The epsilon-subsector of S_nu with the hyperbolic exclusion radius delta."""

    n: int
    nu: int
    epsilon: float | None = None
    delta: float = DEFAULTS.delta

    def __post_init__(self):
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", DEFAULTS.epsilon(self.n))
        if not (0.0 < self.epsilon < math.pi / (2 * self.n)):
            raise SpecError("epsilon must lie in (0, pi/(2n))")
        if not (0.0 < self.delta < 1.0 / 3.0):
            raise SpecError("delta must lie in (0, 1/3) so that delta1 = 2 delta/(1-delta) < 1")

    @property
    def delta1(self) -> float:
        return 2.0 * self.delta / (1.0 - self.delta)

    @property
    def bisector(self) -> float:
        return (self.nu + 0.5) * math.pi / self.n

    @property
    def p(self) -> int:
        return p_value(self.n, self.nu)

    def contains(self, rho) -> np.ndarray:
        """Membership in S_nu(epsilon)."""
        ang = np.angle(np.asarray(rho, dtype=complex))
        return np.abs(ang - self.bisector) <= self.epsilon

    def bisector_point(self, radius: float) -> complex:
        return radius * cmath.exp(1j * self.bisector)

    def disk_radius(self, rho: complex, scaled: bool = False) -> float:
        """Radius of D(rho, delta) (or D(rho, delta1) when scaled)."""
        d = self.delta1 if scaled else self.delta
        return d * abs(rho.imag)

    def in_hyperbolic_circle(self, center: complex, z) -> np.ndarray:
        """Membership of z in K(center, delta) = {|b_center(z)| <= delta}."""
        z = np.asarray(z, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.abs((z - center) / (z - np.conj(center)))
        return vals <= self.delta


# ---------------------------------------------------------------------------
# boundary forms and the characteristic matrix
# ---------------------------------------------------------------------------

def row_scaling(nbc: NormalizedBoundaryConditions, rho: complex) -> np.ndarray:
    """The per-row factors rho^(-l_i) of the vector boundary form."""
    return np.asarray(rho, dtype=complex) ** (-np.asarray(nbc.row_orders, dtype=float))


def boundary_form_V(nbc: NormalizedBoundaryConditions, cs: CanonicalSystem,
                    k: int | None = None) -> np.ndarray:
    """V(z_k) for one solution (or the full n x n matrix for k = None)."""
    d0, d1 = cs.z_end_derivs()
    cols = row_scaling(nbc, cs.rho.rho)[:, None] * (nbc.a @ d0 + nbc.b @ d1)
    return cols if k is None else cols[:, k]


@dataclass(frozen=True)
class CharacteristicData:
    rho: RhoPoint
    matrix: np.ndarray
    det: complex


def char_matrix(nbc: NormalizedBoundaryConditions, cs: CanonicalSystem) -> CharacteristicData:
    m = boundary_form_V(nbc, cs)
    return CharacteristicData(rho=cs.rho, matrix=m, det=complex(np.linalg.det(m)))


class CharDet:
    """Vectorized characteristic determinant with a fixed scaling split.

    The p-split only multiplies columns by nonvanishing exponentials, so any
    fixed p gives the same zero set; using one p for the whole search region
    keeps the evaluation analytic across sector boundaries.
    """

    def __init__(self, nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                 p: int | None = None):
        self.nbc = nbc
        self.expr = expr
        self.n = nbc.order
        self.p = p_value(self.n, 0) if p is None else p
        self.eps = unit_roots(self.n)
        self._vectorized = expr.is_zero
        self._mu_const = None
        if not self._vectorized and expr.constant_values is not None:
            self._mu_const = np.asarray(expr.constant_values, dtype=complex)

    def matrices(self, rho: np.ndarray) -> np.ndarray:
        rho = np.atleast_1d(np.asarray(rho, dtype=complex))
        if self._vectorized:
            return self._exact_matrices(rho)
        return np.stack([self._pointwise_matrix(r) for r in rho])

    def __call__(self, rho) -> np.ndarray:
        rho_arr = np.atleast_1d(np.asarray(rho, dtype=complex))
        out = np.linalg.det(self.matrices(rho_arr))
        return out if np.ndim(rho) else complex(out[0])

    def _exact_matrices(self, rho: np.ndarray) -> np.ndarray:
        n, p = self.n, self.p
        nbc = self.nbc
        re = rho[:, None] * self.eps[None, :]  # (R, n)
        anchors = np.where(np.arange(n) < p, 0.0, 1.0)
        e0 = safe_exp(-1j * re * anchors[None, :])
        e1 = safe_exp(1j * re * (1.0 - anchors[None, :]))
        powers = re[:, None, :] ** np.arange(n)[None, :, None]  # (R, m, j)
        d0 = powers * e0[:, None, :]
        d1 = powers * e1[:, None, :]
        cols = np.einsum("im,rmj->rij", nbc.a, d0) + np.einsum("im,rmj->rij", nbc.b, d1)
        scale = rho[:, None] ** (-np.asarray(nbc.row_orders, dtype=float)[None, :])
        return scale[:, :, None] * cols

    def _pointwise_matrix(self, rho: complex) -> np.ndarray:
        # sector 0 fixes the scaling split for the whole region
        fs = make_system(self.expr, rho_point(rho, self.n), nu=0)
        return boundary_form_V(self.nbc, canonical(fs))


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CvEntry:
    rho: complex
    multiplicity: int
    lam: complex
    residual: float

    def to_document(self) -> dict:
        return {
            "rho": complex_pair(self.rho),
            "lambda": complex_pair(self.lam),
            "multiplicity": self.multiplicity,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class Spectrum:
    entries: tuple
    rmin: float
    rmax: float

    @property
    def rhos(self) -> np.ndarray:
        return np.array([e.rho for e in self.entries], dtype=complex)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries], dtype=complex)

    def in_subsector(self, geom: SectorGeometry) -> np.ndarray:
        """Gamma_epsilon: the distinct cvs inside S_nu(epsilon)."""
        if not self.entries:
            return np.array([], dtype=complex)
        rhos = self.rhos
        return rhos[geom.contains(rhos)]

    def distance(self, rho: complex) -> float:
        if not self.entries:
            return math.inf
        return float(np.min(np.abs(self.rhos - rho)))

    def lambda_distance(self, lam: complex) -> float:
        if not self.entries:
            return math.inf
        return float(np.min(np.abs(self.lambdas - lam)))

    def to_document(self) -> dict:
        return {
            "rmin": self.rmin,
            "rmax": self.rmax,
            "count": len(self.entries),
            "cvs": [e.to_document() for e in self.entries],
        }


# ---------------------------------------------------------------------------
# winding numbers over rectangles
# ---------------------------------------------------------------------------

def _box_path(box: tuple, pts_per_edge: int) -> np.ndarray:
    x0, x1, y0, y1 = box
    t = np.linspace(0.0, 1.0, pts_per_edge, endpoint=False)
    bottom = x0 + (x1 - x0) * t + 1j * y0
    right = x1 + 1j * (y0 + (y1 - y0) * t)
    top = x1 - (x1 - x0) * t + 1j * y1
    left = x0 + 1j * (y1 - (y1 - y0) * t)
    return np.concatenate([bottom, right, top, left])


def box_winding(f, box: tuple, min_pts: int = 16, max_pts: int = 8192,
                mag_floor: float = 0.0) -> int:
    """Winding number of f around a rectangle by phase continuation.

    Doubles the sampling until consecutive phase steps are small and the
    total is close to an integer; raises ContourError when the contour
    cannot be resolved (zero on or near the boundary).
    """
    pts = min_pts
    while True:
        path = _box_path(box, pts)
        vals = np.asarray(f(path))
        if np.any(~np.isfinite(vals)):
            raise ContourError("determinant not finite on contour")
        mags = np.abs(vals)
        scale = float(np.max(mags))
        if scale == 0.0 or np.min(mags) <= max(mag_floor, 1e-13 * scale):
            raise ContourError("determinant vanishes on the contour")
        rotated = np.roll(vals, -1) / vals
        steps = np.angle(rotated)
        total = float(np.sum(steps)) / TWO_PI
        if np.max(np.abs(steps)) < 1.5 and abs(total - round(total)) < 0.1:
            return int(round(total))
        if pts >= max_pts:
            raise ContourError(f"could not resolve winding over {box}")
        pts *= 2


def _perturbed_boxes(box: tuple, scale: float):
    """The box plus shifted variants used when a zero sits on the boundary."""
    x0, x1, y0, y1 = box
    yield box
    rng = np.random.default_rng(DEFAULTS.seed)
    for _ in range(5):
        dx, dy = rng.uniform(0.02, 0.07, size=2) * scale
        yield (x0 - dx, x1 + dx, y0 - dy, y1 + dy)


def robust_winding(f, box: tuple) -> tuple[int, tuple]:
    scale = max(box[1] - box[0], box[3] - box[2])
    last = None
    for candidate in _perturbed_boxes(box, scale):
        try:
            return box_winding(f, candidate), candidate
        except ContourError as exc:
            last = exc
    raise ContourError(f"contour through zero persisted after retries: {last}")


def circle_winding(f, center: complex, radius: float, min_pts: int = 32) -> int:
    pts = min_pts
    while pts <= 4096:
        theta = TWO_PI * np.arange(pts) / pts
        vals = np.asarray(f(center + radius * np.exp(1j * theta)))
        mags = np.abs(vals)
        if np.min(mags) > 1e-13 * np.max(mags):
            steps = np.angle(np.roll(vals, -1) / vals)
            total = float(np.sum(steps)) / TWO_PI
            if np.max(np.abs(steps)) < 1.5 and abs(total - round(total)) < 0.1:
                return int(round(total))
        pts *= 2
    raise ContourError("could not resolve circle winding")


# ---------------------------------------------------------------------------
# root search
# ---------------------------------------------------------------------------

def _newton_polish(f, z0: complex, multiplicity: int, tol: float, max_iter: int = 60) -> complex:
    z = complex(z0)
    h_base = 1e-7
    for _ in range(max_iter):
        h = h_base * (1.0 + abs(z))
        vals = np.asarray(f(np.array([z, z + h, z - h])))
        if not np.all(np.isfinite(vals)):
            break
        fz, fp, fm = (complex(v) for v in vals)
        deriv = (fp - fm) / (2.0 * h)
        if deriv == 0 or not np.isfinite(abs(deriv)):
            break
        step = multiplicity * fz / deriv
        if not np.isfinite(abs(step)):
            break
        z -= step
        if abs(step) < tol * (1.0 + abs(z)):
            break
    return z


def find_cvs(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
             rmin: float, rmax: float,
             merge_tol: float = DEFAULTS.merge_tol,
             root_tol: float = DEFAULTS.root_tol,
             box_size: float = DEFAULTS.box_size) -> Spectrum:
    """All characteristic values with rmin <= |rho| <= rmax.

    Argument-principle counting over rectangles covering the canonical
    angular range [0, 2pi/n] (extended by a margin so boundary-ray zeros are
    interior), recursive subdivision until each box isolates one zero group,
    Newton refinement and a winding check on a small verification circle.
    Candidates are mapped through lambda to the canonical branch and merged
    there, which removes branch-overlap aliases.
    """
    if rmin <= 0 or rmax <= rmin:
        raise SpecError("need 0 < rmin < rmax")
    n = nbc.order
    f = CharDet(nbc, expr)
    span = TWO_PI / n
    margin = DEFAULTS.im_margin

    boxes = _initial_boxes(rmin, rmax, span, margin, box_size)
    found: list[tuple[complex, int, float]] = []
    work = []
    for box in boxes:
        work.append(box)

    sep_floor = 10.0 * root_tol
    guard = 0
    while work:
        guard += 1
        if guard > 200000:
            raise NumericalError("box subdivision did not terminate")
        box = work.pop()
        if not _box_intersects_region(box, rmin, rmax, span, margin):
            continue
        try:
            w, used = robust_winding(f, box)
        except ContourError:
            # split and retry; a vanishing edge usually means a zero near the box line
            if max(box[1] - box[0], box[3] - box[2]) < sep_floor * (1.0 + rmax):
                raise
            work.extend(_split_box(box, jitter=0.31719))
            continue
        if w == 0:
            continue
        diam = math.hypot(box[1] - box[0], box[3] - box[2])
        center = complex((box[0] + box[1]) / 2.0, (box[2] + box[3]) / 2.0)
        if diam > 0.8 * (1.0 + abs(center)) and w > 0:
            work.extend(_split_box(box))
            continue
        refined = _newton_polish(f, center, w, root_tol)
        if not _inside_box(refined, used, slack=0.5 * diam + 0.1):
            work.extend(_split_box(box))
            continue
        ver_radius = max(5e-3 * (1.0 + abs(refined)), 4.0 * root_tol * (1.0 + abs(refined)))
        ver_radius = min(ver_radius, 0.45 * diam + 1e-3)
        try:
            w_ver = circle_winding(f, refined, ver_radius)
        except ContourError:
            w_ver = -1
        if w_ver == w:
            residual = abs(complex(np.asarray(f(np.array([refined])))[0]))
            found.append((refined, w, residual))
            continue
        if diam < sep_floor * (1.0 + abs(center)):
            # unresolvable cluster inside the merge tolerance: report merged
            residual = abs(complex(np.asarray(f(np.array([refined])))[0]))
            found.append((refined, w, residual))
            continue
        work.extend(_split_box(box))

    entries = _canonicalize(found, f, n, rmin, rmax, merge_tol, root_tol)
    return Spectrum(entries=tuple(entries), rmin=rmin, rmax=rmax)


def _initial_boxes(rmin, rmax, span, margin, box_size):
    outer = rmax + margin
    full_plane = span >= TWO_PI - 1e-12
    ylo = -outer if full_plane else -margin
    nx = max(1, int(math.ceil(2.0 * outer / box_size)))
    ny = max(1, int(math.ceil((outer - ylo) / box_size)))
    boxes = []
    for i in range(nx):
        for j in range(ny):
            x0 = -outer + 2.0 * outer * i / nx
            x1 = -outer + 2.0 * outer * (i + 1) / nx
            y0 = ylo + (outer - ylo) * j / ny
            y1 = ylo + (outer - ylo) * (j + 1) / ny
            boxes.append((x0, x1, y0, y1))
    return [b for b in boxes if _box_intersects_region(b, rmin, rmax, span, margin)]


def _sector_distance(z: complex, span: float) -> float:
    """Distance from z to the convex sector {0 <= arg <= span} (span <= pi)."""
    a = float(np.angle(z)) % TWO_PI
    if a <= span:
        return 0.0
    d0 = abs(z.imag) if z.real >= 0 else abs(z)
    rot = z * cmath.exp(-1j * span)
    d1 = abs(rot.imag) if rot.real >= 0 else abs(z)
    return min(d0, d1)


def _box_intersects_region(box, rmin, rmax, span, margin):
    """Conservative pruning test; never discards a box that meets the region."""
    x0, x1, y0, y1 = box
    corners = [complex(x0, y0), complex(x1, y0), complex(x0, y1), complex(x1, y1)]
    cx = min(max(0.0, x0), x1)
    cy = min(max(0.0, y0), y1)
    if math.hypot(cx, cy) > rmax + margin:
        return False
    if max(abs(c) for c in corners) < rmin - margin:
        return False
    if span >= TWO_PI - 1e-12:
        return True
    diam = math.hypot(x1 - x0, y1 - y0)
    return min(_sector_distance(c, span) for c in corners) <= margin + diam


def _split_box(box, jitter: float = 0.0):
    x0, x1, y0, y1 = box
    fx = 0.5 + jitter * 0.01
    fy = 0.5 - jitter * 0.01
    xm = x0 + (x1 - x0) * fx
    ym = y0 + (y1 - y0) * fy
    return [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]


def _inside_box(z: complex, box, slack: float) -> bool:
    x0, x1, y0, y1 = box
    return (x0 - slack <= z.real <= x1 + slack) and (y0 - slack <= z.imag <= y1 + slack)


def _canonicalize(found, f, n, rmin, rmax, merge_tol, root_tol):
    """Map candidates through lambda to the canonical branch, verify, dedupe."""
    polished = []
    for z, w, residual in found:
        lam = z ** n
        if abs(lam) == 0:
            continue
        if abs(lam.imag) <= 1e-9 * abs(lam):
            lam = complex(lam.real, 0.0)
        rho_c = rho_from_lambda(lam, n).rho
        if abs(rho_c - z) > merge_tol * (1.0 + abs(z)):
            # alias from the margin overlap: accept only if the canonical
            # point is itself a zero
            cand = _newton_polish(f, rho_c, w, root_tol)
            if abs(cand - rho_c) > merge_tol * (1.0 + abs(rho_c)):
                continue
            try:
                w_c = circle_winding(f, cand, 5e-3 * (1.0 + abs(cand)))
            except ContourError:
                continue
            if w_c < 1:
                continue
            z, w = cand, w_c
            residual = abs(complex(np.asarray(f(np.array([cand])))[0]))
            lam = z ** n
            if abs(lam.imag) <= 1e-9 * abs(lam):
                lam = complex(lam.real, 0.0)
        if not (rmin - 1e-9 <= abs(z) <= rmax + 1e-9):
            continue
        polished.append((z, w, residual, lam))

    polished.sort(key=lambda t: (abs(t[0]), float(np.angle(t[0])) % TWO_PI))
    merged: list[list] = []
    for z, w, residual, lam in polished:
        matched = False
        for slot in merged:
            scale = n * max(abs(z), 1.0) ** (n - 1)
            if abs(slot[3] - lam) <= merge_tol * (1.0 + abs(z)) * scale:
                if w > slot[1]:
                    slot[0], slot[1], slot[2], slot[3] = z, w, residual, lam
                matched = True
                break
        if not matched:
            merged.append([z, w, residual, lam])

    entries = [CvEntry(rho=complex(z), multiplicity=int(w), lam=complex(lam), residual=float(r))
               for z, w, r, lam in merged]
    entries.sort(key=lambda e: (abs(e.rho), float(np.angle(e.rho)) % TWO_PI))
    return entries


# ---------------------------------------------------------------------------
# numerical regularity determinant limit
# ---------------------------------------------------------------------------

def theta_limit_numeric(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                        nu: int, radii, tol: float = 1e-4) -> dict:
    """Delta(rho) along the bisector of S_nu(epsilon) with Richardson limit.

    Models the finite-rho error as c/rho; the extrapolated pair sequence and
    a convergence flag are returned together with the per-radius values.
    """
    radii = sorted(float(r) for r in radii)
    if len(radii) < 2:
        raise SpecError("need at least two radii")
    geom_angle = (nu + 0.5) * math.pi / nbc.order
    values = []
    for r in radii:
        rho = r * cmath.exp(1j * geom_angle)
        cs = canonical(make_system(expr, rho_point(rho, nbc.order), nu=nu))
        values.append(char_matrix(nbc, cs).det)
    extrapolated = []
    for (r1, v1), (r2, v2) in zip(zip(radii, values), zip(radii[1:], values[1:])):
        extrapolated.append((r2 * v2 - r1 * v1) / (r2 - r1))
    limit = extrapolated[-1]
    drift = abs(extrapolated[-1] - extrapolated[-2]) if len(extrapolated) >= 2 else 0.0
    converged = drift <= tol * (1.0 + abs(limit))
    return {
        "nu": nu,
        "radii": radii,
        "values": [complex_pair(v) for v in values],
        "extrapolated": [complex_pair(v) for v in extrapolated],
        "limit": limit,
        "converged": bool(converged),
        "drift": drift,
    }


# ---------------------------------------------------------------------------
# sparseness audit and probe sequences
# ---------------------------------------------------------------------------

def sparseness_audit(spectrum_or_points, geom: SectorGeometry) -> dict:
    """Count Gamma_epsilon members inside each hyperbolic circle K(cv, delta).

    The claim under audit: no circle holds more than n distinct cvs. Points
    with Im rho = 0 have empty circles (the Blaschke factor is unimodular on
    the axis), so purely real spectra audit trivially.
    """
    if isinstance(spectrum_or_points, Spectrum):
        pts = spectrum_or_points.in_subsector(geom)
    else:
        pts = np.asarray(spectrum_or_points, dtype=complex)
        pts = pts[geom.contains(pts)]
    counts = []
    for center in pts:
        inside = geom.in_hyperbolic_circle(center, pts)
        counts.append(int(np.sum(inside)))
    max_count = max(counts) if counts else 0
    return {
        "nu": geom.nu,
        "epsilon": geom.epsilon,
        "delta": geom.delta,
        "gamma_eps_size": int(len(pts)),
        "counts": counts,
        "max_count": max_count,
        "bound": geom.n,
        "violated": bool(max_count > geom.n),
    }


def inclusion_check(geom: SectorGeometry, center: complex, samples: int = 64) -> dict:
    """Sampled verification of D(rho,delta) subset K(rho,delta) subset D(rho,delta1)."""
    if center.imag <= 0:
        raise SpecError("inclusions are statements about the open upper half-plane")
    theta = TWO_PI * np.arange(samples) / samples
    inner = center + 0.999 * geom.disk_radius(center) * np.exp(1j * theta)
    ok_inner = bool(np.all(geom.in_hyperbolic_circle(center, inner)))
    # points of K's boundary: |b| = delta; parameterize via the disk model
    outer = center + 1.001 * geom.disk_radius(center, scaled=True) * np.exp(1j * theta)
    vals = np.abs((outer - center) / (outer - np.conj(center)))
    ok_outer = bool(np.all(vals >= geom.delta))
    return {"inner_in_K": ok_inner, "K_in_outer": ok_outer, "ok": ok_inner and ok_outer}


@dataclass(frozen=True)
class ProbePoint:
    m: int
    rho: complex
    radius_band: tuple
    clearance: float  # min over cvs of |b_cv(rho)|


def probe_sequence(geom: SectorGeometry, spectrum: Spectrum, m_max: int,
                   radial_samples: int = 24, angular_samples: int = 48) -> list[ProbePoint]:
    """One resolvent probe per dyadic band r_m = (1+delta)^m.

    Each band D_m = S_nu(eps) cap {r_m <= |rho| <= r_m (1+delta)} is sampled
    on a polar grid; hyperbolic circles around all cvs are removed through
    their enclosing disks D(cv, delta1) together with the boundary-angle
    strips swept by circles centered outside the subsector. The surviving
    point closest to the band center is returned; an empty band raises
    NumericalError with the excluded-area budget, which the nonemptiness
    lemma says cannot happen for small delta.
    """
    if spectrum.rmax < (1.0 + geom.delta) ** (m_max + 1):
        raise SpecError("spectrum must be computed out to (1+delta)^(m_max+1)")
    delta, delta1 = geom.delta, geom.delta1
    rhos = spectrum.rhos
    # angular strip width: circles centered on the boundary rays reach
    # sin(nu_ang) = delta1 * sin(arg ray) into the subsector
    lo = geom.bisector - geom.epsilon
    hi = geom.bisector + geom.epsilon
    strip_lo = math.asin(min(1.0, delta1 * math.sin(lo)))
    strip_hi = math.asin(min(1.0, delta1 * math.sin(hi)))

    probes = []
    for m in range(1, m_max + 1):
        r_m = (1.0 + delta) ** m
        radii = r_m * (1.0 + delta * np.linspace(0.08, 0.92, radial_samples))
        angles = np.linspace(lo + strip_lo, hi - strip_hi, angular_samples)
        rr, aa = np.meshgrid(radii, angles, indexing="ij")
        cand = (rr * np.exp(1j * aa)).ravel()
        good = np.ones(cand.size, dtype=bool)
        for cv in rhos:
            if abs(cv.imag) == 0.0:
                continue
            good &= np.abs(cand - cv) > delta1 * abs(cv.imag)
        excluded = 1.0 - float(np.mean(good))
        if not np.any(good):
            raise NumericalError(
                f"good domain empty for m={m}: excluded fraction {excluded:.3f} "
                f"(lemma budget C delta^2/eps + c delta1/eps)")
        center = r_m * (1.0 + delta / 2.0) * cmath.exp(1j * geom.bisector)
        pick = cand[good][np.argmin(np.abs(cand[good] - center))]
        clearance = math.inf
        for cv in rhos:
            if cv.imag > 0:
                clearance = min(clearance, float(abs(blaschke(cv, pick))))
        probes.append(ProbePoint(m=m, rho=complex(pick),
                                 radius_band=(r_m, r_m * (1.0 + delta)),
                                 clearance=clearance))
    return probes


# ---------------------------------------------------------------------------
# resolvent probe
# ---------------------------------------------------------------------------

def resolvent_probe(nbc: NormalizedBoundaryConditions, expr: DifferentialExpression,
                    rho: RhoPoint, spectrum: Spectrum | None = None,
                    quad_points: int = DEFAULTS.quad_points,
                    merge_tol: float = DEFAULTS.merge_tol) -> dict:
    """Norm estimates of the resolvent integral operator at rho.

    Returns the Hilbert-Schmidt bound (certified upper bound) and the power
    iteration value (sharp estimate) on a Gauss-Legendre grid, plus their
    products with |rho|^n for growth audits.
    """
    from .greens import greens_kernel_grid  # deferred to avoid a module cycle
    from .quadrature import operator_norms

    if spectrum is not None and spectrum.distance(rho.rho) <= merge_tol * (1.0 + abs(rho.rho)):
        raise AtCharacteristicValue(f"rho = {rho.rho} is within merge tolerance of a cv")
    x, w = gauss_legendre(quad_points)
    kernel = greens_kernel_grid(nbc, expr, rho, x, x)
    hs, power = operator_norms(kernel, w, w, iterations=DEFAULTS.power_iterations,
                               seed=DEFAULTS.seed)
    scale = abs(rho.rho) ** nbc.order
    return {
        "rho": complex_pair(rho.rho),
        "hs_bound": hs,
        "power_estimate": power,
        "hs_times_rho_n": hs * scale,
        "power_times_rho_n": power * scale,
    }


def parallel_map(fn, items):
    """Deterministic-order map subject to the BIRKHOFF_THREADS cap."""
    workers = worker_count()
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
