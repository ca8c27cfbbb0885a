"""Central defaults for tolerances, grid sizes and parallelism.

Every tolerance used by the library is pinned here so that runs are
reproducible and `birkhoff --print-defaults` can echo the full set.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, replace

DEFAULT_SEED = 0x5EED


@dataclass(frozen=True)
class Defaults:
    # algebraic classification
    theta_tol: float = 1e-9          # Hadamard-relative zero test for regularity determinants
    root_gap_tol: float = 1e-9       # simple-root separation for F(s)
    rank_tol: float = 1e-10          # relative rank tolerance in boundary normalization
    plucker_tol: float = 1e-12

    # root search
    root_tol: float = 1e-10          # Newton step tolerance, relative to 1+|rho|
    merge_tol: float = 1e-6          # distinct-cv separation, scaled by 1+|rho|
    residual_tol: float = 1e-8       # |det| acceptance at a refined zero, relative to local scale
    box_size: float = 2.0            # initial argument-principle box side
    im_margin: float = 0.25          # extension of the search region below arg = 0

    # sector geometry
    delta: float = 0.05
    # epsilon defaults to pi/(4n); stored as a factor of pi/n
    epsilon_factor: float = 0.25

    # fundamental systems
    fss_grid: int = 2048             # panels for the integral-equation constructor
    fss_tol: float = 1e-12
    fss_max_iter: int = 25
    r0_factor: float = 5.0           # R0 = r0_factor * (1 + sum of L1 coefficient norms)

    # kernels and operator norms
    quad_points: int = 256           # Gauss-Legendre points for kernel grids
    power_iterations: int = 30
    contour_points: int = 64         # trapezoid nodes for Riesz projectors and rho-derivatives

    seed: int = DEFAULT_SEED

    def epsilon(self, n: int) -> float:
        return self.epsilon_factor * math.pi / n

    def with_overrides(self, **kwargs) -> "Defaults":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULTS = Defaults()


def worker_count() -> int:
    """Parallelism cap from BIRKHOFF_THREADS (default 1; sweeps merge deterministically)."""
    raw = os.environ.get("BIRKHOFF_THREADS", "1")
    try:
        requested = int(raw)
    except ValueError:
        return 1
    return max(1, min(requested, os.cpu_count() or 1))
