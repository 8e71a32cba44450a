"""1D spatial discretizations and the benchmark problems built on them.

Every operator is returned as the sparse, positive semidefinite ``A_h`` in
u' = -A_h u + f, matching the stepping code in :mod:`ocpara.tableau`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .tableau import LinearEvolution, SemilinearEvolution

NEUMANN_CLAMP = 1e-8

DIRICHLET = "Dirichlet0"
NEUMANN = "Neumann0"


@dataclass(frozen=True)
class Grid1D:
    """M equal cells on (0, L).

    Dirichlet grids carry the M-1 interior vertices; Neumann grids carry the
    M cell centers.
    """

    L: float
    M: int
    bc: str = DIRICHLET

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("need M >= 2")
        if self.bc not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary condition {self.bc!r}")

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def x(self) -> np.ndarray:
        h = self.h
        if self.bc == DIRICHLET:
            return h * np.arange(1, self.M)
        return h * (np.arange(self.M) + 0.5)

    @property
    def size(self) -> int:
        return self.M - 1 if self.bc == DIRICHLET else self.M

    def l2_norm(self, v) -> float:
        """Discrete L2(0, L) norm."""
        v = np.asarray(v)
        return float(math.sqrt(self.h * np.dot(v, v)))


def _tridiag(n: int, diag) -> sp.csr_matrix:
    off = -np.ones(n - 1)
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def assemble_diffusion(grid: Grid1D) -> sp.csr_matrix:
    """Lumped piecewise-linear FEM for -u'' with zero Dirichlet data: tridiag(-1, 2, -1)/h^2."""
    if grid.bc != DIRICHLET:
        raise ValueError("FEM diffusion operator needs a Dirichlet grid")
    n = grid.size
    return _tridiag(n, 2.0 * np.ones(n)) / grid.h**2


def assemble_neumann(grid: Grid1D) -> sp.csr_matrix:
    """Cell-centered finite differences for -u'' with zero flux at both ends."""
    if grid.bc != NEUMANN:
        raise ValueError("Neumann operator needs a Neumann grid")
    n = grid.size
    d = 2.0 * np.ones(n)
    d[0] = d[-1] = 1.0
    return _tridiag(n, d) / grid.h**2


def burgers_advection(h: float):
    """-(u^2/2)_x by centered differences on the flux, zero boundary values.

    Returns (f, jac, jac_bands).
    """

    def f(u):
        F = 0.5 * u * u
        out = np.empty_like(u)
        out[1:-1] = F[:-2] - F[2:]
        out[0] = -F[1]
        out[-1] = F[-2]
        return out / (2.0 * h)

    def jac_bands(u):
        # d f_i / d u_{i-1} and d f_i / d u_{i+1}
        return u[:-1] / (2.0 * h), None, -u[1:] / (2.0 * h)

    def jac(u):
        lower, _, upper = jac_bands(u)
        return sp.diags([lower, np.zeros(len(u)), upper], [-1, 0, 1], format="csr")

    return f, jac, jac_bands


def allen_cahn_reaction(eps2: float):
    """eps^-2 (u - u^3); returns (f, jac, jac_bands)."""

    def f(u):
        return (u - u**3) / eps2

    def jac_bands(u):
        return None, (1.0 - 3.0 * u * u) / eps2, None

    def jac(u):
        return sp.diags(jac_bands(u)[1], format="csr")

    return f, jac, jac_bands


def eigen_bounds(A, iters: int = 20, tol: float = 1e-6) -> tuple[float, float]:
    """(lam_min, lam_max) of a symmetric operator.

    The upper value is the Gershgorin bound; the lower one comes from inverse
    power iteration. A singular (Neumann) operator reports 0.
    """
    A = sp.csr_matrix(A)
    if abs(A - A.T).max() > 1e-12 * abs(A).max():
        raise ValueError("eigen_bounds needs a symmetric operator")
    n = A.shape[0]
    d = A.diagonal()
    radius = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    lam_max = float(np.max(d + radius))

    ones = np.ones(n)
    if np.max(np.abs(A @ ones)) <= 1e-12 * lam_max:
        return 0.0, lam_max
    lu = spla.splu(A.tocsc())
    # smooth start vector so the lowest mode is represented from the outset
    v = np.sin(np.pi * (np.arange(n) + 1) / (n + 1)) + 1e-3 * np.cos(np.arange(n))
    v /= np.linalg.norm(v)
    lam = math.inf
    for _ in range(iters):
        w = lu.solve(v)
        w /= np.linalg.norm(w)
        new = float(w @ (A @ w))
        v = w
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam, lam_max


def spectrum_bounds(A) -> tuple[float, float]:
    """eigen_bounds with the zero eigenvalue of a Neumann operator clamped away."""
    lo, hi = eigen_bounds(A)
    return max(lo, NEUMANN_CLAMP), hi


def indicator(x, a: float, b: float) -> np.ndarray:
    """Nodal samples of the characteristic function of (a, b), 1/2 on a jump node."""
    x = np.asarray(x, float)
    tol = 1e-12 * max(1.0, abs(b))
    out = ((x > a + tol) & (x < b - tol)).astype(float)
    out[np.isclose(x, a, rtol=0, atol=tol) | np.isclose(x, b, rtol=0, atol=tol)] = 0.5
    return out


@dataclass(eq=False)
class ProblemInstance:
    tag: str
    grid: Grid1D
    T: float
    evolution: LinearEvolution | SemilinearEvolution
    params: dict

    @property
    def linear(self) -> bool:
        return isinstance(self.evolution, LinearEvolution)

    def norm(self, v) -> float:
        return self.grid.l2_norm(v)


def _diffusion(case: str, M: int, T: float | None) -> ProblemInstance:
    grid = Grid1D(math.pi, M, DIRICHLET)
    x = grid.x
    A = assemble_diffusion(grid)
    half = math.pi / 2
    forcing: Callable | None
    if case == "a":
        u0 = x**10 * (x - math.pi) ** 10 / half**10
        forcing, T_def = None, 1.0
    elif case == "b":
        u0 = indicator(x, 0.0, half)
        sx = np.sin(x)
        forcing, T_def = (lambda t: math.cos(t) * sx), 1.0
    elif case == "c":
        u0 = 2.0 * indicator(x, 0.0, half) - 1.0
        forcing, T_def = (lambda t: 50.0 * np.sin(2 * math.pi * (x + t))), 100.0
    else:
        raise ValueError(f"unknown diffusion case {case!r}")
    return ProblemInstance(
        f"diffusion-{case}", grid, T_def if T is None else T, LinearEvolution(A, u0, forcing), {}
    )


def _allen_cahn(eps2: float, M: int, T: float | None) -> ProblemInstance:
    grid = Grid1D(math.pi, M, NEUMANN)
    A = assemble_neumann(grid)
    u0 = 1.0 - 2.0 * indicator(grid.x, math.pi / 2, math.pi)
    f, jac, bands = allen_cahn_reaction(eps2)
    return ProblemInstance(
        f"allen-cahn:eps2={eps2:g}", grid, 1.0 if T is None else T,
        SemilinearEvolution(A, u0, f, jac, bands), {"eps2": eps2},
    )


def _burgers(nu: float, M: int, T: float | None) -> ProblemInstance:
    grid = Grid1D(1.0, M, DIRICHLET)
    A = nu * assemble_diffusion(grid)
    u0 = indicator(grid.x, 0.0, 0.5)
    f, jac, bands = burgers_advection(grid.h)
    return ProblemInstance(
        f"burgers:nu={nu:g}", grid, 1.0 if T is None else T,
        SemilinearEvolution(A, u0, f, jac, bands), {"nu": nu},
    )


_TAG = re.compile(r"^(allen-cahn:eps2|burgers:nu)=(.+)$")


def make_problem(tag: str, M: int = 1000, T: float | None = None) -> ProblemInstance:
    """Build a benchmark problem from its tag; ``T`` overrides the default horizon."""
    key = tag.strip().lower()
    if key.startswith("diffusion-"):
        return _diffusion(key[len("diffusion-"):], M, T)
    m = _TAG.match(key)
    if m:
        try:
            value = float(m.group(2))
        except ValueError:
            raise ValueError(f"bad parameter in problem tag {tag!r}") from None
        if value <= 0:
            raise ValueError("problem parameter must be positive")
        if m.group(1).startswith("allen"):
            return _allen_cahn(value, M, T)
        return _burgers(value, M, T)
    raise ValueError(f"unknown problem tag {tag!r}")
