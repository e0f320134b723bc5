"""Finite-difference model problems: 1D/2D heat transport and a nonlinear wave."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from .steppers import LinearIVP, NonlinearIVP

__all__ = [
    "ProblemSpec",
    "laplacian_1d",
    "laplacian_2d",
    "heat_1d",
    "heat_2d",
    "wave_matrix",
    "wave_nonlinear",
    "scalar_decay",
    "build_problem",
    "export_matrix_market",
    "PROBLEMS",
]

HEAT_BOUNDARY_VALUE = 2.0


def laplacian_1d(N: int, dx: float) -> sp.csr_matrix:
    """``tridiag(-1, 2, -1) / dx^2`` on ``N`` interior nodes."""
    e = np.ones(N)
    return sp.diags([-e[:-1], 2.0 * e, -e[:-1]], [-1, 0, 1], format="csr") / dx**2


def laplacian_2d(N: int, dx: float) -> sp.csr_matrix:
    """Five-point Laplacian on an ``N x N`` interior grid, x varying fastest."""
    T = laplacian_1d(N, dx)
    I = sp.identity(N, format="csr")
    return (sp.kron(I, T) + sp.kron(T, I)).tocsr()


def _forcing(t, steady):
    return 0.0 if steady else 0.5 * np.sin(2.0 * np.pi * t)


def heat_1d(N: int = 64, T: float = 1.0, nt: int = 10, steady: bool = False, g=HEAT_BOUNDARY_VALUE) -> LinearIVP:
    """``y' = -L y + f`` on ``(0, 1)`` with Dirichlet value ``g`` at both ends.

    ``f(x, t) = (1.5 - x) + sin(2 pi t) / 2`` sampled at the ``N`` interior
    nodes; the boundary values enter as ``g / dx^2`` at the two end nodes.
    ``steady=True`` drops the temporal term.
    """
    if N < 3:
        raise ValueError("heat_1d needs N >= 3")
    dx = 1.0 / (N + 1)
    x = dx * np.arange(1, N + 1)
    base = 1.5 - x
    base[0] += g / dx**2
    base[-1] += g / dx**2

    def f(t):
        return base + _forcing(t, steady)

    return LinearIVP(L=laplacian_1d(N, dx), y0=np.zeros(N), T=T, nt=nt, f=f, name="heat1d")


def heat_2d(N: int = 32, T: float = 1.0, nt: int = 10, steady: bool = False, g=HEAT_BOUNDARY_VALUE) -> LinearIVP:
    """Unit-square analogue of :func:`heat_1d` with source ``(1.5 - x)(1 - y) + sin(2 pi t) / 2``."""
    if N < 3:
        raise ValueError("heat_2d needs N >= 3 per axis")
    dx = 1.0 / (N + 1)
    x = dx * np.arange(1, N + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    base = ((1.5 - X) * (1.0 - Y)).ravel()
    # boundary neighbours: edges contribute once, corners twice
    bc = np.zeros((N, N))
    bc[0, :] += 1
    bc[-1, :] += 1
    bc[:, 0] += 1
    bc[:, -1] += 1
    base = base + g / dx**2 * bc.ravel()

    def f(t):
        return base + _forcing(t, steady)

    return LinearIVP(L=laplacian_2d(N, dx), y0=np.zeros(N * N), T=T, nt=nt, f=f, name="heat2d")


def wave_matrix(Nx: int, dx: float, variant: str = "unit-rows") -> sp.csr_matrix:
    """Second-difference matrix ``B`` of the wave problem.

    ``"unit-rows"`` keeps first/last rows ``(1, 0, ...)/dx^2`` and
    ``(..., 0, 1)/dx^2`` on a grid including both end points;
    ``"dirichlet"`` is ``tridiag(1, -2, 1)/dx^2`` on interior nodes only.
    """
    e = np.ones(Nx)
    B = sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], format="lil")
    if variant == "unit-rows":
        B[0, 0], B[0, 1] = 1.0, 0.0
        B[-1, -1], B[-1, -2] = 1.0, 0.0
    elif variant != "dirichlet":
        raise ValueError(f"unknown wave boundary variant {variant!r}")
    return (B.tocsr() / dx**2).tocsr()


def wave_nonlinear(
    Nx: int = 128, beta: float = 10.0, T: float = 0.1, nt: int = 127, variant: str = "unit-rows"
) -> NonlinearIVP:
    """``u_tt = u_xx + beta u^2`` on ``(-1/2, 1/2)`` as the first-order system in ``[u; v]``.

    ``Theta(w) = -([[0, I], [B, 0]] w + [0; beta u^2])``, so that
    ``w' = -Theta(w)``.  With ``variant="unit-rows"`` the ``Nx`` nodes include
    both end points (``dx = 1/(Nx-1)``); with ``"dirichlet"`` they are the
    interior nodes (``dx = 1/(Nx+1)``).
    """
    if Nx < 3:
        raise ValueError("wave_nonlinear needs Nx >= 3")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if variant == "unit-rows":
        dx = 1.0 / (Nx - 1)
        x = -0.5 + dx * np.arange(Nx)
    else:
        dx = 1.0 / (Nx + 1)
        x = -0.5 + dx * np.arange(1, Nx + 1)
    B = wave_matrix(Nx, dx, variant)
    I = sp.identity(Nx, format="csr")
    Z = sp.csr_matrix((Nx, Nx))
    G = sp.bmat([[Z, I], [B, Z]], format="csr")

    def theta(w, t):
        u = w[:Nx]
        out = G @ w
        out[Nx:] += beta * u * u
        return -out

    def jacobian(w, t):
        u = w[:Nx]
        lower = B + sp.diags(2.0 * beta * u)
        return -sp.bmat([[Z, I], [lower, Z]], format="csr")

    y0 = np.concatenate([np.exp(-100.0 * x**2), np.zeros(Nx)])
    p = NonlinearIVP(theta=theta, jacobian=jacobian, y0=y0, T=T, nt=nt, name="wave")
    p.grid = x
    p.dx = dx
    p.B = B
    return p


def scalar_decay(lam: float = 1.0, T: float = 1.0, nt: int = 4, y0: float = 1.0) -> LinearIVP:
    """``y' = -lam y``, exact solution ``y0 exp(-lam t)``."""
    return LinearIVP(L=sp.csr_matrix([[lam]]), y0=np.array([y0]), T=T, nt=nt, name="decay")


@dataclass(frozen=True)
class ProblemSpec:
    """Named, parameterised problem; :meth:`build` returns a fresh IVP."""

    name: str
    N_space: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in PROBLEMS:
            raise ValueError(f"unknown problem {self.name!r}; choose from {sorted(PROBLEMS)}")
        if self.N_space < 3 and self.name != "decay":
            raise ValueError("N_space must be >= 3")

    def build(self, T=None, nt=None):
        kw = dict(self.params)
        if T is not None:
            kw["T"] = T
        if nt is not None:
            kw["nt"] = nt
        builder: Callable = PROBLEMS[self.name]
        if self.name == "decay":
            return builder(**kw)
        return builder(self.N_space, **kw)

    def to_dict(self):
        return {"name": self.name, "N_space": self.N_space, "params": dict(self.params)}


PROBLEMS = {
    "heat1d": heat_1d,
    "heat2d": heat_2d,
    "wave": wave_nonlinear,
    "decay": scalar_decay,
}


def build_problem(name: str, N: int, **params):
    return ProblemSpec(name, N, params).build()


def export_matrix_market(p, out_dir) -> list[Path]:
    """Write the operators of ``p`` as Matrix Market files; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(p, LinearIVP):
        mats = {"L": p.L, "M": p.mass()}
    else:
        mats = {"J0": p.jacobian(p.y0, 0.0), "M": p.mass()}
        if hasattr(p, "B"):
            mats["B"] = p.B
    for key, A in mats.items():
        path = out / f"{p.name}_{key}.mtx"
        scipy.io.mmwrite(str(path), sp.coo_matrix(A))
        written.append(path)
    return written
