"""Time stepping with perturbed diagonalisation plus low-rank correction.

Every implicit stage solve in this module reduces to the matrix equation

    M X + h * Lop X A^T = C,

with ``Lop = L`` for linear problems and ``Lop = J_Theta`` for the
simplified Newton directions.  :class:`StageSolver` solves it by replacing
``A`` with a diagonalisable perturbation, solving the decoupled shifted
systems stage by stage, and removing the perturbation error through a
Sylvester equation with a right-hand side of rank at most three.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import sylvester
from .errors import ConvergenceError, EigenError, SpirkError
from .shifted import as_sparse, factor_all, is_identity, resolve_threads, solve_all
from .tableaux import ButcherTableau, Scheme, build_tableau, validate_symmetry
from .transforms import CentroskewSplit, WTransformBundle, centroskew_split, w_transform

__all__ = [
    "LinearIVP",
    "NonlinearIVP",
    "SolveReport",
    "StageBlock",
    "StageSolver",
    "Trajectory",
    "make_split",
    "stages_linear_symmetric",
    "stages_linear_collocation",
    "advance_linear",
    "direct_stage_oracle",
    "newton_residual",
    "simplified_newton_direction",
    "stages_nonlinear",
    "advance_nonlinear",
    "integrate",
]

log = logging.getLogger(__name__)

PHASES = ("rhs_assembly", "stage_solves", "correction", "advance")


# -- problem containers -----------------------------------------------------------------


@dataclass
class LinearIVP:
    """``M y' = -L y + f(t)``, ``y(0) = y0`` on ``[0, T]`` with ``nt`` steps."""

    L: sp.spmatrix
    y0: np.ndarray
    T: float = 1.0
    nt: int = 1
    f: Optional[Callable[[float], np.ndarray]] = None
    M: Optional[sp.spmatrix] = None
    name: str = "linear"

    def __post_init__(self):
        self.L = as_sparse(self.L)
        self.y0 = np.asarray(self.y0, dtype=float).ravel()
        n = self.y0.size
        if self.L.shape != (n, n):
            raise ValueError(f"L has shape {self.L.shape}, state has size {n}")
        if self.M is not None:
            self.M = as_sparse(self.M)
            if self.M.shape != (n, n):
                raise ValueError("mass matrix shape does not match the state")
        if self.nt < 0:
            raise ValueError("nt must be nonnegative")

    @property
    def N(self) -> int:
        return self.y0.size

    @property
    def h(self) -> float:
        return self.T / self.nt if self.nt else 0.0

    @property
    def mass_is_identity(self) -> bool:
        return is_identity(self.M)

    def source(self, t) -> np.ndarray:
        if self.f is None:
            return np.zeros(self.N)
        return np.asarray(self.f(t), dtype=float)

    def mass(self) -> sp.spmatrix:
        return sp.identity(self.N, format="csr") if self.M is None else self.M


@dataclass
class NonlinearIVP:
    """``M u' = -Theta(u, t)`` with Jacobian ``J_Theta(u, t)``."""

    theta: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Callable[[np.ndarray, float], sp.spmatrix]
    y0: np.ndarray
    T: float = 1.0
    nt: int = 1
    M: Optional[sp.spmatrix] = None
    name: str = "nonlinear"

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float).ravel()
        if self.M is not None:
            self.M = as_sparse(self.M)

    @property
    def N(self) -> int:
        return self.y0.size

    @property
    def h(self) -> float:
        return self.T / self.nt if self.nt else 0.0

    @property
    def mass_is_identity(self) -> bool:
        return is_identity(self.M)

    def mass(self) -> sp.spmatrix:
        return sp.identity(self.N, format="csr") if self.M is None else self.M

    @classmethod
    def from_linear(cls, p: LinearIVP) -> "NonlinearIVP":
        """``Theta(u, t) = L u - f(t)``; same trajectory as ``p``."""
        L = p.L
        return cls(
            theta=lambda u, t: L @ u - p.source(t),
            jacobian=lambda u, t: L,
            y0=p.y0,
            T=p.T,
            nt=p.nt,
            M=p.M,
            name=f"{p.name}-as-nonlinear",
        )


@dataclass
class SolveReport:
    krylov_dim: int = 0
    newton_iters: int = 0
    residual: float = 0.0
    timings: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    imag_residue: float = 0.0
    krylov_dims: list = field(default_factory=list)
    newton_history: list = field(default_factory=list)

    def add_time(self, phase, seconds):
        self.timings[phase] = self.timings.get(phase, 0.0) + seconds

    def to_dict(self) -> dict:
        return {
            "krylov_dim": self.krylov_dim,
            "newton_iters": self.newton_iters,
            "residual": self.residual,
            "imag_residue": self.imag_residue,
            "krylov_dims": list(self.krylov_dims),
            "newton_history": list(self.newton_history),
            "timings": dict(self.timings),
        }


@dataclass
class StageBlock:
    K: np.ndarray
    tableau: ButcherTableau
    F: Optional[np.ndarray] = None
    report: SolveReport = field(default_factory=SolveReport)


class _Timer:
    def __init__(self, report, phase):
        self.report, self.phase = report, phase

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.report.add_time(self.phase, time.perf_counter() - self.t0)


# -- splits ------------------------------------------------------------------------------


SPLIT_COND_LIMIT = 1e6
REFINE_MAX = 3


def make_split(t: ButcherTableau, path="auto"):
    """Centroskew split for symmetric tableaux, W-transformation otherwise.

    ``path`` may force ``"symmetric"`` or ``"collocation"``.  Under ``"auto"``
    a symmetric tableau whose centroskew part is defective or has an
    eigenvector basis worse than ``SPLIT_COND_LIMIT`` falls back to the
    W-transformation (Lobatto IIIA/IIIB with even ``s``).
    """
    if path == "auto":
        if validate_symmetry(t).symmetric:
            try:
                split = centroskew_split(t)
            except EigenError:
                split = None
            if split is not None and split.eig.cond2 <= SPLIT_COND_LIMIT:
                return split
        return w_transform(t)
    if path == "symmetric":
        return centroskew_split(t)
    if path == "collocation":
        return w_transform(t)
    raise ValueError(f"unknown stage path {path!r}")


class StageSolver:
    """Solve ``M X + h Lop X A^T = C`` by diagonalised stage solves plus a correction.

    Parameters
    ----------
    split : CentroskewSplit or WTransformBundle
        Perturbation of the tableau matrix in use.
    M, Lop : sparse (N, N)
        Mass matrix (``None`` for identity) and the operator multiplying ``h``.
        ``Lop`` must be nonsingular: the correction uses ``Z = (h Lop)^{-1} M``.
    h : float
    variant : {"poly", "extended", "block"}, optional
        Sylvester projection space.  Defaults to polynomial Krylov for the
        symmetric path and block Krylov for the collocation path.
    """

    def __init__(self, split, M, Lop, h, variant=None, tol=sylvester.DEFAULT_TOL, kmax=None, threads=None):
        self.split = split
        self.tableau = split.tableau
        self.h = float(h)
        self.Lop = as_sparse(Lop)
        n = self.Lop.shape[0]
        self.identity_mass = is_identity(M)
        self.M = sp.identity(n, format="csr") if M is None else as_sparse(M)
        self.threads = resolve_threads(threads, cap=self.tableau.s)
        if variant is None:
            variant = "poly" if isinstance(split, CentroskewSplit) else "block"
        self.variant = variant
        self.tol = tol
        if kmax is None:
            kmax = sylvester.DEFAULT_KMAX_EXTENDED if variant == "extended" else sylvester.DEFAULT_KMAX
        self.kmax = kmax
        self.factors = factor_all(self.M, self.Lop, self.h, split.eig, threads=self.threads)
        self._hL = spla.splu(sp.csc_matrix(self.h * self.Lop))
        self._Mlu = None if self.identity_mass else spla.splu(sp.csc_matrix(self.M))

    @property
    def n(self) -> int:
        return self.Lop.shape[0]

    # operator Z = (h Lop)^{-1} M and its inverse
    def applyZ(self, x):
        y = x if self.identity_mass else self.M @ x
        if np.iscomplexobj(y):
            return self._hL.solve(np.ascontiguousarray(y.real)) + 1j * self._hL.solve(np.ascontiguousarray(y.imag))
        return self._hL.solve(np.ascontiguousarray(y))

    def applyZinv(self, x):
        y = self.h * (self.Lop @ x)
        if self.identity_mass:
            return y
        return self._Mlu.solve(np.ascontiguousarray(y))

    def _diagonal_solve(self, C, eig, report):
        """``M Y + h Lop Y T^T = C`` with ``T = V diag(lam) V^{-1}``."""
        R = C @ eig.inv_vectors.T
        with _Timer(report, "stage_solves"):
            Zc = solve_all(self.factors, R, threads=self.threads)
        Y = Zc @ eig.vectors.T
        nrm = np.linalg.norm(Y)
        report.imag_residue = max(report.imag_residue, float(np.linalg.norm(Y.imag) / nrm) if nrm else 0.0)
        return Y.real

    def _correct(self, U, V, R, D, report, tol=None):
        if not np.any(U) or not np.any(V):
            return np.zeros((self.n, R.shape[0]))
        tol = self.tol if tol is None else min(tol, self.tol)
        p = sylvester.SylvesterProblem(
            self.applyZ, R, U, V, applyZinv=self.applyZinv, tol=tol, kmax=self.kmax
        )
        with _Timer(report, "correction"):
            sol = sylvester.solve(p, self.variant, D=D)
        # a tightened target that stagnates is acceptable once the base target holds
        if not sol.converged and sol.residual_estimate > self.tol * p.rhs_norm():
            raise ConvergenceError(
                f"correction equation did not converge ({sol.variant}, dim {sol.space_dim}, "
                f"residual {sol.residual_estimate:.3e})",
                residual=sol.residual_estimate,
                iterations=sol.iterations,
            )
        report.krylov_dim = sol.space_dim
        report.krylov_dims.append(sol.space_dim)
        return sol.real_E()

    def solve(self, C, report=None, tol=None, target=None) -> np.ndarray:
        """Return ``X`` solving ``M X + h Lop X A^T = C`` for real ``C`` of shape (N, s).

        ``tol`` tightens the correction tolerance for this call only.  With
        ``target`` the relative stage residual is checked and the solve is
        repeated on the residual (at most ``REFINE_MAX`` times) until it is
        met; the correction residual reaches the stage equation multiplied
        by ``h Lop``, so a small Sylvester residual alone does not suffice.
        """
        report = SolveReport() if report is None else report
        C = np.asarray(C, dtype=float)
        X = self._solve_once(C, report, tol)
        if target is None:
            return X
        nrm = np.linalg.norm(C)
        for _ in range(REFINE_MAX):
            r = C - self.M @ X - self.h * (self.Lop @ X) @ self.tableau.A.T
            if nrm == 0 or np.linalg.norm(r) <= target * nrm:
                break
            X = X + self._solve_once(r, report, tol)
        return X

    def _solve_once(self, C, report, tol):
        t = self.tableau
        if isinstance(self.split, CentroskewSplit):
            Khat = self._diagonal_solve(C, self.split.eig, report)
            # (h Lop)^{-1} of -(h/2) Lop Khat b is available without a solve
            u = -(Khat @ self.split.rank1_right) * self.split.rank1_left[0]
            E = self._correct(u[:, None], np.ones((t.s, 1)), t.A.T, None, report, tol)
            return Khat + E
        w: WTransformBundle = self.split
        Ct = C @ (t.b[:, None] * w.W)
        Ghat = self._diagonal_solve(Ct, w.eig, report)
        cols = [Ghat @ w.C2[:, 0], Ghat @ w.C2[:, 1]]
        rows = [w.C1[:, 0], w.C1[:, 1]]
        if w.eD != 0.0:
            cols.insert(0, w.eD * self.applyZ(Ghat[:, -1]))
            rows.insert(0, np.eye(t.s)[-1])
        U = np.column_stack(cols)
        V = np.column_stack(rows)
        E = self._correct(U, V, w.Xs.T, w.D, report, tol)
        return (Ghat + E) @ w.W.T

    def residual(self, X, C) -> float:
        """Relative residual ``||M X + h Lop X A^T - C|| / ||C||``."""
        res = self.M @ X + self.h * (self.Lop @ X) @ self.tableau.A.T - C
        nrm = np.linalg.norm(C)
        return float(np.linalg.norm(res) / nrm) if nrm else float(np.linalg.norm(res))


# -- linear problems ---------------------------------------------------------------------


def _assemble_sources(p: LinearIVP, t: ButcherTableau, t_n, h, threads=1):
    times = t_n + t.c * h
    if p.f is None:
        return np.zeros((p.N, t.s))
    F = np.empty((p.N, t.s))

    def fill(j):
        F[:, j] = p.source(times[j])

    if threads > 1 and t.s > 1:
        with ThreadPoolExecutor(max_workers=min(threads, t.s)) as pool:
            list(pool.map(fill, range(t.s)))
    else:
        for j in range(t.s):
            fill(j)
    return F


def _linear_rhs(p: LinearIVP, t, y_n, t_n, h, threads, report):
    with _Timer(report, "rhs_assembly"):
        F = _assemble_sources(p, t, t_n, h, threads)
        C = F - (p.L @ y_n)[:, None]
    return C, F


def _linear_stages(p, split, y_n, t_n, h, solver, verify, **kw):
    if solver is None:
        solver = StageSolver(split, p.M, p.L, h, **kw)
    report = SolveReport()
    C, F = _linear_rhs(p, split.tableau, np.asarray(y_n, dtype=float), t_n, h, solver.threads, report)
    K = solver.solve(C, report)
    if verify:
        report.residual = solver.residual(K, C)
    return StageBlock(K=K, tableau=split.tableau, F=F, report=report)


def stages_linear_symmetric(p: LinearIVP, split: CentroskewSplit, y_n, t_n, h, solver=None, verify=False, **kw):
    """Stages of a symmetric scheme: centroskew solve plus rank-one correction."""
    if not isinstance(split, CentroskewSplit):
        raise TypeError("stages_linear_symmetric needs a CentroskewSplit")
    return _linear_stages(p, split, y_n, t_n, h, solver, verify, **kw)


def stages_linear_collocation(p: LinearIVP, w: WTransformBundle, y_n, t_n, h, solver=None, verify=False, **kw):
    """Stages of a collocation scheme through the W-transformed equation."""
    if not isinstance(w, WTransformBundle):
        raise TypeError("stages_linear_collocation needs a WTransformBundle")
    return _linear_stages(p, w, y_n, t_n, h, solver, verify, **kw)


def _mass_solve(p, x, lu=None):
    if p.mass_is_identity:
        return x
    if lu is not None:
        return lu.solve(x)
    return spla.spsolve(sp.csc_matrix(p.M), x)


def advance_linear(p: LinearIVP, K: StageBlock, y_n, h, mass_lu=None) -> np.ndarray:
    """``y_{n+1} = y_n + h M^{-1} K b``."""
    return np.asarray(y_n, dtype=float) + h * _mass_solve(p, K.K @ K.tableau.b, mass_lu)


def direct_stage_oracle(p: LinearIVP, t: ButcherTableau, y_n, t_n, h) -> np.ndarray:
    """Dense solve of ``(I (x) M + h A (x) L) vec(K) = -(1 (x) L) y_n + vec(F)``."""
    N, s = p.N, t.s
    if N * s > 5000:
        raise ValueError("direct_stage_oracle is limited to N*s <= 5000")
    M = p.mass().toarray()
    L = p.L.toarray()
    big = np.kron(np.eye(s), M) + h * np.kron(t.A, L)
    F = _assemble_sources(p, t, t_n, h)
    rhs = (F - (L @ np.asarray(y_n))[:, None]).reshape(-1, order="F")
    return np.linalg.solve(big, rhs).reshape(N, s, order="F")


# -- nonlinear problems ------------------------------------------------------------------


def _theta_columns(p: NonlinearIVP, kappa, t_n, h, t: ButcherTableau):
    return np.column_stack([p.theta(kappa[:, j], t_n + t.c[j] * h) for j in range(t.s)])


def newton_residual(p: NonlinearIVP, kappa, y_n, t_n, h, t: ButcherTableau) -> np.ndarray:
    """Column ``i``: ``M k_i - M y_n + h sum_j a_ij Theta(k_j, t_n + c_j h)``."""
    kappa = np.asarray(kappa, dtype=float)
    M = p.mass()
    th = _theta_columns(p, kappa, t_n, h, t)
    return M @ (kappa - np.asarray(y_n)[:, None]) + h * th @ t.A.T


def frozen_jacobian(p: NonlinearIVP, y_n, t_n, h, t: ButcherTableau, kappa=None, mode="midpoint"):
    """Single Jacobian shared by all stages of a step."""
    if mode == "midpoint":
        return as_sparse(p.jacobian(np.asarray(y_n), t_n + 0.5 * h))
    if mode == "average":
        kappa = np.repeat(np.asarray(y_n)[:, None], t.s, axis=1) if kappa is None else kappa
        J = sum(as_sparse(p.jacobian(kappa[:, j], t_n + t.c[j] * h)) for j in range(t.s))
        return J / t.s
    raise ValueError(f"unknown Jacobian mode {mode!r}")


def simplified_newton_direction(p: NonlinearIVP, split, kappa, residual, h, solver=None, J=None, **kw):
    """Direction ``Delta`` solving ``M Delta + h J Delta A^T = residual``.

    ``solver`` carries the frozen Jacobian; otherwise ``J`` must be given.
    """
    report = kw.pop("report", None)
    if solver is None:
        if J is None:
            raise ValueError("either solver or J is required")
        kw.setdefault("variant", "extended")
        solver = StageSolver(split, p.M, J, h, **kw)
    residual = np.asarray(residual, dtype=float)
    if not np.any(residual):
        return np.zeros_like(residual)
    return solver.solve(residual, report)


FORCING = 1e-2
FORCING_FLOOR = 1e-14


def forcing_tol(rnorm, newton_tol, forcing=FORCING, base=sylvester.DEFAULT_TOL):
    """Correction tolerance ``forcing * newton_tol / ||residual||`` clipped to ``[1e-14, base]``."""
    if rnorm <= 0:
        return base
    return float(min(base, max(FORCING_FLOOR, forcing * newton_tol / rnorm)))


def stages_nonlinear(
    p: NonlinearIVP,
    split,
    y_n,
    t_n,
    h,
    newton_tol=1e-10,
    newton_max=50,
    initial_guess="zero",
    jacobian_mode="midpoint",
    variant="extended",
    tol=sylvester.DEFAULT_TOL,
    threads=None,
    forcing=FORCING,
) -> StageBlock:
    """Simplified Newton iteration for the stage states of a nonlinear step.

    Each direction is solved to the relative stage residual
    :func:`forcing_tol`, so a linear ``Theta`` is resolved in a single
    iteration.

    Parameters
    ----------
    initial_guess : {"state", "zero"}
        ``"state"`` starts every stage at ``y_n``; ``"zero"`` at the zero vector.
    jacobian_mode : {"midpoint", "average"}
        Frozen Jacobian at ``(y_n, t_n + h/2)`` or the mean of the stage
        Jacobians at the initial guess.

    Raises
    ------
    ConvergenceError
        When ``newton_max`` iterations do not bring the residual below ``newton_tol``.
    """
    t = split.tableau
    y_n = np.asarray(y_n, dtype=float)
    report = SolveReport()
    if initial_guess == "state":
        kappa = np.repeat(y_n[:, None], t.s, axis=1)
    elif initial_guess == "zero":
        kappa = np.zeros((y_n.size, t.s))
    else:
        raise ValueError(f"unknown initial guess {initial_guess!r}")
    with _Timer(report, "rhs_assembly"):
        J = frozen_jacobian(p, y_n, t_n, h, t, kappa, jacobian_mode)
    solver = StageSolver(split, p.M, J, h, variant=variant, tol=tol, threads=threads)
    with _Timer(report, "rhs_assembly"):
        res = newton_residual(p, kappa, y_n, t_n, h, t)
    rnorm = float(np.linalg.norm(res))
    report.newton_history.append(rnorm)
    it = 0
    while rnorm > newton_tol:
        if it >= newton_max:
            raise ConvergenceError(
                f"simplified Newton did not converge in {newton_max} iterations (residual {rnorm:.3e})",
                residual=rnorm,
                iterations=it,
            )
        eta = forcing_tol(rnorm, newton_tol, forcing)
        delta = solver.solve(res, report, tol=eta, target=eta)
        kappa = kappa - delta
        it += 1
        with _Timer(report, "rhs_assembly"):
            res = newton_residual(p, kappa, y_n, t_n, h, t)
        rnorm = float(np.linalg.norm(res))
        report.newton_history.append(rnorm)
    report.newton_iters = it
    report.residual = rnorm
    if report.krylov_dims:
        report.krylov_dim = int(round(np.mean(report.krylov_dims)))
    return StageBlock(K=kappa, tableau=t, report=report)


def advance_nonlinear(p: NonlinearIVP, K: StageBlock, y_n, t_n, h, t: ButcherTableau = None, mass_lu=None):
    """``M y_{n+1} = M y_n - h sum_i b_i Theta(k_i, t_n + c_i h)``."""
    t = K.tableau if t is None else t
    th = _theta_columns(p, K.K, t_n, h, t)
    return np.asarray(y_n, dtype=float) - h * _mass_solve(p, th @ t.b, mass_lu)


# -- time loop ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_saved, N)
    reports: list
    tableau: ButcherTableau

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def checksum(self) -> float:
        return float(np.sum(self.final * np.arange(1, self.final.size + 1)) / self.final.size)


def integrate(
    p,
    scheme="gauss",
    s=2,
    *,
    path="auto",
    variant=None,
    tol=sylvester.DEFAULT_TOL,
    threads=None,
    verify=False,
    save_every=1,
    newton_tol=1e-10,
    newton_max=50,
    initial_guess="zero",
    jacobian_mode="midpoint",
    tableau=None,
) -> Trajectory:
    """Advance ``p`` over its ``nt`` steps with an ``s``-stage ``scheme``.

    For linear problems one :class:`StageSolver` (and so one set of shifted
    factorisations) is reused for every step.
    """
    t = build_tableau(scheme, s) if tableau is None else tableau
    split = make_split(t, path)
    h = p.h
    y = p.y0.copy()
    times, states, reports = [0.0], [y.copy()], []
    if p.nt == 0:
        return Trajectory(np.array(times), np.array(states), reports, t)
    mass_lu = None if p.mass_is_identity else spla.splu(sp.csc_matrix(p.M))
    if isinstance(p, LinearIVP):
        solver = StageSolver(split, p.M, p.L, h, variant=variant, tol=tol, threads=threads)
        for n in range(p.nt):
            t_n = n * h
            blk = _linear_stages(p, split, y, t_n, h, solver, verify)
            with _Timer(blk.report, "advance"):
                y = advance_linear(p, blk, y, h, mass_lu)
            reports.append(blk.report)
            if (n + 1) % save_every == 0 or n + 1 == p.nt:
                times.append((n + 1) * h)
                states.append(y.copy())
    elif isinstance(p, NonlinearIVP):
        for n in range(p.nt):
            t_n = n * h
            blk = stages_nonlinear(
                p,
                split,
                y,
                t_n,
                h,
                newton_tol=newton_tol,
                newton_max=newton_max,
                initial_guess=initial_guess,
                jacobian_mode=jacobian_mode,
                variant=variant or "extended",
                tol=tol,
                threads=threads,
            )
            with _Timer(blk.report, "advance"):
                y = advance_nonlinear(p, blk, y, t_n, h, t, mass_lu)
            reports.append(blk.report)
            if (n + 1) % save_every == 0 or n + 1 == p.nt:
                times.append((n + 1) * h)
                states.append(y.copy())
    else:
        raise SpirkError(f"cannot integrate object of type {type(p).__name__}")
    return Trajectory(np.array(times), np.array(states), reports, t)
