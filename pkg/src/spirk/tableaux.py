"""Butcher tableaux of the Gauss, Radau and Lobatto families.

Nodes are found by Newton iteration on Jacobi polynomials, weights and
stage coefficients by integrating Lagrange polynomials with Gauss-Legendre
quadrature.  No symbolic arithmetic is used anywhere.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import SymmetryError, TableauError

__all__ = [
    "Scheme",
    "ButcherTableau",
    "SymmetryReport",
    "OrderReport",
    "gauss_nodes_weights",
    "radau_iia_nodes_weights",
    "radau_ia_nodes_weights",
    "lobatto_nodes_weights",
    "collocation_matrix",
    "build_tableau",
    "validate_symmetry",
    "validate_order_conditions",
    "require_symmetric",
    "exchange_matrix",
]

NEWTON_TOL = 1e-15
NEWTON_MAXITER = 100


class Scheme(str, enum.Enum):
    GAUSS = "gauss"
    RADAU_IA = "radau-ia"
    RADAU_IIA = "radau-iia"
    LOBATTO_IIIA = "lobatto-iiia"
    LOBATTO_IIIB = "lobatto-iiib"
    LOBATTO_IIIC = "lobatto-iiic"
    LOBATTO_IIIC_STAR = "lobatto-iiic-star"
    LOBATTO_IIID = "lobatto-iiid"

    @classmethod
    def parse(cls, name) -> "Scheme":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-").replace(" ", "-")
        key = key.replace("*", "-star").replace("--", "-")
        aliases = {
            "gauss-legendre": "gauss",
            "radauia": "radau-ia",
            "radauiia": "radau-iia",
            "radau": "radau-iia",
            "lobattoiiia": "lobatto-iiia",
            "lobattoiiib": "lobatto-iiib",
            "lobattoiiic": "lobatto-iiic",
            "lobattoiiic-star": "lobatto-iiic-star",
            "lobattoiiicstar": "lobatto-iiic-star",
            "lobatto-iiicstar": "lobatto-iiic-star",
            "lobattoiiid": "lobatto-iiid",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise TableauError(f"unknown scheme {name!r}; expected one of {valid}") from None

    @property
    def is_lobatto(self) -> bool:
        return self.value.startswith("lobatto")

    @property
    def min_stages(self) -> int:
        return 1 if self is Scheme.GAUSS else 2

    @property
    def order(self):
        """Classical order as a function of the stage count."""
        if self is Scheme.GAUSS:
            return lambda s: 2 * s
        if self in (Scheme.RADAU_IA, Scheme.RADAU_IIA):
            return lambda s: 2 * s - 1
        return lambda s: 2 * s - 2

    @property
    def stage_order(self):
        """Largest ``q`` with ``C(q)``: ``A c^(k-1) = c^k / k`` for ``k <= q``."""
        if self in (Scheme.GAUSS, Scheme.RADAU_IIA, Scheme.LOBATTO_IIIA):
            return lambda s: s
        if self is Scheme.LOBATTO_IIIB:
            return lambda s: s - 2
        return lambda s: s - 1


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients ``(A, b, c)`` of an ``s``-stage Runge-Kutta method."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    scheme: Scheme | None = None
    s: int = field(init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).ravel()
        c = np.array(self.c, dtype=float).ravel()
        s = b.size
        if A.shape != (s, s) or c.size != s or s == 0:
            raise TableauError(f"inconsistent tableau shapes A{A.shape}, b({b.size}), c({c.size})")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "s", s)
        if self.scheme is not None:
            object.__setattr__(self, "scheme", Scheme.parse(self.scheme))

    @property
    def name(self) -> str:
        label = self.scheme.value if self.scheme is not None else "custom"
        return f"{label}-{self.s}"

    @property
    def satisfies_row_sums(self) -> bool:
        """False only for two-stage Lobatto IIIB, which satisfies C(0) alone."""
        return not (self.scheme is Scheme.LOBATTO_IIIB and self.s == 2)

    def check_invariants(self, tol=1e-12):
        """Raise :class:`TableauError` if the sum, weight or node conditions fail."""
        rowsum = np.max(np.abs(self.A.sum(axis=1) - self.c))
        if rowsum > tol and self.satisfies_row_sums:
            raise TableauError(f"row sums of A differ from c by {rowsum:.3e}")
        wsum = abs(self.b.sum() - 1.0)
        if wsum > tol:
            raise TableauError(f"weights sum to 1{wsum:+.3e}")
        if self.s > 1 and np.any(np.diff(self.c) <= 0):
            raise TableauError("nodes are not strictly increasing")
        if np.any(self.c < -tol) or np.any(self.c > 1 + tol):
            raise TableauError("nodes outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value if self.scheme is not None else None,
            "s": self.s,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
        }


# -- orthogonal polynomials -----------------------------------------------------


def _jacobi_with_derivative(n, alpha, beta, x):
    """Evaluate ``P_n^{(alpha, beta)}`` and its derivative by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    dp_prev = np.zeros_like(x)
    if n == 0:
        return p_prev, dp_prev
    ab = alpha + beta
    p = (alpha + 1.0) + 0.5 * (ab + 2.0) * (x - 1.0)
    dp = np.full_like(x, 0.5 * (ab + 2.0))
    for k in range(1, n):
        k2ab = 2 * k + ab
        a1 = 2.0 * (k + 1) * (k + ab + 1) * k2ab
        lin = (k2ab + 1) * (k2ab + 2) * k2ab
        const = (k2ab + 1) * (alpha**2 - beta**2)
        a3 = 2.0 * (k + alpha) * (k + beta) * (k2ab + 2)
        p_next = ((lin * x + const) * p - a3 * p_prev) / a1
        dp_next = ((lin * x + const) * dp + lin * p - a3 * dp_prev) / a1
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p, dp


def _jacobi_roots(n, alpha, beta):
    """Roots of ``P_n^{(alpha, beta)}`` on (-1, 1), ascending.

    Newton's method with suppression of the roots already found, started
    from Chebyshev points.
    """
    if n == 0:
        return np.empty(0)
    guesses = -np.cos(np.pi * (np.arange(1, n + 1) - 0.5) / n)
    roots = []
    for x in guesses:
        for it in range(NEWTON_MAXITER):
            p, dp = _jacobi_with_derivative(n, alpha, beta, x)
            p, dp = float(p), float(dp)
            found = np.asarray(roots)
            denom = dp - p * np.sum(1.0 / (x - found)) if found.size else dp
            step = p / denom
            x -= step
            if abs(step) <= NEWTON_TOL:
                break
        else:
            if abs(step) > 1e3 * NEWTON_TOL:
                raise TableauError(
                    f"Newton iteration for Jacobi({alpha},{beta}) root did not converge"
                )
        roots.append(x)
    return np.sort(np.asarray(roots))


def _gauss_legendre_unit(m):
    """``m``-point Gauss-Legendre nodes and weights on [0, 1]."""
    x = _jacobi_roots(m, 0.0, 0.0)
    _, dp = _jacobi_with_derivative(m, 0.0, 0.0, x)
    w = 2.0 / ((1.0 - x**2) * dp**2)
    c = 0.5 * (x + 1.0)
    c = 0.5 * (c + 1.0 - c[::-1])
    w = 0.25 * (w + w[::-1])
    return c, w


def _lagrange_basis(c, x):
    """Matrix ``L[p, j] = l_j(x_p)`` of the Lagrange basis on nodes ``c``."""
    c = np.asarray(c, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = c.size
    diff = x[:, None] - c[None, :]
    out = np.empty((x.size, s))
    for j in range(s):
        others = np.delete(np.arange(s), j)
        out[:, j] = np.prod(diff[:, others], axis=1) / np.prod(c[j] - c[others])
    return out


def _integrated_basis(c, upper):
    """``out[i, j] = int_0^{upper_i} l_j(t) dt`` for the Lagrange basis on ``c``."""
    c = np.asarray(c, dtype=float)
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    tq, wq = _gauss_legendre_unit(max(c.size, 1))
    out = np.empty((upper.size, c.size))
    for i, ci in enumerate(upper):
        out[i] = ci * (wq @ _lagrange_basis(c, ci * tq))
    return out


def _check_stages(s, minimum):
    if int(s) != s or s < minimum:
        raise TableauError(f"stage count must be an integer >= {minimum}, got {s}")
    return int(s)


def _weights_for(c):
    return _integrated_basis(c, [1.0])[0]


# -- nodes and weights ------------------------------------------------------------


def gauss_nodes_weights(s):
    """Gauss-Legendre nodes and weights on [0, 1].

    >>> c, b = gauss_nodes_weights(1)
    >>> c.tolist(), b.tolist()
    ([0.5], [1.0])
    """
    s = _check_stages(s, 1)
    return _gauss_legendre_unit(s)


def radau_iia_nodes_weights(s):
    """Right Radau nodes (``c_s = 1``) and weights for ``s >= 2``."""
    s = _check_stages(s, 2)
    interior = _jacobi_roots(s - 1, 1.0, 0.0)
    c = np.append(0.5 * (interior + 1.0), 1.0)
    return c, _weights_for(c)


def radau_ia_nodes_weights(s):
    """Left Radau nodes (``c_1 = 0``), the reflection ``c -> 1 - c`` of the right ones."""
    s = _check_stages(s, 2)
    c, b = radau_iia_nodes_weights(s)
    return (1.0 - c)[::-1].copy(), b[::-1].copy()


def lobatto_nodes_weights(s):
    """Lobatto nodes (``c_1 = 0``, ``c_s = 1``) and weights for ``s >= 2``."""
    s = _check_stages(s, 2)
    interior = _jacobi_roots(s - 2, 1.0, 1.0)
    c = np.concatenate(([0.0], 0.5 * (interior + 1.0), [1.0]))
    c = 0.5 * (c + 1.0 - c[::-1])
    b = _weights_for(c)
    b = 0.5 * (b + b[::-1])
    return c, b


def collocation_matrix(c):
    """Stage matrix ``a_ij = int_0^{c_i} l_j(t) dt`` of the collocation method on ``c``.

    Raises
    ------
    TableauError
        If two nodes coincide.
    """
    c = np.asarray(c, dtype=float).ravel()
    if c.size == 0:
        raise TableauError("empty node vector")
    if np.unique(c).size != c.size:
        raise TableauError("collocation nodes must be distinct")
    return _integrated_basis(c, c)


def _dual_matrix(coll, b):
    """Stage matrix satisfying ``b_i a_ij + b_j coll_ji = b_i b_j``."""
    return b[None, :] * (1.0 - coll.T / b[:, None])


def _barycentric_weights(c):
    s = c.size
    return np.array([1.0 / np.prod(c[j] - np.delete(c, j)) for j in range(s)])


def _lobatto_iiic_family(c, b, star):
    # C(s-1) leaves a one-dimensional freedom per row along the divided
    # difference weights; fix it by a_i1 = b_1 (IIIC) or a_is = 0 (IIIC*).
    base = collocation_matrix(c)
    omega = _barycentric_weights(c)
    if star:
        alpha = -base[:, -1] / omega[-1]
    else:
        alpha = (b[0] - base[:, 0]) / omega[0]
    return base + alpha[:, None] * omega[None, :]


def build_tableau(scheme, s) -> ButcherTableau:
    """Assemble the tableau of ``scheme`` with ``s`` stages.

    Parameters
    ----------
    scheme : Scheme or str
        Family name, e.g. ``"gauss"`` or ``"radau-iia"``.
    s : int
        Number of stages; at least 1 for Gauss and 2 for every other family.

    Returns
    -------
    ButcherTableau
        Coefficients satisfying the row-sum, weight-sum and node invariants.
    """
    scheme = Scheme.parse(scheme)
    s = _check_stages(s, scheme.min_stages)
    if scheme is Scheme.GAUSS:
        c, b = gauss_nodes_weights(s)
        A = collocation_matrix(c)
    elif scheme is Scheme.RADAU_IIA:
        c, b = radau_iia_nodes_weights(s)
        A = collocation_matrix(c)
    elif scheme is Scheme.RADAU_IA:
        c, b = radau_ia_nodes_weights(s)
        A = _dual_matrix(collocation_matrix(c), b)
    else:
        c, b = lobatto_nodes_weights(s)
        if scheme is Scheme.LOBATTO_IIIA:
            A = collocation_matrix(c)
        elif scheme is Scheme.LOBATTO_IIIB:
            A = _dual_matrix(collocation_matrix(c), b)
        elif scheme is Scheme.LOBATTO_IIIC:
            A = _lobatto_iiic_family(c, b, star=False)
        elif scheme is Scheme.LOBATTO_IIIC_STAR:
            A = _lobatto_iiic_family(c, b, star=True)
        else:
            A = 0.5 * (_lobatto_iiic_family(c, b, False) + _lobatto_iiic_family(c, b, True))
    tab = ButcherTableau(A=A, b=b, c=c, scheme=scheme)
    tab.check_invariants()
    return tab


# -- validation ---------------------------------------------------------------------


def exchange_matrix(s):
    return np.eye(s)[::-1]


@dataclass(frozen=True)
class SymmetryReport:
    nodes: float
    weights: float
    matrix: float
    tol: float = 1e-10

    @property
    def max_deviation(self) -> float:
        return max(self.nodes, self.weights, self.matrix)

    @property
    def symmetric(self) -> bool:
        return self.max_deviation <= self.tol

    def violated(self) -> list[str]:
        names = {"nodes": "c + Jc = 1", "weights": "b = Jb", "matrix": "JAJ + A = 1 b^T"}
        return [names[k] for k in names if getattr(self, k) > self.tol]


def validate_symmetry(t: ButcherTableau, tol=1e-10) -> SymmetryReport:
    """Measure how far ``t`` is from being invariant under ``t -> 1 - t``."""
    J = exchange_matrix(t.s)
    one = np.ones(t.s)
    return SymmetryReport(
        nodes=float(np.max(np.abs(t.c + J @ t.c - one))),
        weights=float(np.max(np.abs(t.b - J @ t.b))),
        matrix=float(np.max(np.abs(J @ t.A @ J + t.A - np.outer(one, t.b)))),
        tol=tol,
    )


def require_symmetric(t: ButcherTableau, tol=1e-10) -> SymmetryReport:
    rep = validate_symmetry(t, tol)
    if not rep.symmetric:
        raise SymmetryError(
            f"tableau {t.name} is not symmetric: violates {', '.join(rep.violated())} "
            f"(max deviation {rep.max_deviation:.3e})"
        )
    return rep


@dataclass(frozen=True)
class OrderReport:
    p: int
    quadrature: tuple  # B(k) violations, k = 1..p
    stage: tuple  # C(k) violations, k = 1..q

    @property
    def max_quadrature(self) -> float:
        return max(self.quadrature, default=0.0)

    @property
    def max_stage(self) -> float:
        return max(self.stage, default=0.0)

    def holds(self, tol=1e-10, stage=True) -> bool:
        worst = max(self.max_quadrature, self.max_stage) if stage else self.max_quadrature
        return worst <= tol


def validate_order_conditions(t: ButcherTableau, p: int = None, q: int = None) -> OrderReport:
    """Evaluate the simplifying conditions B(p) and C(q).

    ``p`` and ``q`` default to the classical and stage order of the family.
    """
    p = t.scheme.order(t.s) if p is None else p
    q = t.scheme.stage_order(t.s) if q is None else q
    if p < 1:
        raise TableauError("order must be >= 1")
    quad = tuple(
        float(abs(t.b @ t.c ** (k - 1) - 1.0 / k)) for k in range(1, p + 1)
    )
    stage = tuple(
        float(np.max(np.abs(t.A @ t.c ** (k - 1) - t.c**k / k))) for k in range(1, q + 1)
    )
    return OrderReport(p=p, quadrature=quad, stage=stage)
