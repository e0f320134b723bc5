"""Low-rank perturbations of the stage matrix that make it well diagonalisable.

Two constructions are provided:

* :func:`centroskew_split` writes the matrix of a symmetric scheme as
  ``A = S + 1 b^T / 2`` with ``J S J = -S``;
* :func:`w_transform` maps a collocation-type tableau to the nearly
  tridiagonal ``X_s = W^T B A W`` and repairs its three corner entries and
  the trailing entry of ``D = W^T B W`` with rank-one terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import EigenError, SymmetryError, TransformError
from .tableaux import ButcherTableau, Scheme, exchange_matrix, require_symmetric

__all__ = [
    "EigBundle",
    "CentroskewSplit",
    "WTransformBundle",
    "eigendecompose",
    "centroskew_split",
    "legendre_shifted",
    "w_matrix",
    "w_transform",
    "skew_correction",
    "xi",
    "closed_form_coefficients",
]

IMAG_TOL = 1e-12


@dataclass(frozen=True)
class EigBundle:
    """Eigendecomposition ``matrix = vectors @ diag(values) @ inv_vectors``."""

    values: np.ndarray
    vectors: np.ndarray
    inv_vectors: np.ndarray
    cond2: float
    unitary: bool
    partner: tuple  # partner[j] = index of the conjugate eigenvalue (j if real)

    @property
    def s(self) -> int:
        return self.values.size

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.inv_vectors


def _unit_columns(V):
    return V / np.linalg.norm(V, axis=0, keepdims=True)


def _pair_conjugates(values, vectors, scale):
    """Reorder so conjugate pairs are adjacent and their vectors are exact conjugates."""
    s = values.size
    tol = 1e3 * np.finfo(float).eps * max(scale, 1.0)
    order, used = [], np.zeros(s, dtype=bool)
    for j in np.argsort(-values.imag, kind="stable"):
        if used[j]:
            continue
        used[j] = True
        if abs(values[j].imag) <= tol:
            order.append((j, None))
            continue
        if values[j].imag < 0:
            # partner of a positive one is consumed on the positive pass
            order.append((j, None))
            continue
        cand = [k for k in range(s) if not used[k] and abs(values[k] - np.conj(values[j])) <= 1e3 * tol]
        if not cand:
            order.append((j, None))
            continue
        k = min(cand, key=lambda k: abs(values[k] - np.conj(values[j])))
        used[k] = True
        order.append((j, k))
    vals, vecs, partner = [], [], []
    for j, k in order:
        idx = len(vals)
        if k is None:
            v = vectors[:, j]
            lam = values[j]
            if abs(lam.imag) <= tol:
                lam = complex(lam.real, 0.0)
                # eigenvectors of real eigenvalues can be taken real
                phase = v[np.argmax(np.abs(v))]
                v = v * (abs(phase) / phase)
                if np.max(np.abs(v.imag)) <= 1e-10 * np.max(np.abs(v)):
                    v = v.real.astype(complex)
            vals.append(lam)
            vecs.append(v)
            partner.append(idx)
        else:
            lam = values[j]
            vals += [lam, np.conj(lam)]
            vecs += [vectors[:, j], np.conj(vectors[:, j])]
            partner += [idx + 1, idx]
    return np.array(vals), np.column_stack(vecs), tuple(partner)


def eigendecompose(Mx, structure="general") -> EigBundle:
    """Complex eigendecomposition of a small dense real matrix.

    Parameters
    ----------
    Mx : (s, s) array_like
        Matrix to diagonalise; ``s <= 64``.
    structure : {"general", "skew"}
        ``"skew"`` treats ``Mx`` as real skew-symmetric and diagonalises the
        Hermitian matrix ``1j * Mx``, giving a unitary basis and a purely
        imaginary spectrum.  ``"general"`` uses the dense nonsymmetric QR
        algorithm and normalises eigenvectors to unit 2-norm.

    Returns
    -------
    EigBundle
        Conjugate pairs are stored adjacently with conjugate eigenvectors.
    """
    Mx = np.asarray(Mx, dtype=float)
    s = Mx.shape[0]
    if Mx.shape != (s, s):
        raise ValueError("matrix must be square")
    if s > 64:
        raise ValueError("eigendecompose is a dense kernel for s <= 64")
    scale = np.linalg.norm(Mx)
    try:
        if structure == "skew":
            skew = 0.5 * (Mx - Mx.T)
            mu, Q = np.linalg.eigh(1j * skew)
            values = -1j * mu
            values, vectors, partner = _pair_conjugates(values, Q, scale)
            # re-orthonormalise: reordering and conjugation keep columns orthonormal
            # except for numerically repeated real (zero) eigenvalues
            vectors, _ = np.linalg.qr(vectors) if _needs_reortho(vectors) else (vectors, None)
            inv = vectors.conj().T
            unitary = True
        elif structure == "general":
            values, V = sla.eig(Mx)
            values, vectors, partner = _pair_conjugates(values, _unit_columns(V), scale)
            inv = np.linalg.inv(vectors)
            for j, k in enumerate(partner):
                if k > j:
                    inv[k] = np.conj(inv[j])
            unitary = False
        else:
            raise ValueError(f"unknown structure {structure!r}")
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"eigendecomposition failed: {exc}") from exc
    sv = np.linalg.svd(vectors, compute_uv=False)
    cond2 = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return EigBundle(values, vectors, inv, cond2, unitary, partner)


def _needs_reortho(Q):
    return np.linalg.norm(Q.conj().T @ Q - np.eye(Q.shape[1])) > 1e-12


# -- symmetric schemes -------------------------------------------------------------


@dataclass(frozen=True)
class CentroskewSplit:
    """``A = S + rank1_left rank1_right^T`` with ``S`` centroskew."""

    tableau: ButcherTableau
    S: np.ndarray
    rank1_left: np.ndarray
    rank1_right: np.ndarray
    eig: EigBundle

    @property
    def kind(self) -> str:
        return "centroskew"


def centroskew_split(t: ButcherTableau) -> CentroskewSplit:
    """Split the matrix of a symmetric tableau into centroskew part plus ``1 b^T / 2``.

    Raises
    ------
    SymmetryError
        If ``t`` violates any of the reflection identities.
    """
    require_symmetric(t)
    left = 0.5 * np.ones(t.s)
    S = t.A - np.outer(left, t.b)
    J = exchange_matrix(t.s)
    dev = np.max(np.abs(J @ S @ J + S))
    if dev > 1e-12:
        raise SymmetryError(f"S is not centroskew (deviation {dev:.3e})")
    return CentroskewSplit(t, S, left, t.b.copy(), eigendecompose(S))


# -- W transformation ----------------------------------------------------------------


def legendre_shifted(ell, x):
    """Orthonormal Legendre polynomial of degree ``ell`` on [0, 1].

    ``int_0^1 P_p P_q dx = delta_pq``; evaluated with the three-term recurrence.
    """
    x = np.asarray(x, dtype=float)
    t = 2.0 * x - 1.0
    p_prev, p = np.zeros_like(t), np.ones_like(t)
    for k in range(ell):
        # monic-free recurrence of the classical Legendre polynomials
        p_prev, p = p, ((2 * k + 1) * t * p - k * p_prev) / (k + 1)
    return np.sqrt(2 * ell + 1) * p


def w_matrix(c) -> np.ndarray:
    c = np.asarray(c, dtype=float).ravel()
    return np.column_stack([legendre_shifted(j, c) for j in range(c.size)])


def xi(k):
    k = np.asarray(k, dtype=float)
    return 1.0 / (2.0 * np.sqrt(4.0 * k**2 - 1.0))


def closed_form_coefficients(scheme, s):
    """Closed-form ``(zeta_{s,s-1}, zeta_{s-1,s}, zeta_{s,s}, d_s)`` of the W-transformed tableau."""
    scheme = Scheme.parse(scheme)
    x = float(xi(s - 1))
    if scheme is Scheme.GAUSS:
        return x, -x, 0.0, 1.0
    if scheme in (Scheme.RADAU_IA, Scheme.RADAU_IIA):
        return x, -x, 1.0 / (4 * s - 2), 1.0
    g = (2 * s - 1) / (s - 1)
    corner = (2 * s - 1) / ((2 * s - 2) * (s - 1))
    return {
        Scheme.LOBATTO_IIIA: (g * x, 0.0, 0.0, g),
        Scheme.LOBATTO_IIIB: (0.0, -g * x, 0.0, g),
        Scheme.LOBATTO_IIIC: (g * x, -g * x, corner, g),
        Scheme.LOBATTO_IIIC_STAR: (g * x, -g * x, -corner, g),
        Scheme.LOBATTO_IIID: (g * x, -g * x, 0.0, g),
    }[scheme]


@dataclass(frozen=True)
class WTransformBundle:
    tableau: ButcherTableau
    W: np.ndarray
    Xs: np.ndarray
    D: np.ndarray  # diagonal entries of W^T B W
    zeta: tuple  # (zeta_{s,s-1}, zeta_{s-1,s}, zeta_{s,s})
    Xhat: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    eD: float  # 1 - d_s
    eig: EigBundle

    @property
    def kind(self) -> str:
        return "w-transform"

    @property
    def d_s(self) -> float:
        return float(self.D[-1])


def skew_correction(Xs, zeta, scheme=None):
    """Rank-two term ``C1 C2^T`` turning ``Xs`` into a skew-symmetric matrix.

    ``C1[:, 0]`` removes the leading ``1/2`` and ``C1[:, 1]`` repairs the
    bottom-right corner.  For Lobatto IIIB the second column of ``C2`` is
    ``e_{s-1}`` and the repair entry sits in the last row, so the corrected
    matrix keeps a nonzero last row.

    Returns
    -------
    Xhat, C1, C2 : ndarray
    """
    Xs = np.asarray(Xs, dtype=float)
    s = Xs.shape[0]
    z_low, z_up, z_corner = zeta
    C1 = np.zeros((s, 2))
    C2 = np.zeros((s, 2))
    C1[0, 0] = -0.5
    C2[0, 0] = 1.0
    if s > 1:
        if scheme is not None and Scheme.parse(scheme) is Scheme.LOBATTO_IIIB:
            C1[s - 1, 1] = -(z_low + z_up)
            C2[s - 2, 1] = 1.0
        else:
            C1[s - 2, 1] = -(z_low + z_up)
            C1[s - 1, 1] = -z_corner
            C2[s - 1, 1] = 1.0
    return Xs + C1 @ C2.T, C1, C2


def w_transform(t: ButcherTableau) -> WTransformBundle:
    """Build the W-transformation bundle of a Gauss, Radau or Lobatto tableau.

    Raises
    ------
    TransformError
        If ``W^T B W`` is not diagonal to 1e-8, which means the nodes and
        weights do not belong to one quadrature rule.
    """
    s = t.s
    if t.scheme is not Scheme.GAUSS and s < 2:
        raise TransformError("W-transformation needs s >= 2 outside the Gauss family")
    W = w_matrix(t.c)
    Bmat = np.diag(t.b)
    Xs = W.T @ Bmat @ t.A @ W
    Dfull = W.T @ Bmat @ W
    off = Dfull - np.diag(np.diag(Dfull))
    if np.max(np.abs(off)) > 1e-8:
        raise TransformError(f"W^T B W is not diagonal (off-diagonal {np.max(np.abs(off)):.3e})")
    D = np.diag(Dfull).copy()
    if s == 1:
        zeta = (0.0, 0.0, 0.0)
    else:
        zeta = (float(Xs[s - 1, s - 2]), float(Xs[s - 2, s - 1]), float(Xs[s - 1, s - 1]))
    Xhat, C1, C2 = skew_correction(Xs, zeta, t.scheme)
    remainder = np.max(np.abs(Xhat + Xhat.T))
    if remainder > 1e-10:
        raise TransformError(f"corrected matrix is not skew-symmetric (remainder {remainder:.3e})")
    return WTransformBundle(
        tableau=t,
        W=W,
        Xs=Xs,
        D=D,
        zeta=zeta,
        Xhat=Xhat,
        C1=C1,
        C2=C2,
        eD=1.0 - float(D[-1]),
        eig=eigendecompose(Xhat, "skew"),
    )
