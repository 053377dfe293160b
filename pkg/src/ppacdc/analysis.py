"""Verification instruments: exact-arithmetic oracle, mass audit, spectral checks.

The linear part of the protocol, with stacked state ``z = [x; s]`` and
quantization error ``e``, reads ``z+ = (Gamma + Pi) z + (Pi - I) e`` where::

    Gamma = [[0, g I], [0, -g I]]        Pi = [[R, 0], [I - R, C]]

and augmenting with the (constant) error gives the 4n x 4n matrix
``Omega = [[Gamma + Pi, Pi - I], [0, I]]``. The helpers here rebuild these
matrices, check the unit eigenvalue of ``Gamma + Pi`` numerically, and verify
the 2n + 1 explicit eigenvectors of ``Omega`` for the eigenvalue one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ppacdc.graph import Digraph, is_strongly_connected, pull_weights, push_weights

CERT_CSV_HEADER = "n,gamma,simple_unit,second_modulus,residual,valid"


def reference_consensus(g: Digraph, x0, gamma: float, rounds: int) -> tuple[np.ndarray, np.ndarray]:
    """Unquantized surplus consensus; returns ``(xs, ss)`` of shape (rounds + 1, n)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    R, C = pull_weights(g), push_weights(g)
    x = np.array(x0, dtype=float)
    s = np.zeros(g.n)
    xs = np.empty((rounds + 1, g.n))
    ss = np.empty((rounds + 1, g.n))
    xs[0], ss[0] = x, s
    for k in range(rounds):
        x_next = R @ x + gamma * s
        s = C @ s + x - x_next
        x = x_next
        xs[k + 1], ss[k + 1] = x, s
    return xs, ss


def mass_audit(trace, x0) -> float:
    """Largest drift of sum(x + s) away from sum(x0) over the recorded snapshots."""
    total0 = math.fsum(x0)
    return max(abs(math.fsum(snap.x) + math.fsum(snap.s) - total0) for snap in trace.snapshots)


def verify_termination(trace, x0, epsilon: float) -> bool:
    if not trace.terminated:
        raise ValueError("trace did not terminate")
    x_ave = math.fsum(x0) / len(x0)
    return bool(np.max(np.abs(trace.final.x - x_ave)) <= epsilon)


@dataclass(frozen=True)
class SystemMatrices:
    Gamma: np.ndarray
    Pi: np.ndarray
    Omega: np.ndarray

    @property
    def linear(self) -> np.ndarray:
        """``Gamma + Pi``, the error-free iteration matrix on ``[x; s]``."""
        return self.Gamma + self.Pi


def build_system_matrices(g: Digraph, gamma: float) -> SystemMatrices:
    n = g.n
    R, C = pull_weights(g), push_weights(g)
    I, Z = np.eye(n), np.zeros((n, n))
    Gamma = np.block([[Z, gamma * I], [Z, -gamma * I]])
    Pi = np.block([[R, Z], [I - R, C]])
    I2, Z2 = np.eye(2 * n), np.zeros((2 * n, 2 * n))
    Omega = np.block([[Gamma + Pi, Pi - I2], [Z2, I2]])
    return SystemMatrices(Gamma, Pi, Omega)


def push_perron_vector(C: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Right eigenvector of column-stochastic C for eigenvalue 1, scaled to sum 1.

    Power iteration first; if it stalls (slowly mixing graphs) the null space
    of ``C - I`` is taken from an SVD instead.
    """
    n = C.shape[0]
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = C @ v
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - v)) <= tol:
            return nxt
        v = nxt
    _, _, vh = np.linalg.svd(C - np.eye(n))
    v = vh[-1]
    return v / v.sum()


def appendix_eigenvectors(g: Digraph, gamma: float) -> np.ndarray:
    """Columns w_1..w_{2n+1}: the claimed unit-eigenvalue eigenvectors of Omega.

    Uses the standard basis for the eta_i, the all-ones Perron vector of R, the
    Perron vector of C, and ``[1; 0]`` as the unit eigenvector of Gamma + Pi.
    """
    n = g.n
    C = push_weights(g)
    v_pull = np.ones(n)
    v_push = push_perron_vector(C)
    zeros = np.zeros(n)
    cols = []
    for i in range(n):
        eta = np.eye(n)[i]
        cols.append(np.concatenate([eta, zeros, -eta, zeros]))
    for i in range(n):
        eta = np.eye(n)[i]
        cols.append(np.concatenate([v_pull - eta, zeros, eta, v_push]))
    v_dag = np.concatenate([np.ones(n), zeros])
    cols.append(np.concatenate([v_dag, np.zeros(2 * n)]))
    return np.column_stack(cols)


def unit_eigenspace_basis(g: Digraph, gamma: float) -> np.ndarray:
    """A basis of the eigenvalue-one eigenspace of Omega, 2n + 1 columns.

    Since ``1^T (Pi - I) = 0``, the system ``(Gamma + Pi - I) p = -(Pi - I) q``
    is solvable for every ``q``; taking ``q`` over the standard basis of
    R^{2n} plus ``[v_dag; 0]`` spans the whole eigenspace. Unlike the columns of
    :func:`appendix_eigenvectors` (where ``w_i + w_{n+i}`` is the same vector
    for every ``i``), these are linearly independent.
    """
    n = g.n
    mats = build_system_matrices(g, gamma)
    A = mats.linear - np.eye(2 * n)
    B = mats.Pi - np.eye(2 * n)
    P = np.linalg.lstsq(A, -B, rcond=None)[0]
    v_dag = np.concatenate([np.ones(n), np.zeros(n)])
    top = np.column_stack([P, v_dag])
    bottom = np.column_stack([np.eye(2 * n), np.zeros(2 * n)])
    return np.vstack([top, bottom])


def _min_normalized_singular(W: np.ndarray) -> float:
    return float(np.linalg.svd(W / np.linalg.norm(W, axis=0), compute_uv=False).min())


@dataclass(frozen=True)
class SpectralReport:
    n: int
    gamma: float
    eigenvalues: tuple[complex, ...]
    second_largest_modulus: float
    unit_eigenvalue_simple: bool
    fixed_point_residual: float
    appendix_max_residual: float
    appendix_min_singular: float
    eigenspace_residual: float
    eigenspace_min_singular: float
    valid_gamma: bool
    converged: bool = True
    message: str = ""

    def to_text(self) -> str:
        lines = [
            f"spectral certificate  n={self.n}  gamma={self.gamma:g}",
            f"  eigensolver converged      : {self.converged}{'  (' + self.message + ')' if self.message else ''}",
            f"  simple unit eigenvalue     : {self.unit_eigenvalue_simple}",
            f"  second largest |lambda|    : {self.second_largest_modulus:.12g}",
            f"  (G+P)[1;0] residual        : {self.fixed_point_residual:.3e}",
            f"  max ||Omega w - w||_inf    : {self.appendix_max_residual:.3e}",
            f"  min singular value of W    : {self.appendix_min_singular:.3e}",
            f"  eigenspace basis residual  : {self.eigenspace_residual:.3e}",
            f"  eigenspace basis min s.v.  : {self.eigenspace_min_singular:.3e}",
            f"  gamma valid                : {self.valid_gamma}",
        ]
        return "\n".join(lines)

    def csv_row(self) -> str:
        return (
            f"{self.n},{self.gamma:.17g},{int(self.unit_eigenvalue_simple)},"
            f"{self.second_largest_modulus:.17g},{self.appendix_max_residual:.17g},{int(self.valid_gamma)}"
        )


def spectral_certificate(
    g: Digraph, gamma: float, tol: float = 1e-8, margin: float = 1e-6
) -> SpectralReport:
    """Numerical evidence that Gamma + Pi has one simple unit eigenvalue.

    ``valid_gamma`` requires exactly one eigenvalue within ``tol`` of 1 and all
    others with modulus at most ``1 - margin``.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not is_strongly_connected(g):
        raise ValueError("graph is not strongly connected")
    n = g.n
    mats = build_system_matrices(g, gamma)
    fixed = np.concatenate([np.ones(n), np.zeros(n)])
    fixed_res = float(np.max(np.abs(mats.linear @ fixed - fixed)))

    W = appendix_eigenvectors(g, gamma)
    residual = float(np.max(np.abs(mats.Omega @ W - W)))
    min_sv = _min_normalized_singular(W)
    V = unit_eigenspace_basis(g, gamma)
    basis_res = float(np.max(np.abs(mats.Omega @ V - V)))
    basis_sv = _min_normalized_singular(V)

    try:
        eig = np.linalg.eigvals(mats.linear)
    except np.linalg.LinAlgError as exc:
        return SpectralReport(
            n, gamma, (), math.nan, False, fixed_res, residual, min_sv, basis_res, basis_sv, False,
            converged=False, message=str(exc),
        )
    near_one = np.abs(eig - 1.0) <= tol
    others = np.abs(eig[~near_one])
    second = float(others.max()) if others.size else 0.0
    simple = int(near_one.sum()) == 1
    valid = simple and second <= 1.0 - margin
    order = np.argsort(-np.abs(eig), kind="stable")
    return SpectralReport(
        n, gamma, tuple(complex(v) for v in eig[order]), second, simple, fixed_res,
        residual, min_sv, basis_res, basis_sv, valid,
    )
