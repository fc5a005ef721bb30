"""Exact discrete-time LQR mathematics.

Solvers for the discrete Lyapunov and algebraic Riccati equations, optimal
gain synthesis, controllability rank, and quadratic stability margins. All
functions here are pure: given the same matrices they return the same values,
and nothing is cached or mutated, so results are safe to share across threads
or processes.

Conventions: the plant is x' = A x + B u with n states and m inputs; costs
are x'Qx + u'Ru per step with Q, R symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import IllConditioned, NonConvergence, UnstableMatrix

# Shared numeric policy. Margins are inflated by EIG_INFLATION so strict
# matrix inequalities extracted from eigensolves hold under round-off.
SYMMETRY_RTOL = 1e-8
EIG_INFLATION = 1.0 + 1e-9
COND_CAP = 1e12
DARE_RTOL = 1e-12
DARE_MAX_ITER = 100_000
DARE_RESIDUAL_TOL = 1e-9
LYAP_RTOL = 1e-13
LYAP_MAX_ITER = 200_000
LYAP_RESIDUAL_TOL = 1e-9
RANK_RTOL = 1e-10


def _clean_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got shape {M.shape}")
    if M.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _check_spd(M: np.ndarray, name: str) -> np.ndarray:
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    scale = np.linalg.norm(M, "fro")
    if np.linalg.norm(M - M.T, "fro") > SYMMETRY_RTOL * max(1.0, scale):
        raise ValueError(f"{name} is not symmetric")
    M = 0.5 * (M + M.T)
    eigs = np.linalg.eigvalsh(M)
    if eigs[0] <= 1e-14 * max(1.0, eigs[-1]):
        raise ValueError(f"{name} is not positive definite (min eig {eigs[0]:.3e})")
    return M


@dataclass(frozen=True)
class SystemMatrices:
    """State-transition matrix A (n x n) and input map B (n x m)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _clean_matrix(self.A, "A")
        B = _clean_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(
                f"B must have {A.shape[0]} rows to match A, got shape {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class CostWeights:
    """Stage-cost weights: Q on the state, R on the input, both SPD."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_spd(_clean_matrix(self.Q, "Q"), "Q"))
        object.__setattr__(self, "R", _check_spd(_clean_matrix(self.R, "R"), "R"))


@dataclass(frozen=True)
class LyapunovCertificate:
    """Solution P0 of A'P0 A - P0 + Q = 0 plus its contraction factor.

    rho0 is the smallest scalar (up to inflation) with A'P0 A <= rho0 P0,
    clamped into the open interval (0, 1).
    """

    P0: np.ndarray
    rho0: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class RiccatiSolution:
    """Stabilizing DARE solution and the quantities derived from it.

    P_star solves P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q.
    K_star = -(R + B'PB)^-1 B'PA is the optimal feedback gain.
    J_star = tr(W P_star) is the optimal average cost under noise covariance W.
    rho_star is the contraction factor of the optimal closed loop A + B K_star
    measured in the P_star metric.
    """

    P_star: np.ndarray
    K_star: np.ndarray
    rho_star: float
    J_star: float
    iterations: int
    residual: float


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    M = _clean_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got {M.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def stability_margin(M, P) -> float:
    """Smallest rho with M'PM <= rho P, for P symmetric positive definite.

    Equals the largest eigenvalue of P^{-1/2} M'PM P^{-1/2}; a value below 1
    certifies that x'Px contracts along x' = Mx.
    """
    M = _clean_matrix(M, "M")
    P = _check_spd(_clean_matrix(P, "P"), "P")
    lhs = M.T @ P @ M
    lhs = 0.5 * (lhs + lhs.T)
    eigs = scipy.linalg.eigh(lhs, P, eigvals_only=True)
    return float(max(eigs[-1], 0.0))


def controllability_rank(sys: SystemMatrices, rtol: float = RANK_RTOL) -> int:
    """Numerical rank of [B, AB, ..., A^{n-1} B] via singular values.

    Threshold is n * rtol * sigma_max, so the answer is scale invariant.
    """
    A, B, n = sys.A, sys.B, sys.n
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    ctrb = np.hstack(blocks)
    svals = np.linalg.svd(ctrb, compute_uv=False)
    if svals[0] == 0.0:
        return 0
    return int(np.sum(svals > n * rtol * svals[0]))


def solve_discrete_lyapunov(A, Q, rtol: float = LYAP_RTOL,
                            max_iter: int = LYAP_MAX_ITER,
                            residual_tol: float = LYAP_RESIDUAL_TOL) -> LyapunovCertificate:
    """Solve A'PA - P + Q = 0 for a Schur-stable A and SPD Q.

    Accumulates the series P = sum_j (A')^j Q A^j term by term until the
    current term is negligible relative to the partial sum. The certificate
    factor rho0 is the largest generalized eigenvalue of (A'P0 A, P0),
    inflated so the inequality A'P0 A < rho0 P0 holds strictly, and clamped
    into (0, 1).
    """
    A = _clean_matrix(A, "A")
    Q = _check_spd(_clean_matrix(Q, "Q"), "Q")
    if A.shape != Q.shape:
        raise ValueError(f"A and Q shapes differ: {A.shape} vs {Q.shape}")
    sr = spectral_radius(A)
    if sr >= 1.0 - 1e-12:
        raise UnstableMatrix(
            f"spectral radius {sr:.6f} >= 1; no Lyapunov solution exists",
            spectral_radius=sr)

    P = Q.copy()
    term = Q.copy()
    iterations = 0
    for iterations in range(1, max_iter + 1):
        term = A.T @ term @ A
        P += term
        if np.linalg.norm(term, "fro") <= rtol * np.linalg.norm(P, "fro"):
            break
    else:
        raise NonConvergence(
            f"Lyapunov series did not settle in {max_iter} iterations "
            f"(spectral radius {sr:.6f})", iterations=max_iter)

    P = 0.5 * (P + P.T)
    residual = float(np.linalg.norm(A.T @ P @ A - P + Q, "fro"))
    if residual > residual_tol * max(1.0, np.linalg.norm(Q, "fro")):
        raise NonConvergence(
            f"Lyapunov residual {residual:.3e} exceeds tolerance",
            iterations=iterations, residual=residual)

    rho0 = stability_margin(A, P) * EIG_INFLATION
    rho0 = min(max(rho0, 1e-15), 1.0 - 1e-15)
    return LyapunovCertificate(P0=P, rho0=rho0, iterations=iterations,
                               residual=residual)


def synthesize_gain(A, B, P, R) -> np.ndarray:
    """Optimal feedback gain K = -(R + B'PB)^-1 B'PA for value matrix P."""
    A = _clean_matrix(A, "A")
    B = _clean_matrix(B, "B")
    P = _check_spd(_clean_matrix(P, "P"), "P")
    R = _check_spd(_clean_matrix(R, "R"), "R")
    G = R + B.T @ P @ B
    G = 0.5 * (G + G.T)
    geigs = np.linalg.eigvalsh(G)
    if geigs[0] <= 0.0 or geigs[-1] / geigs[0] > COND_CAP:
        raise IllConditioned(
            f"R + B'PB condition number {geigs[-1] / max(geigs[0], 1e-300):.3e} "
            f"exceeds cap {COND_CAP:.1e}",
            condition_number=float(geigs[-1] / max(geigs[0], 1e-300)))
    return -np.linalg.solve(G, B.T @ P @ A)


def solve_dare(sys: SystemMatrices, cost: CostWeights, W=None,
               rtol: float = DARE_RTOL, max_iter: int = DARE_MAX_ITER,
               residual_tol: float = DARE_RESIDUAL_TOL) -> RiccatiSolution:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Iterates the Riccati map P <- A'PA - A'PB (R + B'PB)^-1 B'PA + Q from
    P = Q, symmetrizing each iterate, until the relative Frobenius change
    drops below rtol. For a stabilizable (A, B) with Q > 0 this converges
    to the unique SPD fixed point. W is the process-noise covariance used
    for the optimal average cost J_star = tr(W P_star); defaults to I.
    """
    A, B = sys.A, sys.B
    Q, R = cost.Q, cost.R
    if Q.shape[0] != sys.n:
        raise ValueError(f"Q is {Q.shape} but the system has n={sys.n}")
    if R.shape[0] != sys.m:
        raise ValueError(f"R is {R.shape} but the system has m={sys.m}")
    if W is None:
        W = np.eye(sys.n)
    else:
        W = _check_spd(_clean_matrix(W, "W"), "W")
        if W.shape[0] != sys.n:
            raise ValueError(f"W is {W.shape} but the system has n={sys.n}")

    P = Q.copy()
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for iterations in range(1, max_iter + 1):
            BtP = B.T @ P
            G = R + BtP @ B
            G = 0.5 * (G + G.T)
            geigs = np.linalg.eigvalsh(G)
            if geigs[0] <= 0.0 or geigs[-1] / geigs[0] > COND_CAP:
                raise IllConditioned(
                    f"R + B'PB became ill conditioned at iteration {iterations}",
                    condition_number=float(geigs[-1] / max(geigs[0], 1e-300)))
            BtPA = BtP @ A
            P_next = A.T @ P @ A - BtPA.T @ np.linalg.solve(G, BtPA) + Q
            P_next = 0.5 * (P_next + P_next.T)
            if not np.all(np.isfinite(P_next)):
                raise NonConvergence(
                    f"Riccati iteration diverged at iteration {iterations}; "
                    f"the pair may not be stabilizable", iterations=iterations)
            delta = np.linalg.norm(P_next - P, "fro")
            P = P_next
            norm_p = np.linalg.norm(P, "fro")
            # iterates beyond this scale cannot be a fixed point of a sane
            # problem, and Frobenius norms start overflowing to inf (which
            # would make the stopping rule inf <= rtol*inf spuriously true)
            if not np.isfinite(norm_p) or norm_p > 1e150:
                raise NonConvergence(
                    f"Riccati iterates grew past 1e150 by iteration "
                    f"{iterations}; the pair may not be stabilizable",
                    iterations=iterations)
            if delta <= rtol * norm_p:
                break
        else:
            raise NonConvergence(
                f"Riccati iteration did not converge in {max_iter} iterations; "
                f"the pair may not be stabilizable", iterations=max_iter)

    K = synthesize_gain(A, B, P, R)
    BtPA = B.T @ P @ A
    G = R + B.T @ P @ B
    residual = float(np.linalg.norm(
        A.T @ P @ A - BtPA.T @ np.linalg.solve(0.5 * (G + G.T), BtPA) + Q - P,
        "fro"))
    if residual > residual_tol * (1.0 + np.linalg.norm(P, "fro")):
        raise NonConvergence(
            f"DARE residual {residual:.3e} exceeds tolerance "
            f"{residual_tol:.1e}*(1+||P||)", iterations=iterations,
            residual=residual)

    rho_star = stability_margin(A + B @ K, P) * EIG_INFLATION
    rho_star = min(max(rho_star, 1e-15), 1.0 - 1e-15)
    J_star = float(np.trace(W @ P))
    return RiccatiSolution(P_star=P, K_star=K, rho_star=rho_star,
                           J_star=J_star, iterations=iterations,
                           residual=residual)
