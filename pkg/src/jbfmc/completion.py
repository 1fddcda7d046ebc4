"""Rank-constrained completion of the masked matrix A = H X, and recovery of H.

``run_rgrad`` is the Riemannian gradient iteration with an exact step size;
``run_iht`` and ``run_ist`` are the fixed-step hard/soft singular value
thresholding baselines. Masks may carry phases, the data term always uses
the conjugate mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SingularPilotError",
    "CompletionProblem",
    "CompletionResult",
    "CompletionOptions",
    "hard_threshold",
    "soft_threshold",
    "project_subspace",
    "project_tangent",
    "rgrad_step",
    "run_rgrad",
    "run_iht",
    "run_ist",
    "recover_H",
    "numerical_rank",
]

RANK_TOL = 1e-12


class SingularPilotError(np.linalg.LinAlgError):
    """The pilot matrix X does not have full row rank."""


@dataclass(frozen=True)
class CompletionProblem:
    observed: np.ndarray  # N x T, zero off the mask
    mask: np.ndarray  # N x T, 0 or unit modulus
    rank: int

    def __post_init__(self):
        observed = np.asarray(self.observed, dtype=complex)
        mask = np.asarray(self.mask, dtype=complex)
        if observed.shape != mask.shape:
            raise ValueError(f"observed {observed.shape} and mask {mask.shape} differ")
        if not 1 <= self.rank <= min(observed.shape):
            raise ValueError(f"rank {self.rank} outside [1, {min(observed.shape)}]")
        if np.any(observed[mask == 0]):
            raise ValueError("observed matrix must vanish off the mask")
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "mask", mask)

    @property
    def conj_mask(self) -> np.ndarray:
        return self.mask.conj()

    def objective(self, A: np.ndarray) -> float:
        return 0.5 * float(np.linalg.norm(self.conj_mask * (A - self.observed)) ** 2)


@dataclass(frozen=True)
class CompletionOptions:
    max_iter: int = 500  # K_max
    tol: float = 1e-10  # relative objective change
    atol: float = 1e-20  # stop once the objective falls below atol * 0.5 ||Z||_F^2
    step: float = 1.0  # mu, IHT / IST only
    threshold: float = None  # tau, IST only; None -> sigma_{r+1} of the first iterate
    projection: str = "tangent"  # RGrad only: "tangent" or "left"


@dataclass
class CompletionResult:
    A: np.ndarray
    iterations_used: int
    objective_history: list = field(default_factory=list)


def _svd(W):
    return np.linalg.svd(W, full_matrices=False)


def numerical_rank(W: np.ndarray, rtol: float = RANK_TOL) -> int:
    s = np.linalg.svd(W, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def hard_threshold(W: np.ndarray, r: int) -> np.ndarray:
    """Best rank-r approximation: keep the r leading singular triplets."""
    if not 1 <= r <= min(W.shape):
        raise ValueError(f"rank {r} outside [1, {min(W.shape)}]")
    U, s, Vh = _svd(W)
    return (U[:, :r] * s[:r]) @ Vh[:r]


def soft_threshold(W: np.ndarray, tau: float) -> np.ndarray:
    """Singular value soft thresholding, sigma_i -> max(sigma_i - tau, 0)."""
    U, s, Vh = _svd(W)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vh[keep]


def _leading_factors(A, r):
    U, s, Vh = _svd(A)
    if s[0] == 0:
        return None, None
    return U[:, :r], Vh[:r].conj().T


def project_subspace(Q: np.ndarray, A: np.ndarray, r: int) -> np.ndarray:
    """Project Q onto the span of the r leading left singular vectors of A.

    For A = 0 there is no subspace and Q is returned unchanged.
    """
    if Q.shape != A.shape:
        raise ValueError(f"shape mismatch {Q.shape} vs {A.shape}")
    U, _ = _leading_factors(A, r)
    if U is None:
        return Q.copy()
    return U @ (U.conj().T @ Q)


def project_tangent(Q: np.ndarray, A: np.ndarray, r: int) -> np.ndarray:
    """Project Q onto the tangent space of the rank-r manifold at A.

    P(Q) = U U^H Q + Q V V^H - U U^H Q V V^H with U, V the leading singular
    vectors of A. Identity when A = 0.
    """
    if Q.shape != A.shape:
        raise ValueError(f"shape mismatch {Q.shape} vs {A.shape}")
    U, V = _leading_factors(A, r)
    if U is None:
        return Q.copy()
    UhQ = U.conj().T @ Q
    QV = Q @ V
    return U @ UhQ + QV @ V.conj().T - U @ (UhQ @ V) @ V.conj().T


_PROJECTIONS = {"tangent": project_tangent, "left": project_subspace}


def _step_size(P, conj_mask):
    den = np.linalg.norm(conj_mask * P) ** 2
    if den == 0:
        return 1.0
    return float(np.linalg.norm(P) ** 2 / den)


def rgrad_step(A: np.ndarray, problem: CompletionProblem, projection: str = "tangent") -> np.ndarray:
    """One Riemannian gradient step: masked residual, projection, exact step, rank-r truncation."""
    Q = problem.conj_mask * (problem.observed - A)
    P = _PROJECTIONS[projection](Q, A, problem.rank)
    alpha = _step_size(P, problem.conj_mask)
    return hard_threshold(A + alpha * P, problem.rank)


class _LowRank:
    """Iterate kept as U diag(s) V^H so a tangent step needs only a 2r x 2r SVD."""

    def __init__(self, U, s, V):
        self.U, self.s, self.V = U, s, V

    @classmethod
    def from_dense(cls, W, r):
        U, s, Vh = _svd(W)
        return cls(U[:, :r], s[:r].astype(complex), Vh[:r].conj().T)

    def dense(self):
        return (self.U * self.s) @ self.V.conj().T

    def tangent_step(self, R, conj_mask):
        """A + alpha P_T(R) truncated to rank r, with the exact step alpha."""
        U, V, r = self.U, self.V, self.s.size
        Vh = V.conj().T
        RV = R @ V
        UhR = U.conj().T @ R
        core = UhR @ V
        Up = RV - U @ core  # (I - U U^H) R V
        Vp = UhR.conj().T - V @ core.conj().T  # (I - V V^H) R^H U
        P = (U @ core + Up) @ Vh + U @ Vp.conj().T
        num = np.linalg.norm(core) ** 2 + np.linalg.norm(Up) ** 2 + np.linalg.norm(Vp) ** 2
        den = np.linalg.norm(conj_mask * P) ** 2
        alpha = num / den if den > 0 else 1.0
        Q1, R1 = np.linalg.qr(Up)
        Q2, R2 = np.linalg.qr(Vp)
        K = np.zeros((2 * r, 2 * r), complex)
        K[:r, :r] = np.diag(self.s) + alpha * core
        K[:r, r:] = alpha * R2.conj().T
        K[r:, :r] = alpha * R1
        uk, sk, vkh = _svd(K)
        return _LowRank(np.hstack([U, Q1]) @ uk[:, :r], sk[:r].astype(complex),
                        np.hstack([V, Q2]) @ vkh[:r].conj().T)


def _converged(history, tol, floor=0.0):
    cur = history[-1]
    if cur <= floor:
        return True
    if len(history) < 2:
        return False
    prev = history[-2]
    return abs(prev - cur) <= tol * prev


def run_rgrad(problem: CompletionProblem, opts: CompletionOptions = None) -> CompletionResult:
    """Riemannian gradient completion from A(0) = 0.

    The first step uses the identity projection (there is no subspace at the
    zero matrix), which gives A(1) = H_r(S^* o Z). With the default tangent
    projection later steps run on the thin factors of the iterate, so the
    cost per step is O(r N T). ``projection="left"`` projects onto the left
    singular subspace only, which keeps the column space of A(1) fixed.
    """
    opts = opts or CompletionOptions()
    r = problem.rank
    cm = problem.conj_mask
    Zo = problem.observed
    history = []
    floor = opts.atol * 0.5 * float(np.linalg.norm(Zo)) ** 2
    if not np.any(Zo):
        return CompletionResult(A=np.zeros_like(Zo), iterations_used=1, objective_history=[0.0])

    if opts.projection != "tangent":
        A = np.zeros_like(Zo)
        k = 0
        for k in range(1, opts.max_iter + 1):
            A = rgrad_step(A, problem, opts.projection)
            history.append(problem.objective(A))
            if _converged(history, opts.tol, floor):
                break
        return CompletionResult(A=A, iterations_used=k, objective_history=history)

    # A(0) = 0: identity projection and alpha = 1 give W = S^* o Z
    it = _LowRank.from_dense(cm * Zo, r)
    A = it.dense()
    R = cm * (Zo - A)  # Q(k); the objective is half its squared norm
    history.append(0.5 * float(np.linalg.norm(R)) ** 2)
    k = 1
    while k < opts.max_iter and not _converged(history, opts.tol, floor):
        it = it.tangent_step(R, cm)
        A = it.dense()
        R = cm * (Zo - A)
        history.append(0.5 * float(np.linalg.norm(R)) ** 2)
        k += 1
    return CompletionResult(A=A, iterations_used=k, objective_history=history)


def _fixed_step_loop(problem, opts, shrink):
    cm = problem.conj_mask
    A = np.zeros_like(problem.observed)
    history = []
    floor = opts.atol * 0.5 * float(np.linalg.norm(problem.observed)) ** 2
    k = 0
    for k in range(1, opts.max_iter + 1):
        A = shrink(A + opts.step * cm * (problem.observed - A), k)
        history.append(problem.objective(A))
        if _converged(history, opts.tol, floor):
            break
    return CompletionResult(A=A, iterations_used=k, objective_history=history)


def run_iht(problem: CompletionProblem, opts: CompletionOptions = None) -> CompletionResult:
    """Iterative hard thresholding, A <- H_r(A + mu S^* o (Z - A))."""
    opts = opts or CompletionOptions()
    return _fixed_step_loop(problem, opts, lambda W, k: hard_threshold(W, problem.rank))


def run_ist(problem: CompletionProblem, opts: CompletionOptions = None) -> CompletionResult:
    """Iterative soft thresholding, A <- SVT_tau(A + mu S^* o (Z - A)).

    Without an explicit ``threshold`` tau is the (r+1)-th singular value of
    the first gradient iterate S^* o Z.
    """
    opts = opts or CompletionOptions()
    tau = opts.threshold
    if tau is None:
        s = np.linalg.svd(opts.step * problem.conj_mask * problem.observed, compute_uv=False)
        tau = float(s[problem.rank]) if problem.rank < s.size else 0.0
    return _fixed_step_loop(problem, opts, lambda W, k: soft_threshold(W, tau))


def recover_H(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """H = A X^H (X X^H)^{-1}, the least-squares solution of H X = A."""
    M = X.shape[0]
    if X.shape[1] < M or np.linalg.matrix_rank(X) < M:
        raise SingularPilotError(f"pilot matrix of shape {X.shape} is not full row rank")
    gram = X @ X.conj().T
    return np.linalg.solve(gram, X @ A.conj().T).conj().T
