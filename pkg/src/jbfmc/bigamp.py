"""Bilinear generalized AMP for Y = G Z + W with a known support for Z.

G gets an i.i.d. CN(0, nu_g) prior. Z gets a Bernoulli-Gaussian prior whose
Bernoulli part is the known on/off pattern S, so every entry of Z off the
support is a point mass at zero and every entry on it is CN(0, nu_z).

The sweep follows the usual BiG-AMP ordering: plug-in output moments,
Onsager correction, Gaussian output posterior, scaled residual, then the
pseudo-observations and scalar denoisers for both factors. All arrays are
dense numpy; one sweep costs a handful of L x N x T matrix products.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import complex_normal

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-12

__all__ = [
    "VAR_FLOOR",
    "DivergenceError",
    "Priors",
    "BigAmpState",
    "BigAmpOptions",
    "FactorizationResult",
    "init_state",
    "denoise_g",
    "denoise_z",
    "iterate",
    "run",
]


class DivergenceError(FloatingPointError):
    """A sweep produced NaN or Inf."""

    def __init__(self, iteration: int, field_name: str):
        super().__init__(f"non-finite values in {field_name!r} at sweep {iteration}")
        self.iteration = iteration
        self.field_name = field_name


@dataclass(frozen=True)
class Priors:
    nu_g: float
    nu_z: float
    noise_var: float
    support: np.ndarray  # N x T bool
    sparsity_level: float = None  # used for the initial variance of Z

    def __post_init__(self):
        if not (self.nu_g > 0 and self.nu_z > 0):
            raise ValueError("prior variances nu_g and nu_z must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        object.__setattr__(self, "support", np.asarray(self.support, dtype=bool))
        if self.sparsity_level is None:
            object.__setattr__(self, "sparsity_level", float(self.support.mean()))


@dataclass(frozen=True)
class BigAmpState:
    g: np.ndarray  # L x N posterior means of G
    vg: np.ndarray  # L x N
    z: np.ndarray  # N x T posterior means of Z
    vz: np.ndarray  # N x T, exactly 0 off the support
    u: np.ndarray  # L x T scaled residual
    vu: np.ndarray = None
    p_bar: np.ndarray = None  # plug-in output mean
    vp_bar: np.ndarray = None
    p: np.ndarray = None  # Onsager-corrected output mean
    vp: np.ndarray = None
    b: np.ndarray = None  # output posterior mean
    vb: np.ndarray = None
    q: np.ndarray = None  # pseudo-observations of G
    vq: np.ndarray = None
    r: np.ndarray = None  # pseudo-observations of Z
    vr: np.ndarray = None
    sweep: int = 0


@dataclass(frozen=True)
class BigAmpOptions:
    max_restarts: int = 10  # I_max
    max_sweeps: int = 500  # J_max
    tol: float = 1e-6
    damping: float = 0.3
    jitter: bool = False
    divergence_factor: float = 5.0
    divergence_warmup: int = 100  # sweeps before the residual-growth check is armed


@dataclass
class FactorizationResult:
    G: np.ndarray
    Z: np.ndarray
    iterations_used: int  # total sweeps over all restarts
    residual_history: list = field(default_factory=list)  # best ||Y - G Z||_F after each restart
    restart_residuals: list = field(default_factory=list)
    converged: bool = False
    failed: bool = False


def denoise_g(q, vq, nu_g):
    """Posterior mean and variance of a CN(0, nu_g) variable seen through CN(q, vq).

    Works elementwise on arrays; ``vq`` is floored at ``VAR_FLOOR``.
    """
    vq = np.maximum(vq, VAR_FLOOR)
    shrink = nu_g / (nu_g + vq)  # real, so the complex product below stays cheap
    return shrink * q, shrink * vq


def denoise_z(r, vr, s, nu_z):
    """Posterior moments under the known-support prior s CN(0, nu_z) + (1 - s) delta.

    Off the support the posterior is the point mass at zero, so both moments
    are exactly zero there.
    """
    mean, var = denoise_g(r, vr, nu_z)
    on = np.asarray(s, dtype=bool)
    mean = np.where(on, mean, 0.0)
    var = np.where(on, var, 0.0)
    if np.ndim(mean) == 0:
        return complex(mean), float(var)
    return mean, var


def init_state(Y_shape, priors: Priors, rng: np.random.Generator, jitter: bool = False) -> BigAmpState:
    """Starting point of the iteration.

    ``g`` is a draw from the prior of G. ``z`` is its prior mean (zero), or a
    small CN(0, 0.01 nu_z) draw on the support when ``jitter`` is set.
    """
    L, T = Y_shape
    N = priors.support.shape[0]
    g = complex_normal(rng, (L, N), priors.nu_g)
    vg = np.full((L, N), float(priors.nu_g))
    z, vz = _initial_z(priors, rng, jitter, T)
    return BigAmpState(g=g, vg=vg, z=z, vz=vz, u=np.zeros((L, T), complex))


def _initial_z(priors, rng, jitter, T):
    S = priors.support
    if jitter:
        z = np.where(S, complex_normal(rng, S.shape, 0.01 * priors.nu_z), 0.0)
    else:
        z = np.zeros(S.shape, complex)
    vz = np.where(S, priors.sparsity_level * priors.nu_z, 0.0)
    return z, vz


def _check(iteration, **arrays):
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise DivergenceError(iteration, name)


def iterate(state: BigAmpState, Y: np.ndarray, priors: Priors, damping: float = 1.0) -> BigAmpState:
    """One full BiG-AMP sweep.

    With ``damping=1`` this is the undamped update. Smaller values mix each
    new mean/variance with the previous one, ``new = d * new + (1 - d) * old``.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    g, vg, z, vz = state.g, state.vg, state.z, state.vz
    d = damping
    first = state.vp is None
    s2 = priors.noise_var

    abs_g2 = g.real ** 2 + g.imag ** 2
    abs_z2 = z.real ** 2 + z.imag ** 2
    vp_bar = abs_g2 @ vz + vg @ abs_z2
    p_bar = g @ z
    vp = vp_bar + vg @ vz
    if not first:
        vp_bar = d * vp_bar + (1 - d) * state.vp_bar
        vp = d * vp + (1 - d) * state.vp
    vp_bar = np.maximum(vp_bar, VAR_FLOOR)
    vp = np.maximum(vp, VAR_FLOOR)
    p = p_bar - state.u * vp_bar

    # Gaussian likelihood output posterior
    inv_vp = 1.0 / vp
    gain = vp / (vp + s2)
    vb = np.maximum(s2 * gain, VAR_FLOOR)
    b = gain * (Y - p) + p
    vu = (1.0 - vb * inv_vp) * inv_vp
    u = (b - p) * inv_vp
    if not first:
        u = d * u + (1 - d) * state.u
        vu = d * vu + (1 - d) * state.vu
    vu = np.maximum(vu, VAR_FLOOR)

    vq = 1.0 / np.maximum(vu @ abs_z2.T, VAR_FLOOR)
    q = g * (1.0 - vq * (vu @ vz.T)) + vq * (u @ z.conj().T)
    vr = 1.0 / np.maximum(abs_g2.T @ vu, VAR_FLOOR)
    r = z * (1.0 - vr * (vg.T @ vu)) + vr * (g.conj().T @ u)

    g_new, vg_new = denoise_g(q, vq, priors.nu_g)
    z_new, vz_new = denoise_z(r, vr, priors.support, priors.nu_z)
    g_new = d * g_new + (1 - d) * g
    vg_new = np.maximum(d * vg_new + (1 - d) * vg, VAR_FLOOR)
    z_new = d * z_new + (1 - d) * z
    vz_new = d * vz_new + (1 - d) * vz
    # keep the off-support entries bit-exact zero
    z_new[~priors.support] = 0.0
    vz_new[~priors.support] = 0.0

    sweep = state.sweep + 1
    _check(sweep, p=p, u=u, g=g_new, vg=vg_new, z=z_new, vz=vz_new)
    return BigAmpState(g=g_new, vg=vg_new, z=z_new, vz=vz_new, u=u, vu=vu,
                       p_bar=p_bar, vp_bar=vp_bar, p=p, vp=vp, b=b, vb=vb,
                       q=q, vq=vq, r=r, vr=vr, sweep=sweep)


def _residual(Y, g, z):
    return float(np.linalg.norm(Y - g @ z))


def _inner_loop(state, Y, priors, opts):
    """Sweep until the Onsager-corrected mean settles, diverges, or hits the budget.

    Returns (state, best_residual_snapshot, sweeps, converged).
    """
    best = (np.inf, state.g, state.z)
    min_res = np.inf
    p_prev = None
    converged = False
    sweeps = 0
    for _ in range(opts.max_sweeps):
        try:
            state = iterate(state, Y, priors, opts.damping)
        except DivergenceError as exc:
            logger.debug("restart diverged: %s", exc)
            return None, best, sweeps + 1, False
        sweeps += 1
        res = _residual(Y, state.g, state.z)
        if res < best[0]:
            best = (res, state.g, state.z)
        if sweeps >= opts.divergence_warmup:
            min_res = min(min_res, res)
        if sweeps > opts.divergence_warmup and res > opts.divergence_factor * min_res:
            logger.debug("residual blew up at sweep %d", sweeps)
            return None, best, sweeps, False
        if p_prev is not None:
            ref = np.linalg.norm(p_prev)
            if ref > 0 and np.linalg.norm(state.p - p_prev) < opts.tol * ref:
                converged = True
                break
            if ref == 0 and not np.any(state.p):
                converged = True
                break
        p_prev = state.p
    return state, best, sweeps, converged


def run(Y: np.ndarray, priors: Priors, opts: BigAmpOptions = None,
        rng: np.random.Generator = None) -> FactorizationResult:
    """Estimate (G, Z) from Y with restarts.

    Each outer pass keeps the current estimate of G (and its variances) and
    resets Z, its variances and the scaled residual to their initial values.
    A pass that diverges is dropped and the next one starts from a fresh draw
    of G. The pass with the smallest ``||Y - G Z||_F`` is returned.
    """
    opts = opts or BigAmpOptions()
    rng = rng if rng is not None else np.random.default_rng()
    Y = np.asarray(Y, dtype=complex)
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains non-finite values")
    if priors.support.shape[1] != Y.shape[1]:
        raise ValueError(f"support {priors.support.shape} does not match Y {Y.shape}")

    state = init_state(Y.shape, priors, rng, opts.jitter)
    best = None
    history, per_restart = [], []
    total_sweeps = 0
    any_converged = False
    for i in range(opts.max_restarts):
        final, snapshot, sweeps, converged = _inner_loop(state, Y, priors, opts)
        total_sweeps += sweeps
        any_converged |= converged
        if final is not None:
            candidate = (_residual(Y, final.g, final.z), final.g, final.z)
        else:
            candidate = snapshot
        if not np.isfinite(candidate[0]):
            candidate = (np.inf, None, None)
        per_restart.append(candidate[0])
        if best is None or candidate[0] < best[0]:
            best = candidate
        history.append(best[0])

        fresh = init_state(Y.shape, priors, rng, opts.jitter)
        if final is None:
            state = fresh
        else:
            state = replace(fresh, g=final.g, vg=final.vg)
        if best[0] == 0.0:
            break

    if best[1] is None:
        L, T = Y.shape
        N = priors.support.shape[0]
        return FactorizationResult(G=np.zeros((L, N), complex), Z=np.zeros((N, T), complex),
                                   iterations_used=total_sweeps, residual_history=history,
                                   restart_residuals=per_restart, converged=False, failed=True)
    return FactorizationResult(G=best[1], Z=best[2], iterations_used=total_sweeps,
                               residual_history=history, restart_residuals=per_restart,
                               converged=any_converged, failed=False)
