"""Fast numerical self-checks run by ``jbfmc selftest``.

Each check compares a library routine against an independent computation
(quadrature, brute force, closed form) and returns ``(name, ok, detail)``.
"""

from __future__ import annotations

import numpy as np

from . import bigamp, completion
from .evaluation import align_estimates, nmse

__all__ = ["posterior_moments_quadrature", "run_all", "CHECKS"]


def posterior_moments_quadrature(q, vq, nu, half_width=8.0, points=401):
    """Posterior mean and variance of x ~ CN(0, nu) given q = x + CN(0, vq), on a 2-D grid.

    The posterior is Gaussian around nu q / (nu + vq) with variance below
    min(nu, vq), so a grid of ``half_width`` standard deviations around the
    observation-weighted center captures it to machine precision.
    """
    center = nu * q / (nu + vq)
    scale = np.sqrt(min(nu, vq))
    t = np.linspace(-half_width, half_width, points) * scale
    xr, xi = np.meshgrid(center.real + t, center.imag + t, indexing="ij")
    x = xr + 1j * xi
    log_w = -np.abs(x) ** 2 / nu - np.abs(q - x) ** 2 / vq
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    mean = np.sum(w * x)
    var = float(np.sum(w * np.abs(x - mean) ** 2))
    return complex(mean), var


def check_denoisers(nu=2.0, n=10):
    grid_q = np.linspace(0.1, 5.0, n)
    grid_v = np.geomspace(0.01, 10.0, n)
    worst = 0.0
    for a in grid_q:
        for v in grid_v:
            q = complex(a, a)
            m_ref, v_ref = posterior_moments_quadrature(q, v, nu)
            m_g, v_g = bigamp.denoise_g(np.array(q), np.array(v), nu)
            m_z, v_z = bigamp.denoise_z(q, v, 1, nu)
            worst = max(worst, abs(m_g - m_ref), abs(v_g - v_ref), abs(m_z - m_ref), abs(v_z - v_ref))
    return "denoisers vs quadrature", worst <= 1e-6, f"max abs error {worst:.2e}"


def check_eckart_young(seed=0):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((12, 20)) + 1j * rng.standard_normal((12, 20))
    best = np.linalg.norm(W - completion.hard_threshold(W, 3))
    others = []
    for _ in range(50):
        B = (rng.standard_normal((12, 3)) + 1j * rng.standard_normal((12, 3))) @ \
            (rng.standard_normal((3, 20)) + 1j * rng.standard_normal((3, 20)))
        B *= np.vdot(B, W) / np.vdot(B, B)
        others.append(np.linalg.norm(W - B))
    return "hard threshold optimality", best < min(others), f"margin {min(others) - best:.3f}"


def check_rgrad(seed=0):
    rng = np.random.default_rng(seed)
    A = (rng.standard_normal((30, 2)) + 1j * rng.standard_normal((30, 2))) @ \
        (rng.standard_normal((2, 80)) + 1j * rng.standard_normal((2, 80)))
    S = (rng.random(A.shape) < 0.4).astype(complex)
    res = completion.run_rgrad(completion.CompletionProblem(S * A, S, 2),
                               completion.CompletionOptions(max_iter=2000))
    err = np.linalg.norm(res.A - A) / np.linalg.norm(A)
    return "rgrad noiseless recovery", err < 1e-6, f"relative error {err:.2e}"


def check_ambiguity(seed=0):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6))
    H = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    phi = np.exp(rng.uniform(-1, 1, 6) + 1j * rng.uniform(0, 2 * np.pi, 6))
    al = align_estimates(G * phi, H / phi[:, None], G, H)
    worst = max(nmse(al.G, G), nmse(al.H, H))
    return "ambiguity invariance", worst < 1e-20, f"max NMSE {worst:.1e}"


def check_bigamp_support(seed=0):
    rng = np.random.default_rng(seed)
    S = rng.random((6, 20)) < 0.3
    S[0, 0] = True
    priors = bigamp.Priors(nu_g=1.0, nu_z=1.0, noise_var=0.1, support=S)
    Y = rng.standard_normal((5, 20)) + 1j * rng.standard_normal((5, 20))
    state = bigamp.init_state(Y.shape, priors, rng)
    for _ in range(5):
        state = bigamp.iterate(state, Y, priors, damping=0.5)
    ok = not np.any(state.z[~S]) and not np.any(state.vz[~S])
    return "bigamp support is preserved", ok, "off-support entries exactly zero" if ok else "leak"


CHECKS = (check_denoisers, check_eckart_young, check_rgrad, check_ambiguity, check_bigamp_support)


def run_all():
    return [(name, bool(ok), detail) for name, ok, detail in (check() for check in CHECKS)]
