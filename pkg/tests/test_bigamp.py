import numpy as np
import pytest

from jbfmc import bigamp
from jbfmc.bigamp import Priors, denoise_g, denoise_z, init_state, iterate
from jbfmc.evaluation import align_diagonal, nmse
from jbfmc.model import complex_normal
from jbfmc.selftest import posterior_moments_quadrature


def test_denoise_g_matches_quadrature():
    for q, vq in [(0.3 + 2j, 0.05), (4 - 1j, 3.0), (-1 + 0.5j, 10.0)]:
        m_ref, v_ref = posterior_moments_quadrature(q, vq, 1.7)
        m, v = denoise_g(np.array(q), np.array(vq), 1.7)
        assert abs(m - m_ref) < 1e-9 and abs(v - v_ref) < 1e-9


def test_denoise_z_off_support_is_exact_zero():
    r = np.array([[1 + 1j, 2.0], [3j, -1.0]])
    vr = np.full((2, 2), 0.5)
    s = np.array([[1, 0], [0, 1]], dtype=bool)
    m, v = denoise_z(r, vr, s, 2.0)
    assert m[0, 1] == 0 and m[1, 0] == 0 and v[0, 1] == 0 and v[1, 0] == 0
    m_g, v_g = denoise_g(r, vr, 2.0)
    assert m[0, 0] == m_g[0, 0] and v[1, 1] == v_g[1, 1]


def test_denoiser_limits():
    # vanishing pseudo-noise returns the observation, huge noise returns the prior mean
    m, v = denoise_g(np.array(2 + 1j), np.array(1e-14), 1.0)
    assert abs(m - (2 + 1j)) < 1e-9 and v <= 1e-11
    m, v = denoise_g(np.array(2 + 1j), np.array(1e12), 1.0)
    assert abs(m) < 1e-10 and v == pytest.approx(1.0)


def _loop_sweep(state, Y, pr):
    """One undamped sweep written entry by entry, straight from the update rules."""
    L, N = state.g.shape
    T = Y.shape[1]
    g, vg, z, vz, u_old = state.g, state.vg, state.z, state.vz, state.u
    vp_bar = np.zeros((L, T)); p_bar = np.zeros((L, T), complex)
    vp = np.zeros((L, T)); p = np.zeros((L, T), complex)
    for l in range(L):
        for t in range(T):
            vp_bar[l, t] = sum(abs(g[l, n]) ** 2 * vz[n, t] + vg[l, n] * abs(z[n, t]) ** 2 for n in range(N))
            p_bar[l, t] = sum(g[l, n] * z[n, t] for n in range(N))
            vp[l, t] = vp_bar[l, t] + sum(vg[l, n] * vz[n, t] for n in range(N))
            p[l, t] = p_bar[l, t] - u_old[l, t] * vp_bar[l, t]
    s2 = pr.noise_var
    vb = s2 * vp / (vp + s2)
    b = vp * (Y - p) / (vp + s2) + p
    vu = (1 - vb / vp) / vp
    u = (b - p) / vp
    vq = np.zeros((L, N)); q = np.zeros((L, N), complex)
    for l in range(L):
        for n in range(N):
            vq[l, n] = 1 / sum(abs(z[n, t]) ** 2 * vu[l, t] for t in range(T))
            q[l, n] = g[l, n] * (1 - vq[l, n] * sum(vz[n, t] * vu[l, t] for t in range(T))) \
                + vq[l, n] * sum(z[n, t].conjugate() * u[l, t] for t in range(T))
    vr = np.zeros((N, T)); r = np.zeros((N, T), complex)
    for n in range(N):
        for t in range(T):
            vr[n, t] = 1 / sum(abs(g[l, n]) ** 2 * vu[l, t] for l in range(L))
            r[n, t] = z[n, t] * (1 - vr[n, t] * sum(vg[l, n] * vu[l, t] for l in range(L))) \
                + vr[n, t] * sum(g[l, n].conjugate() * u[l, t] for l in range(L))
    return dict(p=p, vp=vp, u=u, vu=vu, q=q, vq=vq, r=r, vr=vr)


def test_vectorized_sweep_matches_loops():
    rng = np.random.default_rng(0)
    L, N, T = 3, 2, 4
    S = np.ones((N, T), bool)
    pr = Priors(nu_g=1.0, nu_z=2.0, noise_var=0.3, support=S)
    Y = complex_normal(rng, (L, T), 1.0)
    state = init_state(Y.shape, pr, rng, jitter=True)
    state = iterate(state, Y, pr, damping=1.0)  # second sweep exercises the Onsager term
    ref = _loop_sweep(state, Y, pr)
    new = iterate(state, Y, pr, damping=1.0)
    for key, value in ref.items():
        assert np.allclose(getattr(new, key), value, rtol=1e-10, atol=1e-12), key


def test_support_invariance_over_many_sweeps():
    rng = np.random.default_rng(3)
    S = rng.random((6, 30)) < 0.3
    pr = Priors(nu_g=1.0, nu_z=1.0, noise_var=0.1, support=S)
    Y = complex_normal(rng, (8, 30), 1.0)
    state = init_state(Y.shape, pr, rng)
    for _ in range(20):
        state = iterate(state, Y, pr, damping=0.5)
        assert not np.any(state.z[~S]) and not np.any(state.vz[~S])


def test_zero_observation_returns_zero_z():
    rng = np.random.default_rng(4)
    S = rng.random((4, 12)) < 0.5
    pr = Priors(nu_g=1.0, nu_z=1.0, noise_var=0.1, support=S)
    res = bigamp.run(np.zeros((6, 12), complex), pr, bigamp.BigAmpOptions(max_restarts=2, max_sweeps=50), rng)
    assert not res.failed
    assert np.linalg.norm(res.G @ res.Z) < 1e-6


def test_nonfinite_input_rejected():
    pr = Priors(nu_g=1.0, nu_z=1.0, noise_var=0.1, support=np.ones((2, 3), bool))
    Y = np.zeros((2, 3), complex)
    Y[0, 0] = np.nan
    with pytest.raises(ValueError):
        bigamp.run(Y, pr)


def test_priors_validation():
    with pytest.raises(ValueError):
        Priors(nu_g=0.0, nu_z=1.0, noise_var=0.1, support=np.ones((2, 2)))
    with pytest.raises(ValueError):
        Priors(nu_g=1.0, nu_z=1.0, noise_var=-1.0, support=np.ones((2, 2)))


def test_divergence_error_carries_location():
    err = bigamp.DivergenceError(7, "u")
    assert err.iteration == 7 and err.field_name == "u" and "sweep 7" in str(err)


def test_restart_history_is_nonincreasing():
    rng = np.random.default_rng(5)
    L, N, T = 16, 8, 64
    G = complex_normal(rng, (L, N), 1.0)
    S = rng.random((N, T)) < 0.2
    Z = np.where(S, complex_normal(rng, (N, T), 1.0), 0)
    Y = G @ Z + complex_normal(rng, (L, T), 1e-3)
    pr = Priors(nu_g=1.0, nu_z=1.0, noise_var=1e-3, support=S)
    res = bigamp.run(Y, pr, bigamp.BigAmpOptions(max_restarts=3, max_sweeps=300), rng)
    h = res.residual_history
    assert len(h) == 3 and all(b <= a for a, b in zip(h, h[1:]))
    assert h[-1] == min(res.restart_residuals)


def test_noiseless_dense_dictionary_is_recovered():
    # L=16, N=8, T=64, lambda=0.2 with an i.i.d. G: well-posed self-consistency case
    rng = np.random.default_rng(11)
    L, N, T = 16, 8, 64
    G = complex_normal(rng, (L, N), 1.0)
    S = rng.random((N, T)) < 0.2
    Z = np.where(S, complex_normal(rng, (N, T), 1.0), 0)
    pr = Priors(nu_g=1.0, nu_z=1.0, noise_var=1e-12, support=S)
    res = bigamp.run(G @ Z, pr, bigamp.BigAmpOptions(max_restarts=3, max_sweeps=1500), rng)
    G_al, _ = align_diagonal(res.G, G)
    assert np.sqrt(nmse(G_al, G)) < 1e-3
