import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rimsa import mimo
from rimsa.channel import ArrayGeometry, ChannelRealization, sample_realization
from rimsa.manifold import PhaseMatrix, RcgParams

from conftest import fd_gradient, mimo_instance, rel_err

SPEC_SMALL = dict(n_rf_tx=2, n_per_tx=2, m=2, n_rf_rx=2, k=2, n_s=2)


def scalar_setup(u, g, w, noise_var=1.0):
    """One user, one stream, one element everywhere: ``G = g``."""
    cfg = mimo.MimoConfig(1, 1, 1, 1, 1, 1, power=abs(w) ** 2, noise_var=noise_var)
    ch = ChannelRealization([np.array([[g]], dtype=complex)])
    one = PhaseMatrix.ones(cfg.v_pattern)
    state = mimo.MimoState(one, PhaseMatrix.ones(cfg.wrf_pattern), np.array([[w]], dtype=complex),
                           [np.array([[u]], dtype=complex)], [np.eye(1, dtype=complex)])
    return cfg, ch, state


def test_config_validation():
    with pytest.raises(ValueError):
        mimo.MimoConfig(2, 2, 2, 2, 2, 3, power=1.0)
    with pytest.raises(ValueError):
        mimo.MimoConfig(2, 2, 2, 2, 2, 2, power=1.0, noise_var=0.0)
    with pytest.raises(ValueError):
        mimo.MimoConfig(0, 2, 2, 2, 2, 2, power=1.0)
    cfg = mimo.MimoConfig(16, 2, 4, 4, 4, 4, power=1.0)
    assert (cfg.n_tx, cfg.n_rx) == (32, 16)
    assert cfg.wrf_pattern.shape == (16, 64)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_analog_gram_matrices(n_rf, per, m, seed):
    rng = np.random.default_rng(seed)
    cfg = mimo.MimoConfig(n_rf, per, m, n_rf, per, 1, power=1.0)
    st_ = mimo.initial_state(cfg, rng)
    v = st_.v.values
    np.testing.assert_allclose(v.conj().T @ v, per * np.eye(n_rf), atol=1e-12)
    for i in range(m):
        w = mimo.wrf_block(st_, i, cfg)
        np.testing.assert_allclose(w @ w.conj().T, per * np.eye(n_rf), atol=1e-12)


# -- MSE, weights, combiner -------------------------------------------------------------


def test_mse_identity_when_all_zero():
    cfg, ch, state, _ = mimo_instance()
    state.w_d[:] = 0
    state.u = [np.zeros_like(u) for u in state.u]
    for i in range(cfg.n_users):
        np.testing.assert_array_equal(mimo.mse_matrix(i, state, ch, cfg), np.eye(cfg.n_streams))


def test_mse_error_free_scalar():
    g, w = 0.8 - 0.3j, 1.7 + 0.2j
    u = 1 / (g * w)
    cfg, ch, state = scalar_setup(u, g, w, noise_var=1e-30)
    assert abs(mimo.mse_matrix(0, state, ch, cfg)[0, 0]) < 1e-28


def _mse_loop(i, state, ch, cfg):
    g = mimo.wrf_block(state, i, cfg) @ ch.per_user[i] @ state.v.values
    u = state.u[i]
    e = np.eye(cfg.n_streams, dtype=complex)
    a = u @ g @ mimo.precoder_block(state, i, cfg)
    e = e - a - a.conj().T
    for j in range(cfg.n_users):
        b = u @ g @ mimo.precoder_block(state, j, cfg)
        e = e + b @ b.conj().T
    w = mimo.wrf_block(state, i, cfg)
    return e + cfg.noise_var * u @ w @ w.conj().T @ u.conj().T


@pytest.mark.parametrize("seed", range(4))
def test_mse_loop_oracle(seed):
    cfg, ch, state, _ = mimo_instance(seed=seed, m=3, n_s=1)
    for i in range(3):
        e = mimo.mse_matrix(i, state, ch, cfg)
        np.testing.assert_allclose(e, _mse_loop(i, state, ch, cfg), atol=1e-12)
        np.testing.assert_allclose(e, e.conj().T)
        assert np.linalg.eigvalsh(e).min() >= -1e-9


def test_mse_monte_carlo():
    cfg, ch, state, rng = mimo_instance(seed=11)
    n, i = 200_000, 1
    s, m = cfg.n_streams, cfg.n_users
    x = (rng.standard_normal((m * s, n)) + 1j * rng.standard_normal((m * s, n))) / np.sqrt(2)
    noise = np.sqrt(cfg.noise_var / 2) * (
        rng.standard_normal((cfg.n_rx, n)) + 1j * rng.standard_normal((cfg.n_rx, n))
    )
    w_rf = mimo.wrf_block(state, i, cfg)
    y = state.u[i] @ w_rf @ (ch.per_user[i] @ state.v.values @ state.w_d @ x + noise)
    err = x[i * s:(i + 1) * s] - y
    emp = err @ err.conj().T / n
    e = mimo.mse_matrix(i, state, ch, cfg)
    assert np.linalg.norm(emp - e) / np.linalg.norm(e) < 0.02


def test_update_weights_examples(rng):
    np.testing.assert_allclose(mimo.update_weights(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(mimo.update_weights(np.diag([0.5, 2.0])), np.diag([2.0, 0.5]))
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    e = a @ a.conj().T + 0.1 * np.eye(3)
    lam = mimo.update_weights(e)
    np.testing.assert_allclose(lam @ e, np.eye(3), atol=1e-10)
    np.testing.assert_array_equal(lam, lam.conj().T)


def test_update_weights_singular_regularised():
    lam = mimo.update_weights(np.diag([1.0, 0.0]))
    assert np.all(np.isfinite(lam)) and lam[1, 1] == pytest.approx(1e12)


def test_combiner_zero_precoder():
    cfg, ch, state, _ = mimo_instance()
    state.w_d[:, :cfg.n_streams] = 0
    np.testing.assert_array_equal(mimo.update_combiner(0, state, ch, cfg), 0)


def test_combiner_scalar_wiener():
    g, w = 0.4 + 1.1j, -0.6 + 0.5j
    cfg, ch, state = scalar_setup(0.0, g, w, noise_var=0.3)
    u = mimo.update_combiner(0, state, ch, cfg)[0, 0]
    assert u == pytest.approx(np.conj(g * w) / (abs(g * w) ** 2 + 0.3 * 1))


@pytest.mark.parametrize("seed", range(3))
def test_combiner_minimises_mse_trace(seed):
    cfg, ch, state, rng = mimo_instance(seed=seed)
    for i in range(cfg.n_users):
        state.u[i] = mimo.update_combiner(i, state, ch, cfg)
        best = np.trace(mimo.mse_matrix(i, state, ch, cfg)).real
        u0 = state.u[i]
        for _ in range(30):
            state.u[i] = u0 + 0.05 * (rng.standard_normal(u0.shape) + 1j * rng.standard_normal(u0.shape))
            assert np.trace(mimo.mse_matrix(i, state, ch, cfg)).real >= best - 1e-12
        state.u[i] = u0


# -- digital precoder ------------------------------------------------------------------------


def test_digital_precoder_zero_combiners():
    cfg, ch, state, _ = mimo_instance()
    state.u = [np.zeros_like(u) for u in state.u]
    w_d, mu = mimo.update_digital_precoder(state, ch, cfg)
    assert not np.any(w_d) and mu == 0.0


def test_digital_precoder_mu_monotone_in_power():
    cfg, ch, state, _ = mimo_instance(seed=3, snr_db=10)
    _, mu = mimo.update_digital_precoder(state, ch, cfg)
    half = mimo.MimoConfig(cfg.n_rf_tx, cfg.n_per_rimsa_tx, cfg.n_users, cfg.n_rf_rx,
                           cfg.n_per_rimsa_rx, cfg.n_streams, cfg.power / 2, cfg.noise_var)
    _, mu_half = mimo.update_digital_precoder(state, ch, half)
    assert mu_half >= mu


@pytest.mark.parametrize("seed", range(4))
def test_digital_precoder_power_and_stationarity(seed):
    cfg, ch, state, rng = mimo_instance(seed=seed, snr_db=[0, 10, 20, -10][seed])
    w_d, mu = mimo.update_digital_precoder(state, ch, cfg)
    state.w_d = w_d
    p = mimo.transmit_power(state)
    assert p <= cfg.power * (1 + 1e-6)
    if mu > 0:
        assert p == pytest.approx(cfg.power, rel=1e-6)

    def lagrangian(w):
        s = state.copy()
        s.w_d = w
        tr = sum(np.trace(s.weights[i] @ mimo.mse_matrix(i, s, ch, cfg)).real for i in range(cfg.n_users))
        return tr + mu * np.linalg.norm(w) ** 2

    h = 1e-6
    for _ in range(10):
        d = rng.standard_normal(w_d.shape) + 1j * rng.standard_normal(w_d.shape)
        d /= np.linalg.norm(d)
        assert abs(lagrangian(w_d + h * d) - lagrangian(w_d - h * d)) / (2 * h) <= 1e-5


# -- rates and the rate/MSE equivalence -----------------------------------------------------


def test_rate_zero_precoder():
    cfg, ch, state, _ = mimo_instance()
    state.w_d[:, :cfg.n_streams] = 0
    assert mimo.user_rate(0, state, ch, cfg) == 0.0


def test_rate_scalar_expansion():
    g, w, u = 0.9 + 0.4j, 1.2 - 0.7j, 0.3 + 0.1j
    cfg, ch, state = scalar_setup(u, g, w, noise_var=0.5)
    expected = np.log2(1 + abs(u * g * w) ** 2 / (0.5 * abs(u) ** 2))
    assert mimo.user_rate(0, state, ch, cfg) == pytest.approx(expected, rel=1e-12)


def _rate_direct(u, g, w_d, i, s, noise_var, w_rf):
    x = u @ g @ w_d
    xi = x[:, i * s:(i + 1) * s]
    r = x @ x.conj().T - xi @ xi.conj().T + noise_var * u @ w_rf @ w_rf.conj().T @ u.conj().T
    return np.log2(np.linalg.det(np.eye(len(u)) + np.linalg.solve(r, xi @ xi.conj().T)).real)


@pytest.mark.parametrize("seed", range(4))
def test_rate_with_rank_deficient_combiner(seed):
    # a zero row carries no information: same rate as the combiner without it
    cfg, ch, state, _ = mimo_instance(seed=seed)
    state.u[0][1] = 0
    w_rf = mimo.wrf_block(state, 0, cfg)
    g = w_rf @ ch.per_user[0] @ state.v.values
    expected = _rate_direct(state.u[0][:1], g, state.w_d, 0, cfg.n_streams, cfg.noise_var, w_rf)
    assert mimo.user_rate(0, state, ch, cfg) == pytest.approx(expected, rel=1e-10)


def test_rate_matches_direct_formula():
    cfg, ch, state, _ = mimo_instance(seed=9, m=3)
    for i in range(3):
        w_rf = mimo.wrf_block(state, i, cfg)
        g = w_rf @ ch.per_user[i] @ state.v.values
        expected = _rate_direct(state.u[i], g, state.w_d, i, cfg.n_streams, cfg.noise_var, w_rf)
        assert mimo.user_rate(i, state, ch, cfg) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(-15, 20))
def test_equivalence_with_mmse(seed, snr):
    cfg, ch, state, _ = mimo_instance(seed=seed, snr_db=snr)
    assert mimo.verify_rate_mse_equivalence(state, ch, cfg) <= 1e-8


def test_equivalence_zero_precoder():
    cfg, ch, state, _ = mimo_instance()
    state.w_d[:] = 0
    state = mimo.refresh_receivers(state, ch, cfg)
    assert mimo.verify_rate_mse_equivalence(state, ch, cfg) == 0.0


def test_equivalence_not_vacuous(rng):
    cfg, ch, state, _ = mimo_instance(seed=2)
    state.u = [u + 0.3 * (rng.standard_normal(u.shape) + 1j * rng.standard_normal(u.shape)) for u in state.u]
    assert mimo.verify_rate_mse_equivalence(state, ch, cfg) > 1e-3


def test_equivalence_precondition():
    cfg, ch, state, _ = mimo_instance(n_rf_rx=2, n_s=1)
    with pytest.raises(ValueError):
        mimo.verify_rate_mse_equivalence(state, ch, cfg)


# -- f1 and its gradients ------------------------------------------------------------------


def test_f1_zero_precoder():
    cfg, ch, state, _ = mimo_instance()
    state.w_d[:] = 0
    assert mimo.f1(state, ch, cfg) == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_f1_per_user_expansion(seed):
    cfg, ch, state, _ = mimo_instance(seed=seed, m=3)
    const = 0.0
    for i in range(3):
        lam, u = state.weights[i], state.u[i]
        w = mimo.wrf_block(state, i, cfg)
        const += np.trace(lam).real + cfg.noise_var * np.trace(lam @ u @ w @ w.conj().T @ u.conj().T).real
    wmse_trace = sum(np.trace(state.weights[i] @ mimo.mse_matrix(i, state, ch, cfg)).real for i in range(3))
    assert mimo.f1(state, ch, cfg) == pytest.approx(wmse_trace - const, abs=1e-10)


def test_f1_linear_in_weights():
    cfg, ch, state, _ = mimo_instance(seed=4)
    f = mimo.f1(state, ch, cfg)
    state.weights = [2 * lam for lam in state.weights]
    assert mimo.f1(state, ch, cfg) == pytest.approx(2 * f)


def _f1_of(cfg, ch, state, which):
    def f(x):
        s = state.copy()
        if which == "v":
            s.v = PhaseMatrix._trusted(s.v.pattern, x)
        else:
            s.w_rf = PhaseMatrix._trusted(s.w_rf.pattern, x)
        return mimo.f1(s, ch, cfg)
    return f


@pytest.mark.parametrize("seed", range(5))
def test_grad_v_finite_differences(seed):
    cfg, ch, state, _ = mimo_instance(seed=seed, **SPEC_SMALL)
    g = mimo.euclid_grad_v_mimo(state, ch, cfg)
    ref = fd_gradient(_f1_of(cfg, ch, state, "v"), state.v.values, cfg.v_pattern.mask)
    assert rel_err(g, ref) <= 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_grad_wrf_finite_differences(seed):
    cfg, ch, state, _ = mimo_instance(seed=seed, **SPEC_SMALL)
    g = mimo.euclid_grad_wrf(state, ch, cfg)
    ref = fd_gradient(_f1_of(cfg, ch, state, "w"), state.w_rf.values, cfg.wrf_pattern.mask)
    assert rel_err(g, ref) <= 1e-5


def test_grads_masked_and_zero_for_zero_precoder():
    cfg, ch, state, _ = mimo_instance(**SPEC_SMALL)
    gv, gw = mimo.euclid_grad_v_mimo(state, ch, cfg), mimo.euclid_grad_wrf(state, ch, cfg)
    assert np.all(gv[~cfg.v_pattern.mask] == 0) and np.all(gw[~cfg.wrf_pattern.mask] == 0)
    state.w_d[:] = 0
    assert not np.any(mimo.euclid_grad_v_mimo(state, ch, cfg))
    assert not np.any(mimo.euclid_grad_wrf(state, ch, cfg))


# -- block updates and the full loop ---------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(-15, 15))
def test_each_update_never_increases_wmse(seed, snr):
    cfg, ch, state, _ = mimo_instance(seed=seed, snr_db=snr)
    # start from a non-MMSE point so the receiver updates have work to do
    state.u = [1.5 * u for u in state.u]
    obj = mimo.weighted_mse(state, ch, cfg)

    for i in range(cfg.n_users):
        state.u[i] = mimo.update_combiner(i, state, ch, cfg)
    new = mimo.weighted_mse(state, ch, cfg)
    assert new <= obj + 1e-8
    obj = new

    state.weights = [mimo.update_weights(mimo.mse_matrix(i, state, ch, cfg)) for i in range(cfg.n_users)]
    new = mimo.weighted_mse(state, ch, cfg)
    assert new <= obj + 1e-8
    obj = new

    state.w_d, state.mu = mimo.update_digital_precoder(state, ch, cfg)
    new = mimo.weighted_mse(state, ch, cfg)
    assert new <= obj + 1e-8
    obj = new

    state, _ = mimo.pmo_step(state, ch, cfg, RcgParams(max_iter=20))
    assert mimo.weighted_mse(state, ch, cfg) <= obj + 1e-8


def test_zero_outer_iterations():
    cfg, ch, state, _ = mimo_instance()
    res = mimo.wmmse_pmo(ch, cfg, outer_iters=0, init=state)
    assert res.iterations == 0 and len(res.rate_trace) == 1
    np.testing.assert_array_equal(res.state.w_d, state.w_d)
    np.testing.assert_array_equal(res.state.v.values, state.v.values)
    np.testing.assert_array_equal(res.state.w_rf.values, state.w_rf.values)


@pytest.mark.parametrize("seed", range(3))
def test_wmmse_pmo_monotone_feasible(seed):
    cfg, ch, _, rng = mimo_instance(seed=seed, n_rf_tx=3, n_per_tx=2)
    res = mimo.wmmse_pmo(ch, cfg, outer_iters=15, rng=rng)
    assert np.all(np.diff(res.wmse_trace) <= 1e-8)
    assert mimo.transmit_power(res.state) <= cfg.power * (1 + 1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_single_stream_matches_fully_digital(seed):
    # single path: phase-only stages at both ends reach the full array gain
    rng = np.random.default_rng(seed)
    cfg = mimo.MimoConfig.from_snr(0.0, n_rf_tx=2, n_per_rimsa_tx=4, n_users=1,
                                   n_rf_rx=1, n_per_rimsa_rx=4, n_streams=1)
    ch = sample_realization(rng, ArrayGeometry.for_elements(8), ArrayGeometry.for_elements(4), 1, 1)
    # plateaus are slow to cross here, so allow a generous budget and insist on convergence
    res = mimo.wmmse_pmo(ch, cfg, outer_iters=300, rng=rng)
    assert res.converged
    s_max = np.linalg.svd(ch.stacked, compute_uv=False)[0]
    fully_digital = np.log2(1 + cfg.power * s_max ** 2 / cfg.noise_var)
    assert res.rate_trace[-1] >= 0.98 * fully_digital
    assert res.rate_trace[-1] <= fully_digital + 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_scaled_dims_converge_within_30(seed):
    rng = np.random.default_rng(seed)
    cfg = mimo.MimoConfig.from_snr(-15.0, n_rf_tx=4, n_per_rimsa_tx=2, n_users=2,
                                   n_rf_rx=2, n_per_rimsa_rx=2, n_streams=2)
    ch = sample_realization(rng, ArrayGeometry.for_elements(8), ArrayGeometry.for_elements(4), 2, 5)
    res = mimo.wmmse_pmo(ch, cfg, outer_iters=30, rng=rng)
    assert res.converged
