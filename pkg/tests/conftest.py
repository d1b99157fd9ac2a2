import numpy as np
import pytest

from rimsa import mimo, miso
from rimsa.channel import ArrayGeometry, sample_realization


def miso_instance(seed=0, n_rf=2, n_per=2, m=2, n_rx=2, snr_db=5.0, n_paths=3):
    rng = np.random.default_rng(seed)
    cfg = miso.MisoConfig.from_snr(snr_db, n_rf=n_rf, n_per_rimsa=n_per, n_users=m, n_rx=n_rx)
    ch = sample_realization(
        rng, ArrayGeometry.for_elements(cfg.n_tx), ArrayGeometry.for_elements(n_rx), m, n_paths
    )
    state = miso.initial_state(cfg, rng)
    # a generic (non-identity) precoder scaled to the budget
    w = rng.standard_normal(state.w.shape) + 1j * rng.standard_normal(state.w.shape)
    state.w = w * np.sqrt(cfg.power / (n_per * np.linalg.norm(w) ** 2))
    return cfg, ch, state, rng


def mimo_instance(seed=0, n_rf_tx=2, n_per_tx=2, m=2, n_rf_rx=2, k=2, n_s=2, snr_db=5.0, n_paths=3):
    rng = np.random.default_rng(seed)
    cfg = mimo.MimoConfig.from_snr(
        snr_db, n_rf_tx=n_rf_tx, n_per_rimsa_tx=n_per_tx, n_users=m,
        n_rf_rx=n_rf_rx, n_per_rimsa_rx=k, n_streams=n_s,
    )
    ch = sample_realization(
        rng, ArrayGeometry.for_elements(cfg.n_tx), ArrayGeometry.for_elements(cfg.n_rx), m, n_paths
    )
    state = mimo.initial_state(cfg, rng)
    w = rng.standard_normal(state.w_d.shape) + 1j * rng.standard_normal(state.w_d.shape)
    state.w_d = w * np.sqrt(cfg.power / (n_per_tx * np.linalg.norm(w) ** 2))
    state = mimo.refresh_receivers(state, ch, cfg)
    return cfg, ch, state, rng


def fd_gradient(fun, x, mask, h=1e-6):
    """Central differences w.r.t. Re and Im of the supported entries.

    Returns ``df/dRe + 1j df/dIm``, the convention used by the solvers.
    """
    g = np.zeros(x.shape, dtype=complex)
    for idx in zip(*np.nonzero(mask)):
        for unit in (1.0, 1j):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h * unit
            xm[idx] -= h * unit
            g[idx] += unit * (fun(xp) - fun(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
