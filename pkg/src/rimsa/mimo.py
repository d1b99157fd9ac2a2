"""Multi-user MIMO: WMMSE digital stage plus joint BS/UE phase design.

Conventions
-----------
``V`` is ``N_t x N_t^RF`` with ``N x 1`` blocks. The UE combining phases
are kept as one stacked ``M*N_r^RF x M*N_r`` phase matrix with ``1 x K``
blocks; user ``i``'s ``W_RF^(i)`` is its ``i``-th diagonal block. ``W_D``
is ``N_t^RF x M*N_s`` with user ``i`` owning columns ``i*N_s:(i+1)*N_s``.

The weighted-MSE internals use natural logs, reported rates are in bits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import block_diag

from ._power import power_limited_solve
from .channel import ChannelRealization
from .manifold import BlockDiagPattern, PhaseMatrix, RcgParams, rcg_minimize

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)
REG = 1e-12


@dataclass(frozen=True)
class MimoConfig:
    n_rf_tx: int
    n_per_rimsa_tx: int
    n_users: int
    n_rf_rx: int
    n_per_rimsa_rx: int
    n_streams: int
    power: float
    noise_var: float = 1.0

    def __post_init__(self):
        for name in ("n_rf_tx", "n_per_rimsa_tx", "n_users", "n_rf_rx", "n_per_rimsa_rx", "n_streams"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_streams > self.n_rf_rx:
            raise ValueError("n_streams cannot exceed n_rf_rx")
        if self.power < 0:
            raise ValueError(f"power must be nonnegative, got {self.power}")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    @classmethod
    def from_snr(cls, snr_db: float, noise_var: float = 1.0, **dims) -> "MimoConfig":
        return cls(power=noise_var * 10 ** (snr_db / 10), noise_var=noise_var, **dims)

    @property
    def n_tx(self) -> int:
        return self.n_rf_tx * self.n_per_rimsa_tx

    @property
    def n_rx(self) -> int:
        return self.n_rf_rx * self.n_per_rimsa_rx

    @property
    def v_pattern(self) -> BlockDiagPattern:
        return BlockDiagPattern.uniform(self.n_rf_tx, self.n_per_rimsa_tx, 1)

    @property
    def wrf_pattern(self) -> BlockDiagPattern:
        return BlockDiagPattern.uniform(self.n_users * self.n_rf_rx, 1, self.n_per_rimsa_rx)


@dataclass
class MimoState:
    v: PhaseMatrix
    w_rf: PhaseMatrix
    w_d: np.ndarray
    u: List[np.ndarray]
    weights: List[np.ndarray] = field(default_factory=list)
    mu: float = 0.0

    def copy(self) -> "MimoState":
        return MimoState(
            self.v.copy(), self.w_rf.copy(), self.w_d.copy(),
            [x.copy() for x in self.u], [x.copy() for x in self.weights], self.mu,
        )


def _check_dims(channels: ChannelRealization, cfg: MimoConfig):
    if channels.n_users != cfg.n_users or channels.n_rx != cfg.n_rx or channels.n_tx != cfg.n_tx:
        raise ValueError(
            f"channel dims (M={channels.n_users}, N_r={channels.n_rx}, N_t={channels.n_tx}) "
            f"do not match config (M={cfg.n_users}, N_r={cfg.n_rx}, N_t={cfg.n_tx})"
        )


def wrf_block(state: MimoState, i: int, cfg: MimoConfig) -> np.ndarray:
    """``W_RF^(i)``, shape ``N_r^RF x N_r``."""
    r, c = cfg.n_rf_rx, cfg.n_rx
    return state.w_rf.values[i * r:(i + 1) * r, i * c:(i + 1) * c]


def precoder_block(state: MimoState, i: int, cfg: MimoConfig) -> np.ndarray:
    s = cfg.n_streams
    return state.w_d[:, i * s:(i + 1) * s]


def _user_channel(state, channels, cfg, i):
    """``G_i = W_RF^(i) H_i V``."""
    return wrf_block(state, i, cfg) @ channels.per_user[i] @ state.v.values


def transmit_power(state: MimoState) -> float:
    return float(np.linalg.norm(state.v.values @ state.w_d) ** 2)


def _covariances(i, state, channels, cfg):
    """Signal term, interference term and filtered noise at user ``i``'s output."""
    g = _user_channel(state, channels, cfg, i)
    ug = state.u[i] @ g
    x = ug @ state.w_d
    s = cfg.n_streams
    xi = x[:, i * s:(i + 1) * s]
    total = x @ x.conj().T
    uw = state.u[i] @ wrf_block(state, i, cfg)
    noise = cfg.noise_var * uw @ uw.conj().T
    return xi, total - xi @ xi.conj().T, noise


def user_rate(i: int, state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> float:
    """``log2 det(I + S R^-1)`` at the combiner output of user ``i``.

    ``R`` (interference plus filtered noise) is singular when ``U_i`` is rank
    deficient, e.g. after WMMSE switches streams off. Its range is then the
    range of ``U_i``, which also holds the signal, so the rate is evaluated on
    that subspace (logged at debug level).
    """
    _check_dims(channels, cfg)
    xi, interf, noise = _covariances(i, state, channels, cfg)
    r = interf + noise
    ev, q = np.linalg.eigh(0.5 * (r + r.conj().T))
    keep = ev > REG * max(ev[-1], 0.0)
    if not keep.any():
        return 0.0
    if not keep.all():
        logger.debug("rank-deficient interference covariance for user %d; using its range", i)
    q = q[:, keep] / np.sqrt(ev[keep])
    white = q.conj().T @ xi
    _, ld = np.linalg.slogdet(np.eye(white.shape[0]) + white @ white.conj().T)
    return max(float(ld) / LN2, 0.0)


def sum_rate(state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> float:
    return float(sum(user_rate(i, state, channels, cfg) for i in range(cfg.n_users)))


def mse_matrix(i: int, state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> np.ndarray:
    """``E_i = I - UGW_i - (UGW_i)^H + sum_j UGW_j W_j^H G^H U^H + noise``."""
    _check_dims(channels, cfg)
    xi, interf, noise = _covariances(i, state, channels, cfg)
    e = np.eye(cfg.n_streams) - xi - xi.conj().T + xi @ xi.conj().T + interf + noise
    return 0.5 * (e + e.conj().T)


def update_weights(e: np.ndarray) -> np.ndarray:
    """``Lambda = E^-1``, symmetrised; near-singular ``E`` is regularised."""
    e = np.asarray(e, dtype=complex)
    ev = np.linalg.eigvalsh(0.5 * (e + e.conj().T))
    if ev[0] <= REG:
        logger.warning("singular MSE matrix; using (E + 1e-12 I)^-1")
        e = e + REG * np.eye(e.shape[0])
    lam = np.linalg.inv(e)
    return 0.5 * (lam + lam.conj().T)


def update_combiner(i: int, state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> np.ndarray:
    """MMSE combiner ``U_i = W_i^H G^H J^-1`` with ``J`` the received covariance."""
    _check_dims(channels, cfg)
    g = _user_channel(state, channels, cfg, i)
    gw = g @ state.w_d
    w_rf = wrf_block(state, i, cfg)
    j = gw @ gw.conj().T + cfg.noise_var * w_rf @ w_rf.conj().T
    gwi = g @ precoder_block(state, i, cfg)
    return np.linalg.solve(j, gwi).conj().T


def _digital_system(state, channels, cfg):
    a = np.zeros((cfg.n_rf_tx, cfg.n_rf_tx), dtype=complex)
    cols = []
    for i in range(cfg.n_users):
        ug = state.u[i] @ _user_channel(state, channels, cfg, i)
        lug = state.weights[i] @ ug
        a += ug.conj().T @ lug
        cols.append(lug.conj().T)
    return 0.5 * (a + a.conj().T), np.hstack(cols)


def update_digital_precoder(
    state: MimoState, channels: ChannelRealization, cfg: MimoConfig
) -> Tuple[np.ndarray, float]:
    """Closed-form ``W_D`` with the smallest ``mu >= 0`` meeting the power budget.

    The budget uses ``V^H V = N I``, i.e. ``N ||W_D||^2 <= P``.
    """
    _check_dims(channels, cfg)
    a, b = _digital_system(state, channels, cfg)
    mu, w_d = power_limited_solve(a, b, float(cfg.n_per_rimsa_tx), cfg.power)
    return w_d, mu


def weighted_mse(state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> float:
    """``sum_i Tr(Lambda_i E_i) - ln det Lambda_i``."""
    total = 0.0
    for i in range(cfg.n_users):
        lam = state.weights[i]
        e = mse_matrix(i, state, channels, cfg)
        total += float(np.real(np.trace(lam @ e)) - np.linalg.slogdet(lam)[1])
    return total


# -- analog-stage objective and gradients ------------------------------------


def _stacked(state, cfg):
    return block_diag(*state.u), block_diag(*state.weights)


def f1_value(v, w_rf, w_d, h, u, lam) -> float:
    """``-2 Re Tr(Lam X) + Tr(Lam X X^H)`` with ``X = U W_RF H V W_D``."""
    x = u @ w_rf @ h @ v @ w_d
    return float(np.real(-2 * np.trace(lam @ x) + np.vdot(x, lam @ x)))


def f1_grads(v, w_rf, w_d, h, u, lam, v_mask, wrf_mask):
    """Euclidean gradients of ``f1`` for ``V`` and ``W_RF``.

    With ``T = (X^H - I) Lam U`` they are ``2 (W_D T W_RF H)^H`` and
    ``2 (H V W_D T)^H``, masked to the block supports.
    """
    hv_wd = h @ v @ w_d
    x = u @ w_rf @ hv_wd
    t = (x.conj().T - np.eye(x.shape[0])) @ lam @ u
    grad_v = 2 * (w_d @ t @ w_rf @ h).conj().T
    grad_wrf = 2 * (hv_wd @ t).conj().T
    return np.where(v_mask, grad_v, 0), np.where(wrf_mask, grad_wrf, 0)


def f1(state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> float:
    """Part of the weighted-MSE objective that depends on ``(V, W_RF)``.

    The noise term is left out because ``W_RF W_RF^H = K I`` on the feasible set.
    """
    _check_dims(channels, cfg)
    u, lam = _stacked(state, cfg)
    return f1_value(state.v.values, state.w_rf.values, state.w_d, channels.stacked, u, lam)


def _f1_grads(state, channels, cfg):
    _check_dims(channels, cfg)
    u, lam = _stacked(state, cfg)
    return f1_grads(
        state.v.values, state.w_rf.values, state.w_d, channels.stacked, u, lam,
        cfg.v_pattern.mask, cfg.wrf_pattern.mask,
    )


def euclid_grad_v_mimo(state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> np.ndarray:
    return _f1_grads(state, channels, cfg)[0]


def euclid_grad_wrf(state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> np.ndarray:
    return _f1_grads(state, channels, cfg)[1]


def pmo_step(
    state: MimoState,
    channels: ChannelRealization,
    cfg: MimoConfig,
    rcg_params: RcgParams = RcgParams(),
    optimize_v: bool = True,
    optimize_wrf: bool = True,
) -> Tuple[MimoState, List[float]]:
    """Jointly refine ``V`` and ``W_RF`` on the product manifold, digital stage fixed."""
    if not (optimize_v or optimize_wrf):
        return state, [f1(state, channels, cfg)]
    h, w_d = channels.stacked, state.w_d
    u, lam = _stacked(state, cfg)
    v_mask, wrf_mask = cfg.v_pattern.mask, cfg.wrf_pattern.mask
    fixed_v, fixed_wrf = state.v.values, state.w_rf.values

    def unpack(xs):
        it = iter(xs)
        v = next(it) if optimize_v else fixed_v
        w_rf = next(it) if optimize_wrf else fixed_wrf
        return v, w_rf

    def objective(xs):
        v, w_rf = unpack(xs)
        return f1_value(v, w_rf, w_d, h, u, lam)

    def grad(xs):
        v, w_rf = unpack(xs)
        gv, gw = f1_grads(v, w_rf, w_d, h, u, lam, v_mask, wrf_mask)
        return ([gv] if optimize_v else []) + ([gw] if optimize_wrf else [])

    init = ([state.v] if optimize_v else []) + ([state.w_rf] if optimize_wrf else [])
    points, trace = rcg_minimize(objective, grad, init, rcg_params)
    it = iter(points)
    new = state.copy()
    if optimize_v:
        new.v = next(it)
    if optimize_wrf:
        new.w_rf = next(it)
    return new, trace


def verify_rate_mse_equivalence(
    state: MimoState, channels: ChannelRealization, cfg: MimoConfig
) -> float:
    """``max_i |r_i - log2 det(E_i^-1)|`` using the state's combiners as given.

    Zero (to rounding) when every ``U_i`` is the MMSE combiner.
    """
    if cfg.n_rf_rx != cfg.n_streams:
        raise ValueError("rate/MSE equivalence needs n_rf_rx == n_streams")
    residual = 0.0
    for i in range(cfg.n_users):
        r = user_rate(i, state, channels, cfg)
        _, ld = np.linalg.slogdet(mse_matrix(i, state, channels, cfg))
        residual = max(residual, abs(r + ld / LN2))
    return residual


# -- alternating optimisation ------------------------------------------------


def refresh_receivers(state: MimoState, channels: ChannelRealization, cfg: MimoConfig) -> MimoState:
    """MMSE combiners for every user, then the matching weights."""
    state = state.copy()
    state.u = [update_combiner(i, state, channels, cfg) for i in range(cfg.n_users)]
    state.weights = [update_weights(mse_matrix(i, state, channels, cfg)) for i in range(cfg.n_users)]
    return state


def initial_state(
    cfg: MimoConfig,
    rng: np.random.Generator,
    v: Optional[PhaseMatrix] = None,
    w_rf: Optional[PhaseMatrix] = None,
) -> MimoState:
    """Random phases and a truncated identity ``W_D`` at full power.

    Combiners and weights start at zero and identity; callers refresh them.
    """
    v = v if v is not None else PhaseMatrix.random(cfg.v_pattern, rng)
    w_rf = w_rf if w_rf is not None else PhaseMatrix.random(cfg.wrf_pattern, rng)
    cols = cfg.n_users * cfg.n_streams
    w_d = np.zeros((cfg.n_rf_tx, cols), dtype=complex)
    w_d[np.arange(cols) % cfg.n_rf_tx, np.arange(cols)] = 1.0
    w_d *= np.sqrt(cfg.power / (cfg.n_per_rimsa_tx * cols))
    u = [np.zeros((cfg.n_streams, cfg.n_rf_rx), dtype=complex) for _ in range(cfg.n_users)]
    weights = [np.eye(cfg.n_streams, dtype=complex) for _ in range(cfg.n_users)]
    return MimoState(v, w_rf, w_d, u, weights)


class WmmsePmoResult(NamedTuple):
    state: MimoState
    rate_trace: List[float]
    wmse_trace: List[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.wmse_trace) - 1


def wmmse_pmo(
    channels: ChannelRealization,
    cfg: MimoConfig,
    outer_iters: int = 100,
    rcg_params: RcgParams = RcgParams(),
    rng: Optional[np.random.Generator] = None,
    *,
    init: Optional[MimoState] = None,
    optimize_v: bool = True,
    optimize_wrf: bool = True,
    tol: float = 1e-6,
) -> WmmsePmoResult:
    """Block-coordinate descent on the weighted-MSE objective.

    Each outer iteration refreshes ``U``, ``Lambda``, ``W_D`` and then the
    analog stages. Stops once the objective changes by less than ``tol``.
    """
    _check_dims(channels, cfg)
    if init is None:
        rng = rng if rng is not None else np.random.default_rng()
        init = initial_state(cfg, rng)
    state = refresh_receivers(init, channels, cfg)
    obj = weighted_mse(state, channels, cfg)
    rates, wmses = [sum_rate(state, channels, cfg)], [obj]
    converged = False
    for _ in range(outer_iters):
        state = refresh_receivers(state, channels, cfg)
        before = weighted_mse(state, channels, cfg)
        w_d, mu = update_digital_precoder(state, channels, cfg)
        trial = state.copy()
        trial.w_d, trial.mu = w_d, mu
        if weighted_mse(trial, channels, cfg) <= before:
            state = trial
        state, _ = pmo_step(state, channels, cfg, rcg_params, optimize_v, optimize_wrf)
        new_obj = weighted_mse(state, channels, cfg)
        rates.append(sum_rate(state, channels, cfg))
        wmses.append(new_obj)
        if abs(obj - new_obj) < tol:
            converged = True
            break
        obj = new_obj
    return WmmsePmoResult(state, rates, wmses, converged)
