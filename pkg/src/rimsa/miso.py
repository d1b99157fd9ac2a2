"""Multi-user MISO: fractional-programming precoder plus joint BS/UE phase design.

Conventions
-----------
``V`` is ``N_t x N_RF`` with ``N x 1`` blocks (BS metasurface responses).
``F`` is ``M x M*N_r`` with ``1 x N_r`` blocks whose entries are the
*conjugated* UE responses, i.e. row ``m`` restricted to its block is
``f_m^H``. With the stacked channel ``H`` this gives ``Phi = F H V W`` whose
entry ``(m, i)`` is ``f_m^H H_m V w_i``.

Rates are in bits. The FP auxiliary problem is solved in natural log (that
is where ``eta = SINR`` is the exact maximiser) and converted for reporting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from ._power import power_limited_solve
from .channel import ChannelRealization
from .manifold import BlockDiagPattern, PhaseMatrix, RcgParams, rcg_minimize

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


@dataclass(frozen=True)
class MisoConfig:
    n_rf: int
    n_per_rimsa: int
    n_users: int
    n_rx: int
    power: float
    noise_vars: Tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("n_rf", "n_per_rimsa", "n_users", "n_rx"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.power < 0:
            raise ValueError(f"power must be nonnegative, got {self.power}")
        noise = tuple(float(s) for s in self.noise_vars) or (1.0,) * self.n_users
        if len(noise) == 1 and self.n_users > 1:
            noise = noise * self.n_users
        if len(noise) != self.n_users or min(noise) <= 0:
            raise ValueError("need one positive noise variance per user")
        object.__setattr__(self, "noise_vars", noise)

    @classmethod
    def from_snr(cls, snr_db: float, noise_var: float = 1.0, **dims) -> "MisoConfig":
        """``P = noise_var * 10**(snr_db/10)``, same noise at every user."""
        power = noise_var * 10 ** (snr_db / 10)
        return cls(power=power, noise_vars=(noise_var,), **dims)

    @property
    def n_tx(self) -> int:
        return self.n_rf * self.n_per_rimsa

    @property
    def v_pattern(self) -> BlockDiagPattern:
        return BlockDiagPattern.uniform(self.n_rf, self.n_per_rimsa, 1)

    @property
    def f_pattern(self) -> BlockDiagPattern:
        return BlockDiagPattern.uniform(self.n_users, 1, self.n_rx)

    @property
    def noise(self) -> np.ndarray:
        """Diagonal of ``R_n``: ``N_r * sigma_m^2``."""
        return self.n_rx * np.asarray(self.noise_vars)


@dataclass
class MisoState:
    v: PhaseMatrix
    f: PhaseMatrix
    w: np.ndarray
    eta: np.ndarray = field(default=None)
    alpha: np.ndarray = field(default=None)
    lam: float = 0.0

    def __post_init__(self):
        m = self.w.shape[1]
        if self.eta is None:
            self.eta = np.zeros(m)
        if self.alpha is None:
            self.alpha = np.zeros(m, dtype=complex)

    def copy(self) -> "MisoState":
        return MisoState(
            self.v.copy(), self.f.copy(), self.w.copy(), self.eta.copy(), self.alpha.copy(), self.lam
        )


def _check_dims(channels: ChannelRealization, cfg: MisoConfig):
    if channels.n_users != cfg.n_users or channels.n_rx != cfg.n_rx or channels.n_tx != cfg.n_tx:
        raise ValueError(
            f"channel dims (M={channels.n_users}, N_r={channels.n_rx}, N_t={channels.n_tx}) "
            f"do not match config (M={cfg.n_users}, N_r={cfg.n_rx}, N_t={cfg.n_tx})"
        )


def user_response(state: MisoState, m: int, cfg: MisoConfig) -> np.ndarray:
    """UE ``m``'s phase vector ``f_m`` (unconjugated)."""
    return state.f.values[m, m * cfg.n_rx:(m + 1) * cfg.n_rx].conj()


def effective_channel(f_m: np.ndarray, h_m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row vector ``f_m^H H_m V`` seen by the digital precoder (length N_RF)."""
    f_m = np.asarray(f_m)
    if f_m.ndim != 1 or h_m.shape[0] != f_m.size or h_m.shape[1] != v.shape[0]:
        raise ValueError("inconsistent shapes for f_m, H_m, V")
    return f_m.conj() @ h_m @ v


def effective_channels(state: MisoState, channels: ChannelRealization) -> np.ndarray:
    """All effective channels stacked as rows, ``F H V`` (M x N_RF)."""
    return state.f.values @ (channels.stacked @ state.v.values)


def build_phi(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> np.ndarray:
    _check_dims(channels, cfg)
    return effective_channels(state, channels) @ state.w


def _sinr_from_phi(phi: np.ndarray, noise: np.ndarray) -> np.ndarray:
    p = np.abs(phi) ** 2
    sig = np.diag(p)
    return sig / (p.sum(axis=1) - sig + noise)


def sinr_all(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> np.ndarray:
    return _sinr_from_phi(build_phi(state, channels, cfg), cfg.noise)


def sinr(m: int, state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> float:
    return float(sinr_all(state, channels, cfg)[m])


def sum_rate(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> float:
    return float(np.sum(np.log1p(sinr_all(state, channels, cfg))) / LN2)


def transmit_power(state: MisoState) -> float:
    return float(np.linalg.norm(state.v.values @ state.w) ** 2)


# -- fractional programming ------------------------------------------------


def update_eta(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> np.ndarray:
    return sinr_all(state, channels, cfg)


def update_alpha(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> np.ndarray:
    """Quadratic-transform auxiliaries for the current ``W`` and ``eta``."""
    phi = build_phi(state, channels, cfg)
    total = np.sum(np.abs(phi) ** 2, axis=1) + cfg.noise
    return np.sqrt(1 + state.eta) * np.diag(phi) / total


def _precoder_system(state: MisoState, channels: ChannelRealization):
    heff = effective_channels(state, channels)
    a = heff.conj().T @ (np.abs(state.alpha)[:, None] ** 2 * heff)
    b = heff.conj().T * (np.sqrt(1 + state.eta) * state.alpha)[None, :]
    return a, b


def update_precoder(
    state: MisoState, channels: ChannelRealization, cfg: MisoConfig, lam: float
) -> np.ndarray:
    """Maximiser of the FP Lagrangian for a fixed multiplier ``lam``.

    ``w_m = sqrt(1+eta_m) alpha_m (sum_i |alpha_i|^2 h_i h_i^H + lam V^H V)^-1 h_m``
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    _check_dims(channels, cfg)
    a, b = _precoder_system(state, channels)
    vhv = state.v.values.conj().T @ state.v.values
    mat = a + lam * vhv
    if lam == 0 and np.linalg.matrix_rank(mat) < mat.shape[0]:
        raise np.linalg.LinAlgError("singular precoder system at lambda = 0; use lambda > 0")
    return np.linalg.solve(mat, b)


def solve_lambda(
    state: MisoState, channels: ChannelRealization, cfg: MisoConfig
) -> Tuple[float, np.ndarray]:
    """Power multiplier by bisection and the matching precoder.

    Returns ``(0, W(0))`` when the unconstrained solution already fits the
    budget. The bisection runs to relative width 1e-12, well inside the
    1e-6 relative power tolerance.
    """
    _check_dims(channels, cfg)
    a, b = _precoder_system(state, channels)
    n = float(cfg.n_per_rimsa)
    shift, w = power_limited_solve(a, b, n, cfg.power)
    return shift / n, w


def fp_surrogate(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> float:
    """Quadratic-transform objective at ``(W, eta, alpha)``, in bits.

    Equals the sum rate when ``eta`` and ``alpha`` are at their optima.
    """
    phi = build_phi(state, channels, cfg)
    eta, alpha = state.eta, state.alpha
    total = np.sum(np.abs(phi) ** 2, axis=1) + cfg.noise
    val = (
        np.log1p(eta)
        - eta
        + 2 * np.sqrt(1 + eta) * np.real(alpha.conj() * np.diag(phi))
        - np.abs(alpha) ** 2 * total
    )
    return float(np.sum(val) / LN2)


def fp_precoder(
    state: MisoState,
    channels: ChannelRealization,
    cfg: MisoConfig,
    max_rounds: int = 50,
    tol: float = 1e-6,
) -> MisoState:
    """Alternate eta, alpha and (W, lambda) updates until the surrogate settles.

    A round that would lower the sum rate (possible only through rounding)
    is discarded, so the returned rate never falls below the input's.
    """
    state = state.copy()
    rate = sum_rate(state, channels, cfg)
    prev_surrogate = None
    for _ in range(max_rounds):
        state.eta = update_eta(state, channels, cfg)
        state.alpha = update_alpha(state, channels, cfg)
        lam, w = solve_lambda(state, channels, cfg)
        trial = replace(state, w=w, lam=lam)
        new_rate = sum_rate(trial, channels, cfg)
        if new_rate < rate:
            break
        state, rate = trial, new_rate
        s = fp_surrogate(state, channels, cfg)
        if prev_surrogate is not None and abs(s - prev_surrogate) < tol:
            break
        prev_surrogate = s
    return state


# -- determinant-form objective and its gradients ----------------------------


def _g2_parts(v, f, w, h, noise):
    hv = h @ v
    phi = f @ hv @ w
    p = phi.real ** 2 + phi.imag ** 2
    total = p.sum(axis=1) + noise
    interf = total - p.diagonal()
    return hv, phi, interf, total


def g2_value(v, f, w, h, noise) -> float:
    _, _, interf, total = _g2_parts(v, f, w, h, noise)
    return float(np.log(interf / total).sum() / LN2)


def g2_grads(v, f, w, h, noise, v_mask, f_mask):
    """Euclidean gradients of g2 with respect to ``V`` and ``F``.

    With ``Y = (Phi^H o I^-) D1^-1 - Phi^H D2^-1`` the differential is
    ``2 Re Tr(H V W Y dF) + 2 Re Tr(W Y F H dV)``, so the gradients are
    ``2 (HVWY)^H`` and ``2 (WYFH)^H`` (masked, and divided by ln 2 for bits).
    """
    hv, phi, interf, total = _g2_parts(v, f, w, h, noise)
    phi_h = phi.conj().T
    off = phi_h.copy()
    np.fill_diagonal(off, 0)
    y = off / interf[None, :] - phi_h / total[None, :]
    wy = w @ y
    grad_f = (2 / LN2) * (hv @ wy).conj().T
    grad_v = (2 / LN2) * (wy @ (f @ h)).conj().T
    return np.where(v_mask, grad_v, 0), np.where(f_mask, grad_f, 0)


def g2(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> float:
    """``log2 det(interference + noise) - log2 det(total received + noise)``.

    Both arguments are diagonal, so this is ``-sum_rate``.
    """
    _check_dims(channels, cfg)
    return g2_value(state.v.values, state.f.values, state.w, channels.stacked, cfg.noise)


def euclid_grad_F(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> np.ndarray:
    _check_dims(channels, cfg)
    return g2_grads(
        state.v.values, state.f.values, state.w, channels.stacked, cfg.noise,
        cfg.v_pattern.mask, cfg.f_pattern.mask,
    )[1]


def euclid_grad_V(state: MisoState, channels: ChannelRealization, cfg: MisoConfig) -> np.ndarray:
    _check_dims(channels, cfg)
    return g2_grads(
        state.v.values, state.f.values, state.w, channels.stacked, cfg.noise,
        cfg.v_pattern.mask, cfg.f_pattern.mask,
    )[0]


def pmo_step(
    state: MisoState,
    channels: ChannelRealization,
    cfg: MisoConfig,
    rcg_params: RcgParams = RcgParams(),
    optimize_v: bool = True,
    optimize_f: bool = True,
) -> Tuple[MisoState, List[float]]:
    """Jointly refine ``V`` and ``F`` on the product manifold with ``W`` fixed."""
    if not (optimize_v or optimize_f):
        return state, [g2(state, channels, cfg)]
    h, w, noise = channels.stacked, state.w, cfg.noise
    v_mask, f_mask = cfg.v_pattern.mask, cfg.f_pattern.mask
    fixed_v, fixed_f = state.v.values, state.f.values

    def unpack(xs):
        it = iter(xs)
        v = next(it) if optimize_v else fixed_v
        f = next(it) if optimize_f else fixed_f
        return v, f

    def objective(xs):
        v, f = unpack(xs)
        return g2_value(v, f, w, h, noise)

    def grad(xs):
        v, f = unpack(xs)
        gv, gf = g2_grads(v, f, w, h, noise, v_mask, f_mask)
        return ([gv] if optimize_v else []) + ([gf] if optimize_f else [])

    init = ([state.v] if optimize_v else []) + ([state.f] if optimize_f else [])
    points, trace = rcg_minimize(objective, grad, init, rcg_params)
    it = iter(points)
    new = state.copy()
    if optimize_v:
        new.v = next(it)
    if optimize_f:
        new.f = next(it)
    return new, trace


# -- alternating optimisation ------------------------------------------------


def initial_state(
    cfg: MisoConfig,
    rng: np.random.Generator,
    v: Optional[PhaseMatrix] = None,
    f: Optional[PhaseMatrix] = None,
) -> MisoState:
    """Random phases and an identity-padded precoder at full power.

    Users beyond ``N_RF`` wrap around onto the identity columns again.
    """
    v = v if v is not None else PhaseMatrix.random(cfg.v_pattern, rng)
    f = f if f is not None else PhaseMatrix.random(cfg.f_pattern, rng)
    w = np.zeros((cfg.n_rf, cfg.n_users), dtype=complex)
    w[np.arange(cfg.n_users) % cfg.n_rf, np.arange(cfg.n_users)] = 1.0
    w *= np.sqrt(cfg.power / (cfg.n_per_rimsa * cfg.n_users))
    return MisoState(v, f, w)


class FpPmoResult(NamedTuple):
    state: MisoState
    rate_trace: List[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.rate_trace) - 1


def fp_pmo(
    channels: ChannelRealization,
    cfg: MisoConfig,
    outer_iters: int = 100,
    rcg_params: RcgParams = RcgParams(),
    rng: Optional[np.random.Generator] = None,
    *,
    init: Optional[MisoState] = None,
    optimize_v: bool = True,
    optimize_f: bool = True,
    tol: float = 1e-4,
    fp_rounds: int = 50,
    fp_tol: float = 1e-6,
) -> FpPmoResult:
    """Alternate the FP precoder update and the product-manifold phase update.

    Stops once an outer iteration improves the sum rate by less than ``tol``
    bits. ``optimize_v`` / ``optimize_f`` freeze either analog stage, which
    is how the fully digital and random-phase references reuse this loop.
    """
    _check_dims(channels, cfg)
    if init is None:
        rng = rng if rng is not None else np.random.default_rng()
        init = initial_state(cfg, rng)
    state = init.copy()
    rate = sum_rate(state, channels, cfg)
    trace = [rate]
    converged = False
    for _ in range(outer_iters):
        state = fp_precoder(state, channels, cfg, fp_rounds, fp_tol)
        state, _ = pmo_step(state, channels, cfg, rcg_params, optimize_v, optimize_f)
        new_rate = sum_rate(state, channels, cfg)
        trace.append(new_rate)
        if new_rate - rate < tol:
            converged = True
            break
        rate = new_rate
    return FpPmoResult(state, trace, converged)
