"""Monte Carlo runner: paired trials of the proposed solver and its references."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .. import mimo, miso
from ..channel import (
    ArrayGeometry,
    ChannelRealization,
    CsiErrorModel,
    perturb_csi,
    sample_realization,
)
from ..manifold import DegenerateRetractionError, NonFiniteObjectiveError, PhaseMatrix, RcgParams
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

SOLVER_ERRORS = (
    np.linalg.LinAlgError,
    DegenerateRetractionError,
    NonFiniteObjectiveError,
    FloatingPointError,
    ZeroDivisionError,
)


@dataclass(frozen=True)
class ResultRecord:
    scenario: str
    sweep_name: str
    sweep_value: float
    snr_db: float
    trial: int
    algorithm: str
    sum_rate_bits: float
    outer_iterations: int
    wall_time_ms: float
    converged: bool

    def __post_init__(self):
        if not self.sum_rate_bits >= 0:
            raise ValueError(f"sum rate must be nonnegative, got {self.sum_rate_bits}")


class RunOutcome(NamedTuple):
    rate: float
    iterations: int
    converged: bool


# -- seeding ----------------------------------------------------------------


def trial_seeds(cfg: ExperimentConfig, sweep_idx: int, snr_idx: int, trial: int):
    """Independent seed sequences for the channel, the solvers and the CSI error.

    Every stream is keyed on ``(seed, sweep index, SNR index, trial)``. Along
    a CSI-error sweep the channel and solver streams use sweep index 0, so
    all error levels see the same channel and starting point and only the
    error draw changes.
    """
    shared = 0 if cfg.sweep is not None and cfg.sweep.name == "csi_error" else sweep_idx
    base = np.random.SeedSequence(cfg.seed, spawn_key=(shared, snr_idx, trial))
    chan, algo = base.spawn(2)
    csi = np.random.SeedSequence(cfg.seed, spawn_key=(sweep_idx, snr_idx, trial, 1))
    return chan, algo, csi


def draw_channel(cfg: ExperimentConfig, sys_cfg, rng: np.random.Generator) -> ChannelRealization:
    tx = ArrayGeometry.for_elements(sys_cfg.n_tx)
    rx = ArrayGeometry.for_elements(sys_cfg.n_rx)
    return sample_realization(rng, tx, rx, sys_cfg.n_users, cfg.n_paths)


# -- solvers ----------------------------------------------------------------


def _scenario(sys_cfg) -> str:
    return "miso" if isinstance(sys_cfg, miso.MisoConfig) else "mimo"


def run_proposed(
    estimate: ChannelRealization,
    truth: ChannelRealization,
    sys_cfg,
    rng: np.random.Generator,
    outer_iters: int = 60,
    rcg_params: RcgParams = RcgParams(),
) -> RunOutcome:
    """Optimise on the estimated channel, score on the true one."""
    if _scenario(sys_cfg) == "miso":
        res = miso.fp_pmo(estimate, sys_cfg, outer_iters, rcg_params, rng)
        rate = miso.sum_rate(res.state, truth, sys_cfg)
    else:
        res = mimo.wmmse_pmo(estimate, sys_cfg, outer_iters, rcg_params, rng)
        rate = mimo.sum_rate(res.state, truth, sys_cfg)
    return RunOutcome(rate, res.iterations, res.converged)


def _fd_config(sys_cfg):
    if _scenario(sys_cfg) == "miso":
        return miso.MisoConfig(
            n_rf=sys_cfg.n_tx, n_per_rimsa=1, n_users=sys_cfg.n_users, n_rx=sys_cfg.n_rx,
            power=sys_cfg.power, noise_vars=sys_cfg.noise_vars,
        )
    return mimo.MimoConfig(
        n_rf_tx=sys_cfg.n_tx, n_per_rimsa_tx=1, n_users=sys_cfg.n_users,
        n_rf_rx=sys_cfg.n_rx, n_per_rimsa_rx=1, n_streams=sys_cfg.n_streams,
        power=sys_cfg.power, noise_var=sys_cfg.noise_var,
    )


def _fd_run(estimate, truth, sys_cfg, rng, outer_iters, rcg_params) -> RunOutcome:
    fd = _fd_config(sys_cfg)
    if _scenario(sys_cfg) == "miso":
        # one chain per antenna: V is the identity; the UE phases are still optimised
        rng = rng if rng is not None else np.random.default_rng(0)
        init = miso.initial_state(fd, rng, v=PhaseMatrix.ones(fd.v_pattern))
        res = miso.fp_pmo(estimate, fd, outer_iters, rcg_params, init=init, optimize_v=False)
        rate = miso.sum_rate(res.state, truth, fd)
    else:
        # K = 1 and N = 1: both analog stages are diagonal phases absorbed by W_D and U
        init = mimo.initial_state(
            fd, np.random.default_rng(0),
            v=PhaseMatrix.ones(fd.v_pattern), w_rf=PhaseMatrix.ones(fd.wrf_pattern),
        )
        res = mimo.wmmse_pmo(
            estimate, fd, outer_iters, rcg_params, init=init, optimize_v=False, optimize_wrf=False
        )
        rate = mimo.sum_rate(res.state, truth, fd)
    return RunOutcome(rate, res.iterations, res.converged)


def fd_baseline(
    channels: ChannelRealization,
    cfg,
    scenario: Optional[str] = None,
    rng: Optional[np.random.Generator] = None,
    outer_iters: int = 60,
    rcg_params: RcgParams = RcgParams(),
) -> float:
    """Sum rate of the fully digital reference (one RF chain per element)."""
    if scenario is not None and scenario != _scenario(cfg):
        raise ValueError(f"scenario {scenario!r} does not match a {type(cfg).__name__}")
    return _fd_run(channels, channels, cfg, rng, outer_iters, rcg_params).rate


def _random_run(estimate, truth, sys_cfg, rng, outer_iters) -> RunOutcome:
    if _scenario(sys_cfg) == "miso":
        init = miso.initial_state(sys_cfg, rng)
        res = miso.fp_pmo(
            estimate, sys_cfg, outer_iters, init=init, optimize_v=False, optimize_f=False
        )
        rate = miso.sum_rate(res.state, truth, sys_cfg)
    else:
        init = mimo.initial_state(sys_cfg, rng)
        res = mimo.wmmse_pmo(
            estimate, sys_cfg, outer_iters, init=init, optimize_v=False, optimize_wrf=False
        )
        rate = mimo.sum_rate(res.state, truth, sys_cfg)
    return RunOutcome(rate, res.iterations, res.converged)


def random_phase_baseline(
    channels: ChannelRealization,
    cfg,
    scenario: Optional[str] = None,
    rng: Optional[np.random.Generator] = None,
    outer_iters: int = 60,
) -> float:
    """Sum rate with random analog phases and only the digital stage optimised."""
    if scenario is not None and scenario != _scenario(cfg):
        raise ValueError(f"scenario {scenario!r} does not match a {type(cfg).__name__}")
    rng = rng if rng is not None else np.random.default_rng()
    return _random_run(channels, channels, cfg, rng, outer_iters).rate


# -- experiment loop ----------------------------------------------------------


def run_trial(cfg: ExperimentConfig, sweep_idx: int, snr_idx: int, trial: int) -> List[ResultRecord]:
    """All algorithms on one channel draw.

    The proposed solver and the random-phase reference start from the same
    random phases (both draw from a fresh generator on the same stream).
    """
    snr = cfg.snr_grid[snr_idx]
    sweep_name, sweep_value = cfg.sweep_points()[sweep_idx]
    sys_cfg = cfg.system_config(sweep_idx, snr)
    chan_seq, algo_seq, csi_seq = trial_seeds(cfg, sweep_idx, snr_idx, trial)
    truth = draw_channel(cfg, sys_cfg, np.random.default_rng(chan_seq))
    sigma = cfg.csi_sigma(sweep_idx)
    estimate = perturb_csi(truth, CsiErrorModel(sigma), np.random.default_rng(csi_seq))
    algo_key = algo_seq.spawn(1)[0]

    records = []
    for name in cfg.algorithms:
        rng = np.random.default_rng(algo_key)
        start = time.perf_counter()
        try:
            if name in ("fp_pmo", "wmmse_pmo"):
                out = run_proposed(estimate, truth, sys_cfg, rng, cfg.outer_iters, cfg.rcg)
            elif name == "fd_opt":
                out = _fd_run(estimate, truth, sys_cfg, rng, cfg.outer_iters, cfg.rcg)
            else:
                out = _random_run(estimate, truth, sys_cfg, rng, cfg.outer_iters)
        except SOLVER_ERRORS as exc:
            logger.warning(
                "%s failed (sweep %d, snr %g, trial %d): %s", name, sweep_idx, snr, trial, exc
            )
            out = RunOutcome(0.0, 0, False)
        elapsed = 1e3 * (time.perf_counter() - start) if cfg.record_timing else 0.0
        records.append(
            ResultRecord(
                cfg.scenario, sweep_name, float(sweep_value), float(snr), trial, name,
                float(max(out.rate, 0.0)), int(out.iterations), float(elapsed), bool(out.converged),
            )
        )
    return records


def _units(cfg: ExperimentConfig) -> List[Tuple[int, int, int]]:
    return [
        (k, s, t)
        for k in range(len(cfg.sweep_points()))
        for s in range(len(cfg.snr_grid))
        for t in range(cfg.trials)
    ]


def _run_unit(args):
    cfg, unit = args
    return unit, run_trial(cfg, *unit)


def run_experiment(cfg: ExperimentConfig, progress=None) -> List[ResultRecord]:
    """Every (sweep point, SNR, trial) unit, records in a fixed order.

    Units are independent; with ``workers > 1`` they run in a process pool
    and are reordered afterwards, so the output never depends on scheduling.
    """
    units = _units(cfg)
    results = {}
    if cfg.workers == 1:
        for unit in units:
            results[unit] = run_trial(cfg, *unit)
            if progress:
                progress(len(results), len(units))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for unit, recs in pool.map(_run_unit, [(cfg, u) for u in units]):
                results[unit] = recs
                if progress:
                    progress(len(results), len(units))
    return [rec for unit in sorted(results) for rec in results[unit]]


def convergence_trace(
    cfg: ExperimentConfig, sweep_idx: int = 0, snr_idx: int = 0, trial: int = 0, objective: str = "rate"
) -> List[float]:
    """Per-iteration objective of the proposed solver on one seeded trial.

    ``objective`` is ``"rate"`` (sum rate, both scenarios) or ``"wmse"``
    (weighted-MSE objective, MIMO only).
    """
    snr = cfg.snr_grid[snr_idx]
    sys_cfg = cfg.system_config(sweep_idx, snr)
    chan_seq, algo_seq, csi_seq = trial_seeds(cfg, sweep_idx, snr_idx, trial)
    truth = draw_channel(cfg, sys_cfg, np.random.default_rng(chan_seq))
    estimate = perturb_csi(truth, CsiErrorModel(cfg.csi_sigma(sweep_idx)), np.random.default_rng(csi_seq))
    rng = np.random.default_rng(algo_seq.spawn(1)[0])
    if cfg.scenario == "miso":
        if objective != "rate":
            raise ValueError("MISO traces only support the sum-rate objective")
        return miso.fp_pmo(estimate, sys_cfg, cfg.outer_iters, cfg.rcg, rng).rate_trace
    res = mimo.wmmse_pmo(estimate, sys_cfg, cfg.outer_iters, cfg.rcg, rng)
    if objective == "rate":
        return res.rate_trace
    if objective == "wmse":
        return res.wmse_trace
    raise ValueError(f"unknown objective {objective!r}")
