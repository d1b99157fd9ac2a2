"""Riemannian conjugate gradient on products of block-diagonal phase matrices.

A phase matrix has unit-modulus entries on a block-diagonal support and
exact zeros elsewhere. Tangent vectors are plain complex arrays of the same
shape; they are zero off the support and satisfy ``Re(Z * conj(X)) == 0``
entrywise at their base point ``X``.

The solver works on tuples of phase matrices (the product manifold) with
the product metric, i.e. the sum of ``Re Tr(A^H B)`` over members.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Objective = Callable[[Tuple[np.ndarray, ...]], float]
EuclidGrad = Callable[[Tuple[np.ndarray, ...]], Sequence[np.ndarray]]

RETRACT_FLOOR = 1e-15
STEP_FLOOR = 1e-12
FEASIBILITY_TOL = 1e-9


class DegenerateRetractionError(ArithmeticError):
    """A supported entry collapsed to (numerically) zero modulus."""


class NonFiniteObjectiveError(FloatingPointError):
    pass


@dataclass(frozen=True)
class BlockDiagPattern:
    """Support of a block-diagonal matrix, blocks laid out corner to corner."""

    blocks: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        blocks = tuple((int(r), int(c)) for r, c in self.blocks)
        if not blocks:
            raise ValueError("pattern needs at least one block")
        if any(r < 1 or c < 1 for r, c in blocks):
            raise ValueError(f"block dims must be positive: {blocks}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def uniform(cls, n_blocks: int, rows: int, cols: int) -> "BlockDiagPattern":
        return cls(((rows, cols),) * n_blocks)

    @cached_property
    def total_rows(self) -> int:
        return sum(r for r, _ in self.blocks)

    @cached_property
    def total_cols(self) -> int:
        return sum(c for _, c in self.blocks)

    @cached_property
    def shape(self) -> Tuple[int, int]:
        return self.total_rows, self.total_cols

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        r0 = c0 = 0
        for r, c in self.blocks:
            m[r0:r0 + r, c0:c0 + c] = True
            r0 += r
            c0 += c
        m.setflags(write=False)
        return m

    def block_slices(self):
        r0 = c0 = 0
        for r, c in self.blocks:
            yield slice(r0, r0 + r), slice(c0, c0 + c)
            r0 += r
            c0 += c


@dataclass
class PhaseMatrix:
    pattern: BlockDiagPattern
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        check_feasible(self.values, self.pattern)

    @classmethod
    def random(cls, pattern: BlockDiagPattern, rng: np.random.Generator) -> "PhaseMatrix":
        phases = rng.uniform(0.0, 2 * np.pi, size=pattern.shape)
        return cls(pattern, np.where(pattern.mask, np.exp(1j * phases), 0))

    @classmethod
    def ones(cls, pattern: BlockDiagPattern) -> "PhaseMatrix":
        return cls(pattern, pattern.mask.astype(complex))

    @classmethod
    def _trusted(cls, pattern: BlockDiagPattern, values: np.ndarray) -> "PhaseMatrix":
        # skips validation; only for outputs of retract()
        obj = cls.__new__(cls)
        obj.pattern = pattern
        obj.values = values
        return obj

    def copy(self) -> "PhaseMatrix":
        return PhaseMatrix._trusted(self.pattern, self.values.copy())


def check_feasible(x: np.ndarray, pattern: BlockDiagPattern, tol: float = FEASIBILITY_TOL):
    if x.shape != pattern.shape:
        raise ValueError(f"shape {x.shape} does not match pattern {pattern.shape}")
    mask = pattern.mask
    if np.any(x[~mask] != 0):
        raise ValueError("nonzero entry outside the block-diagonal support")
    if np.any(np.abs(np.abs(x[mask]) - 1.0) > tol):
        raise ValueError("supported entry violates the unit-modulus constraint")


def _check_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def project_tangent(x: PhaseMatrix, g: np.ndarray) -> np.ndarray:
    """Orthogonal projection of an ambient matrix onto the tangent space at ``x``."""
    g = np.asarray(g, dtype=complex)
    _check_shape(g, x.values)
    return _transport(np.where(x.pattern.mask, g, 0), x.values)


def retract(x_raw: np.ndarray, pattern: BlockDiagPattern) -> PhaseMatrix:
    """Entrywise normalisation back onto the unit circle; off-support set to 0."""
    x_raw = np.asarray(x_raw, dtype=complex)
    if x_raw.shape != pattern.shape:
        raise ValueError(f"shape {x_raw.shape} does not match pattern {pattern.shape}")
    mask = pattern.mask
    mod = np.abs(x_raw)
    if np.min(mod, where=mask, initial=np.inf) < RETRACT_FLOOR:
        raise DegenerateRetractionError("cannot retract an entry of zero modulus")
    out = np.zeros(pattern.shape, dtype=complex)
    np.divide(x_raw, mod, out=out, where=mask)
    return PhaseMatrix._trusted(pattern, out)


def _transport(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    return z - (z * x.conj()).real * x


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return np.vdot(a, b).real


def transport(pi_prev: np.ndarray, x_new: PhaseMatrix) -> np.ndarray:
    """Vector transport by projection onto the tangent space at ``x_new``."""
    _check_shape(pi_prev, x_new.values)
    return _transport(pi_prev, x_new.values)


def metric(a: np.ndarray, b: np.ndarray) -> float:
    """``Re Tr(A^H B)``."""
    _check_shape(a, b)
    return float(_inner(a, b))


def polak_ribiere(g_new: np.ndarray, g_old_transported: np.ndarray, g_old: np.ndarray) -> float:
    denom = metric(g_old, g_old)
    if denom <= 0:
        raise ZeroDivisionError("previous gradient is zero; the solver should have stopped")
    return metric(g_new, g_new - g_old_transported) / denom


@dataclass(frozen=True)
class RcgParams:
    c: float = 1e-4
    tau: float = 0.5
    alpha0: float = 1.0
    epsilon: float = 1e-4
    max_iter: int = 200

    def __post_init__(self):
        if not 0 < self.c < 1:
            raise ValueError(f"c must lie in (0, 1), got {self.c}")
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")


@dataclass
class RcgState:
    points: Tuple[PhaseMatrix, ...]
    riem_grads: Tuple[np.ndarray, ...]
    directions: Tuple[np.ndarray, ...]
    value: float
    iteration: int = 0
    trace: List[float] = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        # stopping quantity: sum of the members' Frobenius norms
        return float(sum(np.linalg.norm(g) for g in self.riem_grads))


def _values(points: Sequence[PhaseMatrix]) -> Tuple[np.ndarray, ...]:
    return tuple(p.values for p in points)


def _evaluate(objective: Objective, values: Tuple[np.ndarray, ...]) -> float:
    f = float(objective(values))
    if not np.isfinite(f):
        raise NonFiniteObjectiveError(f"objective returned {f}")
    return f


def backtracking_step(
    objective: Objective,
    points: Sequence[PhaseMatrix],
    directions: Sequence[np.ndarray],
    params: RcgParams,
    grads: Sequence[np.ndarray],
    f0: float | None = None,
):
    """Armijo backtracking along retracted tangent directions.

    Tries ``alpha0 * tau**n`` for n = 0, 1, ... and accepts the first step with
    ``f(R(X + a*P)) <= f(X) + c * a * sum_k <grad_k, P_k>``. Returns
    ``(alpha, new_points, new_value)``; ``alpha == 0`` with the unchanged
    points when nothing above ``STEP_FLOOR`` qualifies.
    """
    if f0 is None:
        f0 = _evaluate(objective, _values(points))
    slope = sum(_inner(g, d) for g, d in zip(grads, directions))
    alpha = params.alpha0
    while alpha >= STEP_FLOOR:
        cand = tuple(retract(p.values + alpha * d, p.pattern) for p, d in zip(points, directions))
        f = _evaluate(objective, _values(cand))
        if f <= f0 + params.c * alpha * slope:
            return alpha, cand, f
        alpha *= params.tau
    return 0.0, tuple(points), f0


def riemannian_grads(
    euclid_grad: EuclidGrad, points: Sequence[PhaseMatrix]
) -> Tuple[np.ndarray, ...]:
    egrads = euclid_grad(_values(points))
    if len(egrads) != len(points):
        raise ValueError("gradient callback must return one array per point")
    return tuple(project_tangent(p, g) for p, g in zip(points, egrads))


def rcg_minimize(
    objective: Objective,
    euclid_grad: EuclidGrad,
    init: Sequence[PhaseMatrix],
    params: RcgParams = RcgParams(),
):
    """Minimise ``objective`` over a product of phase-matrix manifolds.

    Both callbacks receive the tuple of current value arrays; ``euclid_grad``
    returns one Euclidean gradient per member (with respect to
    ``Re + 1j*Im`` of the entries). Conjugate directions use a per-member
    Polak-Ribiere coefficient clipped at zero, and fall back to steepest
    descent whenever the combined direction is not a descent direction.

    Returns ``(points, trace)`` where ``trace`` holds the objective at the
    start and after every accepted step.
    """
    init = tuple(init)
    for p in init:
        check_feasible(p.values, p.pattern)
    state = _init_state(objective, euclid_grad, init)
    while state.iteration < params.max_iter and state.grad_norm >= params.epsilon:
        if not _rcg_step(objective, euclid_grad, state, params):
            break
    logger.debug(
        "rcg stopped after %d iterations, |grad| = %.3e", state.iteration, state.grad_norm
    )
    return state.points, state.trace


def _init_state(objective, euclid_grad, points) -> RcgState:
    f = _evaluate(objective, _values(points))
    grads = riemannian_grads(euclid_grad, points)
    return RcgState(points, grads, tuple(-g for g in grads), f, 0, [f])


def _rcg_step(objective, euclid_grad, state: RcgState, params: RcgParams) -> bool:
    """Advance ``state`` by one iteration; False when no progress is possible."""
    state.iteration += 1
    alpha, new_points, f_new = backtracking_step(
        objective, state.points, state.directions, params, state.riem_grads, state.value
    )
    if alpha == 0.0:
        steepest = all(np.array_equal(d, -g) for d, g in zip(state.directions, state.riem_grads))
        if steepest:
            return False
        state.directions = tuple(-g for g in state.riem_grads)
        return True

    new_grads = riemannian_grads(euclid_grad, new_points)
    new_dirs = []
    for x_new, g_new, g_old, d_old in zip(new_points, new_grads, state.riem_grads, state.directions):
        x = x_new.values
        denom = _inner(g_old, g_old)
        mu = _inner(g_new, g_new - _transport(g_old, x)) / denom if denom > 0 else 0.0
        new_dirs.append(-g_new + max(mu, 0.0) * _transport(d_old, x))
    if sum(_inner(g, d) for g, d in zip(new_grads, new_dirs)) >= 0:
        new_dirs = [-g for g in new_grads]

    state.points = new_points
    state.riem_grads = new_grads
    state.directions = tuple(new_dirs)
    state.value = f_new
    state.trace.append(f_new)
    return True
