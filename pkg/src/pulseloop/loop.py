"""Pre-distortion computation and the closed correction loop.

Two update strategies produce the next input pulse from a measurement:
the transfer-function method identifies the channel kernel and inverts
it offline by damped (Levenberg-Marquardt) iterations, and the
transfer-function-free method feeds the output error straight back onto
the input. The loop driver alternates measure / align / update until
the amplitude error reaches the noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solveh_banded

from .envelope import (ComplexEnvelope, GridMismatchError, InvalidSpecError,
                       align_delay, mase, mse_cost)
from .sysid import (DEFAULT_MEMORY, VolterraModel, estimate_kernel,
                    fitted_output)

LOOP_METHODS = ("transfer-function", "transfer-function-free")


class SingularUpdateError(RuntimeError):
    """Damped normal system was singular; retry with larger damping."""


class MeasurementError(RuntimeError):
    """Measurement callback failed inside the closed loop."""


@dataclass(frozen=True)
class LMConfig:
    """Damping schedule for the offline iterations.

    Classic accept/reject damping: shrink lambda after a cost-reducing
    step, grow it and retry otherwise.
    """

    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    max_iters: int = 50
    cost_tol: float = 1e-6

    def __post_init__(self):
        if self.lambda0 <= 0:
            raise InvalidSpecError("lambda0 must be positive")
        if self.lambda_up <= 1 or not 0 < self.lambda_down < 1:
            raise InvalidSpecError(
                "need lambda_up > 1 and 0 < lambda_down < 1")
        if self.cost_tol <= 0:
            raise InvalidSpecError("cost_tol must be positive")


@dataclass(frozen=True)
class LoopConfig:
    """Closed-loop driver settings.

    ``memory`` and ``lambda_reg`` parameterize the kernel estimation
    used by the transfer-function method; the estimate is refreshed
    every iteration unless ``reestimate_model_each_iter`` is off.
    """

    method: str = "transfer-function"
    max_loop_iters: int = 10
    offline: LMConfig = field(default_factory=LMConfig)
    reestimate_model_each_iter: bool = True
    convergence_mase: float = 1e-3
    memory: int = DEFAULT_MEMORY
    lambda_reg: float = 0.0

    def __post_init__(self):
        if self.method not in LOOP_METHODS:
            raise InvalidSpecError(
                f"method must be one of {LOOP_METHODS}, got {self.method!r}")
        if self.max_loop_iters < 1:
            raise InvalidSpecError("max_loop_iters must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    """State captured at one loop iteration.

    ``model_error`` is the MASE between the identified model's predicted
    output and the measured one (NaN when no model is in play).
    """

    index: int
    s_pred: ComplexEnvelope
    s_out: ComplexEnvelope
    mase: float
    mse: float
    model_error: float


@dataclass(frozen=True)
class LoopReport:
    """Full history of a closed-loop run."""

    records: tuple
    converged: bool
    final_model: Optional[VolterraModel]

    def __post_init__(self):
        if not self.records:
            raise InvalidSpecError("report requires at least one record")
        object.__setattr__(self, "records", tuple(self.records))

    @property
    def mase_trace(self) -> np.ndarray:
        return np.array([r.mase for r in self.records])


class OfflineResult(NamedTuple):
    """Pre-distorted pulse plus the accepted-step cost trace."""

    s_pred: ComplexEnvelope
    costs: np.ndarray
    converged: bool


def jacobian(model: VolterraModel, env: ComplexEnvelope) -> np.ndarray:
    """Sensitivity of the model output to each input sample.

    For the offset-plus-FIR model this is the lower-triangular banded
    Toeplitz matrix J[n, m] = h1[n - m] for 0 <= n - m < M, independent
    of the input (the input argument fixes the dimension and keeps the
    interface ready for input-dependent models).
    """
    n = env.grid.n
    if model.memory > n:
        raise InvalidSpecError(
            f"memory {model.memory} exceeds signal length {n}")
    j = np.zeros((n, n), dtype=complex)
    rows = np.arange(n)
    for m, tap in enumerate(model.h1):
        j[rows[m:], rows[m:] - m] = tap
    return j


def _sparse_jacobian(h1: np.ndarray, n: int) -> sp.spmatrix:
    diags = [np.full(n - m, h1[m]) for m in range(len(h1))]
    return sp.diags(diags, offsets=[-m for m in range(len(h1))],
                    format="csc", shape=(n, n))


def _normal_banded(h1: np.ndarray, n: int):
    """Lower-banded storage of J^H J for the banded Toeplitz Jacobian."""
    j = _sparse_jacobian(h1, n)
    g = (j.conj().T @ j).tocoo()
    bw = len(h1) - 1
    ab = np.zeros((bw + 1, n), dtype=complex)
    keep = (g.row >= g.col) & (g.row - g.col <= bw)
    np.add.at(ab, (g.row[keep] - g.col[keep], g.col[keep]), g.data[keep])
    return j, ab


def _damped_step(j: sp.spmatrix, ab: np.ndarray, residual: np.ndarray,
                 lam: float) -> np.ndarray:
    """Solve (J^H J + lam I) step = J^H residual via a banded Cholesky."""
    rhs = j.conj().T @ residual
    abd = ab.copy()
    abd[0] += lam
    try:
        return solveh_banded(abd, rhs, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularUpdateError(
            f"damped system not positive definite at lambda={lam}") from exc


def lm_step(model: VolterraModel, s_in: ComplexEnvelope,
            s_target: ComplexEnvelope, s_out: ComplexEnvelope,
            lambda_damp: float) -> ComplexEnvelope:
    """One damped Gauss-Newton update of the input pulse.

    Returns s_in - (J^H J + lambda I)^{-1} grad with gradient
    -J^H (s_target - s_out), solved as a Hermitian banded linear system
    (never by explicit inversion). Raises ``SingularUpdateError`` when
    the damped system is singular; callers respond by raising lambda.
    """
    if not (s_in.grid == s_target.grid == s_out.grid):
        raise GridMismatchError("lm_step requires one common grid")
    if lambda_damp < 0:
        raise InvalidSpecError("lambda_damp must be >= 0")
    j, ab = _normal_banded(model.h1, s_in.grid.n)
    step = _damped_step(j, ab, s_target.samples - s_out.samples, lambda_damp)
    return s_in.with_samples(s_in.samples + step)


def offline_iterate(model: VolterraModel, s_target: ComplexEnvelope,
                    config: LMConfig = LMConfig()) -> OfflineResult:
    """Damped iterations computing the pre-distorted input pulse.

    Starting from the target itself, each iteration proposes a damped
    Gauss-Newton update; updates that reduce the mean squared cost
    between the model's fitted output and the target are accepted (and
    the damping relaxed), others rejected (and the damping raised).
    Stops when the cost falls below ``config.cost_tol`` or the iteration
    budget runs out, returning the best input found either way, with
    ``converged`` flagging which case occurred. The returned cost trace
    covers accepted steps and is non-increasing.
    """
    if model.memory > s_target.grid.n:
        raise InvalidSpecError("model memory exceeds the target length")
    j, ab = _normal_banded(model.h1, s_target.grid.n)
    s = s_target.samples.copy()
    target = s_target.samples

    def fitted(x):
        return np.convolve(x, model.h1)[:len(x)] + model.h0

    out = fitted(s)
    cost = float(np.mean(np.abs(target - out) ** 2))
    costs = [cost]
    lam = config.lambda0
    for _ in range(config.max_iters):
        if cost < config.cost_tol:
            break
        try:
            step = _damped_step(j, ab, target - out, lam)
        except SingularUpdateError:
            lam *= config.lambda_up
            continue
        s_try = s + step
        out_try = fitted(s_try)
        cost_try = float(np.mean(np.abs(target - out_try) ** 2))
        if cost_try < cost:
            s, out, cost = s_try, out_try, cost_try
            costs.append(cost)
            lam *= config.lambda_down
        else:
            lam *= config.lambda_up
    return OfflineResult(s_pred=s_target.with_samples(s),
                         costs=np.array(costs),
                         converged=cost < config.cost_tol)


def tf_free_step(s_in: ComplexEnvelope, s_target: ComplexEnvelope,
                 s_out: ComplexEnvelope,
                 corrected_sign: bool = True) -> ComplexEnvelope:
    """Model-free input update from the measured output error.

    Returns s_in + (s_target - s_out), a unity-gain error feedback whose
    fixed point is s_out = s_target. ``corrected_sign=False`` selects
    the opposite sign, s_in - (s_target - s_out), kept for comparison:
    it moves away from the target on any near-identity channel.
    """
    if not (s_in.grid == s_target.grid == s_out.grid):
        raise GridMismatchError("tf_free_step requires one common grid")
    err = s_target.samples - s_out.samples
    sign = 1.0 if corrected_sign else -1.0
    return s_in.with_samples(s_in.samples + sign * err)


def _align_to_target(raw: ComplexEnvelope,
                     s_target: ComplexEnvelope) -> ComplexEnvelope:
    """Delay-align a measurement and crop it onto the target grid."""
    aligned, _ = align_delay(raw, s_target)
    n = s_target.grid.n
    if aligned.grid.n < n:
        raise GridMismatchError(
            f"measurement ({aligned.grid.n} samples) shorter than the "
            f"target ({n})")
    return ComplexEnvelope(s_target.grid, aligned.samples[:n])


def closed_loop(measure: Callable[[ComplexEnvelope], ComplexEnvelope],
                s_target: ComplexEnvelope,
                config: LoopConfig = LoopConfig()) -> LoopReport:
    """Run the closed correction loop against a measurement callback.

    Each iteration sends the current input through ``measure``, aligns
    and crops the output onto the target grid, and scores it by MASE.
    Below ``config.convergence_mase`` the loop stops converged;
    otherwise the next input comes from the configured method: identify
    the kernel and invert it offline (transfer-function), or feed the
    error back directly (transfer-function-free).
    """
    s_in = s_target
    records = []
    model: Optional[VolterraModel] = None
    converged = False
    for it in range(1, config.max_loop_iters + 1):
        try:
            raw = measure(s_in)
        except Exception as exc:
            raise MeasurementError(
                f"measurement callback failed at iteration {it}") from exc
        s_out = _align_to_target(raw, s_target)
        m = mase(s_out, s_target)
        c = mse_cost(s_out, s_target)
        done = m <= config.convergence_mase
        if not done and config.method == "transfer-function":
            if model is None or config.reestimate_model_each_iter:
                model = estimate_kernel(s_in, s_out, config.memory,
                                        config.lambda_reg)
        merr = float("nan")
        if model is not None:
            merr = mase(fitted_output(model, s_in), s_out)
        records.append(IterationRecord(index=it, s_pred=s_in, s_out=s_out,
                                       mase=m, mse=c, model_error=merr))
        if done:
            converged = True
            break
        if config.method == "transfer-function":
            s_in = offline_iterate(model, s_target, config.offline).s_pred
        else:
            s_in = tf_free_step(s_in, s_target, s_out)
    return LoopReport(records=tuple(records), converged=converged,
                      final_model=model)


class ReplayChannel:
    """Measurement callback that plays back recorded outputs in order.

    Useful for re-running the loop arithmetic against data captured from
    hardware: the k-th call returns the k-th recorded output regardless
    of the requested input.
    """

    def __init__(self, outputs: Sequence[ComplexEnvelope]):
        if not outputs:
            raise InvalidSpecError("replay requires at least one record")
        self._outputs = list(outputs)
        self._cursor = 0

    def measure(self, env: ComplexEnvelope) -> ComplexEnvelope:
        if self._cursor >= len(self._outputs):
            raise MeasurementError(
                f"replay exhausted after {len(self._outputs)} measurements")
        out = self._outputs[self._cursor]
        self._cursor += 1
        return out
