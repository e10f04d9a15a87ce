"""Linear-system identification of the modulator channel.

The channel after bulk-delay removal is modeled as a constant offset plus
a complex FIR kernel (a first-order Volterra series truncated to memory
M). The kernel is recovered from an input/output envelope pair by ridge
least squares, with the ridge weight chosen by contiguous-block
cross-validation on held-out samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .envelope import (ComplexEnvelope, GridMismatchError, InvalidSpecError)

DEFAULT_MEMORY = 64  # taps at 1 ns spacing; covers post-delay ringing


class SolverConvergenceError(RuntimeError):
    """Iterative least-squares solver stopped before reaching tolerance."""


@dataclass(frozen=True)
class VolterraModel:
    """Constant offset ``h0`` plus complex FIR taps ``h1``.

    The forward map is out_n = h0 + sum_{j<M} h1[j] * in_{n-j} with zero
    initial conditions.
    """

    h0: complex
    h1: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.h1, dtype=complex)
        if taps.ndim != 1 or len(taps) < 1:
            raise InvalidSpecError("h1 must hold at least one tap")
        if not (np.isfinite(self.h0) and np.all(np.isfinite(taps))):
            raise InvalidSpecError("model coefficients must be finite")
        taps = taps.copy()
        taps.setflags(write=False)
        object.__setattr__(self, "h0", complex(self.h0))
        object.__setattr__(self, "h1", taps)

    @property
    def memory(self) -> int:
        return len(self.h1)

    @staticmethod
    def identity() -> "VolterraModel":
        return VolterraModel(h0=0.0, h1=np.array([1.0 + 0.0j]))


def volterra_forward(model: VolterraModel,
                     env: ComplexEnvelope) -> ComplexEnvelope:
    """Apply the offset-plus-FIR model to an envelope.

    Causal convolution with zero initial conditions; the output lives on
    the input grid. The memory length may not exceed the signal length.
    """
    if model.memory > env.grid.n:
        raise InvalidSpecError(
            f"memory {model.memory} exceeds signal length {env.grid.n}")
    y = np.convolve(env.samples, model.h1)[:env.grid.n] + model.h0
    return ComplexEnvelope(env.grid, y)


def build_design_matrix(env: ComplexEnvelope, memory: int) -> np.ndarray:
    """Regression matrix whose rows are [1, x_n, x_{n-1}, ..., x_{n-M+1}].

    Entries with negative signal index are zero (causal padding), so the
    matrix-vector product with [h0, h1] reproduces ``volterra_forward``.
    """
    n = env.grid.n
    if not 1 <= memory <= n:
        raise InvalidSpecError(f"memory {memory} out of range [1, {n}]")
    x = env.samples
    a = np.zeros((n, memory + 1), dtype=complex)
    a[:, 0] = 1.0
    for j in range(memory):
        a[j:, j + 1] = x[:n - j]
    return a


def _stack_real(a: np.ndarray) -> np.ndarray:
    """Real block matrix equivalent to complex multiplication by ``a``."""
    return np.block([[a.real, -a.imag], [a.imag, a.real]])


def _solve_ridge(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """Minimize ||a th - b||^2 + lam ||th||^2 over complex th via LSQR.

    The complex system is rewritten as an equivalent real one (real and
    imaginary parts stacked), on which the complex ridge penalty is the
    plain Euclidean damping LSQR implements. Returns the minimum-norm
    minimizer when the system is underdetermined.
    """
    ncoef = a.shape[1]
    ar = _stack_real(a)
    br = np.concatenate([b.real, b.imag])
    res = spla.lsqr(ar, br, damp=np.sqrt(lam), atol=1e-14, btol=1e-14,
                    iter_lim=50 * 2 * ncoef)
    theta, istop, residual = res[0], res[1], res[3]
    if istop == 7:
        raise SolverConvergenceError(
            f"LSQR hit its iteration limit; residual norm {residual:.3e}")
    return theta[:ncoef] + 1j * theta[ncoef:]


def estimate_kernel(inp: ComplexEnvelope, out: ComplexEnvelope,
                    memory: int, lambda_reg: float) -> VolterraModel:
    """Fit offset and kernel by regularized least squares.

    Parameters
    ----------
    inp, out : ComplexEnvelope
        Input/output pair on identical grids, already delay-aligned.
    memory : int
        Number of FIR taps to fit.
    lambda_reg : float
        Nonnegative ridge weight on all coefficients including the
        offset; zero requests the plain (minimum-norm) least squares
        solution.
    """
    if inp.grid != out.grid:
        raise GridMismatchError("input and output grids differ")
    if lambda_reg < 0:
        raise InvalidSpecError(f"lambda_reg must be >= 0, got {lambda_reg}")
    if inp.grid.n < memory + 1:
        raise InvalidSpecError(
            f"need at least {memory + 1} samples, got {inp.grid.n}")
    a = build_design_matrix(inp, memory)
    theta = _solve_ridge(a, out.samples, lambda_reg)
    return VolterraModel(h0=theta[0], h1=theta[1:])


@dataclass(frozen=True)
class CVConfig:
    """Contiguous-block cross-validation settings.

    Folds are consecutive sample blocks, never shuffled, so temporally
    correlated noise cannot leak between train and validation sets. The
    score is validation mean squared error.
    """

    folds: int = 5
    lambda_grid: tuple = field(
        default_factory=lambda: tuple(np.logspace(-6.0, 0.0, 7)))

    def __post_init__(self):
        if self.folds < 2:
            raise InvalidSpecError(f"folds must be >= 2, got {self.folds}")
        grid = tuple(float(v) for v in self.lambda_grid)
        if not grid:
            raise InvalidSpecError("lambda_grid must be nonempty")
        if any(v < 0 for v in grid):
            raise InvalidSpecError("lambda_grid values must be >= 0")
        object.__setattr__(self, "lambda_grid", grid)


def cross_validate(inp: ComplexEnvelope, out: ComplexEnvelope, memory: int,
                   cv: CVConfig):
    """Pick the ridge weight with the lowest held-out error.

    Splits the samples into ``cv.folds`` contiguous blocks; each block
    serves once as the validation set while the model is fitted on the
    remaining rows. Returns ``(lambda_star, scores)`` where ``scores``
    is an array of (lambda, mean validation MSE) rows in grid order and
    lambda_star attains the table minimum (first entry on ties).
    """
    if inp.grid != out.grid:
        raise GridMismatchError("input and output grids differ")
    n = inp.grid.n
    if cv.folds > n:
        raise InvalidSpecError(
            f"cannot split {n} samples into {cv.folds} folds")
    a = build_design_matrix(inp, memory)
    y = out.samples
    blocks = np.array_split(np.arange(n), cv.folds)
    scores = np.zeros((len(cv.lambda_grid), 2))
    for i, lam in enumerate(cv.lambda_grid):
        mse_sum = 0.0
        for val_idx in blocks:
            train = np.ones(n, dtype=bool)
            train[val_idx] = False
            theta = _solve_ridge(a[train], y[train], lam)
            r = a[val_idx] @ theta - y[val_idx]
            mse_sum += float(np.mean(np.abs(r) ** 2))
        scores[i] = (lam, mse_sum / cv.folds)
    lambda_star = float(scores[np.argmin(scores[:, 1]), 0])
    return lambda_star, scores


def fitted_output(model: VolterraModel,
                  env: ComplexEnvelope) -> ComplexEnvelope:
    """Model prediction for an input; alias of ``volterra_forward``."""
    return volterra_forward(model, env)


def model_error(model: VolterraModel, inp: ComplexEnvelope,
                out: ComplexEnvelope):
    """Error metrics between the model's prediction and a measurement."""
    from .envelope import metric_report
    if inp.grid != out.grid:
        raise GridMismatchError("input and output grids differ")
    return metric_report(fitted_output(model, inp), out)
