"""Complex-envelope containers, pulse library, and error metrics.

Everything downstream (demodulation, identification, the feedback loop)
works on uniformly sampled complex baseband envelopes s(t) = I(t) + iQ(t).
This module owns the time-grid bookkeeping, the parametric pulse shapes
used as targets, and the two error metrics the loop optimizes against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DT = 1e-9  # 1 ns working sample period for envelopes


class GridMismatchError(ValueError):
    """Two envelopes were combined but their time grids differ."""


class ZeroSignalError(ValueError):
    """An operation that needs a nonzero signal received all zeros."""


class InvalidSpecError(ValueError):
    """A pulse specification is inconsistent with its grid or itself."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid t_k = t0 + k*dt for k = 0..n-1."""

    t0: float
    dt: float
    n: int

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidSpecError(f"dt must be positive, got {self.dt}")
        if self.n < 2:
            raise InvalidSpecError(f"need at least 2 samples, got {self.n}")

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def span(self) -> float:
        return self.dt * (self.n - 1)

    @property
    def center(self) -> float:
        return self.t0 + 0.5 * self.dt * (self.n - 1)


@dataclass(frozen=True)
class ComplexEnvelope:
    """A complex baseband signal together with its grid.

    Samples are held as an immutable complex array; ``amplitude`` and
    ``phase`` views correspond to A_k = |s_k| and P_k = arg(s_k).
    """

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=complex)
        if arr.ndim != 1 or len(arr) != self.grid.n:
            raise InvalidSpecError(
                f"expected {self.grid.n} samples, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidSpecError("samples must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.samples)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.samples)

    def norm(self) -> float:
        return float(np.linalg.norm(self.samples))

    def with_samples(self, samples) -> "ComplexEnvelope":
        return ComplexEnvelope(self.grid, samples)


@dataclass(frozen=True)
class PulseSpec:
    """Parametric description of a library pulse.

    ``kind`` selects the shape; ``fwhm`` applies to the gaussian kinds,
    ``phase_jump_rad``/``phase_width_frac`` to the gate-standin, and
    ``table`` carries explicit samples for the custom-table kind.
    """

    kind: str
    duration: float
    fwhm: float | None = None
    peak: float = 1.0
    phase_jump_rad: float = np.pi
    phase_width_frac: float = 0.05
    table: tuple | None = None

    KINDS = ("truncated-gaussian", "gaussian", "gate-standin", "constant",
             "custom-table")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidSpecError(f"unknown pulse kind {self.kind!r}")
        if self.duration <= 0:
            raise InvalidSpecError("duration must be positive")
        if not 0 < self.peak <= 1:
            raise InvalidSpecError("peak must lie in (0, 1]")
        if self.kind in ("truncated-gaussian", "gaussian"):
            if self.fwhm is None or self.fwhm <= 0:
                raise InvalidSpecError(f"{self.kind} requires positive fwhm")


def default_grid(duration: float, dt: float = DEFAULT_DT,
                 margin_frac: float = 0.5) -> TimeGrid:
    """Grid sized to hold a pulse of the given duration, centered, with
    near-zero margin of ``margin_frac * duration`` on each side."""
    n = int(round(duration * (1 + 2 * margin_frac) / dt))
    return TimeGrid(t0=0.0, dt=dt, n=n)


def make_pulse(spec: PulseSpec, grid: TimeGrid) -> ComplexEnvelope:
    """Generate a library pulse on the given grid.

    Parameters
    ----------
    spec : PulseSpec
        Shape selection and parameters. The pulse is centered on the grid.
    grid : TimeGrid
        Output sampling grid; ``spec.duration`` must fit in its span.

    Returns
    -------
    ComplexEnvelope
        Pure-amplitude envelope for all kinds except the gate-standin,
        which additionally carries a smooth sigmoidal phase jump whose
        gradient peaks at mid-pulse.
    """
    if spec.kind != "constant" and spec.duration > grid.span + grid.dt / 2:
        raise InvalidSpecError(
            f"duration {spec.duration} exceeds grid span {grid.span}")
    t = grid.times() - grid.center
    if spec.kind == "constant":
        samples = np.full(grid.n, spec.peak, dtype=complex)
    elif spec.kind == "gaussian":
        samples = spec.peak * np.exp(
            -4 * np.log(2) * t**2 / spec.fwhm**2).astype(complex)
    elif spec.kind == "truncated-gaussian":
        amp = spec.peak * np.exp(-4 * np.log(2) * t**2 / spec.fwhm**2)
        amp[np.abs(t) > spec.duration / 2] = 0.0
        samples = amp.astype(complex)
    elif spec.kind == "gate-standin":
        samples = _gate_standin(t, spec)
    elif spec.kind == "custom-table":
        if spec.table is None:
            raise InvalidSpecError("custom-table kind requires a table")
        arr = np.asarray(spec.table, dtype=complex)
        if len(arr) != grid.n:
            raise InvalidSpecError(
                f"table length {len(arr)} does not match grid n {grid.n}")
        samples = arr
    else:  # pragma: no cover - guarded by PulseSpec
        raise InvalidSpecError(spec.kind)
    return ComplexEnvelope(grid, samples)


def _gate_standin(t: np.ndarray, spec: PulseSpec) -> np.ndarray:
    # Flat top with raised-cosine edges over the outer 15% of the duration
    # on each side, plus one smooth phase jump centered mid-pulse.
    half = spec.duration / 2
    edge = 0.15 * spec.duration
    amp = np.zeros_like(t)
    amp[np.abs(t) <= half - edge] = 1.0
    ramp = (np.abs(t) > half - edge) & (np.abs(t) <= half)
    amp[ramp] = 0.5 * (1 + np.cos(np.pi * (np.abs(t[ramp]) - (half - edge))
                                  / edge))
    width = spec.phase_width_frac * spec.duration
    phase = spec.phase_jump_rad / (1 + np.exp(-t / width))
    return spec.peak * amp * np.exp(1j * phase)


def _check_grids(a: ComplexEnvelope, b: ComplexEnvelope):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def mase(measured: ComplexEnvelope, target: ComplexEnvelope) -> float:
    """Mean absolute scaled error between normalized amplitude profiles.

    Each envelope's amplitude is scaled by its own Euclidean norm before
    the per-sample absolute differences are averaged, so the metric is
    invariant under positive rescaling of either argument.
    """
    _check_grids(measured, target)
    nm, nt = measured.norm(), target.norm()
    if nm == 0 or nt == 0:
        raise ZeroSignalError("mase undefined for an all-zero envelope")
    return float(np.mean(np.abs(measured.amplitude / nm
                                - target.amplitude / nt)))


def mse_cost(a: ComplexEnvelope, b: ComplexEnvelope) -> float:
    """Mean squared error (1/N) sum |a_k - b_k|^2."""
    _check_grids(a, b)
    return float(np.mean(np.abs(a.samples - b.samples) ** 2))


@dataclass(frozen=True)
class MetricReport:
    """Bundle of comparison metrics between a measured and target envelope."""

    mase: float
    mse: float
    peak_amplitude_error: float
    peak_phase_error: float


def metric_report(measured: ComplexEnvelope,
                  target: ComplexEnvelope) -> MetricReport:
    """MASE/MSE plus amplitude and phase errors at the target's peak sample."""
    _check_grids(measured, target)
    k = int(np.argmax(target.amplitude))
    peak_t = target.amplitude[k]
    amp_err = abs(measured.amplitude[k] - peak_t) / peak_t if peak_t else 0.0
    ph_err = abs(np.angle(measured.samples[k] * np.conj(target.samples[k])))
    return MetricReport(mase=mase(measured, target),
                        mse=mse_cost(measured, target),
                        peak_amplitude_error=float(amp_err),
                        peak_phase_error=float(ph_err))


def align_delay(measured: ComplexEnvelope,
                reference: ComplexEnvelope) -> tuple[ComplexEnvelope, float]:
    """Remove the bulk delay between a measured envelope and a reference.

    The integer-sample lag maximizing the amplitude cross-correlation is
    found and the measured envelope is shifted back by that lag (zeros
    fill the vacated samples). Grids may differ in length but must share
    the sample period. Applying the function to its own output returns a
    zero delay.

    Returns
    -------
    (ComplexEnvelope, float)
        The shifted envelope on the measured grid, and the removed delay
        in seconds (positive when the measurement lags the reference).
    """
    if not np.isclose(measured.grid.dt, reference.grid.dt, rtol=1e-9):
        raise GridMismatchError("sample periods differ")
    if measured.norm() == 0 or reference.norm() == 0:
        raise ZeroSignalError("cannot align an all-zero envelope")
    corr = np.correlate(measured.amplitude, reference.amplitude, mode="full")
    lag = int(np.argmax(corr)) - (reference.grid.n - 1)
    shifted = shift_samples(measured.samples, -lag)
    return measured.with_samples(shifted), lag * measured.grid.dt


def shift_samples(samples: np.ndarray, k: int) -> np.ndarray:
    """Shift right by k samples (left for negative k), zero-filling."""
    out = np.zeros_like(samples)
    if k == 0:
        out[:] = samples
    elif k > 0:
        if k < len(samples):
            out[k:] = samples[:-k]
    else:
        if -k < len(samples):
            out[:k] = samples[-k:]
    return out


def crop(env: ComplexEnvelope, grid: TimeGrid) -> ComplexEnvelope:
    """Extract the samples of ``env`` that fall on ``grid``.

    The target grid must share the sample period and start an integer
    number of samples after the envelope's origin.
    """
    if not np.isclose(env.grid.dt, grid.dt, rtol=1e-9):
        raise GridMismatchError("sample periods differ")
    offs = (grid.t0 - env.grid.t0) / env.grid.dt
    k = int(round(offs))
    if abs(offs - k) > 1e-6:
        raise GridMismatchError("grid origins are not sample-aligned")
    if k < 0 or k + grid.n > env.grid.n:
        raise GridMismatchError("crop window extends beyond the envelope")
    return ComplexEnvelope(grid, env.samples[k:k + grid.n])


def embed(env: ComplexEnvelope, pad_before: int,
          pad_after: int) -> ComplexEnvelope:
    """Zero-pad an envelope on both sides, extending its grid."""
    g = env.grid
    grid = TimeGrid(t0=g.t0 - pad_before * g.dt, dt=g.dt,
                    n=g.n + pad_before + pad_after)
    samples = np.zeros(grid.n, dtype=complex)
    samples[pad_before:pad_before + g.n] = env.samples
    return ComplexEnvelope(grid, samples)


def iq_split(env: ComplexEnvelope) -> tuple[np.ndarray, np.ndarray]:
    """Return (I, Q) sample sequences."""
    return env.samples.real.copy(), env.samples.imag.copy()


def iq_join(i, q, grid: TimeGrid) -> ComplexEnvelope:
    """Rebuild an envelope from I and Q sequences on a grid."""
    i = np.asarray(i, dtype=float)
    q = np.asarray(q, dtype=float)
    if len(i) != len(q):
        raise InvalidSpecError("I and Q lengths differ")
    return ComplexEnvelope(grid, i + 1j * q)
