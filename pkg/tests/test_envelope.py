"""Grids, library pulses, metrics, and alignment."""

import numpy as np
import pytest

from pulseloop.envelope import (ComplexEnvelope, GridMismatchError,
                                InvalidSpecError, PulseSpec, TimeGrid,
                                ZeroSignalError, align_delay, crop,
                                default_grid, embed, iq_join, iq_split,
                                make_pulse, mase, metric_report, mse_cost,
                                shift_samples)


def _env(grid, samples):
    return ComplexEnvelope(grid, np.asarray(samples, dtype=complex))


# ---------------------------------------------------------------- TimeGrid

def test_grid_times_and_span():
    grid = TimeGrid(t0=2e-9, dt=1e-9, n=5)
    np.testing.assert_allclose(grid.times(), [2e-9, 3e-9, 4e-9, 5e-9, 6e-9])
    assert grid.span == pytest.approx(4e-9)
    assert grid.center == pytest.approx(4e-9)


def test_grid_rejects_bad_parameters():
    with pytest.raises(InvalidSpecError):
        TimeGrid(t0=0.0, dt=0.0, n=10)
    with pytest.raises(InvalidSpecError):
        TimeGrid(t0=0.0, dt=1e-9, n=1)


def test_default_grid_doubles_the_duration():
    grid = default_grid(5e-7)
    assert grid.t0 == 0.0
    assert grid.dt == 1e-9
    assert grid.span == pytest.approx(1e-6, rel=1e-3)


def test_envelope_length_must_match_grid():
    grid = TimeGrid(0.0, 1e-9, 4)
    with pytest.raises(InvalidSpecError):
        ComplexEnvelope(grid, np.zeros(3, dtype=complex))


# --------------------------------------------------------------- make_pulse

def test_constant_kind_is_all_ones():
    grid = TimeGrid(0.0, 1e-9, 64)
    env = make_pulse(PulseSpec(kind="constant", duration=1e-7, peak=1.0),
                     grid)
    np.testing.assert_array_equal(env.samples, np.ones(64, dtype=complex))


def test_truncated_gaussian_half_maximum_points():
    # 0.3 us FWHM on a 2 us grid with the center on a sample: the
    # amplitude at center +- fwhm/2 is exactly half the peak.
    grid = TimeGrid(0.0, 1e-9, 2001)
    spec = PulseSpec(kind="truncated-gaussian", duration=1e-6, fwhm=3e-7)
    env = make_pulse(spec, grid)
    amp = env.amplitude
    center = int(np.argmax(amp))
    assert grid.times()[center] == pytest.approx(grid.center)
    half = int(round(spec.fwhm / 2 / grid.dt))
    assert amp[center + half] == pytest.approx(0.5 * amp[center], rel=1e-12)
    assert amp[center - half] == pytest.approx(0.5 * amp[center], rel=1e-12)
    assert np.all(amp[np.abs(grid.times() - grid.center) > 5.001e-7] == 0.0)


def test_gaussian_energy_matches_closed_form():
    # Trapezoid integral of amplitude^2 against the analytic Gaussian
    # integral fwhm * sqrt(pi / (8 ln 2)); the grid spans +-4 fwhm so
    # truncation error is far below the 1e-6 comparison level.
    fwhm = 3e-7
    grid = TimeGrid(0.0, 1e-9, 2401)
    env = make_pulse(PulseSpec(kind="gaussian", duration=12e-7, fwhm=fwhm),
                     grid)
    a2 = env.amplitude ** 2
    numeric = grid.dt * (np.sum(a2) - 0.5 * (a2[0] + a2[-1]))
    analytic = fwhm * np.sqrt(np.pi / (8 * np.log(2)))
    assert numeric == pytest.approx(analytic, rel=1e-6)


def test_pure_amplitude_kinds_have_zero_phase():
    grid = TimeGrid(0.0, 1e-9, 1001)
    for kind in ("constant", "gaussian", "truncated-gaussian"):
        env = make_pulse(PulseSpec(kind=kind, duration=5e-7, fwhm=2e-7), grid)
        on = env.amplitude > 0
        assert np.max(np.abs(env.phase[on])) == 0.0


def test_gate_standin_flat_top_and_phase_jump():
    grid = TimeGrid(0.0, 1e-9, 1001)
    spec = PulseSpec(kind="gate-standin", duration=5e-7)
    env = make_pulse(spec, grid)
    t = grid.times() - grid.center
    flat = np.abs(t) <= 0.5 * spec.duration - 0.16 * spec.duration
    np.testing.assert_allclose(env.amplitude[flat], 1.0, atol=1e-12)
    # The phase rises by ~pi across the pulse and its gradient peaks at
    # the center sample.
    phase = np.unwrap(env.phase)
    jump = phase[flat][-1] - phase[flat][0]
    assert jump == pytest.approx(np.pi, abs=1e-2)
    grad = np.abs(np.gradient(phase))
    assert abs(int(np.argmax(grad)) - int(np.argmax(env.amplitude > 0)
                                          + np.sum(env.amplitude > 0) // 2)
               ) <= 2


def test_custom_table_round_trip_and_validation():
    grid = TimeGrid(0.0, 1e-9, 8)
    table = tuple(np.arange(8) * (0.1 + 0.05j))
    env = make_pulse(PulseSpec(kind="custom-table", duration=7e-9,
                               table=table), grid)
    np.testing.assert_array_equal(env.samples, np.asarray(table))
    with pytest.raises(InvalidSpecError):
        make_pulse(PulseSpec(kind="custom-table", duration=7e-9,
                             table=table[:4]), grid)


def test_make_pulse_rejects_invalid_specs():
    grid = TimeGrid(0.0, 1e-9, 101)
    with pytest.raises(InvalidSpecError):
        make_pulse(PulseSpec(kind="gaussian", duration=5e-7, fwhm=1e-7),
                   grid)  # duration exceeds the 100 ns span
    with pytest.raises(InvalidSpecError):
        PulseSpec(kind="gaussian", duration=1e-7, fwhm=-1e-8)
    with pytest.raises(InvalidSpecError):
        PulseSpec(kind="gaussian", duration=1e-7, fwhm=1e-8, peak=1.5)
    with pytest.raises(InvalidSpecError):
        PulseSpec(kind="not-a-kind", duration=1e-7)


# -------------------------------------------------------------------- mase

def test_mase_identity_is_zero():
    grid = TimeGrid(0.0, 1e-9, 16)
    env = _env(grid, np.arange(16) + 1.0)
    assert mase(env, env) == 0.0


def test_mase_is_scale_invariant():
    grid = TimeGrid(0.0, 1e-9, 16)
    rng = np.random.default_rng(3)
    target = _env(grid, rng.standard_normal(16) + 1j * rng.standard_normal(16))
    doubled = target.with_samples(2.0 * target.samples)
    assert mase(doubled, target) == pytest.approx(0.0, abs=1e-15)
    scaled = target.with_samples(0.37 * target.samples)
    assert mase(scaled, target) == pytest.approx(0.0, abs=1e-15)


def test_mase_hand_evaluated_three_samples():
    # measured (1,0,0), target (0,1,0): both have unit norm, so the sum
    # of per-sample absolute differences is 1 + 1 + 0 and the mean 2/3.
    grid = TimeGrid(0.0, 1e-9, 3)
    measured = _env(grid, [1.0, 0.0, 0.0])
    target = _env(grid, [0.0, 1.0, 0.0])
    assert mase(measured, target) == pytest.approx(2.0 / 3.0, rel=1e-15)


def test_mase_symmetric_under_joint_permutation():
    grid = TimeGrid(0.0, 1e-9, 12)
    rng = np.random.default_rng(11)
    a = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    b = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    perm = rng.permutation(12)
    assert mase(_env(grid, a), _env(grid, b)) == pytest.approx(
        mase(_env(grid, a[perm]), _env(grid, b[perm])), rel=1e-12)


def test_mase_guards():
    grid = TimeGrid(0.0, 1e-9, 4)
    env = _env(grid, np.ones(4))
    with pytest.raises(ZeroSignalError):
        mase(env, _env(grid, np.zeros(4)))
    other = _env(TimeGrid(0.0, 2e-9, 4), np.ones(4))
    with pytest.raises(GridMismatchError):
        mase(env, other)


# ---------------------------------------------------------------- mse_cost

def test_mse_cost_basics():
    grid = TimeGrid(0.0, 1e-9, 10)
    rng = np.random.default_rng(5)
    a = _env(grid, rng.standard_normal(10) + 1j * rng.standard_normal(10))
    assert mse_cost(a, a) == 0.0
    c = 0.3 - 0.4j
    shifted = a.with_samples(a.samples + c)
    assert mse_cost(a, shifted) == pytest.approx(abs(c) ** 2, rel=1e-12)


def test_mse_cost_matches_elementwise_oracle():
    grid = TimeGrid(0.0, 1e-9, 8)
    rng = np.random.default_rng(7)
    a = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    b = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    direct = sum(abs(x - y) ** 2 for x, y in zip(a, b)) / 8
    assert mse_cost(_env(grid, a), _env(grid, b)) == pytest.approx(
        direct, rel=1e-12)


# ------------------------------------------------------------- align_delay

def _gaussian_env(grid, fwhm=5e-8):
    return make_pulse(PulseSpec(kind="gaussian", duration=grid.span / 2,
                                fwhm=fwhm), grid)


def test_align_delay_identity():
    grid = TimeGrid(0.0, 1e-9, 512)
    env = _gaussian_env(grid)
    shifted, delay = align_delay(env, env)
    assert delay == 0.0
    np.testing.assert_array_equal(shifted.samples, env.samples)


def test_align_delay_recovers_bulk_acoustic_delay():
    grid = TimeGrid(0.0, 1e-9, 4096)
    ref = _gaussian_env(grid, fwhm=2e-7)
    k = 1400  # 1.4 us at 1 ns
    delayed = ref.with_samples(shift_samples(ref.samples, k))
    aligned, delay = align_delay(delayed, ref)
    assert delay == pytest.approx(1.4e-6)
    np.testing.assert_allclose(aligned.samples[k:], ref.samples[k:],
                               atol=1e-12)


def test_align_delay_seventeen_samples_with_noise():
    grid = TimeGrid(0.0, 1e-9, 1024)
    ref = _gaussian_env(grid)
    rng = np.random.default_rng(17)
    noisy = ref.with_samples(shift_samples(ref.samples, 17)
                             + 0.01 * (rng.standard_normal(1024)
                                       + 1j * rng.standard_normal(1024)))
    _, delay = align_delay(noisy, ref)
    assert delay == pytest.approx(17e-9)


def test_align_delay_is_idempotent():
    grid = TimeGrid(0.0, 1e-9, 1024)
    ref = _gaussian_env(grid)
    delayed = ref.with_samples(shift_samples(ref.samples, 40))
    aligned, _ = align_delay(delayed, ref)
    _, second = align_delay(aligned, ref)
    assert second == 0.0


def test_align_delay_rejects_zero_signal():
    grid = TimeGrid(0.0, 1e-9, 64)
    env = _env(grid, np.zeros(64))
    with pytest.raises(ZeroSignalError):
        align_delay(env, env)


# ------------------------------------------------------- iq views and crop

def test_iq_split_constant():
    grid = TimeGrid(0.0, 1e-9, 6)
    env = _env(grid, np.full(6, 0.6 + 0.8j))
    i, q = iq_split(env)
    np.testing.assert_array_equal(i, np.full(6, 0.6))
    np.testing.assert_array_equal(q, np.full(6, 0.8))


def test_iq_round_trip_is_identity():
    grid = TimeGrid(0.0, 1e-9, 32)
    rng = np.random.default_rng(23)
    env = _env(grid, rng.standard_normal(32) + 1j * rng.standard_normal(32))
    i, q = iq_split(env)
    back = iq_join(i, q, grid)
    np.testing.assert_array_equal(back.samples, env.samples)


def test_unit_amplitude_quarter_phase_is_i():
    grid = TimeGrid(0.0, 1e-9, 4)
    env = _env(grid, np.exp(1j * np.pi / 2) * np.ones(4))
    np.testing.assert_allclose(env.samples, 1j * np.ones(4), atol=1e-15)
    np.testing.assert_allclose(env.amplitude, 1.0)
    np.testing.assert_allclose(env.phase, np.pi / 2)


def test_iq_join_length_mismatch():
    grid = TimeGrid(0.0, 1e-9, 4)
    with pytest.raises(InvalidSpecError):
        iq_join(np.zeros(4), np.zeros(3), grid)


def test_embed_then_crop_round_trip():
    grid = TimeGrid(0.0, 1e-9, 128)
    env = _gaussian_env(grid, fwhm=2e-8)
    padded = embed(env, 50, 70)
    assert padded.grid.n == 248
    assert padded.grid.t0 == pytest.approx(-50e-9)
    back = crop(padded, grid)
    np.testing.assert_allclose(back.samples, env.samples, atol=1e-15)


def test_metric_report_fields():
    grid = TimeGrid(0.0, 1e-9, 256)
    env = _gaussian_env(grid)
    report = metric_report(env, env)
    assert report.mase == 0.0
    assert report.mse == 0.0
    assert report.peak_amplitude_error == 0.0
    assert report.peak_phase_error == 0.0
