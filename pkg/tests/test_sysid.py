"""Design matrix, ridge kernel estimation, and cross-validation."""

import numpy as np
import pytest

from pulseloop.envelope import (ComplexEnvelope, GridMismatchError,
                                InvalidSpecError, TimeGrid, ZeroSignalError,
                                mase)
from pulseloop.sysid import (CVConfig, VolterraModel, build_design_matrix,
                             cross_validate, estimate_kernel, fitted_output,
                             model_error, volterra_forward)


def _env(samples, dt=1e-9):
    samples = np.asarray(samples, dtype=complex)
    return ComplexEnvelope(TimeGrid(0.0, dt, len(samples)), samples)


def _random_env(rng, n, scale=1.0):
    return _env(scale * (rng.standard_normal(n)
                         + 1j * rng.standard_normal(n)))


# ------------------------------------------------------ build_design_matrix

def test_design_matrix_three_samples_memory_two():
    x0, x1, x2 = 1.0 + 2.0j, -0.5j, 3.0
    a = build_design_matrix(_env([x0, x1, x2]), 2)
    expected = np.array([[1, x0, 0],
                         [1, x1, x0],
                         [1, x2, x1]], dtype=complex)
    np.testing.assert_array_equal(a, expected)


def test_design_matrix_memory_one_is_ones_and_input():
    rng = np.random.default_rng(0)
    env = _random_env(rng, 10)
    a = build_design_matrix(env, 1)
    np.testing.assert_array_equal(a[:, 0], np.ones(10))
    np.testing.assert_array_equal(a[:, 1], env.samples)


def test_design_matrix_consistent_with_forward_model():
    rng = np.random.default_rng(1)
    env = _random_env(rng, 16)
    model = VolterraModel(h0=0.2 - 0.1j,
                          h1=rng.standard_normal(5)
                          + 1j * rng.standard_normal(5))
    a = build_design_matrix(env, 5)
    coef = np.concatenate([[model.h0], model.h1])
    np.testing.assert_allclose(a @ coef,
                               volterra_forward(model, env).samples,
                               atol=1e-12)


def test_design_matrix_rejects_bad_memory():
    env = _env(np.ones(4))
    with pytest.raises(InvalidSpecError):
        build_design_matrix(env, 0)
    with pytest.raises(InvalidSpecError):
        build_design_matrix(env, 5)


# --------------------------------------------------------- volterra_forward

def test_forward_identity_kernel():
    rng = np.random.default_rng(2)
    env = _random_env(rng, 12)
    model = VolterraModel(h0=0.0, h1=np.array([1.0 + 0j]))
    np.testing.assert_array_equal(volterra_forward(model, env).samples,
                                  env.samples)


def test_forward_offset_only():
    env = _env(np.zeros(8))
    model = VolterraModel(h0=0.7 - 0.2j, h1=np.zeros(3, dtype=complex))
    np.testing.assert_array_equal(volterra_forward(model, env).samples,
                                  np.full(8, 0.7 - 0.2j))


def test_forward_matches_double_loop_oracle():
    rng = np.random.default_rng(3)
    env = _random_env(rng, 8)
    h1 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    model = VolterraModel(h0=0.1 + 0.4j, h1=h1)
    expected = np.zeros(8, dtype=complex)
    for n in range(8):
        acc = model.h0
        for j in range(3):
            if n - j >= 0:
                acc += h1[j] * env.samples[n - j]
        expected[n] = acc
    np.testing.assert_allclose(volterra_forward(model, env).samples,
                               expected, atol=1e-14)


def test_forward_is_affine():
    rng = np.random.default_rng(4)
    x = _random_env(rng, 32)
    y = _random_env(rng, 32)
    model = VolterraModel(h0=0.3 - 0.8j,
                          h1=rng.standard_normal(6)
                          + 1j * rng.standard_normal(6))
    alpha, beta = 1.7 - 0.2j, -0.4 + 0.9j
    zero = volterra_forward(model, _env(np.zeros(32))).samples
    mix = x.with_samples(alpha * x.samples + beta * y.samples)
    lhs = volterra_forward(model, mix).samples - zero
    rhs = (alpha * (volterra_forward(model, x).samples - zero)
           + beta * (volterra_forward(model, y).samples - zero))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_forward_rejects_long_memory():
    env = _env(np.ones(4))
    model = VolterraModel(h0=0.0, h1=np.ones(5, dtype=complex))
    with pytest.raises(InvalidSpecError):
        volterra_forward(model, env)


# ---------------------------------------------------------- estimate_kernel

def test_estimate_recovers_known_four_tap_kernel():
    rng = np.random.default_rng(5)
    inp = _random_env(rng, 256)
    true = VolterraModel(h0=0.05 - 0.02j,
                         h1=np.array([0.9, -0.3 + 0.2j, 0.1j, 0.05]))
    out = volterra_forward(true, inp)
    model = estimate_kernel(inp, out, 4, 0.0)
    np.testing.assert_allclose(model.h1, true.h1, atol=1e-8)
    assert model.h0 == pytest.approx(true.h0, abs=1e-8)


def test_estimate_constant_output_zero_input():
    c = 0.6 + 0.1j
    inp = _env(np.zeros(64))
    out = _env(np.full(64, c))
    model = estimate_kernel(inp, out, 4, 0.0)
    assert model.h0 == pytest.approx(c, abs=1e-10)
    # Minimum-norm convention: unidentifiable taps come back as zero.
    np.testing.assert_allclose(model.h1, 0.0, atol=1e-10)


def test_estimate_huge_ridge_shrinks_everything():
    rng = np.random.default_rng(6)
    inp = _random_env(rng, 128)
    out = _random_env(rng, 128)
    model = estimate_kernel(inp, out, 8, 1e12)
    assert abs(model.h0) < 1e-9
    assert np.max(np.abs(model.h1)) < 1e-9


def test_ridge_shrinkage_is_monotone():
    rng = np.random.default_rng(7)
    inp = _random_env(rng, 200)
    true = VolterraModel(h0=0.1, h1=rng.standard_normal(6)
                         + 1j * rng.standard_normal(6))
    out = volterra_forward(true, inp)
    noisy = out.with_samples(out.samples
                             + 0.01 * (rng.standard_normal(200)
                                       + 1j * rng.standard_normal(200)))
    norms = []
    for lam in (0.0, 1e-3, 1e-1, 10.0, 1e3):
        m = estimate_kernel(inp, noisy, 6, lam)
        norms.append(np.sqrt(abs(m.h0) ** 2 + np.sum(np.abs(m.h1) ** 2)))
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))


def test_noiseless_identifiability_property():
    rng = np.random.default_rng(8)
    for _ in range(20):
        memory = int(rng.integers(1, 65))
        n = 4 * memory + int(rng.integers(8, 64))
        inp = _random_env(rng, n)
        true = VolterraModel(h0=complex(*rng.standard_normal(2)) * 0.3,
                             h1=rng.standard_normal(memory)
                             + 1j * rng.standard_normal(memory))
        out = volterra_forward(true, inp)
        model = estimate_kernel(inp, out, memory, 0.0)
        scale = np.max(np.abs(true.h1))
        assert np.max(np.abs(model.h1 - true.h1)) / scale < 1e-8
        assert abs(model.h0 - true.h0) / scale < 1e-8


def test_estimate_rejects_bad_inputs():
    rng = np.random.default_rng(9)
    inp = _random_env(rng, 32)
    other = ComplexEnvelope(TimeGrid(0.0, 2e-9, 32), inp.samples)
    with pytest.raises(GridMismatchError):
        estimate_kernel(inp, other, 4, 0.0)
    short = _random_env(rng, 4)
    with pytest.raises(InvalidSpecError):
        estimate_kernel(short, short, 4, 0.0)
    with pytest.raises(InvalidSpecError):
        estimate_kernel(inp, inp, 4, -1.0)


# ----------------------------------------------------------- cross_validate

def _noisy_channel_pair(rng, n=400, sigma=0.0):
    inp = _random_env(rng, n)
    true = VolterraModel(h0=0.02 + 0.01j,
                         h1=np.array([0.8, -0.25 + 0.15j, 0.1, -0.05j]))
    out = volterra_forward(true, inp)
    if sigma > 0:
        out = out.with_samples(out.samples
                               + sigma * (rng.standard_normal(n)
                                          + 1j * rng.standard_normal(n)))
    return inp, out


def test_cv_noiseless_picks_smallest_lambda():
    rng = np.random.default_rng(10)
    inp, out = _noisy_channel_pair(rng)
    cv = CVConfig(folds=5, lambda_grid=(1e-6, 1e-4, 1e-2, 1.0))
    lam, scores = cross_validate(inp, out, 4, cv)
    assert lam == 1e-6
    assert scores.shape == (4, 2)


def test_cv_noisy_prefers_regularization():
    # Band-limited input plus an overparameterized memory leaves weakly
    # excited taps that fit the sigma = 1e-2 noise unless shrunk, so the
    # held-out score favors a nonzero ridge weight.
    rng = np.random.default_rng(11)
    n = 300
    ker = np.hanning(9)
    ker /= ker.sum()
    raw = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    inp = _env(np.convolve(raw.real, ker, mode="same")
               + 1j * np.convolve(raw.imag, ker, mode="same"))
    true = VolterraModel(h0=0.02 + 0.01j,
                         h1=np.array([0.8, -0.25 + 0.15j, 0.1, -0.05j]))
    out = volterra_forward(true, inp)
    out = out.with_samples(out.samples + 1e-2 * (rng.standard_normal(n)
                                                 + 1j * rng.standard_normal(n)))
    grid = (1e-12, 1e-6, 1e-4, 1e-2, 1.0)
    lam, scores = cross_validate(inp, out, 32, CVConfig(5, grid))
    assert lam > grid[0]
    chosen = scores[list(grid).index(lam), 1]
    unregularized = scores[0, 1]
    assert chosen <= unregularized


def test_cv_single_lambda_grid():
    rng = np.random.default_rng(12)
    inp, out = _noisy_channel_pair(rng)
    lam, scores = cross_validate(inp, out, 4, CVConfig(3, (0.5,)))
    assert lam == 0.5
    assert scores.shape == (1, 2)


def test_cv_never_selects_above_table_minimum():
    rng = np.random.default_rng(13)
    for trial in range(5):
        inp, out = _noisy_channel_pair(rng, sigma=5e-3)
        grid = tuple(np.logspace(-8, 2, 6))
        lam, scores = cross_validate(inp, out, 8, CVConfig(4, grid))
        chosen = scores[list(grid).index(lam), 1]
        assert chosen == pytest.approx(np.min(scores[:, 1]), rel=1e-12)


def test_cv_config_validation():
    with pytest.raises(InvalidSpecError):
        CVConfig(folds=1)
    with pytest.raises(InvalidSpecError):
        CVConfig(folds=5, lambda_grid=())


# ------------------------------------------- fitted_output and model_error

def test_fitted_output_identity_model():
    rng = np.random.default_rng(14)
    env = _random_env(rng, 20)
    model = VolterraModel.identity()
    np.testing.assert_array_equal(fitted_output(model, env).samples,
                                  env.samples)


def test_estimation_round_trip_mase():
    rng = np.random.default_rng(15)
    inp, out = _noisy_channel_pair(rng)
    model = estimate_kernel(inp, out, 4, 0.0)
    assert mase(fitted_output(model, inp), out) < 1e-8


def test_model_error_on_noisy_data_is_noise_scale():
    # With measurement noise at the 1e-3 level relative to the signal,
    # the fitted-output MASE lands at that scale rather than at zero.
    rng = np.random.default_rng(16)
    inp, out = _noisy_channel_pair(rng, n=1000, sigma=1e-3)
    lam, _ = cross_validate(inp, out, 8,
                            CVConfig(5, tuple(np.logspace(-8, 0, 5))))
    model = estimate_kernel(inp, out, 8, lam)
    report = model_error(model, inp, out)
    assert report.mase < 1e-3


def test_model_error_perfect_model():
    rng = np.random.default_rng(17)
    inp, out = _noisy_channel_pair(rng)
    model = estimate_kernel(inp, out, 4, 0.0)
    report = model_error(model, inp, out)
    assert report.mase == pytest.approx(0.0, abs=1e-9)


def test_model_error_zero_model_raises_zero_norm_guard():
    rng = np.random.default_rng(18)
    inp, out = _noisy_channel_pair(rng)
    zero = VolterraModel(h0=0.0, h1=np.zeros(4, dtype=complex))
    with pytest.raises(ZeroSignalError):
        model_error(zero, inp, out)


def test_model_error_matches_independent_metrics():
    rng = np.random.default_rng(19)
    inp, out = _noisy_channel_pair(rng, sigma=2e-3)
    model = estimate_kernel(inp, out, 4, 1e-4)
    report = model_error(model, inp, out)
    fitted = fitted_output(model, inp)
    assert report.mase == pytest.approx(mase(fitted, out), rel=1e-12)
    resid = fitted.samples - out.samples
    assert report.mse == pytest.approx(np.mean(np.abs(resid) ** 2),
                                       rel=1e-12)
