"""Tests for the performance pipeline, sample buffers and LSQ gradients."""

import math

import numpy as np
import pytest

from app.core.exceptions import DegenerateBufferError, SignalFaultError
from app.services.signals import PerfPipeline, SampleBuffer, lsq_gradient


def test_pipeline_converges_to_constant_power():
    pipeline = PerfPipeline(cutoff=1000.0, window_samples=10)
    for _ in range(50):
        value = pipeline.step(2.0, 0.01)
    assert pipeline.mu == pytest.approx(2.0, abs=1e-9)
    assert value == pytest.approx(math.log(2.0), abs=1e-9)


def test_lowpass_matches_exponential_step_response():
    pipeline = PerfPipeline(cutoff=2.0, window_samples=1)
    for _ in range(100):
        pipeline.step(1.0, 0.01)
    assert pipeline.state == pytest.approx(1.0 - math.exp(-2.0), abs=1e-12)


def test_zero_power_hits_log_floor():
    pipeline = PerfPipeline(cutoff=1.0, window_samples=4, log_floor=1e-12)
    assert pipeline.step(0.0, 0.01) == math.log(1e-12)
    assert pipeline.mu == 0.0


@pytest.mark.parametrize("factor", [0.01, 3.0, 250.0])
def test_scaling_power_shifts_performance_by_log_factor(factor):
    rng = np.random.default_rng(11)
    power = 1.0 + rng.random(500)
    base = PerfPipeline(cutoff=5.0, window_samples=40)
    scaled = PerfPipeline(cutoff=5.0, window_samples=40)
    for sample in power:
        j = base.step(float(sample), 0.01)
        j_scaled = scaled.step(float(factor * sample), 0.01)
        assert j_scaled - j == pytest.approx(math.log(factor), abs=1e-9)


def test_non_finite_power_is_a_signal_fault():
    pipeline = PerfPipeline(cutoff=1.0, window_samples=4)
    with pytest.raises(SignalFaultError):
        pipeline.step(float("nan"), 0.01)
    with pytest.raises(SignalFaultError):
        pipeline.step(float("inf"), 0.01)


def test_pipeline_defaults_follow_the_wave_period():
    pipeline = PerfPipeline.for_period(0.5, 0.0025)
    assert pipeline.window_samples == 400
    assert pipeline.cutoff == pytest.approx(2.0 * math.pi / 0.5 / 5.0)


def test_pipeline_rejects_bad_arguments():
    with pytest.raises(ValueError):
        PerfPipeline(cutoff=-1.0, window_samples=4)
    with pytest.raises(ValueError):
        PerfPipeline(cutoff=1.0, window_samples=0)
    with pytest.raises(ValueError):
        PerfPipeline(cutoff=1.0, window_samples=4).step(1.0, 0.0)


def test_buffer_keeps_newest_samples_in_order():
    buffer = SampleBuffer(3, 1)
    for i in range(5):
        buffer.push(float(i), float(10 * i))
    assert buffer.is_full
    np.testing.assert_array_equal(buffer.times(), [2.0, 3.0, 4.0])
    np.testing.assert_array_equal(buffer.values()[:, 0], [20.0, 30.0, 40.0])


def test_buffer_rejects_non_increasing_time():
    buffer = SampleBuffer(3, 1)
    buffer.push(1.0, 0.0)
    with pytest.raises(ValueError):
        buffer.push(1.0, 0.0)


def _filled(theta, y, t=None):
    n = len(y)
    t = np.arange(n, dtype=float) if t is None else t
    theta = np.asarray(theta, dtype=float).reshape(n, -1)
    tb, yb = SampleBuffer(n, theta.shape[1]), SampleBuffer(n, 1)
    for i in range(n):
        tb.push(t[i], theta[i])
        yb.push(t[i], y[i])
    return tb, yb


def test_lsq_gradient_exact_on_affine_data():
    theta = np.sin(np.linspace(0.0, 6.0, 40))
    tb, yb = _filled(theta, 3.0 * theta + 1.0)
    assert lsq_gradient(tb, yb)[0] == pytest.approx(3.0, abs=1e-9)


def test_lsq_gradient_of_constant_metric_is_zero():
    theta = np.cos(np.linspace(0.0, 6.0, 40))
    tb, yb = _filled(theta, np.full(40, 7.5))
    assert lsq_gradient(tb, yb)[0] == pytest.approx(0.0, abs=1e-12)


def test_lsq_gradient_two_channels():
    t = np.linspace(0.0, 20.0, 200)
    theta = np.column_stack([np.sin(t), np.cos(1.7 * t)])
    y = 2.0 * theta[:, 0] - 0.5 * theta[:, 1] + 4.0
    tb, yb = _filled(theta, y, t)
    np.testing.assert_allclose(lsq_gradient(tb, yb), [2.0, -0.5], atol=1e-9)


def test_lsq_gradient_on_wrapped_buffer():
    n = 30
    tb, yb = SampleBuffer(n, 1), SampleBuffer(n, 1)
    for i in range(75):
        theta = math.sin(0.3 * i)
        tb.push(float(i), theta)
        yb.push(float(i), -1.5 * theta + 2.0)
    assert lsq_gradient(tb, yb)[0] == pytest.approx(-1.5, abs=1e-9)


def test_constant_parameter_buffer_is_degenerate():
    tb, yb = _filled(np.full(20, 1.25), np.linspace(0.0, 1.0, 20))
    with pytest.raises(DegenerateBufferError):
        lsq_gradient(tb, yb)


def test_gradient_needs_full_aligned_buffers():
    tb, yb = SampleBuffer(5, 1), SampleBuffer(5, 1)
    tb.push(0.0, 1.0)
    yb.push(0.0, 1.0)
    with pytest.raises(ValueError):
        lsq_gradient(tb, yb)

    tb, yb = _filled(np.arange(5.0), np.arange(5.0))
    shifted = SampleBuffer(5, 1)
    for i in range(5):
        shifted.push(i + 0.5, float(i))
    with pytest.raises(ValueError):
        lsq_gradient(tb, shifted)


def test_alignment_tracks_slot_and_time():
    tb, yb = SampleBuffer(4, 2), SampleBuffer(4, 1)
    assert tb.aligned_with(yb)
    for i in range(6):
        tb.push(float(i), [i, -i])
        yb.push(float(i), float(i))
    assert tb.head == yb.head == 2
    assert tb.aligned_with(yb) and yb.aligned_with(tb)

    yb.push(6.0, 0.0)
    assert not tb.aligned_with(yb)
    tb.push(6.5, [0.0, 0.0])
    assert tb.head == yb.head
    assert not tb.aligned_with(yb)
    assert not tb.aligned_with(SampleBuffer(5, 1))
