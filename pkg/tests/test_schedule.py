import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointdiff.errors import ParameterError
from jointdiff.numerics import Rng
from jointdiff.schedule import NoiseSchedule, corrupt_pair, make_linear, snr_at


def fake_schedule(alpha, sigma):
    """Two-step schedule with hand-picked coefficients at t=1."""
    a = np.array([1.0, alpha])
    s = np.array([0.0, sigma])
    return NoiseSchedule(1, 0.1, 0.1, np.array([0.0, 0.1]), a, s)


def test_long_schedule_ends_near_zero():
    sched = make_linear(1000, 1e-4, 0.02)
    assert sched.alpha[1000] < 0.01
    # independent product evaluation
    prod = 1.0
    for beta in np.linspace(1e-4, 0.02, 1000):
        prod *= 1.0 - beta
    assert sched.alpha[1000] == pytest.approx(np.sqrt(prod), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 400), b0=st.floats(1e-5, 1e-2), span=st.floats(0.0, 0.05))
def test_variance_preserving_and_monotone(T, b0, span):
    sched = make_linear(T, b0, b0 + span)
    np.testing.assert_allclose(sched.alpha ** 2 + sched.sigma ** 2, 1.0, atol=1e-6)
    assert np.all(np.diff(sched.alpha) < 0)
    assert sched.alpha[0] == 1.0 and sched.sigma[0] == 0.0


def test_single_step():
    sched = make_linear(1, 0.5, 0.5)
    assert sched.alpha[1] == pytest.approx(np.sqrt(0.5))
    assert sched.sigma[1] == pytest.approx(np.sqrt(0.5))


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_invalid_parameters(args):
    with pytest.raises(ParameterError):
        make_linear(*args)


def test_round_trip_dict():
    sched = make_linear(50, 2e-4, 0.03)
    again = NoiseSchedule.from_dict(sched.to_dict())
    assert np.array_equal(sched.alpha, again.alpha)


class TestCorrupt:
    def test_clean_endpoint(self):
        sched = make_linear(10)
        x0 = Rng(0).normal((1, 4, 4))
        y0 = Rng(1).normal((3, 4, 4))
        xt, yt = corrupt_pair(x0, y0, 0, sched, Rng(2))
        assert np.array_equal(xt, x0) and np.array_equal(yt, y0)

    def test_hand_arithmetic(self):
        sched = fake_schedule(0.6, 0.8)
        xt, yt = corrupt_pair(np.array([[1.0]]), np.array([[0.0]]), 1, sched,
                              noise=(np.array([[0.5]]), np.array([[0.25]])))
        assert xt[0, 0] == pytest.approx(1.0)
        assert yt[0, 0] == pytest.approx(0.2)

    def test_variance(self):
        sched = make_linear(200)
        t = 120
        xt, _ = corrupt_pair(np.zeros(100_000), np.zeros(1), t, sched, Rng(3))
        assert xt.var() == pytest.approx(sched.sigma[t] ** 2, rel=0.03)

    def test_out_of_range(self):
        sched = make_linear(10)
        for t in (-1, 11):
            with pytest.raises(ParameterError):
                corrupt_pair(np.zeros(2), np.zeros(2), t, sched, Rng(0))

    def test_linearity(self):
        sched = make_linear(100)
        r = Rng(5)
        x0, ex, ey = r.normal((3, 2, 4, 4))
        y0 = r.normal((2, 4, 4))
        a = 2.5
        x1, y1 = corrupt_pair(x0, y0, 40, sched, noise=(ex, ey))
        x2, y2 = corrupt_pair(a * x0, a * y0, 40, sched, noise=(a * ex, a * ey))
        np.testing.assert_allclose(x2, a * x1, rtol=1e-12)
        np.testing.assert_allclose(y2, a * y1, rtol=1e-12)

    def test_tied_noise_shares_field(self):
        sched = make_linear(100)
        x0 = np.zeros((1, 4, 4))
        y0 = np.zeros((3, 4, 4))
        xt, yt = corrupt_pair(x0, y0, 50, sched, Rng(0), tied_noise=True)
        for c in range(3):
            np.testing.assert_allclose(yt[c], xt[0])

    def test_independent_noise_differs(self):
        sched = make_linear(100)
        xt, yt = corrupt_pair(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)), 50, sched, Rng(0))
        assert not np.allclose(xt, yt)

    def test_batched_timesteps(self):
        sched = make_linear(100)
        x0 = np.ones((2, 1, 2, 2))
        xt, _ = corrupt_pair(x0, np.ones((2, 3, 2, 2)), np.array([10, 90]), sched,
                             noise=(np.zeros((2, 1, 2, 2)), np.zeros((2, 3, 2, 2))))
        assert xt[0, 0, 0, 0] == pytest.approx(sched.alpha[10])
        assert xt[1, 0, 0, 0] == pytest.approx(sched.alpha[90])


class TestSnr:
    def test_midpoint(self):
        sched = fake_schedule(np.sqrt(0.5), np.sqrt(0.5))
        assert snr_at(1, sched, 1.0) == pytest.approx(1.0)

    def test_arithmetic(self):
        assert snr_at(1, fake_schedule(0.6, 0.8), 2.0) == pytest.approx(1.125)

    def test_zero_power(self):
        assert snr_at(5, make_linear(10), 0.0) == 0.0

    def test_infinite_at_zero(self):
        with pytest.raises(ParameterError):
            snr_at(0, make_linear(10), 1.0)
