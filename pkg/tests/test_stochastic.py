import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from contmeas.errors import ConfigurationError
from contmeas.stochastic import (
    RngStream,
    WienerPath,
    multiplicative_exact,
    ou_exact,
    poisson_path,
    quadratic_variation,
    wiener_path,
)


def test_increment_variance_unit_dt():
    path = wiener_path(100_000, 1.0, RngStream(11))
    assert 0.97 <= path.increments.var() <= 1.03


def test_std_scales_with_sqrt_dt():
    a = wiener_path(100_000, 1.0, RngStream(3)).increments.std()
    b = wiener_path(100_000, 4.0, RngStream(3)).increments.std()
    assert b / a == pytest.approx(2.0, rel=0.02)


def test_same_stream_same_path():
    p1 = wiener_path(1000, 0.01, RngStream(42, 7))
    p2 = wiener_path(1000, 0.01, RngStream(42, 7))
    assert np.array_equal(p1.increments, p2.increments)
    p3 = wiener_path(1000, 0.01, RngStream(42, 8))
    assert not np.array_equal(p1.increments, p3.increments)


def test_nonpositive_dt_rejected():
    with pytest.raises(ConfigurationError):
        wiener_path(10, 0.0, RngStream(1))
    with pytest.raises(ConfigurationError):
        wiener_path(10, -1e-3, RngStream(1))


def test_cumulative_is_running_sum():
    path = wiener_path(50, 0.1, RngStream(5))
    assert path.cumulative.shape == path.increments.shape
    assert np.allclose(path.cumulative, np.cumsum(path.increments))
    assert path.with_origin()[0] == 0.0


def test_coarsen_preserves_endpoint():
    path = wiener_path(1000, 1e-3, RngStream(5))
    coarse = path.coarsen(10)
    assert coarse.dt == pytest.approx(1e-2)
    assert coarse.cumulative[-1] == pytest.approx(path.cumulative[-1])


def test_increment_mean_within_four_sigma():
    for idx in range(20):
        path = wiener_path(10_000, 1e-3, RngStream(9, idx))
        assert abs(path.increments.mean()) < 4 * np.sqrt(1e-3 / 10_000)


# quadratic variation: Var = 2 dt t, so at t=1, dt=1e-4 the 2% band is 14 sigma.
@pytest.mark.parametrize("t, lo, hi", [(1.0, 0.98, 1.02), (2.0, 1.97, 2.03)])
def test_quadratic_variation(t, lo, hi):
    dt = 1e-4
    path = wiener_path(int(round(t / dt)), dt, RngStream(21))
    assert lo <= quadratic_variation(path) <= hi


def test_quadratic_variation_zero_path():
    assert quadratic_variation(WienerPath(0.1, np.zeros(10))) == 0.0


def test_quadratic_variation_error_shrinks_with_dt():
    devs = []
    for dt in (1e-2, 1e-3, 1e-4):
        n = int(round(1 / dt))
        paths = wiener_path(n, dt, RngStream(4), n_paths=200)
        devs.append(np.std(quadratic_variation(paths) - 1.0))
    ratios = np.array(devs[:-1]) / np.array(devs[1:])
    # deviation scales as sqrt(dt): each tenfold reduction shrinks it by ~3.16
    assert np.all((ratios > 2.5) & (ratios < 4.0))


def test_ou_deterministic_limit():
    path = wiener_path(100, 0.01, RngStream(1))
    x = ou_exact(1.5 + 0.5j, -0.7 + 2j, 0.0, path)
    assert np.allclose(x, np.exp((-0.7 + 2j) * path.times) * (1.5 + 0.5j))


def test_ou_pure_wiener():
    path = wiener_path(100, 0.01, RngStream(1))
    x = ou_exact(0.3, 0.0, 1.0, path)
    assert np.allclose(x, 0.3 + path.with_origin())


def test_ou_stationary_variance():
    # t = 8 relaxation times, so the transient is e^{-16} of the variance
    paths = wiener_path(800, 0.01, RngStream(8), n_paths=100_000)
    x = ou_exact(0.0, -1.0, 1.0, paths)[:, -1]
    dt = 0.01
    # exact discrete-sum variance: sum_j e^{-2(t - t_j)} dt with left points
    exact = dt * np.sum(np.exp(-2 * dt * np.arange(1, 801)))
    assert abs(exact - 0.5) < 0.011
    assert np.var(x.real) == pytest.approx(0.5, rel=0.03)


def test_multiplicative_deterministic():
    path = wiener_path(100, 0.01, RngStream(2))
    x = multiplicative_exact(2.0, -0.3, 0.0, path)
    assert np.allclose(x, 2.0 * np.exp(-0.3 * path.times))


def test_multiplicative_drift_cancellation():
    path = WienerPath(0.01, np.zeros(100))
    x = multiplicative_exact(1.7, 0.5, 1.0, path)
    assert np.allclose(x, 1.7)


def _euler_multiplicative(x0, f, g, path, milstein=False):
    x = np.full(path.increments.shape[:-1], x0, dtype=complex)
    for k in range(path.n_steps):
        dw = path.increments[..., k]
        step = f * x * path.dt + g * x * dw
        if milstein:
            step = step + 0.5 * g * g * x * (dw ** 2 - path.dt)
        x = x + step
    return x


def _strong_errors(milstein):
    fine = wiener_path(2 ** 12, 2 ** -12, RngStream(6), n_paths=400)
    errs, dts = [], []
    for factor in (2 ** 4, 2 ** 5, 2 ** 6, 2 ** 7):
        path = fine.coarsen(factor)
        exact = multiplicative_exact(1.0, -0.5, 0.8, path)[..., -1]
        approx = _euler_multiplicative(1.0, -0.5, 0.8, path, milstein)
        errs.append(np.mean(np.abs(exact - approx)))
        dts.append(path.dt)
    return np.array(dts), np.array(errs)


def test_euler_maruyama_strong_order_half():
    # multiplicative noise keeps the g^2 (dW^2 - dt)/2 remainder, so plain
    # Euler-Maruyama converges pathwise with order 1/2
    dts, errs = _strong_errors(milstein=False)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 0.35 <= slope <= 0.65


def test_milstein_strong_order_one():
    dts, errs = _strong_errors(milstein=True)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 0.7 <= slope <= 1.3
    # mean error reduction per halving of dt
    halving = (errs[-1] / errs[0]) ** (1 / (len(errs) - 1))
    assert 2 * 0.7 <= halving <= 2 * 1.3


def test_poisson_zero_rate():
    p = poisson_path(0.0, 1000, 0.01, RngStream(1))
    assert p.n_events == 0 and np.all(p.counts == 0) and np.all(p.Y == 0)


def test_poisson_rate_guard():
    with pytest.raises(ConfigurationError):
        poisson_path(10.0, 100, 0.01, RngStream(1))


def test_poisson_mean_count():
    dt = 0.01
    n = np.array([poisson_path(1.0, 500, dt, RngStream(77, i)).n_events for i in range(20_000)])
    # Bernoulli with p = lambda dt: mean exactly 5, sd of the mean ~ 0.016
    assert 4.93 <= n.mean() <= 5.07


def test_poisson_count_distribution():
    counts = np.array([poisson_path(1.0, 300, 0.01, RngStream(5, i)).n_events for i in range(5000)])
    ks = np.arange(0, 9)
    observed = np.array([np.sum(counts == k) for k in ks] + [np.sum(counts > 8)])
    # Bernoulli steps give Binomial(300, 0.01), which is the discretised Poisson(3)
    probs = stats.binom.pmf(ks, 300, 0.01)
    probs = np.append(probs, 1 - probs.sum())
    _, pvalue = stats.chisquare(observed, probs * len(counts))
    assert pvalue > 1e-3


def test_event_times_uniform_given_count():
    t_end = 5.0
    times = np.concatenate([
        poisson_path(1.0, 5000, 1e-3, RngStream(13, i), exact=True).event_times
        for i in range(2000)])
    stat, pvalue = stats.kstest(times / t_end, "uniform")
    assert pvalue > 1e-3


def test_bernoulli_event_times_on_left_edges():
    p = poisson_path(2.0, 1000, 0.01, RngStream(3))
    steps = np.flatnonzero(p.event_flags)
    assert np.allclose(p.event_times, steps * 0.01)
    assert p.Y[-1] == pytest.approx(p.Y_final)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32), rate=st.floats(0.0, 9.0), exact=st.booleans())
def test_poisson_path_invariants(seed, rate, exact):
    p = poisson_path(rate, 400, 0.01, RngStream(seed), exact=exact)
    assert np.all(np.diff(p.counts) >= 0)
    t_end = p.times[1:]
    assert np.all(p.Y <= p.counts * t_end + 1e-12)
    assert p.Y_final == pytest.approx(np.sum(p.event_times))


def test_csv_dump(tmp_path):
    path = wiener_path(5, 0.1, RngStream(1))
    out = path.to_csv(tmp_path / "w.csv")
    lines = open(out).read().splitlines()
    assert lines[0].startswith("# units:")
    assert lines[1] == "t,dW"
    assert len(lines) == 7
