"""Wiener and Poisson paths plus the exactly solvable scalar processes.

Every path is generated from an :class:`RngStream`, a (seed, index) pair
mapped onto a counter-based Philox generator.  Two streams with the same
pair produce identical numbers no matter which thread draws them.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError
from .io import write_csv

MAX_RATE_DT = 0.1


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by a master seed and an index."""

    seed: int
    index: int = 0

    def generator(self, purpose=0):
        """Fresh generator for this stream.

        ``purpose`` separates independent uses of one stream (e.g. the jump
        decision and the channel choice) without consuming shared state.
        """
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1),
                                    spawn_key=(int(self.index), int(purpose)))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index):
        return RngStream(self.seed, int(self.index) * 1_000_003 + int(index) + 1)


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WienerPath:
    """Fixed-step Wiener increments.

    ``increments`` may be one path of shape ``(n,)`` or a batch of shape
    ``(paths, n)``; time always runs along the last axis.
    """

    dt: float
    increments: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        object.__setattr__(self, "increments", _frozen(np.asarray(self.increments, dtype=float)))

    @property
    def n_steps(self):
        return self.increments.shape[-1]

    @property
    def cumulative(self):
        """W at the end of each step, W(t_{k+1}) = sum of increments 0..k."""
        return np.cumsum(self.increments, axis=-1)

    @property
    def times(self):
        """Grid t_0 = 0, ..., t_n = n dt."""
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def t_final(self):
        return self.dt * self.n_steps

    def with_origin(self):
        """W on the full grid including W(0) = 0."""
        w = self.cumulative
        zero = np.zeros(w.shape[:-1] + (1,))
        return np.concatenate([zero, w], axis=-1)

    def coarsen(self, factor):
        """Same Brownian path sampled with a step ``factor`` times larger."""
        factor = int(factor)
        if self.n_steps % factor:
            raise ConfigurationError("n_steps must be divisible by the coarsening factor")
        shape = self.increments.shape[:-1] + (self.n_steps // factor, factor)
        return WienerPath(self.dt * factor, self.increments.reshape(shape).sum(axis=-1))

    def to_csv(self, path):
        if self.increments.ndim != 1:
            raise ConfigurationError("only single paths can be written")
        rows = zip(self.times[:-1], self.increments)
        return write_csv(path, ["t", "dW"], rows, {"t": "s", "dW": "s^0.5"})


def wiener_path(n_steps, dt, rng, n_paths=None):
    """Draw ``n_steps`` Gaussian increments of variance ``dt``."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    if n_steps < 1:
        raise ConfigurationError("n_steps must be at least 1")
    gen = _as_generator(rng)
    shape = (n_steps,) if n_paths is None else (n_paths, n_steps)
    return WienerPath(dt, gen.standard_normal(shape) * np.sqrt(dt))


def quadratic_variation(path):
    """Sum of squared increments; tends to t as dt -> 0."""
    if path.n_steps == 0:
        raise ConfigurationError("empty path")
    return np.sum(path.increments ** 2, axis=-1)


def ou_exact(x0, k, g, path):
    """Exact Ornstein-Uhlenbeck solution on the path grid.

    x(t) = e^{kt} x0 + g sum_j e^{k(t - t_j)} dW_j with left-point t_j.
    Returns values at t_0 .. t_n (length n + 1 along the last axis).
    """
    k = complex(k)
    decay = np.exp(k * path.dt)
    dw = path.increments
    noise = lfilter([complex(g) * decay], [1.0, -decay], dw.astype(complex), axis=-1)
    t = path.times
    out = np.empty(dw.shape[:-1] + (path.n_steps + 1,), dtype=complex)
    out[..., 0] = x0
    out[..., 1:] = np.exp(k * t[1:]) * x0 + noise
    return out


def multiplicative_exact(x0, f, g, path):
    """Exact solution of dx = f x dt + g x dW on the path grid."""
    f = complex(f)
    g = complex(g)
    t = path.times
    return np.exp((f - g * g / 2) * t + g * path.with_origin()) * x0


@dataclass(frozen=True)
class PoissonPath:
    """Counting-process record on a fixed grid.

    ``event_flags[k]`` counts events in step k.  ``event_times`` are the
    event times themselves: the left edge k dt of the step in Bernoulli
    mode, the exact continuous time in waiting-time mode.
    """

    rate: float
    dt: float
    event_flags: np.ndarray
    event_times: np.ndarray = field(default=None)

    def __post_init__(self):
        flags = _frozen(np.asarray(self.event_flags, dtype=np.int64))
        object.__setattr__(self, "event_flags", flags)
        if self.event_times is None:
            steps = np.repeat(np.arange(flags.size), flags)
            times = steps * self.dt
        else:
            times = np.asarray(self.event_times, dtype=float)
        object.__setattr__(self, "event_times", _frozen(times))

    @property
    def n_steps(self):
        return self.event_flags.size

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def t_final(self):
        return self.dt * self.n_steps

    @property
    def counts(self):
        """N at the end of each step."""
        return np.cumsum(self.event_flags)

    @property
    def n_events(self):
        return int(self.event_flags.sum())

    @property
    def Y(self):
        """Running sum of event times at the end of each step."""
        per_step = np.zeros(self.n_steps)
        idx = np.repeat(np.arange(self.n_steps), self.event_flags)
        np.add.at(per_step, idx, self.event_times)
        return np.cumsum(per_step)

    @property
    def Y_final(self):
        return float(np.sum(self.event_times))

    def refine(self, factor):
        """Same events on a grid ``factor`` times finer.

        Only records whose events sit on step left edges can be refined
        without moving an event.
        """
        factor = int(factor)
        if factor < 1:
            raise ConfigurationError("factor must be a positive integer")
        steps = np.repeat(np.arange(self.n_steps), self.event_flags)
        if not np.allclose(self.event_times, steps * self.dt, rtol=0, atol=1e-12 * max(self.t_final, 1)):
            raise ConfigurationError("event times are off the grid")
        flags = np.zeros(self.n_steps * factor, dtype=np.int64)
        np.add.at(flags, steps * factor, 1)
        return PoissonPath(self.rate, self.dt / factor, flags)

    def to_csv(self, path):
        rows = zip(self.times[:-1], self.event_flags)
        return write_csv(path, ["t", "dN"], rows, {"t": "s", "dN": "1"})


def poisson_path(rate, n_steps, dt, rng, exact=False):
    """Poisson record with rate ``rate``.

    The default draws one Bernoulli(rate dt) per step, so at most one event
    per step; ``exact=True`` draws exponential waiting times instead and is
    meant for validating the discretisation.
    """
    if rate < 0:
        raise ConfigurationError("rate must be nonnegative")
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    if rate * dt >= MAX_RATE_DT:
        raise ConfigurationError(
            f"rate*dt = {rate * dt:.3g} >= {MAX_RATE_DT}; Bernoulli discretisation invalid")
    gen = _as_generator(rng)
    if not exact:
        flags = (gen.random(n_steps) < rate * dt).astype(np.int64)
        return PoissonPath(rate, dt, flags)
    t_end = n_steps * dt
    times = []
    if rate > 0:
        t = gen.exponential(1.0 / rate)
        while t < t_end:
            times.append(t)
            t += gen.exponential(1.0 / rate)
    times = np.array(times)
    steps = np.minimum((times / dt).astype(np.int64), n_steps - 1)
    flags = np.bincount(steps, minlength=n_steps)
    return PoissonPath(rate, dt, flags, times)
