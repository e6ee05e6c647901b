"""Stochastic Schrodinger equation integrators and the Lindblad reference solver.

States are handled as row-vector batches of shape ``(batch, dim)`` so a whole
block of trajectories advances with one matrix product per step.  Four
unravellings are provided: jump and diffusive, each in a nonlinear
(norm-preserving) and a linear (norm carries the probability) form.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StepSizeError
from .hilbert import as_array, matrix_exp
from .stochastic import MAX_RATE_DT, RngStream, WienerPath

SCHEMES = ("jump_nonlinear", "jump_linear", "diffusive_nonlinear", "diffusive_linear")
TRACE_DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class UnravellingSpec:
    """Hamiltonian, jump operators and the unravelling used to integrate them.

    ``rates`` are the ostensible jump rates of the linear jump scheme, one per
    channel.  ``H`` is in energy units; it is divided by ``hbar`` internally.
    """

    H: np.ndarray
    channels: tuple
    scheme: str
    rates: tuple = None
    hbar: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        H = np.array(as_array(self.H), dtype=complex)
        chans = tuple(np.array(as_array(c), dtype=complex) for c in self.channels)
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        for c in chans:
            if c.shape != H.shape:
                raise ConfigurationError("all operators must share one dimension")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "channels", chans)
        if self.scheme == "jump_linear":
            if self.rates is None or len(self.rates) != len(chans):
                raise ConfigurationError("jump_linear needs one ostensible rate per channel")
            if any(not r > 0 for r in self.rates):
                raise ConfigurationError("ostensible rates must be positive")
            object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def cdc(self):
        """Sum of c^dag c over channels."""
        if "cdc" not in self._cache:
            acc = np.zeros_like(self.H)
            for c in self.channels:
                acc += c.conj().T @ c
            self._cache["cdc"] = acc
        return self._cache["cdc"]

    @property
    def k_eff(self):
        """Non-Hermitian generator -iH/hbar - sum c^dag c / 2."""
        if "k_eff" not in self._cache:
            self._cache["k_eff"] = -1j * self.H / self.hbar - 0.5 * self.cdc
        return self._cache["k_eff"]

    def drift_propagator(self, dt):
        """exp(k_eff dt), cached per step size."""
        key = ("prop", float(dt))
        if key not in self._cache:
            self._cache[key] = matrix_exp(self.k_eff, dt)
        return self._cache[key]

    def with_scheme(self, scheme, rates=None):
        return UnravellingSpec(self.H, self.channels, scheme, rates, self.hbar)


def measurement_operators(H, c, dt, hbar=1.0):
    """Two-outcome Kraus pair for one interval dt: no event and one event."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    H = as_array(H)
    c = as_array(c)
    if H.shape != c.shape:
        raise ConfigurationError("dimension mismatch")
    eye = np.eye(H.shape[0])
    omega0 = eye - (1j * H / hbar + 0.5 * c.conj().T @ c) * dt
    omega1 = np.sqrt(dt) * c
    return omega0, omega1


def homodyne_transform(c, beta, H, hbar=1.0):
    """Shift the jump operator by a local-oscillator amplitude.

    The pair (c + beta, H - (i hbar / 2)(beta* c - beta c^dag)) generates the
    same master equation as (c, H).
    """
    c = np.array(as_array(c), dtype=complex)
    H = np.array(as_array(H), dtype=complex)
    beta = complex(beta)
    eye = np.eye(c.shape[0])
    c_new = c + beta * eye
    H_new = H - 0.5j * hbar * (np.conj(beta) * c - beta * c.conj().T)
    return c_new, H_new


def position_measurement_spec(H_m, Q, k, hbar=1.0, scheme="diffusive_linear"):
    """Continuous position measurement of strength k as a diffusive unravelling.

    A single channel c = sqrt(2k) Q gives drift -(iH/hbar + k Q^2) and noise
    sqrt(2k) Q dW in the linear form.
    """
    if k < 0:
        raise ConfigurationError("measurement strength k must be nonnegative")
    if scheme not in ("diffusive_linear", "diffusive_nonlinear"):
        raise ConfigurationError("position measurement is a diffusive unravelling")
    c = np.sqrt(2 * k) * as_array(Q)
    return UnravellingSpec(as_array(H_m), (c,), scheme, hbar=hbar)


# ----------------------------------------------------------------------------
# batched single steps


def _as_batch(psi):
    psi = np.asarray(as_array(psi), dtype=complex)
    return (psi[None, :], True) if psi.ndim == 1 else (psi, False)


def _apply(op, psi):
    return psi @ op.T


def _expect(op, psi, norm2=None):
    num = np.einsum("bi,bi->b", psi.conj(), _apply(op, psi))
    if norm2 is None:
        norm2 = np.einsum("bi,bi->b", psi.conj(), psi).real
    return num / norm2


def _normalize_rows(psi):
    n = np.sqrt(np.einsum("bi,bi->b", psi.conj(), psi).real)
    return psi / n[:, None]


def _jump_probabilities(spec, psi, dt):
    norm2 = np.einsum("bi,bi->b", psi.conj(), psi).real
    probs = []
    for c in spec.channels:
        cpsi = _apply(c, psi)
        probs.append(np.einsum("bi,bi->b", cpsi.conj(), cpsi).real / norm2 * dt)
    return np.array(probs).reshape(len(spec.channels), psi.shape[0])


def _pick_channel(weights, u):
    """Index of the channel chosen by uniform u with relative weights (rows = channels)."""
    cum = np.cumsum(weights, axis=0)
    total = cum[-1]
    return np.sum(cum < (u * total)[None, :], axis=0)


def step_jump_nonlinear(psi, spec, dt, uniforms, exact_drift=False):
    """One normalised jump step.

    ``uniforms`` has shape (batch, 2) (or (2,) for one state): the first draw
    decides whether a jump happens, the second picks the channel.
    """
    psi, single = _as_batch(psi)
    u = np.atleast_2d(uniforms)
    probs = _jump_probabilities(spec, psi, dt)
    total = probs.sum(axis=0)
    if np.any(total > MAX_RATE_DT):
        bad = int(np.argmax(total))
        raise StepSizeError(f"row {bad}: jump probability {total[bad]:.3g} per step exceeds {MAX_RATE_DT}")
    jumped = u[:, 0] < total
    out = np.empty_like(psi)
    stay = ~jumped
    if np.any(stay):
        p = psi[stay]
        if exact_drift:
            out[stay] = _apply(spec.drift_propagator(dt), p)
        else:
            out[stay] = p + _apply(spec.k_eff, p) * dt
    if np.any(jumped):
        chan = _pick_channel(probs[:, jumped], u[jumped, 1])
        idx = np.flatnonzero(jumped)
        for n, c in enumerate(spec.channels):
            rows = idx[chan == n]
            if rows.size:
                out[rows] = _apply(c, psi[rows])
    out = _normalize_rows(out)
    return (out[0], jumped[0]) if single else (out, jumped)


def step_jump_linear(psi, spec, dt, uniforms, exact_drift=False):
    """One linear jump step with fixed ostensible rates.

    A jump in channel n applies c_n / sqrt(lambda_n); otherwise the state gets
    1 - (iH/hbar + sum c^dag c / 2 - sum lambda / 2) dt.  Returns (state, dN).
    """
    psi, single = _as_batch(psi)
    u = np.atleast_2d(uniforms)
    rates = np.array(spec.rates)
    if rates.sum() * dt >= MAX_RATE_DT:
        raise StepSizeError(f"ostensible rate*dt = {rates.sum() * dt:.3g} >= {MAX_RATE_DT}")
    jumped = u[:, 0] < rates.sum() * dt
    out = np.empty_like(psi)
    stay = ~jumped
    if np.any(stay):
        p = psi[stay]
        if exact_drift:
            out[stay] = _apply(spec.drift_propagator(dt), p) * np.exp(0.5 * rates.sum() * dt)
        else:
            out[stay] = p + (_apply(spec.k_eff, p) + 0.5 * rates.sum() * p) * dt
    if np.any(jumped):
        weights = np.repeat(rates[:, None], int(jumped.sum()), axis=1)
        chan = _pick_channel(weights, u[jumped, 1])
        idx = np.flatnonzero(jumped)
        for n, c in enumerate(spec.channels):
            rows = idx[chan == n]
            if rows.size:
                out[rows] = _apply(c, psi[rows]) / np.sqrt(rates[n])
    dn = jumped.astype(np.int64)
    return (out[0], dn[0]) if single else (out, dn)


def _dw_batch(dW, batch, n_ch):
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 0:
        dW = dW.reshape(1, 1)
    elif dW.ndim == 1:
        dW = dW.reshape(1, -1) if batch == 1 else dW.reshape(-1, 1)
    if dW.shape != (batch, n_ch):
        raise ConfigurationError(f"expected noise of shape {(batch, n_ch)}, got {dW.shape}")
    return dW


def step_diffusive_nonlinear(psi, spec, dW, dt, exact_drift=False):
    """Normalised diffusive step with one real Wiener increment per channel.

    drift  -iH/hbar - sum (c^dag c / 2 - <c^dag> c + <c^dag><c> / 2)
    noise  sum (c - <c>) dW
    followed by renormalisation of the residual higher-order norm error.
    """
    psi, single = _as_batch(psi)
    dW = _dw_batch(dW, psi.shape[0], len(spec.channels))
    if exact_drift:
        out = _apply(spec.drift_propagator(dt), psi)
    else:
        out = psi + _apply(spec.k_eff, psi) * dt
    for n, c in enumerate(spec.channels):
        cpsi = _apply(c, psi)
        ec = _expect(c, psi)
        coef = (np.conj(ec) * dt + dW[:, n])[:, None]
        out = out + coef * cpsi - ((0.5 * np.abs(ec) ** 2 * dt + ec * dW[:, n])[:, None]) * psi
    out = _normalize_rows(out)
    return out[0] if single else out


def step_diffusive_linear(psi, spec, dW, dt, exact_drift=False):
    """Linear diffusive step: [1 - (iH/hbar + sum c^dag c / 2) dt + sum c dW] psi."""
    psi, single = _as_batch(psi)
    dW = _dw_batch(dW, psi.shape[0], len(spec.channels))
    if exact_drift:
        drifted = _apply(spec.drift_propagator(dt), psi)
    else:
        drifted = psi + _apply(spec.k_eff, psi) * dt
    out = drifted
    for n, c in enumerate(spec.channels):
        out = out + dW[:, n][:, None] * _apply(c, psi)
    return out[0] if single else out


def homodyne_phase_step(psi, H, gamma, dW, dt, hbar=1.0):
    """Normalised phase-quadrature homodyne step for c = sqrt(gamma) a.

    Written with Y = -i(a - a^dag):
    1 - (iH/hbar + gamma/2 (a^dag a + <Y>^2/4) + i a gamma <Y>/2) dt
      - (i a + <Y>/2) sqrt(gamma) dW
    It is the real-record form of the general diffusive unravelling with
    c = -i sqrt(gamma) a and preserves the norm to first order.
    """
    psi = np.asarray(as_array(psi), dtype=complex)
    H = as_array(H)
    dim = psi.size
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    y_op = -1j * (a - a.T)
    ey = float(np.real(np.vdot(psi, y_op @ psi) / np.vdot(psi, psi)))
    gen = (1j * H / hbar + 0.5 * gamma * (a.T @ a + ey ** 2 / 4 * np.eye(dim))
           + 0.5j * gamma * ey * a)
    out = psi - (gen @ psi) * dt - (1j * (a @ psi) + 0.5 * ey * psi) * np.sqrt(gamma) * dW
    return out / np.linalg.norm(out)


# ----------------------------------------------------------------------------
# evolution on a given noise record


def _paths_matrix(paths, n_ch):
    if isinstance(paths, WienerPath):
        paths = [paths]
    paths = list(paths)
    if len(paths) != n_ch:
        raise ConfigurationError("need one Wiener path per channel")
    dt = paths[0].dt
    if any(abs(p.dt - dt) > 1e-15 * dt or p.n_steps != paths[0].n_steps for p in paths):
        raise ConfigurationError("channel paths must share one grid")
    return dt, np.stack([p.increments for p in paths], axis=-1)


def evolve_diffusive(spec, psi0, paths, exact_drift=False):
    """Integrate diffusive trajectories on prescribed Wiener increments.

    Each channel path may hold a batch of realisations (shape
    (n_paths, n_steps)); the result then has one row per realisation.
    """
    dt, dws = _paths_matrix(paths, len(spec.channels))
    step = step_diffusive_linear if spec.scheme == "diffusive_linear" else step_diffusive_nonlinear
    batched = dws.ndim == 3
    if not batched:
        dws = dws[None]
    psi = np.asarray(as_array(psi0), dtype=complex)
    psi = np.broadcast_to(psi, (dws.shape[0], psi.shape[-1])).copy()
    for k in range(dws.shape[1]):
        psi = step(psi, spec, dws[:, k, :], dt, exact_drift=exact_drift)
    return psi if batched else psi[0]


def evolve_jump_linear(spec, psi0, record, exact_drift=False):
    """Integrate a single-channel linear jump trajectory on a given count record.

    An event in step k is applied at the start of that step, then the
    no-jump propagator runs for dt.
    """
    if spec.scheme != "jump_linear" or len(spec.channels) != 1:
        raise ConfigurationError("needs a single-channel jump_linear spec")
    dt = record.dt
    lam = spec.rates[0]
    c = spec.channels[0] / np.sqrt(lam)
    if exact_drift:
        nojump = spec.drift_propagator(dt) * np.exp(0.5 * lam * dt)
    else:
        nojump = np.eye(spec.dim) + (spec.k_eff + 0.5 * lam * np.eye(spec.dim)) * dt
    psi = np.asarray(as_array(psi0), dtype=complex)
    for flag in record.event_flags:
        for _ in range(int(flag)):
            psi = c @ psi
        psi = nojump @ psi
    return psi


# ----------------------------------------------------------------------------
# master equation


def lindblad_rhs(rho, H, channels, hbar=1.0):
    out = -1j / hbar * (H @ rho - rho @ H)
    for c in channels:
        cd = c.conj().T
        cdc = cd @ c
        out = out + c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
    return out


def lindblad_superoperator(H, channels, hbar=1.0):
    """Generator L as a dim^2 x dim^2 matrix acting on row-major vec(rho)."""
    H = as_array(H)
    d = H.shape[0]
    eye = np.eye(d)
    L = -1j / hbar * (np.kron(H, eye) - np.kron(eye, H.T))
    for c in channels:
        c = as_array(c)
        cdc = c.conj().T @ c
        L = L + np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return L


@dataclass
class MasterResult:
    times: np.ndarray
    rho: np.ndarray
    expectations: dict


def master_evolve(rho0, H, channels, t, dt, hbar=1.0, observables=None, stride=1):
    """Fourth-order Runge-Kutta integration of the Lindblad equation.

    rho is symmetrised after every step; a trace drift above 1e-6 means the
    step is too large and raises StepSizeError.
    """
    rho = np.array(as_array(rho0), dtype=complex)
    H = np.asarray(as_array(H), dtype=complex)
    channels = [np.asarray(as_array(c), dtype=complex) for c in channels]
    n_steps = int(round(t / dt))
    if n_steps < 0 or abs(n_steps * dt - t) > 1e-9 * max(t, 1):
        raise ConfigurationError("t must be an integer multiple of dt")
    tr0 = np.trace(rho).real
    observables = observables or {}
    times = []
    expect = {name: [] for name in observables}

    def record(k):
        times.append(k * dt)
        tr = np.trace(rho).real
        for name, op in observables.items():
            expect[name].append(np.trace(as_array(op) @ rho) / tr)

    record(0)
    f = lambda r: lindblad_rhs(r, H, channels, hbar)  # noqa: E731
    for k in range(1, n_steps + 1):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        if not np.all(np.isfinite(rho)) or abs(np.trace(rho).real - tr0) > TRACE_DRIFT_TOL * max(tr0, 1):
            raise StepSizeError(f"trace drift at t={k * dt:.3g}; reduce dt")
        if k % stride == 0 or k == n_steps:
            record(k)
    return MasterResult(np.array(times), rho,
                        {name: np.array(v) for name, v in expect.items()})


# ----------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleResult:
    """Weighted ensemble statistics on the stored time grid.

    ``mean`` and ``stderr`` are keyed by observable name; ``cond_var_mean``
    is the weighted mean of the per-trajectory variance.  For linear
    schemes the weight of a trajectory is its squared norm and the means are
    self-normalised ratio estimates.
    """

    times: np.ndarray
    mean: dict
    stderr: dict
    cond_var_mean: dict
    n_traj: int
    weights: np.ndarray
    final_states: np.ndarray = None

    def density_matrix(self):
        """Weighted average of normalised final states."""
        if self.final_states is None:
            raise ConfigurationError("run with keep_final=True to form the density matrix")
        psi = _normalize_rows(self.final_states)
        w = self.weights / self.weights.sum()
        return np.einsum("b,bi,bj->ij", w, psi, psi.conj())

    def rows(self):
        for k, t in enumerate(self.times):
            for name in self.mean:
                m = self.mean[name][k]
                yield (t, name, m.real, m.imag, self.stderr[name][k], self.cond_var_mean[name][k])


def _batch_noise(spec, seed, start, size, n_steps):
    """Pre-draw every random number of a batch from each trajectory's own stream."""
    n_ch = len(spec.channels)
    if spec.scheme.startswith("diffusive"):
        out = np.empty((n_steps, size, n_ch))
        for j in range(size):
            gen = RngStream(seed, start + j).generator()
            out[:, j, :] = gen.standard_normal((n_steps, n_ch))
        return out
    out = np.empty((n_steps, size, 2))
    for j in range(size):
        gen = RngStream(seed, start + j).generator()
        out[:, j, :] = gen.random((n_steps, 2))
    return out


def _run_batch(spec, psi0, dt, n_steps, seed, start, size, observables, stride,
               exact_drift, keep_final):
    noise = _batch_noise(spec, seed, start, size, n_steps)
    psi = np.repeat(np.asarray(psi0, dtype=complex)[None, :], size, axis=0)
    linear = spec.scheme.endswith("linear") and not spec.scheme.endswith("nonlinear")
    sums = []

    def accumulate():
        norm2 = np.einsum("bi,bi->b", psi.conj(), psi).real
        w = norm2 if linear else np.ones(size)
        entry = {}
        for name, op in observables.items():
            opsi = _apply(op, psi)
            o = np.einsum("bi,bi->b", psi.conj(), opsi) / norm2
            cv = np.einsum("bi,bi->b", opsi.conj(), opsi).real / norm2 - np.abs(o) ** 2
            entry[name] = np.array([
                w.sum(), (w * o).sum(), (w ** 2).sum(), (w ** 2 * o).sum(),
                (w ** 2 * np.abs(o) ** 2).sum(), (w * cv).sum()])
        sums.append(entry)

    accumulate()
    sqdt = np.sqrt(dt)
    for k in range(n_steps):
        try:
            if spec.scheme == "jump_nonlinear":
                psi, _ = step_jump_nonlinear(psi, spec, dt, noise[k], exact_drift)
            elif spec.scheme == "jump_linear":
                psi, _ = step_jump_linear(psi, spec, dt, noise[k], exact_drift)
            elif spec.scheme == "diffusive_nonlinear":
                psi = step_diffusive_nonlinear(psi, spec, noise[k] * sqdt, dt, exact_drift)
            else:
                psi = step_diffusive_linear(psi, spec, noise[k] * sqdt, dt, exact_drift)
        except StepSizeError as exc:
            raise StepSizeError(f"trajectories {start}..{start + size - 1}, step {k}: {exc}") from exc
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            accumulate()
    norm2 = np.einsum("bi,bi->b", psi.conj(), psi).real
    weights = norm2 if linear else np.ones(size)
    return sums, weights, (psi.copy() if keep_final else None)


def run_ensemble(spec, psi0, t, dt, n_traj, seed, observables, stride=1, n_threads=1,
                 batch_size=256, exact_drift=False, keep_final=False):
    """Run ``n_traj`` trajectories and reduce them to weighted statistics.

    Trajectory i always draws from RngStream(seed, i) and trajectories are
    grouped into fixed batches of ``batch_size``; batch results are combined
    in batch order, so the output does not depend on ``n_threads``.
    """
    if n_traj < 1:
        raise ConfigurationError("n_traj must be at least 1")
    n_steps = int(round(t / dt))
    if n_steps < 1 or abs(n_steps * dt - t) > 1e-9 * max(t, 1):
        raise ConfigurationError("t must be a positive integer multiple of dt")
    psi0 = np.asarray(as_array(psi0), dtype=complex)
    observables = {name: np.asarray(as_array(op), dtype=complex) for name, op in observables.items()}
    starts = list(range(0, n_traj, batch_size))
    jobs = [(s, min(batch_size, n_traj - s)) for s in starts]

    def work(job):
        return _run_batch(spec, psi0, dt, n_steps, seed, job[0], job[1], observables,
                          stride, exact_drift, keep_final)

    if n_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    stored = [0] + [k + 1 for k in range(n_steps) if (k + 1) % stride == 0 or k + 1 == n_steps]
    times = dt * np.array(stored)
    mean, stderr, cond = {}, {}, {}
    for name in observables:
        tot = np.zeros((len(stored), 6), dtype=complex)
        for sums, _, _ in results:
            tot += np.array([entry[name] for entry in sums])
        sw, swo, sw2, sw2o, sw2o2, swcv = tot.T
        r = swo / sw.real
        var = (sw2o2.real - 2 * np.real(np.conj(r) * sw2o) + np.abs(r) ** 2 * sw2.real) / sw.real ** 2
        mean[name] = r
        stderr[name] = np.sqrt(np.maximum(var, 0.0))
        cond[name] = swcv.real / sw.real
    weights = np.concatenate([w for _, w, _ in results])
    finals = np.concatenate([f for _, _, f in results]) if keep_final else None
    return EnsembleResult(times, mean, stderr, cond, n_traj, weights, finals)
