"""Closed-form evolution operators for linear quantum trajectories.

Each function here either returns an operator (on a truncated Fock space) or
a final state given a realised noise record.  They double as exact oracles
for the step-by-step integrators in :mod:`contmeas.trajectories`.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln

from .errors import ConfigurationError, DomainError, NumericalGuardError
from .hilbert import (
    annihilation,
    as_array,
    check_leakage,
    coherent_state,
    matrix_exp,
)
from .stochastic import _as_generator

SERIES_THRESHOLD = 1e-4


def lqse_split(a_tilde, b):
    """Drift A of the exponential product form: A = A~ - B^2 / 2.

    exp(A dt) exp(B dW) then reproduces 1 + A~ dt + B dW to first order
    once dW^2 = dt.
    """
    a_tilde = np.asarray(as_array(a_tilde))
    b = np.asarray(as_array(b))
    if np.ndim(a_tilde) == 2 and a_tilde.shape != b.shape:
        raise ConfigurationError("dimension mismatch")
    return a_tilde - b @ b / 2 if np.ndim(b) == 2 else a_tilde - b * b / 2


# ----------------------------------------------------------------------------
# QND photon number measurement


def qnd_number_evolution(omega, k, t, W, dim):
    """Diagonal evolution operator V for c = sqrt(2k) N, H = omega (N + 1/2).

    V_n = exp(-i omega (n + 1/2) t - 2k n^2 t + sqrt(2k) n W)
    """
    if k < 0:
        raise ConfigurationError("k must be nonnegative")
    n = np.arange(dim)
    return np.diag(np.exp(-1j * omega * (n + 0.5) * t - 2 * k * n ** 2 * t + np.sqrt(2 * k) * n * W))


def _conditional_sd(log_w, n):
    """Standard deviation of n under weights exp(log_w), one row per node."""
    shift = log_w.max(axis=-1, keepdims=True)
    w = np.exp(log_w - shift)
    z = w.sum(axis=-1)
    m1 = (w * n).sum(axis=-1) / z
    m2 = (w * n ** 2).sum(axis=-1) / z
    disc = m2 - m1 ** 2
    scale = np.maximum(m2, 1.0)
    if np.any(disc < -1e-12 * scale):
        raise NumericalGuardError("negative conditional variance in quadrature")
    return np.sqrt(np.maximum(disc, 0.0))


def qnd_average_uncertainty(rho_diag, tau, rel_tol=1e-6, nodes=129, max_nodes=4097):
    """Average conditional photon-number uncertainty after QND measurement.

    Averages sqrt(Var_w(n)) over the true record distribution at
    tau = k t.  Substituting u = W / sqrt(t), the record density weighted by
    the photon-number component n is a unit Gaussian centred at
    2 sqrt(2 tau) n, so each component is integrated with its own
    Gauss-Hermite rule; the node count doubles until the result moves by
    less than ``rel_tol``.
    """
    p = np.asarray(rho_diag, dtype=float)
    if np.any(p < -1e-15) or abs(p.sum() - 1) > 1e-9:
        raise ConfigurationError("photon-number distribution must be nonnegative and sum to 1")
    if tau < 0:
        raise ConfigurationError("tau must be nonnegative")
    n = np.arange(p.size, dtype=float)
    support = np.flatnonzero(p > 0)
    log_p = np.full(p.size, -np.inf)
    log_p[support] = np.log(p[support])
    shift = 2 * np.sqrt(2 * tau)

    def evaluate(count):
        x, w = np.polynomial.hermite.hermgauss(count)
        total = 0.0
        for j in support:
            u = shift * n[j] + np.sqrt(2) * x
            log_w = log_p[None, :] - 4 * tau * n[None, :] ** 2 + shift * n[None, :] * u[:, None]
            total += p[j] * np.dot(w, _conditional_sd(log_w, n)) / np.sqrt(np.pi)
        return total

    prev = evaluate(nodes)
    while nodes < max_nodes:
        nodes = 2 * nodes - 1
        cur = evaluate(nodes)
        if abs(cur - prev) <= rel_tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


# ----------------------------------------------------------------------------
# momentum measurement in a linear potential


def momentum_joint_noise(t, rng, size=None):
    """Sample (W(t), Y(t)) with Y = int_0^t t' dW(t').

    The pair is Gaussian with covariance [[t, t^2/2], [t^2/2, t^3/3]].
    """
    if not t > 0:
        raise ConfigurationError("t must be positive")
    gen = _as_generator(rng)
    cov = np.array([[t, t ** 2 / 2], [t ** 2 / 2, t ** 3 / 3]])
    chol = np.linalg.cholesky(cov)
    shape = (2,) if size is None else (size, 2)
    z = gen.standard_normal(shape)
    return z @ chol.T


def momentum_conditional_variance(var_p0, k, t):
    """Conditional momentum variance sigma_p0^2 / (1 + 8 k sigma_p0^2 t)."""
    if var_p0 <= 0 or k < 0:
        raise ConfigurationError("need var_p0 > 0 and k >= 0")
    return var_p0 / (1 + 8 * k * var_p0 * np.asarray(t))


# ----------------------------------------------------------------------------
# quadratic generators


@dataclass(frozen=True)
class QuadraticGenerator:
    """A = alpha P^2 + gamma Q^2 + xi QP + eta P + zeta Q and B = k Q + kappa P."""

    alpha: complex
    gamma: complex
    xi: complex
    eta: complex
    zeta: complex
    k: complex
    kappa: complex
    hbar: float = 1.0

    @property
    def lam(self):
        return np.sqrt(complex(self.xi) ** 2 - 4 * complex(self.alpha) * complex(self.gamma))

    def operators(self, Q, P):
        """Dense A and B built from given quadrature matrices."""
        Q = as_array(Q)
        P = as_array(P)
        eye = np.eye(Q.shape[0])
        A = (self.alpha * P @ P + self.gamma * Q @ Q + self.xi * Q @ P
             + self.eta * P + self.zeta * Q)
        B = self.k * Q + self.kappa * P
        return A, B + 0 * eye


def position_measurement_generator(m, omega, k, hbar=1.0):
    """A and B for a harmonic oscillator under continuous position measurement."""
    return QuadraticGenerator(
        alpha=-1j / (2 * hbar * m), gamma=-1j * m * omega ** 2 / (2 * hbar) - 2 * k,
        xi=0, eta=0, zeta=0, k=np.sqrt(2 * k), kappa=0, hbar=hbar)


def _entire_parts(gen, eps):
    """C, S / lambda and (C - 1) / lambda^2 for y = i hbar lambda eps.

    All three are entire in y^2, so no square-root branch enters.
    """
    eps = np.asarray(eps, dtype=float)
    h = gen.hbar
    y2 = (1j * h * eps) ** 2 * (complex(gen.xi) ** 2 - 4 * complex(gen.alpha) * complex(gen.gamma))
    ihe = 1j * h * eps
    small = np.abs(y2) < SERIES_THRESHOLD ** 2
    y = np.sqrt(np.where(small, 1.0, y2))
    with np.errstate(invalid="ignore", divide="ignore"):
        c_direct = np.cosh(y)
        s_direct = ihe * np.sinh(y) / y
        cm1_direct = ihe ** 2 * (np.cosh(y) - 1) / y2
    c_series = 1 + y2 / 2 + y2 ** 2 / 24
    s_series = ihe * (1 + y2 / 6 + y2 ** 2 / 120)
    cm1_series = ihe ** 2 * (0.5 + y2 / 24 + y2 ** 2 / 720)
    return (np.where(small, c_series, c_direct),
            np.where(small, s_series, s_direct),
            np.where(small, cm1_series, cm1_direct))


def quad_f_functions(gen, eps):
    """f1, f2, f3 with exp(-eps A) B exp(eps A) = f1 Q + f2 P + f3."""
    C, S_l, Cm1_l2 = _entire_parts(gen, eps)
    a, g, xi, eta, zeta = (complex(gen.alpha), complex(gen.gamma), complex(gen.xi),
                           complex(gen.eta), complex(gen.zeta))
    k, kap = complex(gen.k), complex(gen.kappa)
    p1 = xi * k - 2 * g * kap
    p2 = 2 * a * k - xi * kap
    f1 = k * C + p1 * S_l
    f2 = kap * C + p2 * S_l
    f3 = (k * eta - kap * zeta) * S_l + (eta * p1 - zeta * p2) * Cm1_l2
    return f1, f2, f3


@dataclass(frozen=True)
class GaussianNoiseSummary:
    """Stochastic integrals that the quadratic evolution operator depends on.

    X_i = sum f_i(t_j) dW_j at left points; Z is the accumulated double
    integral sum (f1_j X2(t_j) - f2_j X1(t_j)) dW_j, which only affects the
    norm and phase.
    """

    t: float
    W: float
    Y: float
    X: tuple
    Z: complex


def gaussian_noise_summary(gen, path):
    """Reduce a Wiener path to (W, Y, X1, X2, X3, Z) for ``gen``.

    A batched path (increments of shape (n_paths, n_steps)) gives a list of
    summaries; the f-functions are evaluated once on the shared grid.
    """
    dw = np.atleast_2d(path.increments)
    t_left = path.times[:-1]
    f1, f2, f3 = quad_f_functions(gen, t_left)
    x1 = np.cumsum(f1 * dw, axis=-1)
    x2 = np.cumsum(f2 * dw, axis=-1)
    x1_before = x1 - f1 * dw
    x2_before = x2 - f2 * dw
    z = np.sum((f1 * x2_before - f2 * x1_before) * dw, axis=-1)
    x3 = dw @ f3
    out = [GaussianNoiseSummary(t=path.t_final, W=float(dw[i].sum()), Y=float(dw[i] @ t_left),
                                X=(complex(x1[i, -1]), complex(x2[i, -1]), complex(x3[i])), Z=complex(z[i]))
           for i in range(dw.shape[0])]
    return out if path.increments.ndim == 2 else out[0]


def noise_covariance(gen, t, n=2001):
    """int_0^t f_i f_j dt' by the trapezoid rule (3 x 3, complex symmetric)."""
    s = np.linspace(0.0, t, n)
    f = np.array(quad_f_functions(gen, s))
    return trapezoid(f[:, None, :] * f[None, :, :], s, axis=-1)


def quad_evolution(gen, noise, psi0, Q, P, include_norm=True, leakage_tol=1e-6):
    """|psi(t)> = e^{At} e^{X1 Q + X2 P} e^{X3} e^{i hbar Z / 2} |psi0>.

    The Z factor carries one half from combining the ordered exponentials
    of the linear forms.  With ``include_norm=False`` only the normalised
    state is returned (X3 and Z drop out).
    """
    A, _ = gen.operators(Q, P)
    Qm, Pm = as_array(Q), as_array(P)
    x1, x2, x3 = noise.X
    psi = np.asarray(as_array(psi0), dtype=complex)
    psi = matrix_exp(x1 * Qm + x2 * Pm) @ psi
    psi = matrix_exp(A, noise.t) @ psi
    if include_norm:
        psi = psi * np.exp(x3 + 0.5j * gen.hbar * noise.Z)
    else:
        psi = psi / np.linalg.norm(psi)
    check_leakage(psi, tol=leakage_tol)
    return psi


def position_measurement_z(r):
    """z = sqrt(2i/r - 1) on the principal branch."""
    if not r > 0:
        raise ConfigurationError("r must be positive")
    return np.sqrt(2j / r - 1)


def position_meas_s_prime(s2, r, omega, t):
    """Coefficient of -x^2 in the conditional wavefunction at time t.

    s'^2 = s^2 iz (iz tanh(z omega t) - 1) / (tanh(z omega t) - iz)
    """
    if not s2 > 0:
        raise ConfigurationError("s^2 must be positive")
    z = position_measurement_z(r)
    th = np.tanh(z * omega * np.asarray(t, dtype=float))
    return s2 * 1j * z * (1j * z * th - 1) / (th - 1j * z)


def position_conditional_variance(s2, r, omega, t):
    """sigma_x^2(t) = 1 / (4 Re s'^2)."""
    return 1.0 / (4 * np.real(position_meas_s_prime(s2, r, omega, t)))


def position_steady_variance(s2, r):
    """Long-time conditional position variance 1 / (4 s^2 Im z)."""
    return 1.0 / (4 * s2 * np.imag(position_measurement_z(r)))


# ----------------------------------------------------------------------------
# operator identities on coherent states


@dataclass(frozen=True)
class DisentangledQuadratic:
    """exp(u a^2 + v a^dag^2 + w a^dag a) = e^{(chi - w)/2} e^{l a^dag^2} e^{chi a^dag a} e^{m a^2}."""

    u: complex
    v: complex
    w: complex
    l: complex
    chi: complex
    m: complex
    f: complex

    @property
    def prefactor(self):
        return np.exp((self.chi - self.w) / 2)

    def operator(self, dim):
        a = annihilation(dim).matrix
        n = np.arange(dim)
        return (self.prefactor * matrix_exp(a.T @ a.T, self.l)
                @ np.diag(np.exp(self.chi * n)) @ matrix_exp(a @ a, self.m))


def disentangle_quadratic(u, v, w, tol=1e-12):
    """Factor exp(u a^2 + v a^dag^2 + w a^dag a) into normal-ordered pieces.

    With f = sqrt(w^2 - 4uv) and D = cosh f - (w/f) sinh f:
    l = v sinh(f) / (f D), m = u sinh(f) / (f D), chi = -ln D.
    The ratios sinh(f)/f and D are even in f, so the branch of f is
    irrelevant; near f = 0 their series are used.
    """
    u, v, w = complex(u), complex(v), complex(w)
    f2 = w * w - 4 * u * v
    f = np.sqrt(f2)
    if abs(f2) < SERIES_THRESHOLD ** 2:
        sinhc = 1 + f2 / 6 + f2 ** 2 / 120
        cosh = 1 + f2 / 2 + f2 ** 2 / 24
    else:
        sinhc = np.sinh(f) / f
        cosh = np.cosh(f)
    D = cosh - w * sinhc
    if abs(D) < tol:
        raise DomainError("singular disentangling denominator f coth f - w")
    return DisentangledQuadratic(u, v, w, l=v * sinhc / D, chi=-np.log(D), m=u * sinhc / D, f=f)


def pq_quadratic_to_ladder(eta, zeta, xi, m=1.0, omega=1.0, hbar=1.0):
    """Rewrite eta P^2 + zeta Q^2 + xi QP as u a^2 + v a^dag^2 + w a^dag a + c0."""
    q2 = hbar / (2 * m * omega)
    p2 = m * hbar * omega / 2
    u = zeta * q2 - eta * p2 - 0.5j * xi * hbar
    v = zeta * q2 - eta * p2 + 0.5j * xi * hbar
    w = 2 * (zeta * q2 + eta * p2)
    c0 = zeta * q2 + eta * p2 + 0.5j * xi * hbar
    return u, v, w, c0


def linear_exp_on_coherent(nu, mu, alpha, m=1.0, omega=1.0, hbar=1.0):
    """exp(nu P + mu Q)|alpha> = factor |alpha + phi>.

    Writing nu P + mu Q = theta a + phi a^dag, the result is
    factor = exp(theta alpha + theta phi / 2 + |phi|^2 / 2 + Re(alpha* phi)).
    For real nu and mu, theta = phi*.  Returns (alpha + phi, factor).
    """
    sq = np.sqrt(hbar / (2 * m * omega))
    sp = np.sqrt(m * hbar * omega / 2)
    theta = mu * sq - 1j * nu * sp
    phi = mu * sq + 1j * nu * sp
    alpha = complex(alpha)
    factor = np.exp(theta * alpha + theta * phi / 2 + abs(phi) ** 2 / 2 + np.real(np.conj(alpha) * phi))
    return alpha + phi, complex(factor)


def coherent_wavefunction(alpha, x, s):
    """<x|alpha> with s^2 = m omega / (2 hbar)."""
    x = np.asarray(x, dtype=float)
    alpha = complex(alpha)
    return ((2 * s * s / np.pi) ** 0.25
            * np.exp(-s * s * x * x + 2 * s * x * alpha - 0.5 * (abs(alpha) ** 2 + alpha ** 2)))


def quadratic_exp_wavefunction(dq, alpha, x, s):
    """<x| exp(u a^2 + v a^dag^2 + w a^dag a) |alpha> via the disentangled form.

    e^{m a^2} and e^{chi a^dag a} act on |alpha> exactly; the remaining
    e^{l a^dag^2} is a Gaussian integral in the position representation.
    With l = chi = m = 0 and w = 0 this is <x|alpha>.
    """
    x = np.asarray(x, dtype=float)
    alpha = complex(alpha)
    beta = alpha * np.exp(dq.chi)
    l = dq.l
    if abs(1 + 2 * l) < 1e-14:
        raise DomainError("1 + 2l vanishes")
    pref = dq.prefactor * np.exp(dq.m * alpha ** 2 - 0.5 * abs(alpha) ** 2) / np.sqrt(1 + 2 * l)
    g = 2 * s * x - beta
    return (pref * (2 * s * s / np.pi) ** 0.25
            * np.exp(-s * s * x * x + 2 * s * beta * x - beta ** 2 / 2 + l * g * g / (1 + 2 * l)))


def fock_wavefunctions(dim, x, s):
    """Position wavefunctions <x|n>, n < dim, by the stable Hermite recursion."""
    x = np.asarray(x, dtype=float)
    y = np.sqrt(2) * s * x
    out = np.zeros((dim,) + x.shape)
    out[0] = (2 * s * s / np.pi) ** 0.25 * np.exp(-y * y / 2)
    if dim > 1:
        out[1] = np.sqrt(2) * y * out[0]
    for n in range(2, dim):
        out[n] = np.sqrt(2 / n) * y * out[n - 1] - np.sqrt((n - 1) / n) * out[n - 2]
    return out


# ----------------------------------------------------------------------------
# counting-process evolution operators


def poisson_damped_evolution(omega, gamma, t, N, dim):
    """e^{[-(i omega + gamma/2) a^dag a + gamma/2] t} a^N on a truncated space."""
    if N < 0:
        raise ConfigurationError("N must be nonnegative")
    n = np.arange(dim)
    a = annihilation(dim).matrix
    decay = np.diag(np.exp((-(1j * omega + gamma / 2) * n + gamma / 2) * t))
    return decay @ np.linalg.matrix_power(a, int(N))


def poisson_damped_full(omega, gamma, t, N, Y, dim):
    """Evolution operator including the jump-time factor e^{-(i omega + gamma/2) Y}."""
    return np.exp(-(1j * omega + gamma / 2) * Y) * poisson_damped_evolution(omega, gamma, t, N, dim)


def jump_time_marginal_factor(gamma, t):
    """E[e^{-gamma t'}] for t' uniform on [0, t]: (1 - e^{-gamma t}) / (gamma t)."""
    if gamma * t == 0:
        return 1.0
    return -np.expm1(-gamma * t) / (gamma * t)


def poisson_count_probability(psi0, omega, gamma, t, N):
    """P(N, t) for an arbitrary initial state via the Y-free operator.

    ||e^{At} a^N psi0||^2 times the ostensible Poisson(gamma t) weight times
    the marginal factor of the jump times.
    """
    psi0 = np.asarray(as_array(psi0), dtype=complex)
    dim = psi0.size
    out = poisson_damped_evolution(omega, gamma, t, N, dim) @ psi0
    lt = gamma * t
    log_ost = -lt + N * np.log(lt) - gammaln(N + 1) if lt > 0 else (0.0 if N == 0 else -np.inf)
    return float(np.vdot(out, out).real * np.exp(log_ost) * jump_time_marginal_factor(gamma, t) ** N)


def cat_count_probability(alpha, gamma, t, N):
    """Sum-of-two-Poissonians count distribution for an initial even cat.

    P(N) = [e^{-x} + (-1)^N e^{-|alpha|^2 (1 + e^{-gamma t})}] x^N / N! / (1 + e^{-2|alpha|^2})
    with x = |alpha|^2 (1 - e^{-gamma t}).
    """
    a2 = abs(alpha) ** 2
    e = np.exp(-gamma * t)
    x = a2 * (1 - e)
    N = np.asarray(N)
    if x > 0:
        power = np.exp(N * np.log(x) - gammaln(N + 1))
    else:
        power = (N == 0).astype(float)
    return (np.exp(-x) + (-1.0) ** N * np.exp(-a2 * (1 + e))) * power / (1 + np.exp(-2 * a2))


def cat_trajectory_state(alpha, omega, gamma, t, N, dim, parity="even"):
    """Normalised cat after N detections: (|b> + (-1)^N s |-b>) / norm.

    b = alpha e^{-(i omega + gamma/2) t}; s = +1 for an even initial cat and
    -1 for an odd one.
    """
    b = alpha * np.exp(-(1j * omega + gamma / 2) * t)
    sign = (-1) ** int(N) * (1 if parity == "even" else -1)
    psi = coherent_state(b, dim).amps + sign * coherent_state(-b, dim).amps
    norm_exact = np.sqrt(2 * (1 + sign * np.exp(-2 * abs(b) ** 2)))
    return psi / norm_exact


def driven_steady_amplitude(E, gamma, omega=0.0):
    """Steady coherent amplitude 2E / (gamma + 2 i omega)."""
    return 2 * E / (gamma + 2j * omega)


def driven_cavity_evolution(alpha0, E, gamma, t, omega=0.0):
    """Coherent amplitude (alpha0 - alpha_s) e^{-(i omega + gamma/2) t} + alpha_s."""
    a_s = driven_steady_amplitude(E, gamma, omega)
    return (alpha0 - a_s) * np.exp(-(1j * omega + gamma / 2) * np.asarray(t)) + a_s


def driven_cavity_operator(E, gamma, t, jump_times, dim, omega=0.0):
    """e^{At} prod_k ((a - alpha_s) e^{-(i omega + gamma/2) t_k} + alpha_s).

    A = -(i omega + gamma/2) a^dag a + (E a^dag - E* a) + gamma/2; later
    jumps act to the left of earlier ones.
    """
    a = annihilation(dim).matrix
    eye = np.eye(dim)
    a_s = driven_steady_amplitude(E, gamma, omega)
    A = (-(1j * omega + gamma / 2) * a.T @ a + (E * a.T - np.conj(E) * a) + gamma / 2 * eye)
    op = eye.astype(complex)
    for tk in sorted(jump_times):
        op = ((a - a_s * eye) * np.exp(-(1j * omega + gamma / 2) * tk) + a_s * eye) @ op
    return matrix_exp(A, t) @ op


def kerr_cat_evolution(alpha, omega, gamma, chi, t, N, Y, dim, tol=1e-9):
    """Two-component state reached at chi t = pi under H = omega n + (chi/2) a^dag^2 a^2.

    Returns ((1 - i)|i b> + (1 + i)|-i b>) / 2 with
    b = alpha e^{-(i omega + gamma/2) t - i chi Y}; the combination is
    normalised exactly, for any N.
    """
    if abs(chi * t - np.pi) > tol:
        raise ConfigurationError("only the chi t = pi two-component branch is supported")
    del N  # the normalised state does not depend on the count
    b = alpha * np.exp(-(1j * omega + gamma / 2) * t - 1j * chi * Y)
    psi = (1 - 1j) / 2 * coherent_state(1j * b, dim).amps + (1 + 1j) / 2 * coherent_state(-1j * b, dim).amps
    return psi


def kerr_hamiltonian(omega, chi, dim):
    a = annihilation(dim).matrix
    return omega * a.T @ a + 0.5 * chi * a.T @ a.T @ a @ a
