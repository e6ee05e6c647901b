"""Noise spectrum of a cavity with a moving mirror under phase readout.

Everything is in SI units.  The spectrum is available in two independent
forms: the closed-form term decomposition (:func:`spectrum`) and a direct
propagation of every input noise source through the linearised transfer
matrix (:func:`spectrum_from_transfer`).
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from .errors import ConfigurationError, DomainError
from .io import csv_text, write_csv

HBAR = constants.hbar
K_B = constants.k
C_LIGHT = constants.c

MODELS = ("CBMME", "SBMME")
DETECTIONS = ("phase_mod", "homodyne")

# values printed alongside the reference parameter set, kept for comparison
PRINTED_VALUES = {
    "Q": 2e6,
    "Gamma": 5e-2,
    "chi": 1.49e-17,
    "alpha2": 2.13e9,
    "T_s": 4.37e6,
}


def _as_spectrum_fn(g):
    if callable(g):
        return g
    value = float(g)
    if value < 0:
        raise ConfigurationError("noise spectra must be nonnegative")
    return lambda w: np.full(np.shape(w), value)


@dataclass(frozen=True)
class OptomechParams:
    """Cavity, mirror and laser parameters; derived quantities are properties."""

    omega0: float
    L: float
    m: float
    nu: float
    Gamma: float
    gamma: float
    mu: float
    epsilon: float
    E: float
    T: float
    G_x: object = 0.0
    G_y: object = 0.0
    force: float = None
    hbar: float = HBAR
    k_B: float = K_B
    c: float = C_LIGHT

    def __post_init__(self):
        for name in ("omega0", "L", "m", "nu", "Gamma", "gamma", "mu", "E", "T"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.L == 0 or self.m == 0 or self.nu == 0:
            raise ConfigurationError("L, m and nu must be positive")

    @property
    def kappa(self):
        """Half the total cavity loss rate, (gamma + mu) / 2."""
        return 0.5 * (self.gamma + self.mu)

    @property
    def beta(self):
        return self.E / np.sqrt(self.gamma)

    @property
    def alpha(self):
        if self.gamma + self.mu <= 0:
            raise DomainError("gamma + mu must be positive")
        return 2 * self.E / (self.gamma + self.mu)

    @property
    def g(self):
        return self.omega0 / self.L

    @property
    def chi(self):
        return self.g * np.sqrt(2 * self.hbar / (self.m * self.nu))

    @property
    def T_s(self):
        return self.k_B * self.T / (self.hbar * self.nu)

    @property
    def Q_m(self):
        return self.nu / (2 * self.Gamma)

    @property
    def P_laser(self):
        return self.hbar * self.omega0 * self.beta ** 2

    @property
    def finesse(self):
        return np.pi * self.c / (2 * self.L * self.gamma)

    def with_power(self, P):
        """Same set driven by laser power P (W)."""
        if P < 0:
            raise ConfigurationError("power must be nonnegative")
        return replace(self, E=np.sqrt(P * self.gamma / (self.hbar * self.omega0)))

    def with_alpha2(self, alpha2):
        """Same set with intracavity amplitude squared alpha^2."""
        return replace(self, E=np.sqrt(alpha2) * self.kappa)

    def gx(self, w):
        return _as_spectrum_fn(self.G_x)(w)

    def gy(self, w):
        return _as_spectrum_fn(self.G_y)(w)


def paper_parameter_set():
    """Nd:YAG cavity, 10 mg mirror at 20 kHz, Q = 2e6, 4.2 K.

    Gamma follows from Q = nu / (2 Gamma); the drive is set by alpha^2.
    """
    nu = 2 * np.pi * 2e4
    p = OptomechParams(
        omega0=2 * np.pi * 2.82e15, L=1e-2, m=1e-5, nu=nu, Gamma=nu / (2 * PRINTED_VALUES["Q"]),
        gamma=1e6, mu=0.0, epsilon=0.2, E=0.0, T=4.2)
    return p.with_alpha2(PRINTED_VALUES["alpha2"])


def steady_state(p):
    """(alpha, q_ss, p_ss) for the resonant steady state."""
    alpha = p.alpha
    return alpha, p.hbar * p.g * alpha ** 2 / (p.m * p.nu ** 2), 0.0


# ----------------------------------------------------------------------------
# linear response


def drift_matrix(p):
    """Drift of (dX, dY, dQ, dP) for the linearised Langevin equations."""
    k = p.kappa
    ca = p.chi * p.alpha
    return np.array([
        [-k, 0, 0, 0],
        [0, -k, ca, 0],
        [0, 0, 0, p.nu],
        [ca, 0, -p.nu, -p.Gamma],
    ], dtype=float)


def transfer_denominator(p, w):
    """D(w) = ((gamma+mu)/2 - i w)^2 (nu^2 - w^2 - i Gamma w)."""
    w = np.asarray(w, dtype=float)
    return (p.kappa - 1j * w) ** 2 * (p.nu ** 2 - w ** 2 - 1j * p.Gamma * w)


def transfer_matrix(p, w):
    """M(w) with (dX, dY, dQ, dP)(w) = M(w) n(w), from the closed-form m_ij.

    Returns shape (..., 4, 4) for an array of frequencies.
    """
    w = np.asarray(w, dtype=float)
    D = transfer_denominator(p, w)
    if np.any(D == 0):
        raise DomainError("transfer matrix is singular at this frequency")
    k = p.kappa - 1j * w
    mech = p.nu ** 2 - w ** 2 - 1j * p.Gamma * w
    ca = p.chi * p.alpha
    m = np.zeros(w.shape + (4, 4), dtype=complex)
    m[..., 0, 0] = k * mech
    m[..., 1, 1] = k * mech
    m[..., 1, 0] = ca ** 2 * p.nu
    m[..., 1, 2] = ca * (p.Gamma - 1j * w) * k
    m[..., 1, 3] = ca * p.nu * k
    m[..., 2, 0] = ca * p.nu * k
    m[..., 2, 2] = (p.Gamma - 1j * w) * k ** 2
    m[..., 2, 3] = p.nu * k ** 2
    m[..., 3, 2] = -p.nu * k ** 2
    m[..., 3, 0] = -1j * ca * w * k
    m[..., 3, 3] = -1j * w * k ** 2
    return m / D[..., None, None]


# ----------------------------------------------------------------------------
# detection model


@dataclass(frozen=True)
class SignalWeights:
    """White-noise weights of the demodulated signal.

    R = eps beta dY_out + q1 + q2 - 2 eps sqrt(gamma) alpha dy with
    dY_out = sqrt(gamma) dY - dY_in.
    """

    q1: float
    q2: float
    y_out: float
    phase_noise: float


def demodulated_signal_model(p):
    return SignalWeights(
        q1=0.5 * (p.beta - np.sqrt(p.gamma) * p.alpha) ** 2,
        q2=0.5 * (p.epsilon * p.beta) ** 2,
        y_out=p.epsilon * p.beta,
        phase_noise=-2 * p.epsilon * np.sqrt(p.gamma) * p.alpha,
    )


def shot_floor(p, detection="phase_mod"):
    """Frequency-independent shot-noise level of S / (eps beta)^2."""
    if detection == "homodyne":
        return 1.0
    if detection != "phase_mod":
        raise ConfigurationError(f"unknown detection {detection!r}")
    r = (p.gamma - p.mu) / (p.epsilon * (p.gamma + p.mu))
    return 0.5 * (3 + r * r)


# ----------------------------------------------------------------------------
# spectrum


@dataclass
class SpectrumResult:
    """Spectrum terms normalised by the signal scale squared (units: s)."""

    omega: np.ndarray
    terms: dict
    model: str
    detection: str
    warnings: list = field(default_factory=list)

    @property
    def total(self):
        return sum(self.terms.values())

    def __getattr__(self, name):
        terms = self.__dict__.get("terms", {})
        if name in terms:
            return terms[name]
        raise AttributeError(name)

    def rows(self):
        names = list(self.terms)
        total = self.total
        for i, w in enumerate(self.omega):
            yield [w] + [self.terms[n][i] for n in names] + [total[i]]

    def header(self):
        return ["omega"] + list(self.terms) + ["total"]

    def to_csv(self, path=None):
        units = {name: "s" for name in self.header()}
        units["omega"] = "rad/s"
        if path is None:
            return csv_text(self.header(), self.rows(), units)
        return write_csv(path, self.header(), self.rows(), units)


def _check_choices(model, detection):
    if model not in MODELS:
        raise ConfigurationError(f"unknown model {model!r}")
    if detection not in DETECTIONS:
        raise ConfigurationError(f"unknown detection {detection!r}")


def spectrum(p, omega, model="CBMME", detection="phase_mod"):
    """Closed-form term decomposition of the readout noise spectrum."""
    _check_choices(model, detection)
    w = np.asarray(omega, dtype=float)
    k2w = p.kappa ** 2 + w ** 2
    D2 = np.abs(transfer_denominator(p, w)) ** 2
    ca2 = (p.chi * p.alpha) ** 2
    resp = (ca2 * p.nu) ** 2 / D2
    gx, gy = p.gx(w), p.gy(w)
    terms = {
        "shot": np.full(w.shape, shot_floor(p, detection)),
        "backaction": p.gamma * p.gamma * resp,
        "internal_loss": p.gamma * p.mu * resp,
        "amp_noise": 4 * p.gamma ** 2 * gx * resp,
    }
    if detection == "phase_mod":
        terms["phase_noise"] = 4 * gy * 4 * p.gamma ** 2 / (p.gamma + p.mu) ** 2 * w ** 2 / k2w
    else:
        terms["phase_noise"] = 4 * gy * (((p.gamma - p.mu) / 2) ** 2 + w ** 2) / k2w
    thermal_pref = p.gamma * ca2 * p.Gamma * k2w / D2
    terms["thermal"] = thermal_pref * 4 * p.nu ** 2 * p.T_s
    if model == "CBMME":
        terms["diosi_1overT"] = thermal_pref * (p.Gamma ** 2 + w ** 2) / (3 * p.T_s)
    else:
        terms["sbmme_spurious"] = sbmme_spurious_term(p, w)
    warnings = []
    if p.T_s < 10:
        warnings.append(f"T_s = {p.T_s:.3g}: thermal terms assume k_B T >> hbar nu")
    return SpectrumResult(w, terms, model, detection, warnings)


def sbmme_spurious_term(p, omega):
    """Odd-in-omega term produced by the standard Brownian master equation."""
    w = np.asarray(omega, dtype=float)
    D2 = np.abs(transfer_denominator(p, w)) ** 2
    return (2 * w * p.gamma * p.Gamma * p.chi ** 2 * p.alpha ** 2 * p.nu
            * (p.kappa ** 2 + w ** 2) / D2)


SOURCES = ("X_in", "Y_in", "X_b", "Y_b", "x", "y", "eta", "xi", "q1", "q2")


def source_correlations(p, omega, model="CBMME"):
    """Coefficient matrix C with <s_k(w) s_l(w')> = C_kl(w) delta(w + w')."""
    w = np.asarray(omega, dtype=float)
    C = np.zeros(w.shape + (10, 10), dtype=complex)
    for a, b in ((0, 1), (2, 3)):
        C[..., a, a] = 1
        C[..., b, b] = 1
        C[..., a, b] = 1j
        C[..., b, a] = -1j
    C[..., 4, 4] = p.gx(w)
    C[..., 5, 5] = p.gy(w)
    C[..., 7, 7] = 1
    if model == "CBMME":
        C[..., 6, 6] = 1
        C[..., 6, 7] = 1j * np.sqrt(3) / 2
        C[..., 7, 6] = -1j * np.sqrt(3) / 2
    weights = demodulated_signal_model(p)
    C[..., 8, 8] = weights.q1
    C[..., 9, 9] = weights.q2
    return C


def _input_map(p):
    """4 x 10 map from noise sources to the Langevin forcing vector."""
    B = np.zeros((4, 10))
    sg, sm = np.sqrt(p.gamma), np.sqrt(p.mu)
    B[0, 0], B[0, 2], B[0, 4] = sg, sm, 2 * sg
    B[1, 1], B[1, 3], B[1, 5] = sg, sm, 2 * sg
    B[2, 6] = np.sqrt(p.Gamma / (3 * p.T_s))
    B[3, 7] = np.sqrt(4 * p.Gamma * p.T_s)
    return B


def signal_coefficients(p, omega, detection="phase_mod", transfer=None):
    """c_k(w): signal response to each source, normalised by the signal scale."""
    w = np.asarray(omega, dtype=float)
    M = transfer_matrix(p, w) if transfer is None else transfer(p, w)
    B = _input_map(p)
    c = np.sqrt(p.gamma) * np.einsum("...j,jk->...k", M[..., 1, :], B)
    c[..., 1] -= 1
    if detection == "phase_mod":
        weights = demodulated_signal_model(p)
        c[..., 5] += weights.phase_noise / weights.y_out
        # q1, q2 enter with unit weight; their variances sit in C
        c[..., 8] = 1 / weights.y_out
        c[..., 9] = 1 / weights.y_out
    else:
        c[..., 5] -= 2
    return c


def spectrum_contributions(p, omega, model="CBMME", detection="phase_mod", transfer=None):
    """Per-source and per-correlated-pair pieces of the transfer-matrix spectrum.

    The signal transform is R(w) = (2 pi)^{-1/2} int R(t) e^{-iwt} dt while
    system operators use e^{+iwt}, so R(w) collects the operator response at
    -w and <R(w) R(w')> = S(w) delta(w + w') gives
    S(w) = sum_kl c_k(-w) c_l(w) C_kl.  Keys are source names for the
    diagonal pieces and "a*b" for the cross pieces; the cross pieces are
    odd in w.
    """
    _check_choices(model, detection)
    w = np.asarray(omega, dtype=float)
    c_left = signal_coefficients(p, -w, detection, transfer)
    c_right = signal_coefficients(p, w, detection, transfer)
    C = source_correlations(p, w, model)
    out = {}
    for k, name in enumerate(SOURCES):
        out[name] = (c_left[..., k] * c_right[..., k] * C[..., k, k]).real
    for k, l in ((0, 1), (2, 3), (6, 7)):
        pair = (c_left[..., k] * c_right[..., l] * C[..., k, l]
                + c_left[..., l] * c_right[..., k] * C[..., l, k])
        out[f"{SOURCES[k]}*{SOURCES[l]}"] = pair.real
    return out


def spectrum_from_transfer(p, omega, model="CBMME", detection="phase_mod", transfer=None):
    """Total spectrum from :func:`spectrum_contributions`, normalised like :func:`spectrum`.

    ``transfer`` may replace the closed-form transfer matrix, for instance
    with :func:`transfer_by_inversion`.
    """
    return sum(spectrum_contributions(p, omega, model, detection, transfer).values())


def odd_part_from_transfer(p, omega, model="CBMME", detection="phase_mod"):
    """Antisymmetric part of the spectrum, summed from the correlated pairs only."""
    parts = spectrum_contributions(p, omega, model, detection)
    return sum(v for k, v in parts.items() if "*" in k)


def transfer_by_inversion(p, w):
    """(-i w I - A)^{-1} by direct numerical inversion."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    A = drift_matrix(p)
    out = np.linalg.inv(-1j * w[:, None, None] * np.eye(4) - A)
    return out


def symmetric_part(fn, p, omega, **kw):
    w = np.asarray(omega, dtype=float)
    return 0.5 * (fn(p, w, **kw) + fn(p, -w, **kw))


def antisymmetric_part(fn, p, omega, **kw):
    w = np.asarray(omega, dtype=float)
    return 0.5 * (fn(p, w, **kw) - fn(p, -w, **kw))


# ----------------------------------------------------------------------------
# position error budget


def position_scaling(p, omega):
    """Factor converting a normalised signal spectrum into S_x (m^2 s)."""
    ca2 = (p.chi * p.alpha) ** 2
    if ca2 == 0 or p.gamma == 0:
        raise DomainError("no position signal without coupling and drive")
    w = np.asarray(omega, dtype=float)
    return p.hbar / (2 * p.m * p.gamma * p.nu * ca2) * (p.kappa ** 2 + w ** 2)


def error_budget_closed(p, tau_m):
    """Closed-form shot, back-action and thermal position variances (m^2)."""
    if tau_m <= 0:
        raise ConfigurationError("tau_m must be positive")
    F, P, Q = p.finesse, p.P_laser, p.Q_m
    sn = (np.pi ** 2 / 64) * (1.5 + 0.5 / p.epsilon ** 2) * (p.hbar * p.c ** 2 / p.omega0) / (F ** 2 * P * tau_m)
    ba0 = (4 / np.pi ** 2) * (p.hbar * p.omega0 / p.c ** 2) / (p.m ** 2 * p.nu ** 4) * F ** 2 * P / tau_m
    kT = p.k_B * p.T
    th0_classical = kT / (p.m * p.nu ** 3 * Q * tau_m)
    th0_quantum = p.hbar ** 2 / (16 * p.m * p.nu * kT * Q ** 3 * tau_m)
    th0 = th0_classical + th0_quantum
    return {
        "Th_0_classical": th0_classical,
        "Th_0_quantum": th0_quantum,
        "SN": sn,
        "BA_0": ba0,
        "BA_nu": 4 * Q ** 2 * ba0,
        "Th_0": th0,
        "Th_nu": 4 * Q ** 2 * th0,
    }


def error_budget_from_spectrum(p, tau_m, omega=0.0, model="CBMME"):
    """Every spectrum term scaled to position and divided by tau_m."""
    res = spectrum(p, np.atleast_1d(float(omega)), model)
    scale = position_scaling(p, omega)
    return {name: float(val[0] * scale / tau_m) for name, val in res.terms.items()}


def measurement_error_budget(p, tau_m):
    """Closed forms plus the spectrum route at zero frequency and at nu."""
    closed = error_budget_closed(p, tau_m)
    closed["total_0"] = closed["SN"] + closed["BA_0"] + closed["Th_0"]
    closed["total_nu"] = closed["SN"] + closed["BA_nu"] + closed["Th_nu"]
    return {
        "closed": closed,
        "spectrum_0": error_budget_from_spectrum(p, tau_m, 0.0),
        "spectrum_nu": error_budget_from_spectrum(p, tau_m, p.nu),
    }


BUDGET_HEADER = ["P_laser", "dx_SN", "dx_BA_0", "dx_BA_nu", "dx_Th_0", "dx_Th_nu", "total_0", "total_nu"]


def error_budget_rows(p, powers, tau_m=1.0):
    """Standard deviations (m) per laser power, closed-form terms."""
    for P in powers:
        b = measurement_error_budget(p.with_power(P), tau_m)["closed"]
        yield [P] + [np.sqrt(b[k]) for k in ("SN", "BA_0", "BA_nu", "Th_0", "Th_nu", "total_0", "total_nu")]


def write_error_budget(path, p, powers, tau_m=1.0):
    units = {name: "m" for name in BUDGET_HEADER}
    units["P_laser"] = "W"
    return write_csv(path, BUDGET_HEADER, error_budget_rows(p, powers, tau_m), units)
