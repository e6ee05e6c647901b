"""Truncated Fock spaces: states, operators and the dense linear algebra on them.

States are allowed to be unnormalised; the squared norm is the probability
weight carried by linear trajectories.  Everything here is dense and
complex, which is enough for dimensions up to a few hundred.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln
from scipy.stats import poisson

from .errors import ConfigurationError, NumericalGuardError, TruncationError

MAX_DENSE_DIM = 512
LEAKAGE_TOL = 1e-6
ATOM_LABELS = ("g", "e")


def _labels_for(dims, names):
    per_axis = []
    for d, name in zip(dims, names):
        if name.startswith("atom"):
            per_axis.append(ATOM_LABELS[:d])
        else:
            per_axis.append([str(n) for n in range(d)])
    return [",".join(combo) for combo in product(*per_axis)]


@dataclass(frozen=True)
class StateVector:
    """Complex amplitudes on a (possibly product) basis."""

    amps: np.ndarray
    dims: tuple = None
    names: tuple = None

    def __post_init__(self):
        amps = np.array(self.amps, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(amps)):
            raise NumericalGuardError("non-finite amplitude")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)
        dims = self.dims or (amps.size,)
        if int(np.prod(dims)) != amps.size:
            raise ConfigurationError("dims do not match amplitude count")
        object.__setattr__(self, "dims", tuple(int(d) for d in dims))
        names = self.names or (("cavity",) + tuple(f"atom{i}" for i in range(1, len(dims))))
        object.__setattr__(self, "names", tuple(names))

    def __array__(self, dtype=None, copy=None):
        return self.amps if dtype is None else self.amps.astype(dtype)

    @property
    def dim(self):
        return self.amps.size

    @property
    def norm(self):
        return float(np.linalg.norm(self.amps))

    @property
    def labels(self):
        return _labels_for(self.dims, self.names)

    def normalized(self):
        return StateVector(self.amps / self.norm, self.dims, self.names)

    def to_json(self):
        return {
            "labels": self.labels,
            "dim": self.dim,
            "amps": [[float(z.real), float(z.imag)] for z in self.amps],
            "norm": self.norm,
        }


@dataclass(frozen=True)
class DensityMatrix:
    """Complex dim x dim matrix; trace kept explicitly, may be unnormalised."""

    matrix: np.ndarray
    dims: tuple = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigurationError("density matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dims", tuple(self.dims or (m.shape[0],)))

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)


@dataclass(frozen=True)
class MatrixOperator:
    """Dense operator with a role tag (H, c, a, Q, P, N, ...)."""

    matrix: np.ndarray
    label: str = ""
    dims: tuple = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if not np.all(np.isfinite(m)):
            raise NumericalGuardError("non-finite operator entry")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dims", tuple(self.dims or (m.shape[0],)))

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def dag(self):
        return MatrixOperator(self.matrix.conj().T, self.label + "^dag", self.dims)


def as_array(x):
    """Plain ndarray view of a state, density matrix or operator."""
    if isinstance(x, StateVector):
        return x.amps
    if isinstance(x, (DensityMatrix, MatrixOperator)):
        return x.matrix
    return np.asarray(x)


def _check_dim(dim):
    if int(dim) < 2:
        raise ConfigurationError("dim must be at least 2")
    return int(dim)


def annihilation(dim):
    dim = _check_dim(dim)
    return MatrixOperator(np.diag(np.sqrt(np.arange(1, dim)), 1), "a")


def creation(dim):
    return MatrixOperator(annihilation(dim).matrix.T, "a^dag")


def number(dim):
    dim = _check_dim(dim)
    return MatrixOperator(np.diag(np.arange(dim, dtype=float)), "N")


def identity(dim):
    return MatrixOperator(np.eye(int(dim)), "I")


def sigma_minus():
    """Atomic lowering operator in the (g, e) basis."""
    return MatrixOperator(np.array([[0, 1], [0, 0]]), "sigma-")


def fock_state(n, dim):
    dim = _check_dim(dim)
    if not 0 <= n < dim:
        raise ConfigurationError("Fock index outside the truncated space")
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return StateVector(amps)


def _coherent_amps(alpha, dim):
    alpha = complex(alpha)
    n = np.arange(dim)
    if alpha == 0:
        amps = np.zeros(dim, dtype=complex)
        amps[0] = 1.0
        return amps
    log_amp = -0.5 * abs(alpha) ** 2 + n * np.log(alpha) - 0.5 * gammaln(n + 1)
    return np.exp(log_amp)


def truncation_tail(alpha, dim):
    """Poisson weight of |alpha> beyond the truncation."""
    return float(poisson.sf(dim - 1, abs(complex(alpha)) ** 2))


def coherent_state(alpha, dim, tol=1e-10):
    """Truncated coherent state; refuses truncations that drop more than ``tol``."""
    dim = _check_dim(dim)
    tail = truncation_tail(alpha, dim)
    if tail > tol:
        raise TruncationError(f"coherent amplitude {alpha} loses {tail:.2e} beyond dim {dim}")
    return StateVector(_coherent_amps(alpha, dim))


def cat_state(alpha, parity, dim, tol=1e-10):
    """Normalised (|alpha> +/- |-alpha>) superposition; parity is 'even' or 'odd'."""
    dim = _check_dim(dim)
    if parity not in ("even", "odd"):
        raise ConfigurationError("parity must be 'even' or 'odd'")
    tail = truncation_tail(alpha, dim)
    if tail > tol:
        raise TruncationError(f"cat amplitude {alpha} loses {tail:.2e} beyond dim {dim}")
    amps = _coherent_amps(alpha, dim)
    sign = 1 if parity == "even" else -1
    keep = (1 + sign * (-1.0) ** np.arange(dim)) / 2
    amps = amps * keep
    return StateVector(amps / np.linalg.norm(amps))


def thermal_state(nbar, dim):
    """Thermal density matrix, renormalised on the truncated space."""
    dim = _check_dim(dim)
    n = np.arange(dim)
    if nbar == 0:
        p = (n == 0).astype(float)
    else:
        p = (nbar / (1 + nbar)) ** n
    p = p / p.sum()
    return DensityMatrix(np.diag(p))


def quadratures(dim, m=1.0, omega=1.0, hbar=1.0):
    """Position and momentum of an oscillator of mass m and frequency omega."""
    if m <= 0 or omega <= 0 or hbar <= 0:
        raise ConfigurationError("m, omega and hbar must be positive")
    a = annihilation(dim).matrix
    ad = a.T
    q = np.sqrt(hbar / (2 * m * omega)) * (a + ad)
    p = 1j * np.sqrt(m * hbar * omega / 2) * (ad - a)
    return MatrixOperator(q, "Q"), MatrixOperator(p, "P")


def expectation(op, state):
    """<O> for a ket (normalised on the fly) or a density matrix."""
    o = as_array(op)
    s = as_array(state)
    if s.ndim == 1:
        if o.shape[1] != s.size:
            raise ConfigurationError("dimension mismatch")
        return complex(np.vdot(s, o @ s) / np.vdot(s, s).real)
    if o.shape[1] != s.shape[0]:
        raise ConfigurationError("dimension mismatch")
    return complex(np.trace(o @ s) / np.trace(s).real)


def variance(op, state):
    """||O psi||^2 / ||psi||^2 - |<O>|^2, which is Var(O) for Hermitian O."""
    o = as_array(op)
    s = as_array(state)
    if o.shape[1] != s.size:
        raise ConfigurationError("dimension mismatch")
    nrm = np.vdot(s, s).real
    os_ = o @ s
    return float(np.vdot(os_, os_).real / nrm - abs(np.vdot(s, os_) / nrm) ** 2)


def fidelity(psi, phi):
    """|<psi|phi>|^2 / (||psi||^2 ||phi||^2), clipped to [0, 1]."""
    a = as_array(psi)
    b = as_array(phi)
    if a.shape != b.shape:
        raise ConfigurationError("dimension mismatch")
    f = abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)
    return float(min(max(f, 0.0), 1.0))


def normalize(state):
    """Return (normalised state, prior norm).  The squared norm is the weight."""
    if isinstance(state, StateVector):
        n = state.norm
        return state.normalized(), n
    s = np.asarray(state, dtype=complex)
    n = float(np.linalg.norm(s))
    return s / n, n


def ket2dm(state):
    s = as_array(state)
    return np.outer(s, s.conj())


def tensor(*ops):
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, as_array(op))
    return out


def partial_trace(rho, dims, keep):
    """Trace out every axis not listed in ``keep``."""
    rho = as_array(rho)
    dims = tuple(dims)
    n = len(dims)
    keep = sorted(keep)
    r = rho.reshape(dims + dims)
    drop = [i for i in range(n) if i not in keep]
    for count, ax in enumerate(sorted(drop, reverse=True)):
        cur = n - count
        r = np.trace(r, axis1=ax, axis2=ax + cur)
    kd = int(np.prod([dims[i] for i in keep]))
    return r.reshape(kd, kd)


def matrix_exp(op, scale=1.0, growth_guard=200.0):
    """exp(scale * M) by scaling and squaring.

    The guard rejects generators whose Hermitian part would grow the result
    by more than e^growth_guard; rotations of any size are accepted.
    """
    m = as_array(op) * scale
    if m.shape[0] > MAX_DENSE_DIM:
        raise ConfigurationError(f"dense exponential limited to dim {MAX_DENSE_DIM}")
    herm = (m + m.conj().T) / 2
    growth = np.linalg.eigvalsh(herm)[-1]
    if growth > growth_guard:
        raise NumericalGuardError(f"exponent growth {growth:.3g} exceeds guard {growth_guard}")
    return expm(m)


def leakage(state, n_top=2, axis=0, dims=None):
    """Population fraction in the top ``n_top`` levels of one tensor axis."""
    s = as_array(state)
    if isinstance(state, StateVector):
        dims = state.dims
    dims = tuple(dims or (s.shape[-1],))
    if s.ndim == 2 and s.shape[0] == s.shape[1] and s.shape[0] == int(np.prod(dims)):
        pops = np.real(np.diag(s))
    else:
        pops = np.abs(s) ** 2
    pops = pops.reshape(pops.shape[:-1] + dims)
    moved = np.moveaxis(pops, axis + pops.ndim - len(dims), -1)
    top = moved[..., -n_top:].sum(axis=-1)
    total = moved.sum(axis=-1)
    other = tuple(range(top.ndim - (len(dims) - 1), top.ndim))
    top = top.sum(axis=other) if other else top
    total = total.sum(axis=other) if other else total
    return top / total


def check_leakage(state, tol=LEAKAGE_TOL, **kwargs):
    leak = np.max(leakage(state, **kwargs))
    if leak > tol:
        raise TruncationError(f"top-level population {leak:.2e} exceeds {tol:.1e}")
    return float(leak)
