"""Command-line runner driven by INI-style scenario files.

A scenario is a set of ``[section]`` blocks holding ``key = value`` lines;
``#`` and ``;`` start comment lines.  Every kind has a fixed schema, unknown
sections or keys are rejected with their line and column, and
``serialize_scenario`` writes the canonical form (schema order, defaults
filled in).  Example::

    [scenario]
    kind = trajectory
    seed = 7

    [system]
    dim = 12
    gamma = 1.0
    E = 0.5

Exit codes: 0 ok, 2 scenario error, 3 numerical guard, 4 validation failure.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import evolution_ops as eo
from . import hilbert as hb
from . import optomech as om
from . import reconstruct as rc
from . import stochastic as sto
from . import trajectories as tr
from .errors import ConfigurationError, ContmeasError, NumericalGuardError, ScenarioError
from .io import dump_json, write_csv

log = logging.getLogger("contmeas.cli")

KINDS = ("trajectory", "closed_form", "spectrum", "error_budget", "reconstruct", "validate")
EXIT_OK, EXIT_SCENARIO, EXIT_GUARD, EXIT_VALIDATION = 0, 2, 3, 4


# ----------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, complex, str, complex_list
    default: object = None
    check: str = None  # nonneg, positive, at_least_1, at_least_2, or None
    choices: tuple = None


def _f(default=None, check=None):
    return Field("float", default, check)


def _i(default=None, check="at_least_1"):
    return Field("int", default, check)


def _s(default, choices):
    return Field("str", default, None, tuple(choices))


def _c(default=0j):
    return Field("complex", default)


OUTPUT = lambda **names: {k: Field("str", v) for k, v in names.items()}  # noqa: E731

COMMON = {"kind": _s(None, KINDS), "seed": _i(0, "nonneg"), "threads": _i(1)}

OPTOMECH_KEYS = {name: _f(None, "nonneg") for name in
                 ("omega0", "L", "m", "nu", "Gamma", "gamma", "mu", "epsilon", "T", "alpha2")}
OPTOMECH_KEYS = {"base": _s("paper", ("paper",)), **OPTOMECH_KEYS}

CLOSED_FORMS = {
    "momentum_variance": {"var_p0": _f(1.0, "positive"), "k": _f(1.0, "nonneg"),
                          "t_max": _f(1.0, "positive"), "n_points": _i(101, "at_least_2")},
    "position_variance": {"s2": _f(1.0, "positive"), "r": _f(1.0, "positive"),
                          "omega": _f(1.0, "positive"), "t_max": _f(5.0, "positive"),
                          "n_points": _i(101, "at_least_2")},
    "cat_counts": {"alpha": _c(2.0), "gamma": _f(1.0, "nonneg"), "t": _f(1.0, "nonneg"),
                   "n_max": _i(20, "nonneg")},
    "driven_cavity": {"alpha0": _c(0j), "E": _f(0.5), "gamma": _f(1.0, "nonneg"),
                      "omega": _f(0.0), "t_max": _f(5.0, "positive"), "n_points": _i(101, "at_least_2")},
}

SCHEMA = {
    "trajectory": {
        "system": {"dim": _i(12, "at_least_2"), "gamma": _f(1.0, "nonneg"), "E": _f(0.5),
                   "detuning": _f(0.0), "alpha0": _c(0j)},
        "run": {"scheme": _s("diffusive_nonlinear", tr.SCHEMES), "t": _f(2.0, "positive"),
                "dt": _f(1e-3, "positive"), "n_traj": _i(256), "stride": _i(100),
                "batch_size": _i(64)},
        "output": OUTPUT(csv="trajectory.csv"),
    },
    "closed_form": {
        "closed_form": {"quantity": _s("momentum_variance", CLOSED_FORMS)},
        **CLOSED_FORMS,
        "output": OUTPUT(csv="closed_form.csv"),
    },
    "spectrum": {
        "parameters": OPTOMECH_KEYS,
        "spectrum": {"model": _s("CBMME", om.MODELS), "detection": _s("phase_mod", om.DETECTIONS),
                     "omega_max_over_nu": _f(5.0, "positive"), "n_points": _i(201, "at_least_2")},
        "output": OUTPUT(csv="spectrum.csv"),
    },
    "error_budget": {
        "parameters": OPTOMECH_KEYS,
        "budget": {"P_min": _f(1e-6, "positive"), "P_max": _f(1e-1, "positive"),
                   "n_points": _i(41, "at_least_2"), "tau_m": _f(1.0, "positive")},
        "output": OUTPUT(csv="error_budget.csv"),
    },
    "reconstruct": {
        "state": {"family": _s("coherent", ("coherent", "cat", "fock", "amplitudes")),
                  "dim": _i(15, "at_least_2"), "alpha": _c(1.0), "parity": _s("even", ("even", "odd")),
                  "n": _i(0, "nonneg"), "amplitudes": Field("complex_list", None)},
        "probe": {"scheme": _s("one_atom", rc.SCHEMES), "kappa": _f(1.0, "positive"),
                  "kappa_t": _f(0.0, "nonneg"), "kappa_s": _f(0.0, "nonneg"),
                  "n_shots": _i(0, "nonneg")},
        "output": OUTPUT(csv="dataset.csv", json="report.json"),
    },
    "validate": {
        "validate": {"tolerance_scale": _f(1.0, "nonneg")},
        "output": OUTPUT(csv="validate.csv"),
    },
}


@dataclass
class Scenario:
    """Validated scenario: ``params[section][key]`` with every default filled in."""

    kind: str
    params: dict
    seed: int = 0
    threads: int = 1
    explicit: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def outputs(self):
        return dict(self.params["output"])


# ----------------------------------------------------------------------------
# parsing and canonical form


def _format(fld, value):
    if fld.kind == "float":
        return repr(float(value))
    if fld.kind == "int":
        return str(int(value))
    if fld.kind == "complex":
        return repr(complex(value)).strip("()")
    if fld.kind == "complex_list":
        return ", ".join(repr(complex(v)).strip("()") for v in value)
    return str(value)


def _convert(fld, key, text, line, col):
    try:
        if fld.kind == "float":
            value = float(text)
            if not np.isfinite(value):
                raise ValueError
        elif fld.kind == "int":
            value = int(text)
        elif fld.kind == "complex":
            value = complex(text.replace(" ", ""))
        elif fld.kind == "complex_list":
            value = tuple(complex(v.replace(" ", "")) for v in text.split(","))
        else:
            value = text
    except ValueError:
        raise ScenarioError(f"{key}: cannot read {text!r} as {fld.kind}", line, col, key) from None
    if fld.choices is not None and value not in fld.choices:
        raise ScenarioError(f"{key}: {value!r} is not one of {', '.join(fld.choices)}", line, col, key)
    bad = {"nonneg": lambda v: v < 0, "positive": lambda v: v <= 0,
           "at_least_1": lambda v: v < 1, "at_least_2": lambda v: v < 2}
    if fld.check and bad[fld.check](value):
        need = {"nonneg": ">= 0", "positive": "> 0", "at_least_1": ">= 1", "at_least_2": ">= 2"}[fld.check]
        raise ScenarioError(f"unit violation: {key} = {text} must be {need}", line, col, key)
    return value


def _tokenize(text):
    """Yield (section, key, value, line, key column, value column)."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped[0] in "#;":
            continue
        indent = len(raw) - len(raw.lstrip())
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                raise ScenarioError("malformed section header", lineno, indent + 1)
            section = stripped[1:-1].strip()
            yield section, None, None, lineno, indent + 2, None
            continue
        if "=" not in raw:
            raise ScenarioError("expected 'key = value'", lineno, indent + 1)
        if section is None:
            raise ScenarioError("key outside any section", lineno, indent + 1)
        key_part, value_part = raw.split("=", 1)
        key = key_part.strip()
        value = value_part.strip()
        if not key:
            raise ScenarioError("empty key", lineno, indent + 1)
        vcol = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        if not value:
            raise ScenarioError(f"{key}: missing value", lineno, vcol, key)
        yield section, key, value, lineno, indent + 1, vcol


def parse_scenario(text, kind=None):
    """Parse and validate scenario text.

    ``kind`` supplies the scenario kind when the text has none (it must agree
    if both are given).  Errors are ScenarioError with line and column.
    """
    raw, where = {}, {}
    for section, key, value, line, kcol, vcol in _tokenize(text):
        if key is None:
            if section in raw:
                raise ScenarioError(f"duplicate section [{section}]", line, kcol)
            raw[section], where[section] = {}, (line, kcol)
            continue
        if key in raw[section]:
            raise ScenarioError(f"duplicate key {key!r}", line, kcol, key)
        raw[section][key] = value
        where[(section, key)] = (line, kcol, vcol)

    common = raw.pop("scenario", {})
    for key in common:
        if key not in COMMON:
            raise ScenarioError(f"unknown key {key!r} in [scenario]", *where[("scenario", key)][:2], key)
    head = {}
    for key, fld in COMMON.items():
        if key in common:
            line, _, vcol = where[("scenario", key)]
            head[key] = _convert(fld, key, common[key], line, vcol)
        else:
            head[key] = fld.default
    if head["kind"] is None:
        if kind is None:
            raise ScenarioError("scenario kind not given", 1, 1, "kind")
        head["kind"] = kind
    elif kind is not None and head["kind"] != kind:
        line, _, vcol = where[("scenario", "kind")]
        raise ScenarioError(f"scenario kind {head['kind']!r} does not match command {kind!r}", line, vcol, "kind")

    schema = SCHEMA[head["kind"]]
    for section in raw:
        if section not in schema:
            raise ScenarioError(f"unknown section [{section}] for kind {head['kind']!r}",
                                *where[section], section)
        for key in raw[section]:
            if key not in schema[section]:
                raise ScenarioError(f"unknown key {key!r} in [{section}]", *where[(section, key)][:2], key)
    params = {}
    for section, fields in schema.items():
        given = raw.get(section, {})
        params[section] = {}
        for key, fld in fields.items():
            if key in given:
                line, _, vcol = where[(section, key)]
                params[section][key] = _convert(fld, key, given[key], line, vcol)
            else:
                params[section][key] = fld.default
    scen = Scenario(head["kind"], params, head["seed"], head["threads"],
                    explicit={s: set(v) for s, v in raw.items()})
    _check_consistency(scen, where)
    return scen


def _check_consistency(scen, where):
    p = scen.params
    if scen.kind == "closed_form":
        chosen = p["closed_form"]["quantity"]
        for name in CLOSED_FORMS:
            if name != chosen and scen.explicit.get(name):
                raise ScenarioError(f"section [{name}] does not apply to quantity {chosen!r}",
                                    *where[name], name)
    if scen.kind == "reconstruct" and p["state"]["family"] == "amplitudes" and p["state"]["amplitudes"] is None:
        raise ScenarioError("family = amplitudes needs an amplitudes list", *where.get("state", (1, 1)), "amplitudes")
    if scen.kind == "error_budget" and p["budget"]["P_max"] < p["budget"]["P_min"]:
        raise ScenarioError("P_max must not be below P_min", *where.get("budget", (1, 1)), "P_max")
    for name, value in p["output"].items():
        if os.path.basename(value) != value or value in ("", ".", ".."):
            raise ScenarioError(f"output name {value!r} must be a plain file name",
                                *where.get(("output", name), (1, 1))[:2], name)


def serialize_scenario(scen):
    """Canonical text: sections and keys in schema order, unset optionals omitted."""
    lines = ["[scenario]", f"kind = {scen.kind}", f"seed = {scen.seed}", f"threads = {scen.threads}"]
    schema = SCHEMA[scen.kind]
    for section, fields in schema.items():
        if scen.kind == "closed_form" and section in CLOSED_FORMS \
                and section != scen.params["closed_form"]["quantity"]:
            continue
        body = [f"{key} = {_format(fld, scen.params[section][key])}"
                for key, fld in fields.items() if scen.params[section][key] is not None]
        if body:
            lines += ["", f"[{section}]"] + body
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# runners; each returns (summary dict, {name: (writer, payload)})


def _optomech_params(section):
    p = om.paper_parameter_set()
    alpha2 = section.get("alpha2")
    over = {k: v for k, v in section.items() if k not in ("base", "alpha2") and v is not None}
    if over:
        p = replace(p, **over)
        p = p.with_alpha2(om.PRINTED_VALUES["alpha2"] if alpha2 is None else alpha2)
    elif alpha2 is not None:
        p = p.with_alpha2(alpha2)
    return p


def _cavity_ops(dim, gamma, E, detuning):
    a = hb.annihilation(dim).matrix.astype(complex)
    H = detuning * a.T @ a + 1j * E * (a.T - a)
    return a, H, [np.sqrt(gamma) * a]


def run_trajectory(scen, n_threads):
    s, r = scen.params["system"], scen.params["run"]
    a, H, chans = _cavity_ops(s["dim"], s["gamma"], s["E"], s["detuning"])
    if r["scheme"] == "jump_linear":
        spec = tr.UnravellingSpec(H, chans, r["scheme"], rates=(max(s["gamma"], 1e-12),))
    else:
        spec = tr.UnravellingSpec(H, chans, r["scheme"])
    psi0 = np.asarray(hb.coherent_state(s["alpha0"], s["dim"]), dtype=complex)
    obs = {"n": a.T @ a, "a": a}
    log.info("running %d trajectories on %d thread(s)", r["n_traj"], n_threads)
    ens = tr.run_ensemble(spec, psi0, r["t"], r["dt"], r["n_traj"], scen.seed, obs, stride=r["stride"],
                          n_threads=n_threads, batch_size=r["batch_size"])
    log.info("integrating the master equation for reference")
    ref = tr.master_evolve(np.outer(psi0, psi0.conj()), H, chans, r["t"], r["dt"],
                           observables={"n": obs["n"]}, stride=r["stride"])
    rows = [[t, m.real, ens.stderr["n"][k], ens.mean["a"][k].real, ens.mean["a"][k].imag,
             ref.expectations["n"][k].real, ens.cond_var_mean["n"][k]]
            for k, (t, m) in enumerate(zip(ens.times, ens.mean["n"]))]
    header = ["t", "n_mean", "n_stderr", "a_re", "a_im", "n_master", "n_cond_var"]
    units = {"t": "1/gamma"}
    final = rows[-1]
    summary = {"n_final": final[1], "n_stderr": final[2], "n_master": final[5]}
    return summary, {scen.outputs["csv"]: ("csv", (header, rows, units))}


def run_closed_form(scen, n_threads):
    q = scen.params["closed_form"]["quantity"]
    p = scen.params[q]
    if q == "cat_counts":
        N = np.arange(p["n_max"] + 1)
        P = eo.cat_count_probability(p["alpha"], p["gamma"], p["t"], N)
        rows = [[int(n), float(v)] for n, v in zip(N, P)]
        summary = {"mean_N": float(np.sum(N * P)), "captured": float(P.sum())}
        header, units = ["N", "P"], {}
    else:
        t = np.linspace(0.0, p["t_max"], p["n_points"])
        if q == "momentum_variance":
            v = eo.momentum_conditional_variance(p["var_p0"], p["k"], t)
            rows = [[a, b] for a, b in zip(t, v)]
            header, summary = ["t", "var_p"], {"var_p_final": float(v[-1])}
        elif q == "position_variance":
            v = eo.position_conditional_variance(p["s2"], p["r"], p["omega"], t[1:])
            rows = [[a, b] for a, b in zip(t[1:], v)]
            header = ["t", "var_x"]
            summary = {"var_x_final": float(v[-1]),
                       "var_x_steady": float(eo.position_steady_variance(p["s2"], p["r"]))}
        else:
            z = eo.driven_cavity_evolution(p["alpha0"], p["E"], p["gamma"], t, p["omega"])
            rows = [[a, b.real, b.imag] for a, b in zip(t, z)]
            header = ["t", "alpha_re", "alpha_im"]
            s = eo.driven_steady_amplitude(p["E"], p["gamma"], p["omega"])
            summary = {"alpha_steady_re": s.real, "alpha_steady_im": s.imag}
        units = {}
    return {"quantity": q, **summary}, {scen.outputs["csv"]: ("csv", (header, rows, units))}


def run_spectrum(scen, n_threads):
    p = _optomech_params(scen.params["parameters"])
    s = scen.params["spectrum"]
    w = np.linspace(-1, 1, s["n_points"]) * s["omega_max_over_nu"] * p.nu
    res = om.spectrum(p, w, s["model"], s["detection"])
    tot = res.total
    asym = np.max(np.abs(tot - tot[::-1]) / np.abs(tot))
    summary = {"model": s["model"], "T_s": p.T_s, "shot_floor": om.shot_floor(p, s["detection"]),
               "max_rel_asymmetry": float(asym)}
    units = {name: "s" for name in res.header()}
    units["omega"] = "rad/s"
    return summary, {scen.outputs["csv"]: ("csv", (res.header(), list(res.rows()), units))}


def run_error_budget(scen, n_threads):
    p = _optomech_params(scen.params["parameters"])
    b = scen.params["budget"]
    powers = np.geomspace(b["P_min"], b["P_max"], b["n_points"])
    rows = list(om.error_budget_rows(p, powers, b["tau_m"]))
    best = min(rows, key=lambda r: r[6])
    units = {name: "m" for name in om.BUDGET_HEADER}
    units["P_laser"] = "W"
    summary = {"T_s": p.T_s, "P_opt": best[0], "dx_min": best[6]}
    return summary, {scen.outputs["csv"]: ("csv", (om.BUDGET_HEADER, rows, units))}


def _target_state(section):
    dim = section["dim"]
    fam = section["family"]
    if fam == "coherent":
        amps = hb.coherent_state(section["alpha"], dim)
    elif fam == "cat":
        amps = hb.cat_state(section["alpha"], section["parity"], dim)
    elif fam == "fock":
        amps = hb.fock_state(section["n"], dim)
    else:
        v = np.zeros(dim, dtype=complex)
        given = np.array(section["amplitudes"])
        if given.size > dim:
            raise ConfigurationError("more amplitudes than dim")
        v[:given.size] = given
        return rc.PureCavityState.from_amplitudes(v, normalize=True)
    return rc.PureCavityState.from_amplitudes(amps, normalize=True)


def run_reconstruct(scen, n_threads):
    state = _target_state(scen.params["state"])
    pr = scen.params["probe"]
    n_max = int(np.nonzero(state.P > rc.ZERO_P)[0].max())
    probe = rc.default_probe(n_max, pr["kappa"])
    if pr["kappa_t"] > 0:
        probe = rc.ProbeConfig(pr["kappa"], pr["kappa_t"] / pr["kappa"])
    if pr["kappa_s"] > 0:
        probe = rc.ProbeConfig(pr["kappa"], probe.t, pr["kappa_s"] / pr["kappa"])
    n_shots = pr["n_shots"] or None
    ds = rc.simulate_dataset(state, pr["scheme"], probe, n_shots=n_shots, rng=sto.RngStream(scen.seed))
    res = rc.reconstruct(ds, truth=state)
    report = {"scheme": pr["scheme"], "n_shots": n_shots, "kappa": probe.kappa, "t": probe.t,
              "s": probe.second, **res.to_json()}
    header = ["n", "phi", "outcome", "value"]
    rows = [[n, "-", "P", v] for n, v in enumerate(ds.P)] + list(ds.rows())
    out = scen.outputs
    summary = {"scheme": pr["scheme"], "fidelity": res.fidelity, "infidelity": 1 - res.fidelity}
    return summary, {out["csv"]: ("csv", (header, rows, {"phi": "rad"})), out["json"]: ("json", report)}


# ----------------------------------------------------------------------------
# validation suite


def _check_quadratic_variation(seed):
    path = sto.wiener_path(10 ** 5, 1e-5, sto.RngStream(seed).generator(1))
    return abs(sto.quadratic_variation(path) - 1.0), 0.02


def _check_jc_dense(seed):
    rng = sto.RngStream(seed).generator(2)
    amps = rng.normal(size=6) + 1j * rng.normal(size=6)
    state = rc.PureCavityState.from_amplitudes(np.append(amps, [0, 0]), normalize=True)
    a = hb.annihilation(8).matrix
    lower = np.array([[0, 1], [0, 0]])
    H = np.kron(a, lower.T) + np.kron(a.T, lower)
    psi = np.kron(state.amps, np.array([1, 1j]) / np.sqrt(2))
    ref = hb.matrix_exp(-1j * H, 0.9) @ psi
    got = rc.jc_joint_state(state, np.pi / 2, 0.9, 1.0).amps
    return np.max(np.abs(ref - got)), 1e-10


def _check_disentangle(seed):
    rng = sto.RngStream(seed).generator(3)
    worst = 0.0
    a = hb.annihilation(40).matrix
    for _ in range(5):
        raw = rng.normal(size=6)
        raw *= 0.3 / np.linalg.norm(raw)
        u, v, w = raw[0] + 1j * raw[1], raw[2] + 1j * raw[3], raw[4] + 1j * raw[5]
        direct = hb.matrix_exp(u * a @ a + v * a.T @ a.T + w * a.T @ a)
        prod = eo.disentangle_quadratic(u, v, w).operator(40)
        blk = np.s_[:10, :5]
        worst = max(worst, np.linalg.norm((prod - direct)[blk]) / np.linalg.norm(direct[blk]))
    return worst, 1e-8


def _check_spectrum_symmetry(seed):
    p = om.paper_parameter_set()
    w = np.linspace(0.01, 3, 61) * p.nu
    s_pos, s_neg = om.spectrum(p, w).total, om.spectrum(p, -w).total
    return np.max(np.abs(s_pos - s_neg) / np.abs(s_pos)), 1e-12


def _check_spurious_term(seed):
    p = om.paper_parameter_set()
    w = np.linspace(0.01, 3, 61) * p.nu
    odd = om.odd_part_from_transfer(p, w, model="SBMME")
    ref = om.sbmme_spurious_term(p, w)
    return np.max(np.abs(odd - ref) / np.abs(ref)), 1e-7


def _check_driven_master(seed):
    dim, gamma, E = 12, 1.0, 0.5
    a, H, chans = _cavity_ops(dim, gamma, E, 0.0)
    rho0 = np.zeros((dim, dim), dtype=complex)
    rho0[0, 0] = 1
    res = tr.master_evolve(rho0, H, chans, 2.0, 1e-3, observables={"a": a}, stride=100)
    ref = eo.driven_cavity_evolution(0.0, E, gamma, res.times)
    return np.max(np.abs(res.expectations["a"] - ref)), 1e-6


def _check_reconstruct(seed):
    state = rc.PureCavityState.from_amplitudes(hb.coherent_state(1.0, 15))
    ds = rc.simulate_dataset(state, "one_atom", rc.default_probe(8))
    return 1 - rc.reconstruct(ds, truth=state).fidelity, 1e-9


VALIDATION_CHECKS = {
    "quadratic_variation": _check_quadratic_variation,
    "jc_vs_dense": _check_jc_dense,
    "disentangle_vs_dense": _check_disentangle,
    "cbmme_symmetry": _check_spectrum_symmetry,
    "sbmme_odd_part": _check_spurious_term,
    "driven_cavity_vs_master": _check_driven_master,
    "reconstruct_coherent": _check_reconstruct,
}


def run_validate(scen, n_threads):
    scale = scen.params["validate"]["tolerance_scale"]
    rows, n_pass = [], 0
    for name, check in VALIDATION_CHECKS.items():
        log.info("check %s", name)
        err, tol = check(scen.seed)
        ok = bool(err < tol * scale)
        n_pass += ok
        rows.append([name, float(err), tol * scale, ok])
    summary = {"passed": n_pass, "failed": len(rows) - n_pass}
    header = ["check", "error", "tolerance", "passed"]
    return summary, {scen.outputs["csv"]: ("csv", (header, rows, {}))}


RUNNERS = {
    "trajectory": run_trajectory,
    "closed_form": run_closed_form,
    "spectrum": run_spectrum,
    "error_budget": run_error_budget,
    "reconstruct": run_reconstruct,
    "validate": run_validate,
}


# ----------------------------------------------------------------------------
# orchestration


def _summary_line(kind, summary, names):
    parts = [f"kind={kind}"]
    for key, value in summary.items():
        if isinstance(value, (float, np.floating)):
            value = f"{float(value):.6g}"
        parts.append(f"{key}={value}")
    parts.append("outputs=" + ",".join(names))
    return " ".join(parts)


def run(scen, out_dir=".", n_threads=None):
    """Run a scenario and write its outputs; returns (exit code, summary line).

    Nothing is left on disk when a runner fails: outputs are rendered in
    memory and written only after the computation succeeded, and any file
    written before a failure is removed.
    """
    n_threads = scen.threads if n_threads is None else n_threads
    summary, artifacts = RUNNERS[scen.kind](scen, n_threads)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        for name, (fmt, payload) in artifacts.items():
            path = os.path.join(out_dir, name)
            if fmt == "csv":
                write_csv(path, *payload)
            else:
                dump_json(payload, path)
            written.append(path)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    code = EXIT_OK
    if scen.kind == "validate" and summary["failed"]:
        code = EXIT_VALIDATION
    return code, _summary_line(scen.kind, summary, list(artifacts))


def _parser():
    ap = argparse.ArgumentParser(prog="contmeas", description="Run continuous-measurement scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run",) + KINDS:
        sp = sub.add_parser(name, help="run a scenario file" if name == "run" else f"run a {name} scenario")
        sp.add_argument("--scenario", required=name != "validate", help="scenario file (INI style)")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        sp.add_argument("--out", default=".", help="output directory")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(name)s: %(message)s")
    kind = None if args.command == "run" else args.command
    try:
        if args.scenario is None:
            text = ""
        else:
            with open(args.scenario, encoding="utf-8") as fh:
                text = fh.read()
        scen = parse_scenario(text, kind=kind)
        if args.seed is not None:
            if args.seed < 0:
                raise ScenarioError("--seed must be nonnegative", key="seed")
            scen.seed = args.seed
        if args.threads is not None and args.threads < 1:
            raise ScenarioError("--threads must be at least 1", key="threads")
        start = time.perf_counter()
        code, line = run(scen, args.out, args.threads)
        log.info("finished in %.2f s", time.perf_counter() - start)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (NumericalGuardError, ArithmeticError) as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except ContmeasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
