"""Experiment configuration, dispatch and result persistence.

A run reads one TOML file, resolves every preset, runs the named experiment,
writes CSV tables plus ``manifest.json`` into the output directory and reports
a pass/fail flag per invariant. All randomness derives from ``seed`` through
:func:`mvreflect.ensemble.derive_seed` with purpose strings of the form
``"<experiment>/driver"``.

Config schema (every section optional)::

    experiment = "chaos"          # overridden by the CLI positional
    seed = 0
    output_dir = "runs/chaos"     # overridden by --out

    [grid]         T = 1.0, n_steps = 50
    [domain]       preset = "interval" | "disk" | "box", constructor keywords
    [field]        preset = "normal" | "rotated" | "outward", angle, rho
    [coefficients] preset = "zero" | "constant" | "brownian" | "mean_reversion" | "std_vol", keywords
    [particles]    n, x0 (list or "uniform"), shrink, n_list, n_rep, n_ref, n_copies
    [picard]       max_iters, tol
    [geometry]     n_samples, x_samples, dt_probe
    [ldp]          epsilons, n_copies, theta, ns, amplitude, sequence, tol,
                   control = {kind, value, amplitude, frequency},
                   target = {kind, point, radius}, event = {kind, threshold},
                   chunk, flow_copies
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, kernels, ldp
from .coefficients import PRESETS as COEFF_PRESETS, preset as coeff_preset
from .ensemble import NoiseDriver, chaos_experiment, derive_seed, picard_iterate, simulate_interacting, FixedPointError
from .geometry import (DirectionField, MovingBox, MovingDisk, MovingInterval, normal_field, rotated_field,
                       validate_cone_condition, validate_time_regularity)
from .reflection import ProjectionError, check_path_invariants

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXPERIMENTS = ("simulate", "picard", "chaos", "geometry-validate", "ldp-rate", "ldp-rare-event",
               "ldp-check-ldp1", "ldp-check-ldp2", "ldp-check-limit-law")

DOMAIN_PRESETS = {"interval": MovingInterval, "disk": MovingDisk, "box": MovingBox}
FIELD_PRESETS = ("normal", "rotated", "outward")


class HarnessError(Exception):
    """Error with a machine-readable ``code`` and a process exit status."""

    codes = {
        "E_CONFIG_PARSE": 2,
        "E_UNKNOWN_PRESET": 3,
        "E_INVALID_GRID": 4,
        "E_INVALID_VALUE": 5,
        "E_WRITE": 6,
        "E_UNKNOWN_EXPERIMENT": 7,
        "E_SIMULATION": 8,
        "E_MISSING_TABLE": 9,
    }

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.exit_code = self.codes[code]


_DEFAULTS = {
    "experiment": "simulate",
    "seed": 0,
    "output_dir": None,
    "grid": {"T": 1.0, "n_steps": 50},
    "domain": {"preset": "interval"},
    "field": {"preset": "normal"},
    "coefficients": {"preset": "mean_reversion"},
    "particles": {"n": 64, "x0": "origin", "shrink": 0.9, "n_list": [8, 32, 128, 512], "n_rep": 16,
                  "n_ref": None, "n_copies": 256},
    "picard": {"max_iters": 15, "tol": 1e-2},
    "geometry": {"n_samples": 1000, "x_samples": 200, "dt_probe": 1e-3},
    "ldp": {"epsilons": [0.4, 0.2, 0.1, 0.05], "n_copies": 512, "theta": 0.25, "ns": [1, 2, 4, 8, 16],
            "amplitude": 1.0, "sequence": "oscillatory", "tol": 1e-2,
            "control": {"kind": "zero"}, "target": {"kind": "psi"},
            "event": {"kind": "terminal_displacement", "threshold": 1.0},
            "chunk": 100_000, "flow_copies": 2048},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("domain", "field", "coefficients"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict, validate=True):
        unknown = set(raw) - set(_DEFAULTS)
        if unknown:
            raise HarnessError("E_CONFIG_PARSE", f"unknown config keys {sorted(unknown)}")
        cfg = cls(_merge(_DEFAULTS, raw))
        if validate:
            cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise HarnessError("E_CONFIG_PARSE", f"cannot read {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise HarnessError("E_CONFIG_PARSE", f"{path}: {exc}") from None
        return cls.from_dict(raw)

    def with_overrides(self, experiment=None, seed=None, output_dir=None):
        d = copy.deepcopy(self.data)
        if experiment is not None:
            d["experiment"] = experiment
        if seed is not None:
            d["seed"] = int(seed)
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        out = ExperimentConfig(d)
        out.validate()
        return out

    def __getattr__(self, name):
        try:
            return self.__dict__["data"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def T(self):
        return float(self.data["grid"]["T"])

    @property
    def n_steps(self):
        return self.data["grid"]["n_steps"]

    def time_grid(self):
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def validate(self):
        d = self.data
        if d["experiment"] not in EXPERIMENTS:
            raise HarnessError("E_UNKNOWN_EXPERIMENT", f"unknown experiment {d['experiment']!r}")
        g = d["grid"]
        T, ns = g.get("T"), g.get("n_steps")
        if not isinstance(T, (int, float)) or not math.isfinite(T) or T <= 0:
            raise HarnessError("E_INVALID_GRID", f"T must be positive, got {T!r}")
        if not isinstance(ns, int) or isinstance(ns, bool) or ns < 2:
            raise HarnessError("E_INVALID_GRID", f"n_steps must be an integer >= 2, got {ns!r}")
        if d["domain"].get("preset") not in DOMAIN_PRESETS:
            raise HarnessError("E_UNKNOWN_PRESET", f"unknown domain preset {d['domain'].get('preset')!r}")
        if d["field"].get("preset") not in FIELD_PRESETS:
            raise HarnessError("E_UNKNOWN_PRESET", f"unknown field preset {d['field'].get('preset')!r}")
        if d["coefficients"].get("preset") not in COEFF_PRESETS:
            raise HarnessError("E_UNKNOWN_PRESET",
                               f"unknown coefficient preset {d['coefficients'].get('preset')!r}")
        eps = d["ldp"]["epsilons"]
        if not eps or any(not isinstance(e, (int, float)) or not 0.0 < e <= 1.0 for e in eps):
            raise HarnessError("E_INVALID_VALUE", f"epsilon values must lie in (0, 1], got {eps!r}")
        p = d["particles"]
        for key in ("n", "n_rep", "n_copies"):
            if not isinstance(p[key], int) or p[key] < 1:
                raise HarnessError("E_INVALID_VALUE", f"particles.{key} must be a positive integer")
        if not p["n_list"] or sorted(p["n_list"]) != list(p["n_list"]) or min(p["n_list"]) < 1:
            raise HarnessError("E_INVALID_VALUE", "particles.n_list must be ascending positive integers")
        if d["ldp"]["control"].get("kind") not in ("zero", "constant", "sine"):
            raise HarnessError("E_UNKNOWN_PRESET", f"unknown control kind {d['ldp']['control'].get('kind')!r}")
        if d["ldp"]["target"].get("kind") not in ("psi", "terminal"):
            raise HarnessError("E_UNKNOWN_PRESET", f"unknown target kind {d['ldp']['target'].get('kind')!r}")
        if d["ldp"]["event"].get("kind") not in ("terminal_displacement", "sup_deviation", "always"):
            raise HarnessError("E_UNKNOWN_PRESET", f"unknown event kind {d['ldp']['event'].get('kind')!r}")
        if d["ldp"]["sequence"] not in ("oscillatory", "divergent", "constant"):
            raise HarnessError("E_UNKNOWN_PRESET", f"unknown control sequence {d['ldp']['sequence']!r}")
        if d["picard"]["max_iters"] < 1 or d["picard"]["tol"] <= 0:
            raise HarnessError("E_INVALID_VALUE", "picard needs max_iters >= 1 and tol > 0")
        # building the objects catches bad constructor keywords early
        self.build()
        return self

    def canonical(self) -> str:
        d = copy.deepcopy(self.data)
        d.pop("output_dir", None)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    # ---------------------------------------------------------------- presets

    def build(self):
        """Return ``(domain, field, coefficients)``."""
        d = self.data
        dom_kw = {k: v for k, v in d["domain"].items() if k != "preset"}
        try:
            domain = DOMAIN_PRESETS[d["domain"]["preset"]](horizon=self.T, **dom_kw)
        except (TypeError, ValueError) as exc:
            raise HarnessError("E_INVALID_VALUE", f"domain: {exc}") from None
        fk = {k: v for k, v in d["field"].items() if k != "preset"}
        try:
            kind = d["field"]["preset"]
            if kind == "normal":
                fld = normal_field(domain, fk.get("rho", 0.5))
            elif kind == "rotated":
                fld = rotated_field(domain, fk.get("angle", math.pi / 6), fk.get("rho", 0.4))
            else:
                fld = outward_field(domain, fk.get("rho", 0.4))
        except (TypeError, ValueError) as exc:
            raise HarnessError("E_INVALID_VALUE", f"field: {exc}") from None
        ck = {k: v for k, v in d["coefficients"].items() if k != "preset"}
        ck.setdefault("dim", domain.dim)
        try:
            cs = coeff_preset(d["coefficients"]["preset"], **ck)
        except (TypeError, ValueError) as exc:
            raise HarnessError("E_INVALID_VALUE", f"coefficients: {exc}") from None
        if cs.dim != domain.dim:
            raise HarnessError("E_INVALID_VALUE", f"coefficient dimension {cs.dim} vs domain {domain.dim}")
        return domain, fld, cs

    def x0(self, domain):
        p = self.data["particles"]
        x0 = p["x0"]
        if x0 == "origin":
            return np.asarray(domain.section(0.0).center, dtype=float)
        if x0 == "uniform":
            shrink = float(p["shrink"])
            return lambda n, rng: domain.sample_interior(0.0, n, rng, shrink)
        arr = np.asarray(x0, dtype=float).reshape(-1)
        if arr.size != domain.dim:
            raise HarnessError("E_INVALID_VALUE", f"x0 has {arr.size} components, domain has {domain.dim}")
        return arr

    def control(self, grid, m):
        c = self.data["ldp"]["control"]
        if c["kind"] == "zero":
            return ldp.Control.zeros(grid, m)
        if c["kind"] == "constant":
            return ldp.Control.constant(grid, c.get("value", 0.0), m)
        amp, freq = float(c.get("amplitude", 1.0)), float(c.get("frequency", 1.0))
        return ldp.Control.from_function(grid, lambda t: np.full(m, amp * math.sin(2 * math.pi * freq * t)), m)


def outward_field(domain, rho=0.4):
    """Deliberately incompatible field pointing out of the domain (validator negative control)."""
    inner = normal_field(domain, rho)
    return DirectionField(lambda t, x: -inner(t, x), rho)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_file(path)


# -------------------------------------------------------------------- output

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class Table:
    header: list
    rows: list

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue().encode()


@dataclass
class RunRecord:
    experiment: str
    config_hash: str
    version: str
    started: str
    finished: str
    out_dir: Path
    files: dict = field(default_factory=dict)
    invariants: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.invariants.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def manifest(self) -> dict:
        return {"experiment": self.experiment, "config_hash": self.config_hash, "version": self.version,
                "backend": kernels.BACKEND, "started": self.started, "finished": self.finished,
                "files": dict(sorted(self.files.items())),
                "invariants": {k: bool(v) for k, v in self.invariants.items()}, "ok": self.ok}

    def write_file(self, name, data: bytes):
        try:
            (self.out_dir / name).write_bytes(data)
        except OSError as exc:
            raise HarnessError("E_WRITE", f"cannot write {name}: {exc}") from None
        self.files[name] = hashlib.sha256(data).hexdigest()

    def write_manifest(self):
        data = json.dumps(self.manifest(), indent=2, sort_keys=True).encode() + b"\n"
        try:
            (self.out_dir / "manifest.json").write_bytes(data)
        except OSError as exc:
            raise HarnessError("E_WRITE", f"cannot write manifest: {exc}") from None


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------- experiments

def _driver(cfg, purpose):
    return NoiseDriver(derive_seed(cfg.seed, f"{cfg.experiment}/{purpose}"))


def _path_table(ens):
    d = ens.x.shape[2]
    header = ["particle", "step", "t", *[f"x{j}" for j in range(d)], "local_time",
              *[f"K{j}" for j in range(d)]]
    rows = []
    for i in range(ens.x.shape[0]):
        pid = int(ens.ids[i])
        for k, t in enumerate(ens.grid):
            rows.append([pid, k, t, *ens.x[i, k], ens.local_time[i, k], *ens.reflector[i, k]])
    return Table(header, rows)


def _run_simulate(cfg, domain, fld, cs):
    grid = cfg.time_grid()
    ens = simulate_interacting(domain, fld, cs, cfg.particles["n"], cfg.x0(domain), grid, _driver(cfg, "driver"))
    inv = check_path_invariants(domain, ens)
    summary = [f"particles={ens.n} steps={grid.size - 1} max_local_time={float(ens.local_time[:, -1].max()):.6g}"]
    return {"paths": _path_table(ens)}, inv.as_dict(), summary


def _run_picard(cfg, domain, fld, cs):
    grid = cfg.time_grid()
    pc = cfg.picard
    converged = True
    try:
        flow, hist = picard_iterate(domain, fld, cs, cfg.x0(domain), grid, _driver(cfg, "driver"), 1.0,
                                    cfg.particles["n_copies"], pc["max_iters"], pc["tol"])
    except FixedPointError as exc:
        flow, hist, converged = exc.flow, exc.history, False
    d = hist.distances
    rows = [[k, dist, (dist / d[k - 1]) if k > 0 and d[k - 1] > 0 else None] for k, dist in enumerate(d)]
    dim = domain.dim
    means = [[t, *np.mean(flow.points[k], axis=0), float(np.sqrt(np.mean(np.sum(
        (flow.points[k] - flow.points[k].mean(axis=0)) ** 2, axis=1))))] for k, t in enumerate(flow.grid)]
    tables = {"picard_history": Table(["iteration", "sup_w2", "ratio"], rows),
              "flow_summary": Table(["t", *[f"mean{j}" for j in range(dim)], "spread"], means)}
    tail = d[1:]
    inv = {"converged": converged, "tail_decreasing": all(b < a for a, b in zip(tail, tail[1:]))}
    return tables, inv, [f"iterations={len(d)} last={d[-1]:.6g}"]


def _run_chaos(cfg, domain, fld, cs):
    p = cfg.particles
    table = chaos_experiment(domain, fld, cs, cfg.x0(domain), cfg.time_grid(), p["n_list"], p["n_rep"],
                             derive_seed(cfg.seed, "chaos"), n_ref=p["n_ref"])
    m = table.mean_sq_dist
    inv = {"strictly_decreasing": all(b < a for a, b in zip(m, m[1:]))}
    summary = [f"n={n} mean_sq_dist={v:.6g} stderr={s:.3g}" for n, v, s in table.rows()]
    return {"chaos": Table(["n", "mean_sq_dist", "stderr"], [list(r) for r in table.rows()])}, inv, summary


def _run_geometry(cfg, domain, fld, cs):
    g = cfg.geometry
    cone = validate_cone_condition(domain, fld, g["n_samples"], seed=derive_seed(cfg.seed, "geometry/cone"))
    reg = validate_time_regularity(domain, g["x_samples"], g["dt_probe"],
                                   seed=derive_seed(cfg.seed, "geometry/regularity"),
                                   bound=domain.time_lipschitz)
    d = domain.dim
    cone_tab = Table(["t", *[f"anchor{j}" for j in range(d)], "xi", *[f"point{j}" for j in range(d)]],
                     list(cone.rows()))
    summ = Table(["check", "value", "bound", "ok"], [
        ["cone_violations", cone.n_violations, 0, cone.n_violations == 0],
        ["gamma_norm_defects", cone.norm_defects, 0, cone.norm_defects == 0],
        ["time_quotient", reg.max_quotient, reg.bound, not reg.flagged]])
    summary = [f"cone: {cone.n_anchors} anchors, {cone.n_checked} points, {cone.n_violations} violations",
               f"regularity: max quotient {reg.max_quotient:.6g} (bound {reg.bound})"]
    return ({"cone_violations": cone_tab, "geometry_summary": summ},
            {"cone_condition": cone.ok, "time_regularity": not reg.flagged}, summary)


def _psi(cfg, domain, fld, cs):
    return ldp.solve_limit_ode(domain, fld, cs, cfg.x0(domain), cfg.time_grid())


def _witness_table(h):
    return Table(["t", *[f"h{j}" for j in range(h.m)]], [[t, *v] for t, v in zip(h.grid[:-1], h.values)])


def _run_rate(cfg, domain, fld, cs):
    psi = _psi(cfg, domain, fld, cs)
    tg = cfg.ldp["target"]
    if tg["kind"] == "psi":
        target = ldp.PathTarget(psi.x)
    else:
        target = ldp.TerminalTarget(np.asarray(tg.get("point", psi.terminal), float), float(tg.get("radius", 0.0)))
    rv = ldp.rate_of_path(domain, fld, cs, cfg.x0(domain), psi, target)
    tables = {"rate": Table(["value", "infinite", "residual"], [[rv.value, rv.infinite, rv.residual]]),
              "rate_levels": Table(["penalty", "energy", "residual"], [list(r) for r in rv.levels])}
    if rv.witness is not None:
        tables["witness"] = _witness_table(rv.witness)
    ok = rv.infinite or abs(rv.value - rv.witness.energy) <= 1e-12 * max(1.0, rv.value)
    label = "+inf (infeasible)" if rv.infinite else f"{rv.value:.6g}"
    return tables, {"value_matches_witness": ok}, [f"rate estimate (upper bound): {label}"]


def _event(cfg, domain, psi, x0):
    ev = cfg.ldp["event"]
    thr = float(ev.get("threshold", 1.0))
    if ev["kind"] == "terminal_displacement":
        return ldp.Event(ldp.terminal_displacement(x0), thr)
    if ev["kind"] == "sup_deviation":
        return ldp.Event(ldp.sup_deviation(psi.x), thr)
    return ldp.Event(lambda x, grid: np.ones(x.shape[0]), 0.0)


def _run_rare(cfg, domain, fld, cs):
    grid = cfg.time_grid()
    x0 = cfg.x0(domain)
    if callable(x0):
        raise HarnessError("E_INVALID_VALUE", "rare-event runs need a deterministic x0")
    psi = _psi(cfg, domain, fld, cs)
    L = cfg.ldp
    event = _event(cfg, domain, psi, x0)
    rows = ldp.estimate_rare_event(domain, fld, cs, x0, grid, _driver(cfg, "driver"), L["epsilons"], event,
                                   L["n_copies"], flow_copies=L["flow_copies"], chunk=L["chunk"])
    bound = None
    if L["event"]["kind"] == "terminal_displacement":
        vals = []
        for j in range(domain.dim):
            for sgn in (1.0, -1.0):
                pt = np.array(x0, dtype=float)
                pt[j] += sgn * event.threshold
                try:
                    vals.append(ldp.rate_of_path(domain, fld, cs, x0, psi, ldp.TerminalTarget(pt)).value)
                except ldp.OptimizationError:
                    vals.append(math.inf)
        bound = min(vals)
    out = []
    for r in rows:
        lo, hi = r.exponent_bounds
        out.append([r.epsilon, r.hits, r.n, r.p_hat, r.ci_low, r.ci_high, r.exponent, lo, hi, r.one_sided, bound])
    header = ["epsilon", "hits", "n", "p_hat", "ci_low", "ci_high", "exponent", "exponent_low", "exponent_high",
              "one_sided", "rate_bound"]
    inv = {"ci_contains_estimate": all(r.ci_low <= r.p_hat <= r.ci_high for r in rows)}
    summary = [f"eps={r.epsilon:g} hits={r.hits}/{r.n} -eps*log(p)={r.exponent:.6g}" for r in rows]
    if bound is not None:
        summary.append(f"rate estimate (upper bound): {bound:.6g}")
    return {"rare_event": Table(header, out)}, inv, summary


def _run_ldp1(cfg, domain, fld, cs):
    psi = _psi(cfg, domain, fld, cs)
    L = cfg.ldp
    h = cfg.control(psi.grid, cs.noise_dim)
    ns = list(L["ns"])
    if L["sequence"] == "oscillatory":
        seq = ldp.oscillatory_sequence(h, ns, L["amplitude"])
    elif L["sequence"] == "divergent":
        seq = [h + ldp.Control.constant(psi.grid, float(n), cs.noise_dim) for n in ns]
    else:
        seq = [h for _ in ns]
    rep = ldp.check_ldp1(domain, fld, cs, cfg.x0(domain), psi, seq, h, L["tol"])
    rows = [[n, dist, c.energy] for n, dist, c in zip(ns, rep.distances, seq)]
    return ({"ldp1": Table(["n", "sup_distance", "energy"], rows)}, {"converged": rep.converged},
            [f"n={n} sup_distance={dd:.6g}" for n, dd, _ in rows])


def _run_ldp2(cfg, domain, fld, cs):
    L = cfg.ldp
    grid = cfg.time_grid()
    h = cfg.control(grid, cs.noise_dim)
    rep = ldp.check_ldp2(domain, fld, cs, cfg.x0(domain), grid, _driver(cfg, "driver"), L["epsilons"], h,
                         float(L["theta"]), L["n_copies"])
    rows = [list(r) for r in zip(rep.epsilons, rep.probabilities, rep.stderr)]
    return ({"ldp2": Table(["epsilon", "probability", "stderr"], rows)}, {"nonincreasing": rep.nonincreasing},
            [f"eps={e:g} p={p:.6g} se={s:.3g}" for e, p, s in rows])


def _run_limit_law(cfg, domain, fld, cs):
    L = cfg.ldp
    rep = ldp.check_limit_law(domain, fld, cs, cfg.x0(domain), cfg.time_grid(), _driver(cfg, "driver"),
                              L["epsilons"], L["n_copies"])
    rows = [list(r) for r in zip(rep.epsilons, rep.statistic, rep.stderr)]
    return ({"limit_law": Table(["epsilon", "sup_w2", "stderr"], rows)}, {"nonincreasing": rep.nonincreasing},
            [f"eps={e:g} sup_w2={v:.6g} se={s:.3g}" for e, v, s in rows])


_RUNNERS = {
    "simulate": _run_simulate,
    "picard": _run_picard,
    "chaos": _run_chaos,
    "geometry-validate": _run_geometry,
    "ldp-rate": _run_rate,
    "ldp-rare-event": _run_rare,
    "ldp-check-ldp1": _run_ldp1,
    "ldp-check-ldp2": _run_ldp2,
    "ldp-check-limit-law": _run_limit_law,
}


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunRecord:
    """Run ``config.experiment`` and persist its tables and manifest."""
    config.validate()
    domain, fld, cs = config.build()
    target = Path(out_dir or config.output_dir or f"runs/{config.experiment}-{config.hash[:10]}")
    started = _now()
    try:
        tables, invariants, summary = _RUNNERS[config.experiment](config, domain, fld, cs)
    except (ProjectionError, ldp.OptimizationError) as exc:
        raise HarnessError("E_SIMULATION", str(exc)) from exc
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise HarnessError("E_WRITE", f"cannot create {target}: {exc}") from None
    rec = RunRecord(config.experiment, config.hash, __version__, started, _now(), target,
                    invariants=invariants, summary=summary, tables=tables)
    resolved = {k: v for k, v in config.data.items() if k != "output_dir"}
    rec.write_file("config.json", (json.dumps(resolved, indent=2, sort_keys=True) + "\n").encode())
    for name, tab in tables.items():
        rec.write_file(f"{name}.csv", tab.to_csv())
    rec.write_manifest()
    return rec


_PLOT_SOURCES = {"chaos": ("chaos",), "ldp": ("rare_event", "ldp2", "limit_law", "ldp1"), "paths": ("paths",)}


def emit_plot_data(run: RunRecord, kind: str) -> Path:
    """Write ``plot_<kind>.csv`` in long format (``series, x, y, y_err``) and refresh the manifest."""
    if kind not in _PLOT_SOURCES:
        raise HarnessError("E_INVALID_VALUE", f"unknown plot kind {kind!r}")
    src = next((s for s in _PLOT_SOURCES[kind] if s in run.tables), None)
    if src is None:
        raise HarnessError("E_MISSING_TABLE", f"run {run.experiment!r} has no table for plot kind {kind!r}")
    tab = run.tables[src]
    col = {h: i for i, h in enumerate(tab.header)}
    rows = []
    if src == "chaos":
        rows = [["mean_sq_dist", r[0], r[1], r[2]] for r in tab.rows]
    elif src == "rare_event":
        for r in tab.rows:
            e = r[col["epsilon"]]
            rows.append(["exponent", e, r[col["exponent"]], None])
            rows.append(["ci_low", e, r[col["exponent_low"]], None])
            rows.append(["ci_high", e, r[col["exponent_high"]], None])
    elif src in ("ldp2", "limit_law"):
        rows = [[src, r[0], r[1], r[2]] for r in tab.rows]
    elif src == "ldp1":
        rows = [["sup_distance", r[0], r[1], None] for r in tab.rows]
    else:
        d = sum(1 for h in tab.header if h.startswith("x"))
        for r in tab.rows:
            if r[col["step"]] == 0:
                continue
            for j in range(d):
                series = f"particle{r[0]}" if d == 1 else f"particle{r[0]}/x{j}"
                rows.append([series, r[col["t"]], r[col[f"x{j}"]], None])
    name = f"plot_{kind}.csv"
    run.write_file(name, Table(["series", "x", "y", "y_err"], rows).to_csv())
    run.write_manifest()
    return run.out_dir / name
