"""Experiment configuration, execution, persistence and the command line.

Configuration files are flat ``key = value`` text with dotted namespaces
(``model.hurst = 0.8``); values are parsed as JSON when possible and kept as
strings otherwise. A run writes one CSV per result table plus a JSON
``record.json`` sidecar into the output directory.

Exit codes: 0 success, 2 validation failure, 3 numerical non-convergence,
1 internal error. The worker count for ensemble simulation is read from the
``PATHREG_WORKERS`` environment variable (default 1).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, acceptance, bsde, functional as fn, kolmogorov as ko, stochcalc as sc
from .detcalc import EpsSchedule
from .pathgrid import DiagonalMeasure, GridPath

EXPERIMENTS = ("integrate", "qv", "chi-qv", "ito-residual", "window-ito", "solve", "residual",
               "cylindrical-oracle", "viscosity", "bsde", "clark-ocone")

EXIT_OK, EXIT_INTERNAL, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class ValidationError(ValueError):
    pass


NUMERICAL_ERRORS = (fn.NonConvergence, ko.GrowthViolation, bsde.PicardDivergence, bsde.IllConditioned,
                    FloatingPointError, OverflowError)
VALIDATION_ERRORS = (ValidationError, ko.SingularCovariance, bsde.QVPrecondition, fn.MissingSupplier)


# -- registries -----------------------------------------------------------------

def make_model(key: str, params: dict):
    if key == "brownian":
        return sc.BrownianMotion(float(params.get("x0", 0.0)))
    if key == "brownian_drift":
        amp = float(params.get("amplitude", 0.25))
        return sc.BrownianPlusSmoothDrift(lambda t: amp * np.sin(2 * np.pi * t), float(params.get("x0", 0.0)))
    if key == "holder_mix":
        return sc.HolderMix(float(params.get("hurst", 0.8)), float(params.get("weight", 1.0)))
    if key == "path_sde":
        s = float(params.get("sigma", 1.0))
        return sc.PathDependentSDE(lambda t, H: np.full(H.shape[0], s))
    raise ValidationError(f"unknown model {key!r}")


FUNCTIONALS = {
    "present_square": fn.present_square,
    "present_value": fn.present_value,
    "path_integral": fn.path_integral,
    "sup_norm": fn.sup_norm,
    "abs_integral": fn.abs_integral,
}

SOLUTIONS = {
    "present_square": fn.present_square_solution,
    "path_integral": fn.path_integral_solution,
}

SMOOTH_F = {"square": sc.SQUARE, "time_x": sc.TIME_X, "cube": sc.CUBE}


def make_functional(key: str, T: float, params: dict) -> fn.PathFunctional:
    """Functional by registry key; ``cylindrical:<name>`` selects a registered cylindrical functional."""
    if key.startswith("cylindrical:"):
        reg = ko.cylindrical_registry(T)
        name = key.split(":", 1)[1]
        if name not in reg:
            raise ValidationError(f"unknown cylindrical functional {name!r}; known: {sorted(reg)}")
        return reg[name].as_path_functional()
    if key == "constant":
        return fn.constant(T, float(params.get("c", 1.0)))
    if key not in FUNCTIONALS:
        raise ValidationError(f"unknown functional {key!r}")
    return FUNCTIONALS[key](T)


def make_eta(spec: str, T: float, m: int) -> GridPath:
    """Initial path from ``zero``, ``const:c``, ``linear:a,b`` (``a + b x``) or ``sin:a,w``."""
    x = np.linspace(-T, 0.0, m + 1)
    kind, _, args = str(spec).partition(":")
    vals = [float(v) for v in args.split(",")] if args else []
    try:
        if kind == "zero":
            v = np.zeros_like(x)
        elif kind == "const":
            v = np.full_like(x, vals[0])
        elif kind == "linear":
            v = vals[0] + vals[1] * x
        elif kind == "sin":
            v = vals[0] * np.sin(vals[1] * x)
        else:
            raise ValidationError(f"unknown path kind {kind!r}")
    except IndexError as exc:
        raise ValidationError(f"path spec {spec!r} is missing parameters") from exc
    return GridPath(-T, 0.0, v)


# -- configuration -------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    T: float = 1.0
    n_steps: int = 1024
    n_paths: int = 1000
    model: str = "brownian"
    model_params: dict = field(default_factory=dict)
    functional: str = "present_square"
    functional_params: dict = field(default_factory=dict)
    eps_multiples: tuple = (16, 8, 4, 2, 1)
    out: str = "results"
    params: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}")
        if self.seed is None:
            raise ValidationError("seed is mandatory")
        if self.T <= 0 or self.n_steps < 2 or self.n_paths < 1:
            raise ValidationError("need T > 0, n_steps >= 2 and n_paths >= 1")
        if any(int(k) < 1 for k in self.eps_multiples) or list(self.eps_multiples) != sorted(
                self.eps_multiples, reverse=True):
            raise ValidationError("eps multiples must be positive and decreasing")
        make_model(self.model, self.model_params)
        if self.experiment in ("solve", "viscosity"):
            make_functional(self.functional, self.T, self.functional_params)
        return self

    def to_json(self) -> str:
        d = asdict(self)
        d["eps_multiples"] = list(self.eps_multiples)
        return json.dumps(d, sort_keys=True)

    def digest(self) -> str:
        d = json.loads(self.to_json())
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_flat(cls, flat: dict) -> "ExperimentConfig":
        known = {"experiment", "seed", "T", "n_steps", "n_paths", "model", "functional", "out"}
        kw, model_p, func_p, params = {}, {}, {}, {}
        for key, val in flat.items():
            if key in known:
                kw[key] = val
            elif key.startswith("model."):
                model_p[key[6:]] = val
            elif key.startswith("functional."):
                func_p[key[11:]] = val
            elif key == "schedule.multiples":
                kw["eps_multiples"] = tuple(int(v) for v in (val if isinstance(val, list) else str(val).split(",")))
            elif key.startswith("params."):
                params[key[7:]] = val
            else:
                raise ValidationError(f"unknown configuration key {key!r}")
        if "experiment" not in kw or "seed" not in kw:
            raise ValidationError("configuration needs 'experiment' and 'seed'")
        kw["seed"] = int(kw["seed"])
        for k, typ in (("T", float), ("n_steps", int), ("n_paths", int)):
            if k in kw:
                kw[k] = typ(kw[k])
        return cls(model_params=model_p, functional_params=func_p, params=params, **kw)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_flat(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"line {n}: expected 'key = value'")
        out[key.strip()] = _parse_value(val.strip())
    return out


def dump_flat(flat: dict) -> str:
    return "".join(f"{k} = {json.dumps(v) if not isinstance(v, str) else v}\n" for k, v in sorted(flat.items()))


# -- runs ----------------------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    started: str
    finished: str
    version: str
    tables: dict
    criteria: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def write(self, out: Path, config: ExperimentConfig | None = None) -> Path:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.tables.items():
            (out / f"{name}.csv").write_text(text)
        rec = {"config_hash": self.config_hash, "started": self.started, "finished": self.finished,
               "version": self.version, "tables": sorted(self.tables), "criteria": self.criteria,
               "summary": self.summary}
        if config is not None:
            rec["config"] = json.loads(config.to_json())
        path = out / "record.json"
        path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
        return path


def _csv(header: str, rows) -> str:
    return header + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _grid(cfg):
    return sc.Grid(cfg.T, cfg.n_steps)


def _sched(cfg):
    return EpsSchedule.from_multiples(cfg.T / cfg.n_steps, cfg.eps_multiples)


def _ensemble(cfg):
    return sc.simulate(make_model(cfg.model, cfg.model_params), _grid(cfg), cfg.seed, cfg.n_paths)


def _flow(cfg) -> ko.FlowSpec:
    m = int(cfg.params.get("window_steps", min(cfg.n_steps, 128)))
    eta = make_eta(cfg.params.get("eta", "zero"), cfg.T, m)
    t = float(cfg.params.get("t", 0.0))
    return ko.FlowSpec(t, eta, cfg.seed, cfg.n_paths)


def _exp_integrate(cfg):
    ens = _ensemble(cfg)
    res = sc.forward_integral_sp(ens.values, ens, sched=_sched(cfg))
    d = res.diagnostics
    conv = _csv("eps,frac_terminal_delta1,frac_terminal_delta2,frac_ucp_delta1,frac_ucp_delta2",
                [(e, *t, *u) for e, t, u in zip(d.eps, d.terminal, d.ucp)])
    return ({"forward_integral": sc.ensemble_summary(ens.grid.times, res.paths), "convergence": conv},
            {"median_terminal": float(np.median(res.proper)), "certified": d.certified})


def _exp_qv(cfg):
    ens = _ensemble(cfg)
    qv = sc.quadratic_variation_sp(ens, _sched(cfg))
    return ({"quadratic_variation": sc.ensemble_summary(ens.grid.times, qv.paths)},
            {"median_terminal": float(np.median(qv.paths[:, -1])), "certified": qv.diagnostics.certified})


def _exp_chi_qv(cfg):
    lam = float(cfg.params.get("lambda", 2.0))
    g4 = float(cfg.params.get("g4", 1.0))
    mu = DiagonalMeasure(cfg.T, lam, g4=np.full(cfg.n_steps + 1, g4))
    ens = _ensemble(cfg)
    qv = sc.quadratic_variation_sp(ens, _sched(cfg)).paths
    rows = []
    for t in np.linspace(0.0, cfg.T, 9):
        exact = sc.chi_qv_window(lambda s: np.asarray(s, dtype=float), mu, t)[0]
        rows.append((t, exact, float(np.median(sc.chi_qv_window(qv, mu, t)))))
    return {"chi_qv": _csv("t,analytic_unit_rate,mc_median", rows)}, {"terminal_analytic": rows[-1][1]}


def _exp_ito(cfg):
    key = cfg.params.get("F", "square")
    if key not in SMOOTH_F:
        raise ValidationError(f"unknown F {key!r}; known: {sorted(SMOOTH_F)}")
    ens = _ensemble(cfg)
    r = sc.ito_residual(SMOOTH_F[key], ens, _sched(cfg))
    return ({"ito_residual": sc.ensemble_summary(r.times, r.paths)},
            {"median_sup_residual": float(np.median(r.sup))})


def _solution(cfg) -> fn.PathFunctional:
    key = cfg.params.get("solution", cfg.functional)
    if key not in SOLUTIONS:
        raise ValidationError(f"no closed-form solution registered for {key!r}; known: {sorted(SOLUTIONS)}")
    return SOLUTIONS[key](cfg.T)


def _exp_window_ito(cfg):
    U = _solution(cfg)
    ens = _ensemble(cfg)
    sigma = None if cfg.params.get("qv") == "estimated" else fn.unit_sigma
    r = sc.window_ito_residual(U, ens, sigma, _sched(cfg))
    return ({"window_ito_residual": sc.ensemble_summary(r.times, r.paths)},
            {"median_sup_residual": float(np.median(r.sup))})


def _exp_solve(cfg):
    spec = _flow(cfg)
    G = make_functional(cfg.functional, cfg.T, cfg.functional_params)
    est = ko.solve_linear_mc(G, None, spec)
    closed = SOLUTIONS[cfg.functional](cfg.T)(spec.t, spec.eta) if cfg.functional in SOLUTIONS else float("nan")
    return ({"solution": _csv("t,value,std_error,n_paths,closed_form",
                              [(spec.t, est.value, est.std_error, est.n_paths, closed)])},
            {"value": est.value, "std_error": est.std_error})


def _exp_residual(cfg):
    U = _solution(cfg)
    G = FUNCTIONALS[cfg.params.get("solution", cfg.functional)](cfg.T)
    r = ko.strict_residual(U, None, G=G)
    return ({"residual": _csv("t,L_U_plus_F,terminal_mismatch", r.per_probe)},
            {"residual": r.residual, "terminal_mismatch": r.terminal_mismatch})


def _exp_cylindrical(cfg):
    spec = _flow(cfg)
    rows = []
    names = cfg.params.get("names")
    reg = ko.cylindrical_registry(cfg.T)
    for k, name in enumerate(names.split(",") if names else reg):
        if name not in reg:
            raise ValidationError(f"unknown cylindrical functional {name!r}")
        C = reg[name]
        oracle = ko.cylindrical_gaussian_solution(C, spec.t, spec.eta)
        est = ko.solve_linear_mc(C.as_path_functional(), None,
                                 ko.FlowSpec(spec.t, spec.eta, cfg.seed + k, cfg.n_paths), guard=False)
        z = (est.value - oracle.value) / math.hypot(est.std_error, oracle.std_error)
        rows.append((name, oracle.value, oracle.std_error, est.value, est.std_error, z))
    return ({"cylindrical_oracle": _csv("name,oracle,oracle_error,mc,mc_stderr,z", rows)},
            {"worst_abs_z": max(abs(r[-1]) for r in rows)})


def _exp_viscosity(cfg):
    spec = _flow(cfg)
    G = make_functional(cfg.functional, cfg.T, cfg.functional_params)
    n_max = int(cfg.params.get("n_max", 8))
    seq = ko.strong_viscosity_sequence(G, spec.t, spec.eta, tuple(range(1, n_max + 1)))
    return {"viscosity": seq.to_table()}, {"limit": seq.limit, "converged": seq.converged}


def _exp_bsde(cfg):
    alpha = float(cfg.params.get("alpha", 0.5))
    r = bsde.linear_benchmark(alpha, _flow(cfg), int(cfg.params.get("picard", 3)))
    r.pop("solution")
    return {"bsde": bsde.benchmark_table([r])}, {"Y_t": r["Y_t"], "stderr": r["stderr"]}


def _exp_clark_ocone(cfg):
    res = bsde.robustness_study(fn.present_square(cfg.T), bsde.zero_driver(),
                                fn.present_square_solution(cfg.T), _grid(cfg), cfg.seed, cfg.n_paths)
    rows = [(k, *r.quantiles(), r.qv_terminal_median) for k, r in res.items()]
    return ({"clark_ocone": _csv("model,error_q05,error_median,error_q95,qv_terminal_median", rows)},
            {"cross_model_ratio": bsde.cross_model_ratio(res)})


RUNNERS = {
    "integrate": _exp_integrate, "qv": _exp_qv, "chi-qv": _exp_chi_qv, "ito-residual": _exp_ito,
    "window-ito": _exp_window_ito, "solve": _exp_solve, "residual": _exp_residual,
    "cylindrical-oracle": _exp_cylindrical, "viscosity": _exp_viscosity, "bsde": _exp_bsde,
    "clark-ocone": _exp_clark_ocone,
}


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def run(config: ExperimentConfig, write: bool = True) -> RunRecord:
    """Execute the configured experiment and persist its tables and record."""
    config.validate()
    started = _now()
    try:
        tables, summary = RUNNERS[config.experiment](config)
    except (KeyError, IndexError, TypeError) as exc:
        raise ValidationError(f"{config.experiment}: bad parameters ({exc})") from exc
    rec = RunRecord(config.digest(), started, _now(), __version__, tables, summary=summary)
    if write:
        rec.write(Path(config.out), config)
    return rec


def run_acceptance_suite(tier: str = "quick", out: str | None = None, echo=print) -> RunRecord:
    """Run every acceptance criterion at the tier's resolution and return the pass/fail matrix."""
    if tier not in acceptance.TIERS:
        raise ValidationError(f"unknown tier {tier!r}")
    started = _now()
    results = acceptance.run_acceptance_suite(tier, echo=echo)
    table = _csv("criterion,name,passed,seconds,detail",
                 [(r.number, r.name, r.passed, f"{r.seconds:.1f}", '"' + r.detail.replace('"', "'") + '"')
                  for r in results])
    rec = RunRecord(hashlib.sha256(f"accept:{tier}".encode()).hexdigest()[:16], started, _now(),
                    __version__, {"acceptance": table}, {r.number: r.passed for r in results})
    if out:
        rec.write(Path(out))
    return rec


# -- command line ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="flat key = value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--paths", type=int, default=argparse.SUPPRESS, help="number of paths")
    common.add_argument("--steps", type=int, default=argparse.SUPPRESS, help="grid steps on [0, T]")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--tier", choices=acceptance.TIERS, default=argparse.SUPPRESS)
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override a configuration key, e.g. model.hurst=0.7 or params.t=0.5")
    p = argparse.ArgumentParser(prog="pathreg", parents=[common],
                                description="Calculus via regularizations for window processes.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("accept",):
        sub.add_parser(name, parents=[common])
    return p


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    flat = parse_flat(ns.config.read_text()) if getattr(ns, "config", None) else {}
    flat["experiment"] = ns.command
    for item in getattr(ns, "set", []) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        flat[key.strip()] = _parse_value(val.strip())
    for attr, key in (("seed", "seed"), ("paths", "n_paths"), ("steps", "n_steps"), ("out", "out")):
        if hasattr(ns, attr):
            flat[key] = getattr(ns, attr)
    flat.setdefault("seed", 0)
    return ExperimentConfig.from_flat(flat)


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        if ns.command == "accept":
            rec = run_acceptance_suite(getattr(ns, "tier", "quick"), getattr(ns, "out", None))
            return EXIT_OK if all(rec.criteria.values()) else EXIT_VALIDATION
        rec = run(config_from_args(ns))
        print(json.dumps({"experiment": ns.command, "config_hash": rec.config_hash, **rec.summary},
                         default=float))
        return EXIT_OK
    except VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
