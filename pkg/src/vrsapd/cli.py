"""Command-line driver: ``vrsapd {verify,run,bias-scan,reference}``.

The config file is INI-style (flat ``[section]`` blocks of ``key = value``
lines, ``#`` comments).  Every key has a default; unknown sections and keys
are rejected.  See the README for the grammar and the defaults.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dro import Dataset, DatasetError, RegDroProblem, load_dataset, normalize, synthetic_dataset
from .oracle import ConvergenceError, LogisticPerturbedSaddle, QuadraticSaddle, reference_solution
from .params import CurvatureProfile, ThresholdWarning, check_admissibility, params_from_theta, theta_thresholds
from .projections import ProjectionError
from .solvers import SOLVER_KINDS, SolverSpec

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

PROBLEM_KINDS = ("quadratic", "logistic", "dro", "profile")

# Defaults per section; ``None`` means "derived" and is written as ``auto``.
PROBLEM_COMMON = {"kind": "quadratic", "mu_x": 1.0, "mu_y": 1.0}
PROBLEM_KEYS = {
    "quadratic": {"dim_x": 2, "dim_y": 2, "coupling_scale": 1.0, "noise_sigma": 0.1, "instance_seed": 0},
    "logistic": {"coupling": 1.0, "tilt": 0.0, "noise_sigma": 1.0},
    "dro": {
        "dataset": "synthetic",
        "format": "csv",
        "label_column": "-1",
        "positive_class": None,
        "normalization": "minmax_per_column",
        "r": None,
        "D_x": 100.0,
        "batch_size": 10,
        "synthetic_n": 200,
        "synthetic_d": 10,
        "synthetic_flip": 0.1,
        "instance_seed": 0,
    },
    "profile": {"L_xx": 0.0, "L_yx": 0.0, "L_yy": 0.0},
}
SOLVER_DEFAULTS = {"kind": "sapd", "theta": 0.95, "eta": None, "mode": "averaged", "burn_in": 0, "project": True}
SECTION_DEFAULTS = {
    "experiment": {"num_paths": 50, "num_iters": 1000, "master_seed": 0, "stride": 1, "threads": 1},
    "verify": {"thetas": "hat,mid,0.99"},
    "bias_scan": {
        "thetas": "0.9,0.95,0.975",
        "vr_pairing": "none",
        "tail_len": 20000,
        "num_paths": 64,
        "burn_in": None,
        "n_batches": 20,
    },
    "reference": {"theta": None, "tol_rel": 1e-4, "residual_tol": 1e-6, "max_iter": 1_000_000},
    "output": {"directory": "out"},
}
# Keys that cannot change any numerical output and are left out of the config hash.
UNHASHED = {("experiment", "threads"), ("output", "directory")}


class ConfigError(ValueError):
    pass


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class Config:
    """Effective configuration: every section with defaults applied."""

    sections: dict
    source: str = "<defaults>"

    def __getitem__(self, name):
        return self.sections[name]

    @property
    def solvers(self) -> dict:
        return {k.split(None, 1)[1]: v for k, v in self.sections.items() if k.startswith("solver ")}

    def dumps(self, hashed_only=False) -> str:
        out = []
        for name, body in self.sections.items():
            out.append(f"[{name}]")
            for key, val in body.items():
                if hashed_only and (name, key) in UNHASHED:
                    continue
                out.append(f"{key} = {_fmt(val)}")
            out.append("")
        return "\n".join(out)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dumps(hashed_only=True).encode()).hexdigest()[:16]

    def problem_hash(self) -> str:
        body = "\n".join(f"{k}={_fmt(v)}" for k, v in self.sections["problem"].items())
        return hashlib.sha256(body.encode()).hexdigest()[:16]


def _line_of(text, section, key):
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and s.split("=", 1)[0].strip() == key:
            return i
    return None


def _coerce(text, section, key, raw, default):
    where = f"{text[0]}:{_line_of(text[1], section, key) or '?'}: [{section}] {key}"
    raw = raw.strip()
    if raw.lower() == "auto" and default is None:
        return None
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or (default is None and key not in ("positive_class", "eta")):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("must be finite")
            return v
        if key == "eta":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None


def _fill(text, section, given, defaults):
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        line = _line_of(text[1], section, unknown[0]) or "?"
        raise ConfigError(f"{text[0]}:{line}: [{section}] unknown key {unknown[0]!r}")
    return {k: (_coerce(text, section, k, given[k], d) if k in given else d) for k, d in defaults.items()}


def parse_config(text: str, source: str = "<string>") -> Config:
    """Parse and validate config text; raises ConfigError with a location."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    ctx = (source, text)
    sections = {}

    given = dict(cp["problem"]) if cp.has_section("problem") else {}
    kind = given.get("kind", PROBLEM_COMMON["kind"]).strip()
    if kind not in PROBLEM_KINDS:
        raise ConfigError(
            f"{source}:{_line_of(text, 'problem', 'kind') or '?'}: [problem] kind must be one of {PROBLEM_KINDS}"
        )
    sections["problem"] = _fill(ctx, "problem", given, {**PROBLEM_COMMON, **PROBLEM_KEYS[kind]})

    solver_names = [s for s in cp.sections() if s.startswith("solver ")]
    if not solver_names:
        solver_names = ["solver sapd"]
    for sec in solver_names:
        if len(sec.split()) != 2:
            raise ConfigError(f"{source}: solver section {sec!r} must be named [solver NAME]")
        body = _fill(ctx, sec, dict(cp[sec]) if cp.has_section(sec) else {}, SOLVER_DEFAULTS)
        sections[sec] = body

    for sec, defaults in SECTION_DEFAULTS.items():
        sections[sec] = _fill(ctx, sec, dict(cp[sec]) if cp.has_section(sec) else {}, defaults)

    extra = [s for s in cp.sections() if s not in sections]
    if extra:
        line = next((i for i, raw in enumerate(text.splitlines(), 1) if raw.strip() == f"[{extra[0]}]"), "?")
        raise ConfigError(f"{source}:{line}: unknown section [{extra[0]}]")
    cfg = Config(sections, source)
    _validate(cfg)
    return cfg


def _fail(cfg, section, key, msg):
    raise ConfigError(f"{cfg.source}: [{section}] {key}: {msg}")


def _validate(cfg: Config):
    p = cfg["problem"]
    for key in ("mu_x", "mu_y"):
        if not p[key] > 0:
            _fail(cfg, "problem", key, "must be positive")
    if p["kind"] == "dro":
        if p["dataset"] != "synthetic" and not os.path.isfile(p["dataset"]):
            _fail(cfg, "problem", "dataset", f"file not found: {p['dataset']!r}")
        if p["format"] not in ("csv", "svmlight"):
            _fail(cfg, "problem", "format", "must be csv or svmlight")
        if p["normalization"] not in ("minmax_per_column", "global_scale", "none"):
            _fail(cfg, "problem", "normalization", "must be minmax_per_column, global_scale or none")
        if p["batch_size"] < 1:
            _fail(cfg, "problem", "batch_size", "must be positive")
    for name, s in cfg.solvers.items():
        sec = f"solver {name}"
        if s["kind"] not in SOLVER_KINDS:
            _fail(cfg, sec, "kind", f"must be one of {SOLVER_KINDS}")
        if s["kind"] in ("sapd", "apd", "vr_sapd") and not 0 < s["theta"] < 1:
            _fail(cfg, sec, "theta", "must lie in (0, 1)")
        if s["kind"] == "vr_sapd" and s["theta"] <= 0.5:
            _fail(cfg, sec, "theta", "must exceed 0.5 so that 2*theta - 1 stays in (0, 1)")
        if s["mode"] not in ("raw", "averaged"):
            _fail(cfg, sec, "mode", "must be raw or averaged")
        if s["eta"] is not None and s["eta"] < 0:
            _fail(cfg, sec, "eta", "must be nonnegative")
    e = cfg["experiment"]
    for key in ("num_paths", "num_iters", "stride", "threads"):
        if e[key] < 1:
            _fail(cfg, "experiment", key, "must be positive")
    verify_thetas(cfg)
    bias_thetas(cfg)
    b = cfg["bias_scan"]
    if b["n_batches"] < 2 or b["tail_len"] < 20 * b["n_batches"]:
        _fail(cfg, "bias_scan", "tail_len", "needs at least 20 samples per batch")


def _floats(cfg, section, key, tokens=()):
    out = []
    for tok in str(cfg[section][key]).split(","):
        tok = tok.strip()
        if tok in tokens:
            out.append(tok)
            continue
        try:
            out.append(float(tok))
        except ValueError:
            _fail(cfg, section, key, f"bad entry {tok!r}")
    return out


def verify_thetas(cfg):
    vals = _floats(cfg, "verify", "thetas", tokens=("hat", "mid"))
    if any(isinstance(v, float) and not 0 < v < 1 for v in vals):
        _fail(cfg, "verify", "thetas", "entries must lie in (0, 1)")
    return vals


def bias_thetas(cfg):
    """Theta list and extrapolation pairs for the bias scan."""
    thetas = _floats(cfg, "bias_scan", "thetas")
    if any(not 0 < t < 1 for t in thetas):
        _fail(cfg, "bias_scan", "thetas", "entries must lie in (0, 1)")
    spec = cfg["bias_scan"]["vr_pairing"].strip().lower()
    if spec == "none":
        pairs = None
    elif spec == "each":
        bad = [t for t in thetas if t <= 0.5]
        if bad:
            _fail(cfg, "bias_scan", "vr_pairing", f"theta {bad[0]} <= 0.5 makes 2*theta - 1 leave (0, 1)")
        pairs = [(t, 2 * t - 1) for t in thetas]
    else:
        try:
            t1, t2 = (float(v) for v in spec.split(":"))
        except ValueError:
            _fail(cfg, "bias_scan", "vr_pairing", "must be none, each, or THETA1:THETA2")
        if not (0.5 < t1 < 1 and 0 < t2 < 1 and t1 != t2):
            _fail(cfg, "bias_scan", "vr_pairing", f"pair {t1}:{t2} needs theta_1 > 0.5 and both in (0, 1)")
        pairs = [(t1, t2)]
    return thetas, pairs


def build_problem(cfg: Config):
    p = cfg["problem"]
    kind = p["kind"]
    if kind == "profile":
        return None
    if kind == "quadratic":
        rng = np.random.default_rng(p["instance_seed"])
        C = p["coupling_scale"] * rng.standard_normal((p["dim_y"], p["dim_x"]))
        return QuadraticSaddle(p["mu_x"], p["mu_y"], C, p["noise_sigma"])
    if kind == "logistic":
        return LogisticPerturbedSaddle(p["mu_x"], p["mu_y"], p["coupling"], p["noise_sigma"], p["tilt"])
    if p["dataset"] == "synthetic":
        ds = synthetic_dataset(p["synthetic_n"], p["synthetic_d"], np.random.default_rng(p["instance_seed"]),
                               p["synthetic_flip"])
    else:
        col = p["label_column"]
        col = int(col) if col.lstrip("-").isdigit() else col
        ds = load_dataset(p["dataset"], p["format"], label_column=col, positive_class=p["positive_class"])
    ds = normalize(ds, p["normalization"])
    return RegDroProblem(ds, p["mu_x"], p["mu_y"], r=p["r"], D_x=p["D_x"], batch_size=p["batch_size"])


def problem_profile(cfg: Config, problem=None) -> CurvatureProfile:
    p = cfg["problem"]
    if p["kind"] == "profile":
        return CurvatureProfile(p["mu_x"], p["mu_y"], p["L_xx"], p["L_yx"], p["L_yy"])
    return problem.profile


def build_solvers(cfg: Config, profile):
    specs = []
    for name, s in cfg.solvers.items():
        kind = s["kind"]
        if kind in ("sgda", "smp", "sogda"):
            specs.append(SolverSpec.baseline(kind, profile, eta=s["eta"], name=name, project=s["project"]))
        else:
            specs.append(SolverSpec(kind, params=params_from_theta(profile, s["theta"]), name=name,
                                    project=s["project"], mode=s["mode"], burn_in=s["burn_in"]))
    return specs


# ---------------------------------------------------------------- output


def _meta(cfg: Config) -> dict:
    return {"version": __version__, "master_seed": cfg["experiment"]["master_seed"], "config_hash": cfg.hash}


def _csv_header(cfg) -> str:
    m = _meta(cfg)
    return f"# vrsapd version={m['version']} master_seed={m['master_seed']} config_hash={m['config_hash']}\n"


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(cfg, path, payload):
    _write(path, json.dumps({"meta": _meta(cfg), **payload}, indent=2, sort_keys=False) + "\n")


def _csv_text(cfg, header, rows) -> str:
    buf = io.StringIO()
    buf.write(_csv_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


# ---------------------------------------------------------------- reference cache


def load_or_compute_reference(cfg, problem, outdir):
    if problem.known_saddle is not None:
        return problem.known_saddle
    path = os.path.join(outdir, "reference.json")
    if os.path.isfile(path):
        with open(path) as fh:
            data = json.load(fh)
        if data.get("problem_hash") == cfg.problem_hash():
            return np.asarray(data["x_star"]), np.asarray(data["y_star"])
    return compute_reference(cfg, problem, outdir)


def compute_reference(cfg, problem, outdir):
    r = cfg["reference"]
    if problem.known_saddle is not None:
        xs, ys = problem.known_saddle
    else:
        xs, ys = reference_solution(problem, tol_rel=r["tol_rel"], max_iter=r["max_iter"], theta=r["theta"],
                                    residual_tol=r["residual_tol"])
    _write_json(cfg, os.path.join(outdir, "reference.json"),
                {"problem_hash": cfg.problem_hash(), "x_star": xs.tolist(), "y_star": ys.tolist()})
    return xs, ys


# ---------------------------------------------------------------- commands


def cmd_verify(cfg: Config, outdir: str) -> int:
    problem = build_problem(cfg)
    profile = problem_profile(cfg, problem)
    th1, th2 = theta_thresholds(profile)
    hat = max(th1, th2)
    grid = []
    for v in verify_thetas(cfg):
        grid.append(hat if v == "hat" else (1 + hat) / 2 if v == "mid" else v)
    reports, failing = [], []
    for th in grid:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ThresholdWarning)
            params = params_from_theta(profile, th)
        rep = check_admissibility(profile, params)
        reports.append({"theta": th, "tau": params.tau, "sigma": params.sigma, "alpha": params.alpha, **rep.to_dict()})
        if not rep.passed:
            failing.append(th)
    _write_json(cfg, os.path.join(outdir, "certificates.json"),
                {"theta_hat_1": th1, "theta_hat_2": th2, "reports": reports})
    for r in reports:
        print(f"theta={r['theta']!r}: {'pass' if r['pass'] else 'FAIL'} (min_eig={r['min_eig_full']:.3e})")
    if failing:
        print("failing theta: " + ", ".join(repr(t) for t in failing), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_run(cfg: Config, outdir: str) -> int:
    from .harness import ExperimentPlan, run_experiment

    problem = build_problem(cfg)
    if problem is None:
        raise ConfigError("[problem] kind = profile supports only the verify command")
    z_star = load_or_compute_reference(cfg, problem, outdir)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThresholdWarning)
        specs = build_solvers(cfg, problem.profile)
    e = cfg["experiment"]
    plan = ExperimentPlan(problem, specs, num_paths=e["num_paths"], num_iters=e["num_iters"],
                          master_seed=e["master_seed"], stride=e["stride"], z_star=z_star, threads=e["threads"])
    summary = run_experiment(plan)
    rows = []
    for spec in specs:
        lab = spec.label
        mean, std, paths = summary.mean[lab], summary.std[lab], summary.paths[lab]
        if not np.all(np.isfinite(mean)):
            raise FloatingPointError(f"solver {lab} produced non-finite relative EDS")
        for i, k in enumerate(summary.k):
            rows.append((lab, int(k), float(mean[i]), float(std[i])))
        header = ["k", "mean_rel_eds", "std_rel_eds"] + [f"rel_eds_p{p}" for p in range(paths.shape[1])]
        curve = [[int(k), float(mean[i]), float(std[i])] + [float(v) for v in paths[i]]
                 for i, k in enumerate(summary.k)]
        _write(os.path.join(outdir, "curves", f"{_safe(lab)}.csv"), _csv_text(cfg, header, curve))
        m, s = summary.final(lab)
        print(f"{lab}: final mean rel EDS {m:.4e} +/- {s:.4e}")
    _write(os.path.join(outdir, "summary.csv"),
           _csv_text(cfg, ["solver", "k", "mean_rel_eds", "std_rel_eds"], rows))
    return EXIT_OK


def cmd_bias_scan(cfg: Config, outdir: str) -> int:
    from .harness import bias_scan

    problem = build_problem(cfg)
    if problem is None:
        raise ConfigError("[problem] kind = profile supports only the verify command")
    thetas, pairs = bias_thetas(cfg)
    b = cfg["bias_scan"]
    z_star = load_or_compute_reference(cfg, problem, outdir)
    table = bias_scan(problem, thetas, vr_pairing=pairs, z_star=z_star,
                      master_seed=cfg["experiment"]["master_seed"], threads=cfg["experiment"]["threads"],
                      burn_in=None if b["burn_in"] is None else int(b["burn_in"]), tail_len=b["tail_len"],
                      num_paths=b["num_paths"], n_batches=b["n_batches"])
    extra = {e["theta_1"]: e for e in table.extrapolated}
    rows = []
    for r in table.rows:
        e = extra.get(r["theta"])
        rows.append([r["theta"], r["bias"], r["se"], r["m2"], r["se_m2"]]
                    + (([e["theta_2"], e["bias"], e["se"]] if e else ["", "", ""]) if pairs else []))
    header = ["theta", "bias", "se_bias", "m2", "se_m2"]
    if pairs:
        header += ["theta_2", "extrapolated_bias", "extrapolated_se"]
    _write(os.path.join(outdir, "bias_table.csv"), _csv_text(cfg, header, rows))
    _write_json(cfg, os.path.join(outdir, "bias_table.json"), table.to_dict())
    for r in table.rows:
        print(f"theta={r['theta']!r}: bias {r['bias']:.4e} +/- {r['se']:.1e}")
    for e in table.extrapolated:
        print(f"extrapolated ({e['theta_1']!r}, {e['theta_2']!r}): bias {e['bias']:.4e} +/- {e['se']:.1e}")
    print(f"log-log slope {table.slope:.3f}")
    return EXIT_OK


def cmd_reference(cfg: Config, outdir: str) -> int:
    problem = build_problem(cfg)
    if problem is None:
        raise ConfigError("[problem] kind = profile supports only the verify command")
    xs, ys = compute_reference(cfg, problem, outdir)
    print(f"reference written to {os.path.join(outdir, 'reference.json')} (|x*|={np.linalg.norm(xs):.6g})")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "run": cmd_run, "bias-scan": cmd_bias_scan, "reference": cmd_reference}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vrsapd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="config file (defaults are used when omitted)")
    ap.add_argument("--seed", type=int, metavar="N", help="override [experiment] master_seed")
    ap.add_argument("--out", metavar="DIR", help="override [output] directory")
    ap.add_argument("--threads", type=int, metavar="N", help="override [experiment] threads")
    return ap


def load_config(args) -> Config:
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text, args.config)
    else:
        cfg = parse_config("", "<defaults>")
    if args.seed is not None:
        cfg["experiment"]["master_seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg["experiment"]["threads"] = args.threads
    if args.out is not None:
        cfg["output"]["directory"] = args.out
    return cfg


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        outdir = cfg["output"]["directory"]
        status = COMMANDS[args.command](cfg, outdir)
        _write(os.path.join(outdir, "effective_config.ini"), cfg.dumps())
        return status
    except (ConfigError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, ProjectionError, FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
