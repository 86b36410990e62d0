"""Command-line interface.

Subcommands: simulate, converge, check-hypotheses, malliavin-diag,
steps-audit.  Configuration comes from a flat INI-style file (sections and
key = value pairs, documented in the README) or a JSON file with the same
section/key structure.  Exit codes: 0 success, 2 configuration error,
3 numerical failure, 64 unknown subcommand / bad usage.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys

import numpy as np

from . import malliavin as ml
from .harness import ExperimentConfig, run_convergence
from .integrator import (
    CoverageError,
    SchemeConfig,
    ensemble_terminal,
    required_annuli,
    simulate_auxiliary,
)
from .model import IntegrabilityError, check_hypotheses, make_preset
from .sampler import derive_path_seed, sample_noise
from .steps import StepSequence, TimeGrid, check_step_lemma

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_scalar(v: str):
    s = v.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def _parse_value(v):
    if not isinstance(v, str):
        return v
    if "," in v:
        return [_parse_scalar(p) for p in v.split(",") if p.strip()]
    return _parse_scalar(v)


def load_config(path: str) -> dict:
    """Read the experiment configuration (INI sections or equivalent JSON)."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    text = open(path).read()
    if path.endswith(".json") or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON in {path}: {exc}") from None
        return {sec: dict(vals) for sec, vals in raw.items()}
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config in {path}: {exc}") from None
    return {sec: {k: _parse_value(v) for k, v in cp[sec].items()} for sec in cp.sections()}


def _get(cfg: dict, section: str, key: str, default=None, required=False):
    try:
        return cfg[section][key]
    except KeyError:
        if required:
            raise ConfigError(f"missing [{section}] {key} in config") from None
        return default


def build_model(cfg: dict):
    preset = _get(cfg, "model", "preset", required=True)
    params = {k: v for k, v in cfg.get("model", {}).items() if k != "preset"}
    try:
        return make_preset(preset, **params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model section: {exc}") from None


def build_sequence(cfg: dict) -> StepSequence:
    sec = cfg.get("steps", {})
    kind = sec.get("kind", "harmonic")
    vals = sec.get("values", ())
    if isinstance(vals, (int, float)):
        vals = (vals,)
    try:
        return StepSequence(
            kind=kind,
            scale=float(sec.get("scale", 1.0)),
            exponent=float(sec.get("exponent", 1.0)),
            values=tuple(float(v) for v in vals),
            gamma_max=(float(sec["gamma_max"]) if "gamma_max" in sec else None),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad steps section: {exc}") from None


def _as_list(v):
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v]


def _seed_of(cfg, args) -> int:
    if args.seed is not None:
        return args.seed
    return int(_get(cfg, "run", "seed", default=0) or 0)


def _outdir(args, name: str) -> str:
    out = args.out or f"out-{name}"
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(cfg, args) -> int:
    model = build_model(cfg)
    seq = build_sequence(cfg)
    sec = cfg.get("simulate", {})
    scheme = sec.get("scheme", "truncated-euler")
    horizon = float(sec.get("horizon", 1.0))
    n_paths = int(sec.get("paths", 100))
    x0 = float(sec.get("x0", 0.0))
    config = SchemeConfig(
        scheme=scheme,
        sequence=seq if scheme != "constant-ref" else None,
        step=float(sec["step"]) if scheme == "constant-ref" else None,
        horizon=horizon,
        x0=x0,
    )
    result = ensemble_terminal(model, config, n_paths, _seed_of(cfg, args), args.threads)
    out = _outdir(args, "simulate")
    result.to_csv(os.path.join(out, "samples.csv"))
    with open(os.path.join(out, "seeds.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["path_id", "master"])
        for row in result.seed_audit():
            w.writerow([row["path_id"], row["master"]])
    print(f"wrote {n_paths} terminal samples to {out}/samples.csv")
    return EXIT_OK


def cmd_converge(cfg, args) -> int:
    sec = cfg.get("converge", {})
    checkpoints = tuple(int(v) for v in _as_list(sec.get("checkpoints", [64, 128, 256])))
    paths = sec.get("paths", 10_000)
    if isinstance(paths, list):
        paths = tuple(int(p) for p in paths)
    else:
        paths = int(paths)
    ref = cfg.get("reference", {})
    exp_cfg = ExperimentConfig(
        preset=_get(cfg, "model", "preset", required=True),
        preset_params={k: v for k, v in cfg.get("model", {}).items() if k != "preset"},
        sequence=build_sequence(cfg),
        checkpoints=checkpoints,
        paths=paths,
        master_seed=_seed_of(cfg, args),
        x0=float(sec.get("x0", 0.0)),
        tv_bandwidth=(float(sec["tv_bandwidth"]) if "tv_bandwidth" in sec else None),
        tv_grid=int(sec.get("tv_grid", 512)),
        bootstrap=int(sec.get("bootstrap", 64)),
        ref_step=(float(ref["step"]) if "step" in ref else None),
        ref_horizon=(float(ref["horizon"]) if "horizon" in ref else None),
        ref_paths=int(ref.get("paths", 100_000)),
        ref_burn_in=float(ref.get("burn_in", 0.0)),
        threads=args.threads,
    )
    report = run_convergence(exp_cfg)
    out = _outdir(args, "converge")
    with open(os.path.join(out, "report.json"), "w") as f:
        f.write(report.to_json())
    with open(os.path.join(out, "rows.csv"), "w") as f:
        f.write(report.rows_csv())
    with open(os.path.join(out, "reference.csv"), "w", newline="") as f:
        w = csv.writer(f)
        d = report.ref_samples.shape[1]
        w.writerow([f"x{i}" for i in range(d)])
        for row in report.ref_samples:
            w.writerow([repr(float(v)) for v in row])
    with open(os.path.join(out, "seeds.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["component", "seed", "tag"])
        w.writerow(["reference", exp_cfg.master_seed, 1_000_000])
        for i, n in enumerate(exp_cfg.checkpoints):
            w.writerow([f"checkpoint_{n}", exp_cfg.master_seed, i])
    slope = report.w1_fit["slope"] if report.w1_fit else float("nan")
    print(f"wrote report to {out}/report.json (W1 slope {slope:.3f})")
    return EXIT_OK


def cmd_check_hypotheses(cfg, args) -> int:
    model = build_model(cfg)
    sec = cfg.get("hypotheses", {})
    u_grid = [float(u) for u in _as_list(sec.get("u_grid"))] or None
    n_samples = int(sec.get("samples", 4096))
    seq = build_sequence(cfg) if "steps" in cfg else None
    rep = check_hypotheses(
        model,
        u_grid=np.asarray(u_grid) if u_grid else None,
        seq=seq,
        n_samples=n_samples,
        seed=_seed_of(cfg, args),
    )
    out = _outdir(args, "hypotheses")
    payload = rep.to_dict()
    payload["growth"] = f"growth: {payload['growth']}"
    with open(os.path.join(out, "hypotheses.json"), "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
    print(f"theta = {rep.theta:.6g}; {payload['growth']}")
    for name, ok in sorted(rep.flags.items()):
        print(f"  {name}: {'ok' if ok else 'FLAG'}")
    return EXIT_OK


def cmd_malliavin_diag(cfg, args) -> int:
    model = build_model(cfg)
    seq = build_sequence(cfg)
    grid = TimeGrid(seq)
    sec = cfg.get("malliavin", {})
    t_list = [float(t) for t in _as_list(sec.get("t", [1.0, 2.0]))]
    s_list = [float(s) for s in _as_list(sec.get("s", [0.5, 1.0, 5.0, 20.0]))]
    n_real = int(sec.get("realizations", 100_000))
    n_paths = int(sec.get("paths", 100))
    substeps = int(sec.get("substeps", 32))
    seed = _seed_of(cfg, args)
    out = _outdir(args, "malliavin")

    # per-path (chi, lambda_min, margin) diagnostics
    t_diag = max(t_list)
    K = required_annuli(model, grid, t_diag)
    rows = []
    for pid in range(n_paths):
        noise = sample_noise(model, t_diag, K, derive_path_seed(seed, pid))
        traj = simulate_auxiliary(model, grid, t_diag, noise, 0.0, substeps=substeps)
        state = ml.malliavin_state(model, noise, traj)
        rows.append((pid, state.chi, state.a_t, state.lambda_min,
                     state.step1_bound, state.step1_margin))
    with open(os.path.join(out, "malliavin.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["path_id", "chi", "a_t", "lambda_min", "step1_bound", "step1_margin"])
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    # Laplace-identity comparison table
    with open(os.path.join(out, "laplace.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "s", "mc_mean", "mc_stderr", "closed_form", "z_score"])
        for t in t_list:
            chis = ml.chi_ensemble(model, grid, t, n_real, seed)
            for s in s_list:
                vals = np.exp(-s * chis)
                mc = float(vals.mean())
                se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
                cf = ml.laplace_chi_closed_form(model, grid, t, s)
                z = abs(mc - cf) / se if se > 0 else 0.0
                w.writerow([t, s, repr(mc), repr(se), repr(cf), repr(float(z))])
    n_neg = sum(1 for r in rows if r[5] < -1e-12)
    print(f"wrote {out}/malliavin.csv and {out}/laplace.csv "
          f"({n_neg} of {n_paths} paths violate the eigenvalue bound)")
    return EXIT_OK


def cmd_steps_audit(cfg, args) -> int:
    seq = build_sequence(cfg)
    sec = cfg.get("steps_audit", {})
    rho = float(sec.get("rho", 1.5))
    alpha = float(sec.get("alpha", 1.0))
    n_max = int(sec.get("n_max", 2000))
    rep = check_step_lemma(seq, rho=rho, alpha=alpha, n_max=n_max)
    out = _outdir(args, "steps-audit")
    payload = {
        "rho": rep.rho,
        "alpha": rep.alpha,
        "n_max": rep.n_max,
        "omega_bar": rep.omega_bar,
        "condition_ok": rep.condition_ok,
        "max_ratio": rep.max_ratio,
        "ratio_bounded": rep.ratio_bounded,
        "running_max_mid": rep.running_max_mid,
        "running_max_last": rep.running_max_last,
        "n_star": rep.n_star,
        "comparison_ok": rep.comparison_ok,
    }
    with open(os.path.join(out, "steps_audit.json"), "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
    with open(os.path.join(out, "ratios.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n", "u_n", "ratio"])
        for i, (u, r) in enumerate(zip(rep.u, rep.ratio), start=1):
            w.writerow([i, repr(float(u)), repr(float(r))])
    print(rep.summary())
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "check-hypotheses": cmd_check_hypotheses,
    "malliavin-diag": cmd_malliavin_diag,
    "steps-audit": cmd_steps_audit,
}


def main(argv=None) -> int:
    parser = _Parser(prog="jumpinv", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=(name != "steps-audit"), default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default=None)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config) if args.config else {}
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrabilityError, CoverageError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
