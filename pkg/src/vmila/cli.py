"""Command-line experiment runner.

    vmila run <config>
    vmila sweep-eta <config>
    vmila make-problem <name> <scale> <seed>

Configs are ``key = value`` lines with ``problem.``, ``solver.``,
``sweep.`` and ``output.`` prefixes; ``#`` starts a comment. Relative output
directories are resolved under ``$VMILA_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fixtures import fixture_path
from .imaging import TABLE1, make_test_problem, write_raw
from .inner import EpsAdaptive, EpsFixed, Eta
from .model import DomainError, InfeasiblePointError
from .oracle import read_fixture
from .solver import (
    InnerSolverError,
    LineSearchError,
    LineSearchParams,
    SolverConfig,
    Summable,
    vmila_run,
)

log = logging.getLogger("vmila")

OUTPUT_ROOT_ENV = "VMILA_OUTPUT_ROOT"
TRACE_HEADER = ["k", "f", "delta", "lambda", "backtracks", "inner_iters", "eps_or_eta", "time_s"]
SUMMARY_HEADER = ["eta", "outer_iters", "mean_inner_iters", "final_f", "wall_time"]

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISSING = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "on", "yes"):
        return True
    if v in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _float_list(s):
    vals = [float(t) for t in s.replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit_open(v):
    return 0 < v < 1


# key -> (parser, default, predicate or None, description of the valid range)
SCHEMA = {
    "problem.name": (str, "phantom", lambda v: v in TABLE1, f"one of {sorted(TABLE1)}"),
    "problem.scale": (int, 4, lambda v: v >= 1, "an integer >= 1"),
    "problem.seed": (int, 0, _nonneg, "a nonnegative integer"),
    "problem.reference": (str, "", None, ""),
    "problem.noise": (_bool, True, None, ""),
    "problem.blur": (_bool, True, None, ""),
    "solver.alpha_min": (float, 1e-5, _positive, "positive"),
    "solver.alpha_max": (float, 1e2, _positive, "positive"),
    "solver.alpha0": (float, 1.0, _positive, "positive"),
    "solver.metric": (str, "split_gradient", lambda v: v in ("identity", "split_gradient"),
                      "identity or split_gradient"),
    "solver.steplength": (str, "bb", lambda v: v in ("bb", "fixed"), "bb or fixed"),
    "solver.alpha": (float, 1.0, _positive, "positive"),
    "solver.rule": (str, "eta", lambda v: v in ("eta", "eps_fixed", "eps_adaptive", "summable"),
                    "eta, eps_fixed, eps_adaptive or summable"),
    "solver.eta": (float, 0.5, lambda v: 0 < v <= 1, "in (0, 1]"),
    "solver.tau": (float, 1.0, _positive, "positive"),
    "solver.eps": (float, 1e-6, _nonneg, "nonnegative"),
    "solver.c": (float, 1.0, _positive, "positive"),
    "solver.p": (float, 2.0, lambda v: v > 1, "greater than 1"),
    "solver.delta": (float, 0.5, _unit_open, "in (0, 1)"),
    "solver.beta": (float, 1e-4, _unit_open, "in (0, 1)"),
    "solver.gamma": (float, 1.0, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "solver.max_backtracks": (int, 60, _nonneg, "a nonnegative integer"),
    "solver.max_outer": (int, 300, _nonneg, "a nonnegative integer"),
    "solver.inner_max": (int, 1500, _positive, "a positive integer"),
    "solver.a_param": (float, 2.1, lambda v: v > 2, "greater than 2"),
    "solver.target_tolerance": (float, 0.0, _nonneg, "nonnegative"),
    "solver.mu_scale": (float, 1e10, _nonneg, "nonnegative"),
    "solver.bb_threshold": (float, 0.15, _positive, "positive"),
    "solver.bb_memory": (int, 3, _positive, "a positive integer"),
    "solver.warm_start": (_bool, True, None, ""),
    "sweep.eta": (_float_list, [1e-6, 1e-2, 0.5],
                  lambda v: len(v) >= 2 and all(0 < e <= 1 for e in v),
                  "at least two values in (0, 1]"),
    "sweep.workers": (int, 1, _positive, "a positive integer"),
    "output.dir": (str, "vmila_out", None, ""),
    "output.timing": (_bool, True, None, ""),
    "output.plots": (_bool, True, None, ""),
    "output.fixture": (str, "", None, ""),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: s[1] for k, s in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def rule(self, eta=None):
        r = self["solver.rule"]
        if eta is not None or r == "eta":
            return Eta(self["solver.eta"] if eta is None else eta)
        if r == "eps_fixed":
            return EpsFixed(self["solver.eps"])
        if r == "eps_adaptive":
            return EpsAdaptive(self["solver.tau"])
        return Summable(self["solver.c"], self["solver.p"])

    def solver_config(self, eta=None) -> SolverConfig:
        v = self.values
        cfg = SolverConfig(
            alpha_min=v["solver.alpha_min"],
            alpha_max=v["solver.alpha_max"],
            metric_strategy=v["solver.metric"],
            fixed_alpha=v["solver.alpha"] if v["solver.steplength"] == "fixed" else None,
            alpha0=v["solver.alpha0"],
            bb_threshold=v["solver.bb_threshold"],
            bb_memory=v["solver.bb_memory"],
            stopping_rule=self.rule(eta),
            mu_scale=v["solver.mu_scale"],
            linesearch=LineSearchParams(v["solver.delta"], v["solver.beta"],
                                        v["solver.gamma"], v["solver.max_backtracks"]),
            max_outer=v["solver.max_outer"],
            inner_max=v["solver.inner_max"],
            a_param=v["solver.a_param"],
            target_tolerance=v["solver.target_tolerance"],
            warm_start=v["solver.warm_start"],
        )
        return cfg.validate()

    def output_dir(self) -> Path:
        out = Path(self["output.dir"])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


def parse_config(text, source="<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parse, _, ok, desc = SCHEMA[key]
        try:
            parsed = parse(val)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {val!r} ({exc})") from None
        if ok is not None and not ok(parsed):
            raise ConfigError(f"{key}: must be {desc}, got {val}")
        cfg.values[key] = parsed
    _cross_check(cfg)
    return cfg


def _cross_check(cfg):
    v = cfg.values
    if v["solver.alpha_min"] > v["solver.alpha_max"]:
        raise ConfigError("solver.alpha_min: must not exceed solver.alpha_max")
    if v["solver.steplength"] == "fixed" and not (
        v["solver.alpha_min"] <= v["solver.alpha"] <= v["solver.alpha_max"]
    ):
        raise ConfigError("solver.alpha: must lie in [solver.alpha_min, solver.alpha_max]")
    try:
        cfg.solver_config()
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} not found")
    return parse_config(path.read_text(), str(path))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_trace_csv(path, trace, timing=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.records:
            t = r.time_s if timing else 0.0
            w.writerow([_fmt(x) for x in (r.k, r.f, r.delta, r.lam, r.backtracks,
                                          r.inner_iters, r.eps_or_eta, t)])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != TRACE_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return {name: np.array([float(r[i]) for r in rows[1:]]) for i, name in enumerate(TRACE_HEADER)}


def _build_problem(cfg):
    return make_test_problem(
        cfg["problem.name"], cfg["problem.scale"], cfg["problem.seed"],
        noise=cfg["problem.noise"], blur=cfg["problem.blur"],
        reference=cfg["problem.reference"] or None,
    )


def _solve(tp, scfg):
    t0 = time.perf_counter()
    x, trace = vmila_run(tp.problem, scfg, tp.initial_point())
    return x, trace, time.perf_counter() - t0


def _summary_line(trace):
    inner = trace.column("inner_iters")
    mean_inner = float(inner.mean()) if inner.size else 0.0
    return (f"final f = {trace.f_final:.10g}, outer iterations = {len(trace)}, "
            f"mean inner iterations = {mean_inner:.2f}, stop = {trace.stop_reason}")


def cmd_run(cfg: ExperimentConfig) -> int:
    tp = _build_problem(cfg)
    scfg = cfg.solver_config()
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    x, trace, _ = _solve(tp, scfg)
    write_trace_csv(out / "trace.csv", trace, cfg["output.timing"])
    write_raw(out / "x_final.raw", x.reshape(tp.shape))
    if cfg["output.plots"]:
        from . import plotting

        plotting.plot_objective(trace, out / "objective.png", title=f"{tp.name} {tp.shape[0]}x{tp.shape[1]}")
        plotting.save_image(x.reshape(tp.shape), out / "x_final.png")
    print(_summary_line(trace))
    return EXIT_OK


def _load_fstar(cfg):
    path = Path(cfg["output.fixture"]) if cfg["output.fixture"] else fixture_path(
        cfg["problem.name"], cfg["problem.scale"], cfg["problem.seed"])
    if not path.exists():
        warnings.warn(f"no f* fixture at {path}; relative decrease column omitted", stacklevel=2)
        return None
    return float(read_fixture(path)["f_star"])


def relative_decrease(f_values, f_star):
    f = np.asarray(f_values, dtype=float)
    return (f - f_star) / (f[0] - f_star)


def _eta_label(eta):
    return f"{eta:g}"


def cmd_sweep_eta(cfg: ExperimentConfig) -> int:
    etas = cfg["sweep.eta"]
    tp = _build_problem(cfg)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    configs = [cfg.solver_config(eta) for eta in etas]
    # touch the shared problem data before any worker starts
    _ = tp.problem.nonsmooth.operator_norm
    with ThreadPoolExecutor(max_workers=cfg["sweep.workers"]) as pool:
        results = list(pool.map(lambda c: _solve(tp, c), configs))
    f_star = _load_fstar(cfg)
    timing = cfg["output.timing"]
    header = SUMMARY_HEADER + (["final_rel_decrease"] if f_star is not None else [])
    rows, curves_k, curves_t = [], {}, {}
    for eta, (x, trace, wall) in zip(etas, results):
        write_trace_csv(out / f"trace_eta_{_eta_label(eta)}.csv", trace, timing)
        inner = trace.column("inner_iters")
        row = [eta, len(trace), float(inner.mean()) if inner.size else 0.0,
               trace.f_final, wall if timing else 0.0]
        if f_star is not None:
            rel = relative_decrease(trace.f_values, f_star)
            row.append(rel[-1])
            curves_k[f"eta = {_eta_label(eta)}"] = (np.arange(rel.size), rel)
            t = np.concatenate([[0.0], np.cumsum(trace.column("time_s"))])
            curves_t[f"eta = {_eta_label(eta)}"] = (t, rel)
        rows.append(row)
        print(f"eta = {_eta_label(eta)}: {_summary_line(trace)}")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[_fmt(v) for v in r] for r in rows])
    if f_star is not None:
        with open(out / "relative_decrease.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eta", "k", "rel_decrease"])
            for label, (ks, rel) in curves_k.items():
                eta = label.split("= ")[1]
                w.writerows([[eta, int(k), _fmt(r)] for k, r in zip(ks, rel)])
        if cfg["output.plots"]:
            from . import plotting

            plotting.plot_relative_decrease(curves_k, out / "relative_decrease_iter.png")
            if timing:
                plotting.plot_relative_decrease(curves_t, out / "relative_decrease_time.png",
                                                xlabel="time (s)")
    return EXIT_OK


def cmd_make_problem(name, scale, seed, out_dir=None) -> int:
    tp = make_test_problem(name, scale, seed)
    out = Path(out_dir) if out_dir else Path(f"{name}_s{scale}_seed{seed}")
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    write_raw(out / "truth.raw", tp.ground_truth.pixels)
    write_raw(out / "data.raw", tp.data.pixels)
    (out / "params.txt").write_text(
        f"name={tp.name}\nheight={tp.shape[0]}\nwidth={tp.shape[1]}\nscale={scale}\n"
        f"seed={seed}\nsigma_psf={TABLE1[name].sigma_psf!r}\nbg={tp.bg!r}\nrho={tp.rho!r}\n"
    )
    print(f"wrote {out}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="vmila", description="Variable-metric inexact line-search solver")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="solve one configured problem")
    p.add_argument("config")
    p = sub.add_parser("sweep-eta", help="solve for each eta in sweep.eta")
    p.add_argument("config")
    p = sub.add_parser("make-problem", help="write a test problem to raw files")
    p.add_argument("name", choices=sorted(TABLE1))
    p.add_argument("scale", type=int)
    p.add_argument("seed", type=int)
    p.add_argument("--out", default=None, help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-problem":
            if args.scale < 1:
                raise ConfigError("scale: must be an integer >= 1")
            return cmd_make_problem(args.name, args.scale, args.seed, args.out)
        cfg = load_config(args.config)
        return cmd_run(cfg) if args.command == "run" else cmd_sweep_eta(cfg)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InnerSolverError, LineSearchError, FloatingPointError, DomainError,
            InfeasiblePointError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
