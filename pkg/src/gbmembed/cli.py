"""Command-line front end.

Every subcommand writes its artifacts into ``--out`` and echoes the
effective configuration into each of them: CSV files start with ``#``
comment lines, JSON files carry ``tool``, ``version`` and ``config`` keys.
The worker count is deliberately left out of the echo so that artifacts
are byte-identical for any degree of parallelism.

Exit codes: 0 pass, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chain_embedding import ChainEmbeddingSamples, ChainSpec, embed_chain, parse_tree, tower_check, verify_joint_law
from .distributions import TargetDistribution, format_value
from .errors import CensoringError, DomainError, SpecError, TooFewSamplesError, UnsupportedTargetError
from .gbm_paths import PathConfig
from .minimality import (
    DiffusionSpec,
    MCConfig,
    UIConfig,
    kotani_test,
    minimality_report,
    parse_expr,
    tabulate_scale,
)
from .minimality.asymptotics import Inconclusive
from .single_embedding import EmbeddingSamples, sample_embedding, sample_embedding_pathwise, verify_law
from .timechange import TimeChangeConfig, embed_and_bound, x_marginals

TOOL = "gbmembed"
EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# options whose values may start with "-" (expressions, negative grids)
_VALUE_OPTIONS = {"--mu", "--sigma", "--kappa", "--grid", "--l", "--r", "--c", "--check"}


class UsageError(Exception):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# ---------------------------------------------------------------- config plumbing

# per-subcommand defaults; a --config file may set any of these keys
DEFAULTS = {
    "embed-dist": {"dist": None, "seed": 0, "n": 100_000, "mode": "analytic", "delta": 1e-3, "horizon": 1e4,
                   "ks_threshold": None, "max_censored": 1e-3},
    "embed-chain": {"chain": None, "seed": 0, "n": 100_000, "mode": "analytic", "delta": 1e-3, "horizon": 1e4,
                    "threshold": 0.01},
    "verify": {"samples": None, "dist": None, "chain": None, "threshold": 0.01},
    "timechange": {"chain": None, "seed": 0, "n": 10_000, "c": 1.0, "delta": 1e-3, "horizon": 1e4,
                   "ks_threshold": 0.02, "dump_paths": 0},
    "minimality": {"process": None, "rule": None, "g": None, "seed": 0, "n": 10_000, "dt": 0.01, "horizon": None,
                   "chunk": 1000, "eps": 0.01},
    "scale-fn": {"mu": None, "sigma": None, "l": "-inf", "r": "inf", "c": 0.0, "grid": None, "check": None,
                 "tol": 1e-6},
    "kotani": {"kappa": None, "c": 0.0, "expect": None},
}


def _load_json(path, field):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}", field) from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON ({exc.msg} at line {exc.lineno})", field) from None


def _descriptor(value, field):
    """Inline JSON object, or a path to a JSON file."""
    if isinstance(value, dict):
        return value
    if value is None:
        raise UsageError(f"--{field} is required", field)
    text = str(value).strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"inline {field} is not valid JSON ({exc.msg})", field) from None
    return _load_json(text, field)


def effective_config(args) -> dict:
    """Defaults, overridden by the ``--config`` file, overridden by flags."""
    defaults = DEFAULTS[args.command]
    cfg = dict(defaults)
    if args.config:
        file_cfg = _load_json(args.config, "config")
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object", "config")
        for key, value in file_cfg.items():
            k = key.replace("-", "_")
            if k not in defaults:
                raise UsageError(f"unknown config key {key!r} for {args.command}", key)
            cfg[k] = value
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if "seed" in cfg:
        seed = cfg["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise UsageError(f"seed must be an unsigned 64-bit integer, got {seed!r}", "seed")
    if "n" in cfg and (not isinstance(cfg["n"], int) or cfg["n"] < 1):
        raise UsageError(f"n must be a positive integer, got {cfg['n']!r}", "n")
    for key in ("l", "r", "c"):
        if key in cfg:
            try:
                cfg[key] = float(cfg[key])
            except (TypeError, ValueError):
                raise UsageError(f"{key} must be a number, got {cfg[key]!r}", key) from None
    for key in ("delta", "horizon", "dt", "tol", "eps", "threshold", "ks_threshold", "max_censored"):
        if key in cfg and cfg[key] is not None:
            try:
                cfg[key] = float(cfg[key])
            except (TypeError, ValueError):
                raise UsageError(f"{key} must be a number, got {cfg[key]!r}", key) from None
            if not cfg[key] > 0 and key != "max_censored":
                raise UsageError(f"{key} must be positive", key)
    return cfg


def _header(command: str, cfg: dict) -> dict:
    return {"tool": TOOL, "version": __version__, "command": command, "config": _jsonable(cfg)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return format_value(obj) if not math.isnan(obj) else "nan"
    return obj


def _write_json(path: Path, command: str, cfg: dict, payload: dict) -> None:
    doc = {**_header(command, cfg), **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _csv_preamble(fh, command: str, cfg: dict) -> None:
    head = _header(command, cfg)
    fh.write(f"# tool: {head['tool']} {head['version']}\n")
    fh.write(f"# command: {command}\n")
    fh.write(f"# config: {json.dumps(head['config'], sort_keys=True)}\n")


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}", "samples") from None
    if not rows:
        raise UsageError(f"{path} has no header row", "samples")
    return rows[0], rows[1:]


# ---------------------------------------------------------------- subcommands


def _dist(cfg):
    if cfg["dist"] is None:
        raise UsageError("--dist is required", "dist")
    obj = _load_json(cfg["dist"], "dist") if not isinstance(cfg["dist"], dict) else cfg["dist"]
    return TargetDistribution.from_json(obj)


def _chain(cfg, validate=True):
    if cfg["chain"] is None:
        raise UsageError("--chain is required", "chain")
    obj = _load_json(cfg["chain"], "chain") if not isinstance(cfg["chain"], dict) else cfg["chain"]
    return ChainSpec.from_json(obj) if validate else parse_tree(obj)


def cmd_embed_dist(cfg, out: Path, workers: int):
    dist = _dist(cfg)
    mode = cfg["mode"]
    if mode == "analytic":
        samples = sample_embedding(dist, cfg["seed"], cfg["n"], workers=workers)
        thr = cfg["ks_threshold"] or 0.01
    elif mode == "pathwise":
        pc = PathConfig(delta=cfg["delta"], horizon=cfg["horizon"])
        samples = sample_embedding_pathwise(dist, cfg["seed"], cfg["n"], pc, workers=workers)
        thr = cfg["ks_threshold"] or 0.02
    else:
        raise UsageError(f"mode must be analytic or pathwise, got {mode!r}", "mode")
    cfg = {**cfg, "ks_threshold": thr}
    with open(out / "samples.csv", "w") as fh:
        _csv_preamble(fh, "embed-dist", cfg)
        samples.write_csv(fh)
    try:
        report = verify_law(samples, dist, thr, max_censored_rate=cfg["max_censored"] if mode == "pathwise" else None)
    except CensoringError as exc:
        n_cens = int(np.count_nonzero(samples.censored))
        _write_json(out / "fit.json", "embed-dist", cfg,
                    {"pass": False, "error": str(exc), "censored": n_cens, "n": len(samples)})
        return EXIT_FAIL, f"FAIL censoring: {exc}"
    _write_json(out / "fit.json", "embed-dist", cfg, report.to_json())
    status = "PASS" if report.passed else "FAIL"
    return (EXIT_PASS if report.passed else EXIT_FAIL), f"{status} ks={report.ks:.6g} threshold={thr} n={report.n}"


def cmd_embed_chain(cfg, out: Path, workers: int):
    spec = _chain(cfg)
    mode = cfg["mode"]
    if mode not in ("analytic", "pathwise"):
        raise UsageError(f"mode must be analytic or pathwise, got {mode!r}", "mode")
    pc = PathConfig(delta=cfg["delta"], horizon=cfg["horizon"]) if mode == "pathwise" else None
    try:
        samples = embed_chain(spec, cfg["seed"], cfg["n"], mode, pc, workers=workers)
    except CensoringError as exc:
        _write_json(out / "chain_report.json", "embed-chain", cfg, {"pass": False, "error": str(exc)})
        return EXIT_FAIL, f"FAIL censoring: {exc}"
    with open(out / "chain_samples.csv", "w") as fh:
        _csv_preamble(fh, "embed-chain", cfg)
        samples.write_csv(fh)
    joint = verify_joint_law(samples, spec, cfg["threshold"])
    tower = tower_check(samples, spec)
    ok = joint.passed and all(row["pass"] for row in tower)
    payload = {"pass": ok, "joint_law": joint.to_json(), "tower": tower}
    _write_json(out / "chain_report.json", "embed-chain", cfg, payload)
    status = "PASS" if ok else "FAIL"
    return (EXIT_PASS if ok else EXIT_FAIL), f"{status} max_path_deviation={joint.max_deviation:.6g}"


def cmd_verify(cfg, out: Path, workers: int):
    if cfg["samples"] is None:
        raise UsageError("--samples is required", "samples")
    if (cfg["dist"] is None) == (cfg["chain"] is None):
        raise UsageError("give exactly one of --dist or --chain", "dist")
    header, rows = _read_csv(cfg["samples"])
    try:
        if cfg["dist"] is not None:
            if "y" not in header or "censored" not in header:
                raise UsageError("samples CSV needs y and censored columns", "samples")
            iy, ic = header.index("y"), header.index("censored")
            y = np.array([float(r[iy]) if r[iy] else math.nan for r in rows])
            cens = np.array([r[ic] == "1" for r in rows])
            zeros = np.zeros(len(y))
            samples = EmbeddingSamples(zeros, zeros, zeros, zeros, y, None, cens)
            report = verify_law(samples, _dist(cfg), cfg["threshold"])
            payload, ok = report.to_json(), report.passed
            line = f"ks={report.ks:.6g}"
        else:
            if header[:3] != ["replica", "k", "y"]:
                raise UsageError("chain samples CSV needs replica,k,y columns", "samples")
            spec = _chain(cfg)
            rep = np.array([int(r[0]) for r in rows])
            k = np.array([int(r[1]) for r in rows])
            y = np.full((rep.max() + 1, k.max() + 1), math.nan)
            y[rep, k] = [float(r[2]) for r in rows]
            samples = ChainEmbeddingSamples(np.zeros(y.shape, dtype=np.int64), y)
            joint = verify_joint_law(samples, spec, cfg["threshold"])
            payload, ok = joint.to_json(), joint.passed
            line = f"max_path_deviation={joint.max_deviation:.6g}"
    except (ValueError, IndexError) as exc:
        if isinstance(exc, (SpecError, TooFewSamplesError)):
            raise
        raise UsageError(f"malformed samples CSV: {exc}", "samples") from None
    _write_json(out / "verify.json", "verify", cfg, payload)
    return (EXIT_PASS if ok else EXIT_FAIL), f"{'PASS' if ok else 'FAIL'} {line}"


def cmd_timechange(cfg, out: Path, workers: int):
    root = _chain(cfg, validate=False)
    tc = TimeChangeConfig(c=cfg["c"], delta=cfg["delta"], horizon=cfg["horizon"])
    keep = int(cfg["dump_paths"])
    try:
        res = embed_and_bound(root, cfg["seed"], cfg["n"], tc, workers=workers, keep_paths=keep)
    except CensoringError as exc:
        _write_json(out / "timechange.json", "timechange", cfg, {"pass": False, "error": str(exc)})
        return EXIT_FAIL, f"FAIL censoring: {exc}"
    laws = x_marginals(root, res.y.shape[1] - 1)
    report = res.report(laws)
    ks_ok = all(k < cfg["ks_threshold"] for k in report["ks"])
    ok = report["violations"] == 0 and report["residual_exact_all"] and ks_ok
    report.pop("config")
    payload = {"pass": ok, **report}
    _write_json(out / "timechange.json", "timechange", cfg, payload)
    if keep:
        with open(out / "paths.csv", "w") as fh:
            _csv_preamble(fh, "timechange", cfg)
            fh.write("replica,process,t,value\n")
            for i, (z, w) in enumerate(res.paths):
                wp = w.as_sample_path()
                for name, p in (("Z", z), ("W", wp)):
                    for t, v in zip(p.grid, p.values):
                        fh.write(f"{i},{name},{float(t)!r},{float(v)!r}\n")
    ks = ",".join(f"{k:.4g}" for k in report["ks"])
    return (EXIT_PASS if ok else EXIT_FAIL), f"{'PASS' if ok else 'FAIL'} violations={report['violations']} ks=[{ks}]"


def cmd_minimality(cfg, out: Path, workers: int):
    process = _descriptor(cfg["process"], "process")
    rule = _descriptor(cfg["rule"], "rule")
    g = cfg["g"]
    if g is None:
        raise UsageError("--g is required", "g")
    if isinstance(g, str) and g.strip().startswith("{"):
        g = _descriptor(g, "g")
    mc = MCConfig(dt=cfg["dt"], horizon=cfg["horizon"], chunk=int(cfg["chunk"]))
    ui = UIConfig(eps=cfg["eps"])
    report = minimality_report(process, rule, g, cfg["seed"], cfg["n"], mc=mc, ui=ui, workers=workers)
    _write_json(out / "minimality.json", "minimality", cfg, report.to_json())
    ok = report.overall == "minimal-sufficient"
    line = (f"{report.overall} a={report.condition_a.status} b={report.condition_b.status} "
            f"c={report.condition_c.status} shortcut={report.shortcut_used}")
    return (EXIT_PASS if ok else EXIT_FAIL), line


def parse_grid(text) -> np.ndarray:
    try:
        a, b, h = (float(v) for v in str(text).split(":"))
    except ValueError:
        raise UsageError(f"grid must be start:stop:step, got {text!r}", "grid") from None
    if not (h > 0 and b > a):
        raise UsageError("grid needs stop > start and a positive step", "grid")
    m = int(round((b - a) / h))
    if abs(a + m * h - b) > 1e-9 * max(1.0, abs(b)):
        raise UsageError("grid step must divide stop - start", "grid")
    return np.round(a + h * np.arange(m + 1), 12)


def cmd_scale_fn(cfg, out: Path, workers: int):
    for key in ("mu", "sigma", "grid"):
        if cfg[key] is None:
            raise UsageError(f"--{key} is required", key)
    grid = parse_grid(cfg["grid"])
    spec = DiffusionSpec(str(cfg["mu"]), str(cfg["sigma"]), l=cfg["l"], r=cfg["r"], c=cfg["c"])
    try:
        tab = tabulate_scale(spec, grid)
    except DomainError as exc:
        raise UsageError(str(exc), "grid") from None
    keep = np.isin(tab.grid, grid)
    xs, s, ds = tab.grid[keep], tab.values[keep], tab.derivative[keep]

    def flag(v):
        return "inconclusive" if v is None else ("finite" if v else "infinite")

    with open(out / "scale.csv", "w") as fh:
        _csv_preamble(fh, "scale-fn", cfg)
        fh.write(f"# s_at_l: {flag(tab.s_at_l_finite)}\n# s_at_r: {flag(tab.s_at_r_finite)}\n")
        fh.write("x,s,ds\n")
        for row in zip(xs, s, ds):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    line = f"rows={len(xs)} s(l) {flag(tab.s_at_l_finite)}, s(r) {flag(tab.s_at_r_finite)}"
    if cfg["check"] is not None:
        err = float(np.max(np.abs(s - parse_expr(str(cfg["check"]))(xs))))
        ok = err <= cfg["tol"]
        return (EXIT_PASS if ok else EXIT_FAIL), f"{'PASS' if ok else 'FAIL'} max_error={err:.3g} {line}"
    return EXIT_PASS, line


def cmd_kotani(cfg, out: Path, workers: int):
    if cfg["kappa"] is None:
        raise UsageError("--kappa is required", "kappa")
    try:
        res = kotani_test(str(cfg["kappa"]), cfg["c"])
    except DomainError as exc:
        raise UsageError(str(exc), "kappa") from None
    _write_json(out / "kotani.json", "kotani", cfg, res.to_json())
    expect = cfg["expect"]
    if expect is None:
        return EXIT_PASS, res.verdict
    ok = res.verdict == expect
    return (EXIT_PASS if ok else EXIT_FAIL), f"{'PASS' if ok else 'FAIL'} {res.verdict} (expected {expect})"


COMMANDS = {
    "embed-dist": cmd_embed_dist,
    "embed-chain": cmd_embed_chain,
    "verify": cmd_verify,
    "timechange": cmd_timechange,
    "minimality": cmd_minimality,
    "scale-fn": cmd_scale_fn,
    "kotani": cmd_kotani,
}


# ---------------------------------------------------------------- argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=TOOL, description="GBM embeddings, time changes and minimality diagnostics.")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seeded=True):
        sp.add_argument("--config", help="JSON file of option values; flags override it")
        sp.add_argument("--out", default=".", help="output directory (created if missing)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes; outputs do not depend on it")
        if seeded:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--n", type=int, help="replica count")

    sp = sub.add_parser("embed-dist", help="embed a target law into GBM")
    common(sp)
    sp.add_argument("--dist", help="distribution JSON file")
    sp.add_argument("--mode", choices=("analytic", "pathwise"))
    sp.add_argument("--delta", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--ks-threshold", dest="ks_threshold", type=float)
    sp.add_argument("--max-censored", dest="max_censored", type=float)

    sp = sub.add_parser("embed-chain", help="embed a supermartingale chain into GBM")
    common(sp)
    sp.add_argument("--chain", help="chain JSON file")
    sp.add_argument("--mode", choices=("analytic", "pathwise"))
    sp.add_argument("--delta", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--threshold", type=float, help="max path-frequency deviation")

    sp = sub.add_parser("verify", help="check a samples CSV against a law or chain")
    common(sp, seeded=False)
    sp.add_argument("--samples", help="CSV written by embed-dist or embed-chain")
    sp.add_argument("--dist")
    sp.add_argument("--chain")
    sp.add_argument("--threshold", type=float)

    sp = sub.add_parser("timechange", help="time-change an embedded chain into Brownian motion")
    common(sp)
    sp.add_argument("--chain", help="chain JSON file with raw X values")
    sp.add_argument("--c", type=float, help="lower bound -c of the chain")
    sp.add_argument("--delta", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--ks-threshold", dest="ks_threshold", type=float)
    sp.add_argument("--dump-paths", dest="dump_paths", type=int, help="write the first K (Z, W) paths")

    sp = sub.add_parser("minimality", help="evidence-grade minimality report")
    common(sp)
    sp.add_argument("--process", help="inline JSON or file, e.g. '{\"kind\": \"bm\"}'")
    sp.add_argument("--rule", help="inline JSON or file, e.g. '{\"kind\": \"first_exit\", \"a\": -1, \"b\": 1}'")
    sp.add_argument("--g", help="g kind name, inline JSON or file")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--chunk", type=int)
    sp.add_argument("--eps", type=float, help="UI tail tolerance")

    sp = sub.add_parser("scale-fn", help="tabulate the scale function of a diffusion")
    common(sp, seeded=False)
    sp.add_argument("--mu")
    sp.add_argument("--sigma")
    sp.add_argument("--l")
    sp.add_argument("--r")
    sp.add_argument("--c")
    sp.add_argument("--grid", help="start:stop:step")
    sp.add_argument("--check", help="expected s(x); exit 1 if off by more than --tol")
    sp.add_argument("--tol", type=float)

    sp = sub.add_parser("kotani", help="martingale test for dY = kappa(Y) dW")
    common(sp, seeded=False)
    sp.add_argument("--kappa")
    sp.add_argument("--c")
    sp.add_argument("--expect", choices=("martingale", "strict_local_martingale", "inconclusive"))
    return p


def _join_dash_values(argv):
    """Glue ``--grid -3:3:0.01`` into ``--grid=-3:3:0.01`` so argparse keeps the value."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_join_dash_values(argv))
        cfg = effective_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.workers < 1:
            raise UsageError("workers must be >= 1", "workers")
        code, line = COMMANDS[args.command](cfg, out, args.workers)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        where = f" [field: {exc.field}]" if exc.field else ""
        print(f"error{where}: {exc}", file=stderr)
        return EXIT_USAGE
    except SpecError as exc:
        print(f"error [field: {exc.field or 'spec'}]: {exc}", file=stderr)
        return EXIT_USAGE
    except (DomainError, UnsupportedTargetError, TooFewSamplesError, Inconclusive) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    print(line, file=stdout)
    return code


def main() -> None:
    sys.exit(run())
