"""Command-line front end.

Config files are flat ``key = value`` text; ``#`` starts a comment and
lists are comma separated::

    mode = ber_sweep
    Nt = 8
    K = 8
    order = 16
    snr_db = 30, 35, 36
    trials = 20000
    schemes = ZF, RZF, CI-Iterative, CI-CF
    seed = 1

``Nt = K`` ties the antenna count to every ``K`` value (iteration sweeps).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import subprocess
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__, qp
from .numerics import SingularSystemError
from .sim import (CI_SOLVER, SCHEMES, BerResult, FeasibilityResult, SimConfig, SlotError,
                  run_ber_sweep, run_feasibility_stats)
from .verify import run_kkt_suite, run_oracle_suite, run_rank_law

MODES = ("ber_sweep", "feasibility", "iterations", "verify")
FORMATS = ("csv", "json")
CSV_HEADER = ("scheme", "snr_db", "ber", "stderr", "trials", "mean_iterations", "feasibility")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; names the offending key and line when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.key, self.line = key, line


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str
    config: SimConfig
    out: str | None = None
    format: str = "csv"


# key -> (kind, default); a default of ... means required.
_KEYS = {
    "mode": ("mode", ...),
    "Nt": ("nt", ...),
    "K": ("int_list", ...),
    "order": ("int", ...),
    "trials": ("int", ...),
    "snr_db": ("float_list", ()),
    "p0": ("float", 1.0),
    "seed": ("int", 0),
    "schemes": ("str_list", None),
    "channel_reuse": ("int", 1),
    "iter_max": ("int", 100),
    "threads": ("int", 1),
    "out": ("str", None),
    "format": ("format", "csv"),
}
_ORDER = list(_KEYS)

_DEFAULT_SCHEMES = {
    "ber_sweep": ("RZF", "CI-Iterative"),
    "feasibility": ("CI-Iterative",),
    "iterations": ("CI-Iterative",),
    "verify": ("CI-Iterative",),
}


def _convert(kind: str, raw: str, key: str, line: int | None):
    def fail(what):
        return ConfigError(f"expected {what}, got {raw!r}", key, line)

    items = [x.strip() for x in raw.split(",")]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int_list":
            return tuple(int(x) for x in items)
        if kind == "float_list":
            return tuple(float(x) for x in items)
    except ValueError:
        raise fail({"int": "an integer", "float": "a number",
                    "int_list": "comma-separated integers",
                    "float_list": "comma-separated numbers"}[kind]) from None
    if kind == "nt":
        if raw == "K":
            return None
        try:
            return int(raw)
        except ValueError:
            raise fail("an integer or 'K'") from None
    if kind == "str_list":
        if any(not x for x in items):
            raise fail("comma-separated names")
        return tuple(items)
    if kind == "mode":
        if raw not in MODES:
            raise fail(f"one of {', '.join(MODES)}")
        return raw
    if kind == "format":
        if raw not in FORMATS:
            raise fail(f"one of {', '.join(FORMATS)}")
        return raw
    return raw


def _build_spec(values: dict, lines: dict) -> ExperimentSpec:
    missing = [k for k, (_, d) in _KEYS.items() if d is ... and k not in values]
    if missing:
        raise ConfigError("missing required key", missing[0])
    mode = values["mode"]
    if mode == "ber_sweep" and not values.get("snr_db"):
        raise ConfigError("ber_sweep needs at least one SNR point", "snr_db", lines.get("snr_db"))
    merged = {k: values.get(k, d) for k, (_, d) in _KEYS.items()}
    schemes = merged["schemes"] or _DEFAULT_SCHEMES[mode]
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise ConfigError(f"unknown scheme {bad[0]!r}", "schemes", lines.get("schemes"))
    if mode in ("feasibility", "iterations") and not any(s in CI_SOLVER for s in schemes):
        raise ConfigError(f"{mode} mode needs a CI scheme", "schemes", lines.get("schemes"))
    try:
        cfg = SimConfig(Nt=merged["Nt"], K=merged["K"], order=merged["order"], p0=merged["p0"],
                        snr_db=merged["snr_db"], trials=merged["trials"], seed=merged["seed"],
                        schemes=tuple(schemes), channel_reuse=merged["channel_reuse"],
                        iter_max=merged["iter_max"], threads=merged["threads"])
    except ValueError as exc:
        key = next((k for k in _ORDER if k in str(exc)), None)
        if key is None and "order" in str(exc).lower():
            key = "order"
        raise ConfigError(str(exc), key, lines.get(key)) from None
    return ExperimentSpec(mode=mode, config=cfg, out=merged["out"], format=merged["format"])


def parse_config(text: str) -> ExperimentSpec:
    """Parse config text into a validated :class:`ExperimentSpec`.

    Raises
    ------
    ConfigError
        Unknown, duplicate, missing or ill-typed key.
    """
    values, lines = {}, {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", None, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError("unknown key", key, lineno)
        if key in values:
            raise ConfigError("duplicate key", key, lineno)
        if not value:
            raise ConfigError("empty value", key, lineno)
        values[key] = _convert(_KEYS[key][0], value, key, lineno)
        lines[key] = lineno
    return _build_spec(values, lines)


def _fmt_number(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def serialize_config(spec: ExperimentSpec) -> str:
    """Canonical config text; :func:`parse_config` inverts it exactly."""
    cfg = spec.config
    values = {
        "mode": spec.mode,
        "Nt": "K" if cfg.Nt is None else str(cfg.Nt),
        "K": ", ".join(str(k) for k in cfg.K),
        "order": str(cfg.order),
        "trials": str(cfg.trials),
        "snr_db": ", ".join(_fmt_number(x) for x in cfg.snr_db),
        "p0": _fmt_number(cfg.p0),
        "seed": str(cfg.seed),
        "schemes": ", ".join(cfg.schemes),
        "channel_reuse": str(cfg.channel_reuse),
        "iter_max": str(cfg.iter_max),
        "threads": str(cfg.threads),
        "out": spec.out,
        "format": spec.format,
    }
    return "".join(f"{k} = {v}\n" for k, v in values.items() if v not in (None, ""))


def version_string() -> str:
    """Package version with ``git describe`` output appended when available."""
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              cwd=Path(__file__).resolve().parent, capture_output=True,
                              text=True, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def result_records(result, spec: ExperimentSpec) -> list[dict]:
    """Flat per-row records (CSV fields plus ``K`` and ``Nt``) in output order."""
    recs = []
    if isinstance(result, BerResult):
        for r in result.rows:
            recs.append({"K": r.K, "Nt": r.Nt, "scheme": r.scheme, "snr_db": r.snr_db, "ber": r.ber,
                         "stderr": r.stderr, "trials": r.trials, "mean_iterations": r.mean_iterations,
                         "feasibility": r.feasibility, "bit_errors": r.bit_errors, "bits": r.bits,
                         "fallbacks": r.fallbacks})
    elif isinstance(result, FeasibilityResult):
        for r in result.rows:
            if spec.mode == "iterations":
                err = r.iterations_stderr
            else:
                p = r.fraction
                err = (p * (1 - p) / r.trials) ** 0.5
            recs.append({"K": r.K, "Nt": r.Nt, "scheme": r.scheme, "snr_db": None, "ber": None,
                         "stderr": err, "trials": r.trials, "mean_iterations": r.mean_iterations,
                         "feasibility": r.fraction})
    else:
        raise TypeError(f"cannot emit {type(result).__name__}")
    recs.sort(key=lambda d: (d["K"], d["Nt"], d["scheme"],
                             float("-inf") if d["snr_db"] is None else d["snr_db"]))
    return recs


def _csv_text(recs: list[dict], spec: ExperimentSpec, version: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for d in recs:
        w.writerow([_cell(d[k]) for k in CSV_HEADER])
    buf.write(f"# version = {version}\n")
    buf.write(f"# seed = {spec.config.seed}\n")
    for line in serialize_config(spec).splitlines():
        buf.write(f"# config: {line}\n")
    return buf.getvalue()


def csv_paths(spec: ExperimentSpec) -> list[tuple[tuple[int, int], Path | None]]:
    """Output file per ``(K, Nt)`` point; one point writes ``spec.out`` itself."""
    points = spec.config.points()
    if spec.out is None:
        return [(pt, None) for pt in points]
    out = Path(spec.out)
    if len(points) == 1:
        return [(points[0], out)]
    return [((K, Nt), out.with_name(f"{out.stem}_K{K}_Nt{Nt}{out.suffix}")) for K, Nt in points]


def emit_results(result, spec: ExperimentSpec, stream=None) -> list[Path]:
    """Write ``result`` as CSV (one file per size) or a single JSON document.

    Without ``spec.out`` the text goes to ``stream`` (default stdout).

    Returns
    -------
    list of Path
        Files written.
    """
    stream = sys.stdout if stream is None else stream
    version = version_string()
    recs = result_records(result, spec)
    written = []
    if spec.format == "json":
        doc = {"version": version, "seed": spec.config.seed, "mode": spec.mode,
               "config": serialize_config(spec), "rows": recs}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        if spec.out is None:
            stream.write(text)
        else:
            Path(spec.out).write_text(text)
            written.append(Path(spec.out))
        return written
    for (K, Nt), path in csv_paths(spec):
        text = _csv_text([d for d in recs if (d["K"], d["Nt"]) == (K, Nt)], spec, version)
        if path is None:
            stream.write(text)
        else:
            path.write_text(text)
            written.append(path)
    return written


def run_verify(spec: ExperimentSpec) -> list:
    """KKT, oracle and (overloaded sizes) rank-law suites at each configured size."""
    cfg = spec.config
    reports = []
    for K, Nt in cfg.points():
        if K <= Nt:
            reports.append(run_kkt_suite(K, cfg.order, cfg.trials, cfg.seed, cfg.p0, Nt=Nt))
        else:
            reports.append(run_rank_law(K, Nt, cfg.trials, cfg.seed, cfg.order))
        if 2 * K <= 12:
            reports.append(run_oracle_suite(K, Nt, cfg.order, cfg.trials, cfg.seed, cfg.p0))
    return reports


def emit_verify(reports: list, spec: ExperimentSpec, stream=None) -> list[Path]:
    stream = sys.stdout if stream is None else stream
    recs = [{"check": r.name, "K": r.K, "Nt": r.Nt, "order": r.order, "instances": r.instances,
             "violations": r.total_violations, "passed": r.passed, "worst": r.worst} for r in reports]
    if spec.format == "json":
        text = json.dumps({"version": version_string(), "seed": spec.config.seed,
                           "config": serialize_config(spec), "suites": recs},
                          indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("check", "K", "Nt", "order", "instances", "violations", "worst"))
        for d in recs:
            worst = max(d["worst"].values(), default=0.0)
            w.writerow((d["check"], d["K"], d["Nt"], d["order"], d["instances"], d["violations"],
                        _cell(float(worst))))
        buf.write(f"# version = {version_string()}\n# seed = {spec.config.seed}\n")
        text = buf.getvalue()
    if spec.out is None:
        stream.write(text)
        return []
    Path(spec.out).write_text(text)
    return [Path(spec.out)]


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ciprecode", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", required=True, help="experiment config file")
    ap.add_argument("--mode", choices=MODES, help="override the config's mode")
    ap.add_argument("--seed", type=int, help="override the config's seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output path (default: stdout)")
    ap.add_argument("--format", choices=FORMATS, help="output format")
    ap.add_argument("--threads", type=int, help="worker processes, 0 = all CPUs")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def load_spec(args: argparse.Namespace) -> ExperimentSpec:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    if args.mode is not None:
        # Swap the mode line so mode-specific validation sees the override.
        lines = [ln for ln in text.splitlines() if ln.split("#", 1)[0].split("=", 1)[0].strip() != "mode"]
        text = "\n".join([f"mode = {args.mode}"] + lines) + "\n"
    spec = parse_config(text)
    cfg = spec.config
    try:
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
    except ValueError as exc:
        raise ConfigError(str(exc), "seed" if "seed" in str(exc) else "threads") from None
    return replace(spec, config=cfg, out=args.out if args.out is not None else spec.out,
                   format=args.format or spec.format)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if spec.mode == "ber_sweep":
            emit_results(run_ber_sweep(spec.config), spec)
        elif spec.mode in ("feasibility", "iterations"):
            emit_results(run_feasibility_stats(spec.config), spec)
        else:
            reports = run_verify(spec)
            emit_verify(reports, spec)
            failed = [r for r in reports if not r.passed]
            for r in failed:
                print(f"verification failed: {r.name} K={r.K} Nt={r.Nt}: {r.violations}", file=sys.stderr)
            if failed:
                return EXIT_NUMERICAL
    except (SlotError, SingularSystemError, qp.QpError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
