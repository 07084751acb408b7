"""Command-line front end.

    uavsec run      [--config FILE] [overrides]
    uavsec sweep    --axis P0 --values 6,8,...,18dBm
    uavsec sweep    --sweep M=2..7 --quota-schedule 6,4,3,3,3,2
    uavsec ablation [overrides]
    uavsec verify   --seed 7 --instances 50

Config files are JSON objects; flags override file values. Keys:

    N, M, S (alias R), Q             node counts and the per-UR quota
    P0, noise                        "<x>dBm" or watts
    gamma                            "<x>dB" or a linear ratio
    alpha, bandwidth                 path-loss exponent, Hz
    region                           {width, depth, ut_z, ur_z, ue_z}
    repetitions, seed, workers, delta, dcs_q
    stage1, stage2                   lists of scheme names
    sweep                            {axis, values, quota_schedule}

Exit codes: 0 ok, 2 bad config, 3 infeasible (M*Q < N), 4 verification
failure, 5 I/O error. Results go to ``--out`` or ``$UAVSEC_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import re
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

from .config import (SWEEP_AXES, ConfigError, ExperimentConfig, InfeasibleConfigError,
                     Region, parse_power, parse_ratio, watts_to_dbm,
                     linear_to_db)
from .harness import ExperimentResult, ResultRow, ablation_two_stage, run_experiment
from .verification import verify

log = logging.getLogger("uavsec")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4, 5
CSV_HEADER = ("sweep_value", "scheme", "metric", "mean", "std", "n")
OUTPUT_ENV = "UAVSEC_OUTPUT_DIR"

_KEYS = {"N", "M", "S", "R", "Q", "P0", "noise", "sigma2", "gamma", "alpha", "bandwidth",
         "region", "repetitions", "seed", "workers", "delta", "dcs_q", "stage1", "stage2",
         "sweep"}
_REGION_KEYS = {"width", "depth", "ut_z", "ur_z", "ue_z"}
_SWEEP_KEYS = {"axis", "values", "quota_schedule"}


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    try:
        return int(value)
    except ValueError:
        raise ConfigError(name, f"expected an integer, got {value!r}") from None


def _float(value, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {value!r}") from None


def _names(value, name: str) -> tuple[str, ...]:
    if isinstance(value, str):
        value = value.split(",")
    if not isinstance(value, (list, tuple)):
        raise ConfigError(name, "expected a list of scheme names")
    return tuple(str(v).strip() for v in value if str(v).strip())


_RANGE = re.compile(r"^\s*([-+]?\d+)\s*\.\.\s*([-+]?\d+)\s*$")
_UNIT = re.compile(r"^\s*([-+]?[0-9.]+(?:[eE][-+]?\d+)?)\s*([a-zA-Z]*)\s*$")


def _axis_value(token: str, axis: str) -> float:
    """One sweep value in the axis' table unit (dBm for powers, dB for gamma)."""
    m = _UNIT.match(token)
    if not m:
        raise ConfigError("sweep.values", f"cannot parse {token!r}")
    number, unit = float(m.group(1)), m.group(2).lower()
    if not unit or (axis in ("P0", "noise") and unit == "dbm") or (axis == "gamma" and unit == "db"):
        return number
    if axis in ("P0", "noise") and unit in ("w", "mw"):
        return watts_to_dbm(parse_power(token, "sweep.values"))
    raise ConfigError("sweep.values", f"unit {unit!r} does not fit axis {axis}")


def parse_values(text, axis: str) -> tuple[float, ...]:
    """``"2..7"``, ``"6,8,...,18dBm"``, ``"1,2,5"`` or a JSON list."""
    if isinstance(text, (list, tuple)):
        return tuple(_axis_value(str(v), axis) for v in text)
    m = _RANGE.match(str(text))
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise ConfigError("sweep.values", f"empty range {text!r}")
        return tuple(float(v) for v in range(lo, hi + 1))
    tokens = [t.strip() for t in str(text).split(",") if t.strip()]
    if "..." in tokens:
        at = tokens.index("...")
        if at < 2 or at != len(tokens) - 2:
            raise ConfigError("sweep.values", "use 'a,b,...,z' for a progression")
        head = [_axis_value(t, axis) for t in tokens[:at]]
        last = _axis_value(tokens[-1], axis)
        step = head[-1] - head[-2]
        if not step > 0 or last < head[-1]:
            raise ConfigError("sweep.values", f"progression must increase: {text!r}")
        count = int(round((last - head[0]) / step))
        values = [head[0] + i * step for i in range(count + 1)]
        if not math.isclose(values[-1], last, rel_tol=1e-9, abs_tol=1e-9):
            raise ConfigError("sweep.values", f"{last} is not on the grid of {text!r}")
        return tuple(values)
    if not tokens:
        raise ConfigError("sweep.values", "no values given")
    return tuple(_axis_value(t, axis) for t in tokens)


def _region(raw) -> Region:
    if not isinstance(raw, dict):
        raise ConfigError("region", "expected an object")
    unknown = set(raw) - _REGION_KEYS
    if unknown:
        raise ConfigError(f"region.{sorted(unknown)[0]}", "unknown key")
    kwargs = {}
    for key, value in raw.items():
        if key.endswith("_z"):
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ConfigError(f"region.{key}", "expected [lo, hi]")
            kwargs[key] = (_float(value[0], f"region.{key}"), _float(value[1], f"region.{key}"))
        else:
            kwargs[key] = _float(value, f"region.{key}")
    return Region(**kwargs)


def config_from_mapping(raw: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply a JSON-style mapping on top of ``base`` (defaults if omitted)."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be an object")
    unknown = set(raw) - _KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    base = base or ExperimentConfig()
    p = base.params
    phys = {}
    if "P0" in raw:
        phys["power_budget"] = parse_power(raw["P0"], "P0")
    for key in ("noise", "sigma2"):
        if key in raw:
            phys["noise_power"] = parse_power(raw[key], key)
    if "gamma" in raw:
        phys["snr_threshold"] = parse_ratio(raw["gamma"], "gamma")
    if "alpha" in raw:
        phys["path_loss_exponent"] = _float(raw["alpha"], "alpha")
    if "bandwidth" in raw:
        phys["bandwidth"] = _float(raw["bandwidth"], "bandwidth")

    changes: dict = {}
    counts = {"N": "n_ut", "M": "n_ur", "S": "n_ue", "R": "n_ue", "Q": "quota",
              "repetitions": "repetitions", "seed": "seed", "workers": "workers"}
    for key, attr in counts.items():
        if key in raw:
            changes[attr] = _int(raw[key], key)
    if phys:
        changes["params"] = replace(p, **phys)
    if "region" in raw:
        changes["region"] = _region(raw["region"])
    for key in ("stage1", "stage2"):
        if key in raw:
            changes[key] = _names(raw[key], key)
    if "delta" in raw:
        changes["delta"] = None if raw["delta"] is None else _float(raw["delta"], "delta")
    if "dcs_q" in raw:
        changes["dcs_q"] = tuple(_int(q, "dcs_q") for q in raw["dcs_q"])
    if "sweep" in raw and raw["sweep"] is not None:
        sweep = raw["sweep"]
        if not isinstance(sweep, dict):
            raise ConfigError("sweep", "expected an object")
        unknown = set(sweep) - _SWEEP_KEYS
        if unknown:
            raise ConfigError(f"sweep.{sorted(unknown)[0]}", "unknown key")
        axis = sweep.get("axis")
        if axis not in SWEEP_AXES:
            raise ConfigError("sweep.axis", f"unknown axis {axis!r}")
        changes["sweep_axis"] = axis
        changes["sweep_values"] = parse_values(sweep.get("values", ()), SWEEP_AXES[axis])
        schedule = sweep.get("quota_schedule")
        if isinstance(schedule, str):
            schedule = schedule.split(",")
        changes["quota_schedule"] = (None if schedule is None
                                     else tuple(_int(q, "sweep.quota_schedule") for q in schedule))
    try:
        return replace(base, **changes)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


def load_config_file(path: str | os.PathLike) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _flag_overrides(args: argparse.Namespace) -> dict:
    raw = {}
    for key in ("N", "M", "S", "Q", "P0", "noise", "gamma", "alpha", "bandwidth",
                "repetitions", "seed", "workers", "delta", "stage1", "stage2"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    sweep = {}
    if getattr(args, "sweep", None):
        axis, _, values = args.sweep.partition("=")
        if not values:
            raise ConfigError("sweep", "expected AXIS=VALUES, e.g. M=2..7")
        sweep = {"axis": axis.strip(), "values": values}
    if getattr(args, "axis", None):
        sweep = {"axis": args.axis, "values": args.values or ""}
    if getattr(args, "quota_schedule", None):
        if not sweep:
            raise ConfigError("sweep.quota_schedule", "needs a sweep")
        sweep["quota_schedule"] = args.quota_schedule
    if sweep:
        raw["sweep"] = sweep
    return raw


def parse_config(path: str | os.PathLike | None = None, overrides: dict | None = None
                 ) -> ExperimentConfig:
    """Defaults, then the JSON file at ``path``, then ``overrides``.

    A sweep in the overrides replaces the file's sweep as a whole.
    """
    raw = load_config_file(path) if path else {}
    overrides = dict(overrides or {})
    if "sweep" in overrides:
        raw.pop("sweep", None)
    if overrides.get("S") is not None:
        raw.pop("R", None)
    cfg = config_from_mapping(raw)
    if overrides:
        cfg = config_from_mapping(overrides, cfg)
    return cfg


def describe_config(cfg: ExperimentConfig) -> dict:
    """JSON-friendly view of a config, in the file's units."""
    p = cfg.params
    out = {
        "N": cfg.n_ut, "M": cfg.n_ur, "S": cfg.n_ue, "Q": cfg.quota,
        "P0": f"{watts_to_dbm(p.power_budget)!r}dBm",
        "noise": f"{watts_to_dbm(p.noise_power)!r}dBm",
        "gamma": f"{linear_to_db(p.snr_threshold)!r}dB",
        "alpha": p.path_loss_exponent, "bandwidth": p.bandwidth,
        "region": asdict(cfg.region), "repetitions": cfg.repetitions, "seed": cfg.seed,
        "stage1": list(cfg.stage1), "stage2": list(cfg.stage2),
        "delta": cfg.delta, "dcs_q": list(cfg.dcs_q),
    }
    if cfg.sweep_axis:
        out["sweep"] = {"axis": cfg.sweep_axis, "values": list(cfg.sweep_values),
                        "quota_schedule": list(cfg.quota_schedule) if cfg.quota_schedule else None}
    return out


def _stamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_csv(result: ExperimentResult, path: str | os.PathLike, timestamp: bool = True) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if timestamp:
            fh.write(f"# generated {_stamp()}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in result.rows:
            writer.writerow((repr(r.sweep_value), r.scheme, r.metric, repr(r.mean),
                             repr(r.std), r.n))
    return path


def read_csv(path: str | os.PathLike) -> list[ResultRow]:
    """Parse a table written by :func:`write_csv` (comment lines skipped)."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected header {header!r}")
    return [ResultRow(float(v), s, m, float(mu), float(sd), int(n))
            for v, s, m, mu, sd, n in reader]


def write_json(result: ExperimentResult, path: str | os.PathLike, config: ExperimentConfig,
               timestamp: bool = True) -> Path:
    path = Path(path)
    doc = {
        "config": describe_config(config),
        "axis": result.axis,
        "rows": [asdict(r) for r in result.rows],
        "failed": [{"sweep_value": v, "scheme": s, "count": c}
                   for (v, s), c in result.failed.items()],
        "ocfa_below_alone": [{"sweep_value": v, "scheme": s, "count": c}
                             for (v, s), c in result.below_alone.items()],
        "errors": result.errors,
    }
    if timestamp:
        doc["generated"] = _stamp()
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def emit_results(result: ExperimentResult, fmt: str, path: str | os.PathLike,
                 config: ExperimentConfig, timestamp: bool = True) -> list[Path]:
    """Write ``path``.csv and/or ``path``.json; ``path`` has no suffix."""
    base = Path(path)
    out = []
    if fmt in ("csv", "both"):
        out.append(write_csv(result, base.with_suffix(".csv"), timestamp))
    if fmt in ("json", "both"):
        out.append(write_json(result, base.with_suffix(".json"), config, timestamp))
    return out


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--N", "--n-ut", dest="N", help="number of UTs")
    g.add_argument("--M", "--n-ur", dest="M", help="number of URs")
    g.add_argument("--S", "--R", "--n-ue", dest="S", help="number of UEs")
    g.add_argument("--Q", "--quota", dest="Q", help="per-UR quota")
    g.add_argument("--P0", help="power budget, e.g. 10dBm")
    g.add_argument("--noise", "--sigma2", dest="noise", help="noise power, e.g. -60dBm")
    g.add_argument("--gamma", help="decoding SNR threshold, e.g. 10dB")
    g.add_argument("--alpha", help="path-loss exponent")
    g.add_argument("--bandwidth", help="bandwidth in Hz")
    g.add_argument("--repetitions", "--trials", dest="repetitions", help="layouts per point")
    g.add_argument("--seed", help="master seed")
    g.add_argument("--workers", help="worker processes")
    g.add_argument("--delta", help="phase-I rejection penalty")
    g.add_argument("--stage1", help="comma-separated: PMA,DAMS,RMS")
    g.add_argument("--stage2", help="comma-separated: OCFA,FGS,DCS,AS")
    o = p.add_argument_group("output")
    o.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    o.add_argument("--name", help="file stem for the tables")
    o.add_argument("--format", choices=("csv", "json", "both"), default="csv")
    o.add_argument("--no-timestamp", action="store_true",
                   help="omit the timestamp comment so reruns are byte-identical")
    o.add_argument("--dump", help="write one JSON record per trial to this file")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress (-vv for debug)")
    parser = argparse.ArgumentParser(prog="uavsec", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    run = add("run", help="one configuration")
    _add_config_flags(run)

    sweep = add("sweep", help="sweep one parameter")
    _add_config_flags(sweep)
    sweep.add_argument("--axis", choices=sorted(SWEEP_AXES))
    sweep.add_argument("--values", help="e.g. 2..7 or 6,8,...,18dBm")
    sweep.add_argument("--sweep", help="AXIS=VALUES shorthand, e.g. M=2..7")
    sweep.add_argument("--quota-schedule", help="per-point quotas, e.g. 6,4,3,3,3,2")

    abl = add("ablation", help="four-quadrant two-stage ablation")
    _add_config_flags(abl)

    ver = add("verify", help="run the invariant suites")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--instances", type=int, default=50)
    return parser


def _output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _progress(done: int, total: int):
    if done == total or done % max(1, total // 10) == 0:
        log.info("trial %d/%d", done, total)


def _run(args, cfg: ExperimentConfig) -> int:
    out = _output_dir(args)
    stem = args.name or ("results" if cfg.sweep_axis is None else f"sweep_{cfg.sweep_axis}")
    dump = open(args.dump, "w", encoding="utf-8") if args.dump else None
    try:
        result = run_experiment(cfg, dump=dump, progress=_progress)
    finally:
        if dump:
            dump.close()
    for path in emit_results(result, args.format, out / stem, cfg, not args.no_timestamp):
        print(path)
    _report_failures(result)
    return EXIT_OK


def _report_failures(result: ExperimentResult):
    bad = sum(result.failed.values())
    if bad:
        log.warning("%d failed trials excluded from the means", bad)
        for line in result.errors[:10]:
            log.warning("  %s", line)


def _ablation(args, cfg: ExperimentConfig) -> int:
    out = _output_dir(args)
    stem = args.name or "ablation"
    quadrants = ablation_two_stage(cfg)
    for tag, result in quadrants.items():
        for path in emit_results(result, args.format, out / f"{stem}_{tag}", cfg,
                                 not args.no_timestamp):
            print(path)
        _report_failures(result)
    return EXIT_OK


def _verify(args) -> int:
    if args.instances < 1:
        raise ConfigError("instances", "must be >= 1")
    report = verify(args.seed, args.instances)
    failed = False
    for suite, problems in report.items():
        status = "ok" if not problems else f"{len(problems)} violation(s)"
        print(f"{suite}: {args.instances} instances, {status}")
        for line in problems[:20]:
            print(f"  {line}")
        failed |= bool(problems)
    return EXIT_VERIFY if failed else EXIT_OK


_NEGATIVE = re.compile(r"^-\d")


def _glue_negative_values(argv: Sequence[str]) -> list[str]:
    """Turn ``--values -70,...`` into ``--values=-70,...``; argparse would
    otherwise read anything starting with ``-`` that is not a bare number
    as an option."""
    out: list[str] = []
    for token in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and _NEGATIVE.match(token):
            out[-1] = f"{out[-1]}={token}"
        else:
            out.append(token)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(_glue_negative_values(argv))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "verify":
            return _verify(args)
        overrides = _flag_overrides(args)
        if args.command == "sweep" and "sweep" not in overrides:
            raise ConfigError("sweep", "give --axis/--values or --sweep AXIS=VALUES")
        cfg = parse_config(args.config, overrides)
        if args.command == "ablation":
            return _ablation(args, cfg)
        return _run(args, cfg)
    except InfeasibleConfigError as exc:
        print(f"error: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
