"""Command-line entry point: run experiment suites and generate synthetic data.

Suite files are JSON::

    {
      "name": "table1",
      "dataset": {"synthetic": {"seed": 7, "sessions": 27}},
      "defaults": {"iterations": 50000, "runs": 3},
      "experiments": [{"name": "random", "kind": "random"}, ...]
    }

``dataset`` is either a directory path (relative paths resolve against the
suite file) or a ``synthetic`` block, which is generated into ``<out>/dataset``.
Each experiment entry takes any ``ExperimentConfig`` field; ``defaults`` fill
the rest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import demos
from .environment import MicroRally, load_track
from .errors import ConfigurationError, GenerationError, ParseError
from .explorer import ExperimentConfig, ExperimentData, Explorer
from .metrics import SUMMARY_FIELDS, mean_ci

log = logging.getLogger("goblend")

BUILTIN_SUITES = ("table1", "table2")
SUMMARY_HEADER = ("experiment", "runs") + tuple(c for f in SUMMARY_FIELDS for c in (f, f + "_ci"))


@dataclass
class ExperimentSuite:
    name: str
    experiments: list
    dataset: str
    out: Path
    seed: int


def run_seed(master: int, name: str, run: int) -> int:
    """Stable per-run seed: first 8 bytes of sha256("master:name:run")."""
    digest = hashlib.sha256(f"{master}:{name}:{run}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _parse_seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def read_suite_doc(spec: str | None) -> tuple:
    """Load a suite document; returns (doc, directory for relative paths)."""
    if spec is None or spec in BUILTIN_SUITES:
        res = resources.files("goblend") / "data" / "suites" / f"{spec or 'table1'}.json"
        return json.loads(res.read_text()), Path.cwd()
    path = Path(spec)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read suite file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return doc, path.resolve().parent


def build_suite(doc: dict, base: Path, out: Path, seed: int, runs=None, iterations=None, only=None) -> ExperimentSuite:
    if not isinstance(doc, dict):
        raise ConfigurationError("suite must be a JSON object")
    unknown = set(doc) - {"name", "dataset", "defaults", "experiments"}
    if unknown:
        raise ConfigurationError(f"unknown suite keys {sorted(unknown)}")
    entries = doc.get("experiments")
    if not entries:
        raise ConfigurationError("suite lists no experiments")
    defaults = dict(doc.get("defaults", {}))
    for key in ("name", "dataset"):
        if key in defaults:
            raise ConfigurationError(f"'{key}' cannot be a default")

    dataset = doc.get("dataset", "data/synthetic")
    if isinstance(dataset, dict):
        if set(dataset) != {"synthetic"}:
            raise ConfigurationError("dataset object must hold a single 'synthetic' block")
        dataset_path = str(out / "dataset")
    else:
        dataset_path = str((base / dataset).resolve())
    if "track" in defaults and defaults["track"] is not None:
        defaults["track"] = str((base / defaults["track"]).resolve())

    configs, names = [], set()
    for entry in entries:
        merged = {**defaults, **entry, "dataset": dataset_path}
        if entry.get("track"):
            merged["track"] = str((base / entry["track"]).resolve())
        if runs is not None:
            merged["runs"] = runs
        if iterations is not None:
            merged["iterations"] = iterations
        cfg = ExperimentConfig.from_dict(merged)
        if cfg.name in names:
            raise ConfigurationError(f"duplicate experiment name {cfg.name!r}")
        names.add(cfg.name)
        configs.append(cfg)
    if only:
        missing = set(only) - names
        if missing:
            raise ConfigurationError(f"--only names unknown experiments {sorted(missing)}")
        configs = [c for c in configs if c.name in only]
    return ExperimentSuite(doc.get("name", "suite"), configs, dataset_path, out, seed)


def _ensure_dataset(doc: dict, suite: ExperimentSuite) -> None:
    spec = doc.get("dataset")
    if not isinstance(spec, dict):
        if not Path(suite.dataset).is_dir():
            raise ConfigurationError(f"dataset directory {suite.dataset} does not exist")
        return
    opts = dict(spec["synthetic"])
    gen_seed = opts.pop("seed", 0)
    track = opts.pop("track", None)
    cfg = demos.SyntheticConfig(**opts)
    env = MicroRally(load_track(track))
    log.info("generating %d synthetic sessions into %s", cfg.sessions, suite.dataset)
    demos.generate_synthetic(suite.dataset, cfg, gen_seed, env)


def _run_one(cfg: ExperimentConfig, run: int, seed: int, run_dir: str) -> dict:
    """Execute one run and write its artifacts; returns the summary row and timing."""
    data = ExperimentData(cfg)
    result = Explorer(cfg, data).run(seed)
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result.to_json())
    result.trace.write_csv(out / "best_trace.csv")
    if result.archive is not None:
        env = data.env
        result.archive.dump(out / "archive.jsonl", lambda k: list(env.decode_key(k)))
    return {"summary": result.summary.as_dict(), "wall_clock": result.wall_clock}


def write_summary(path: Path, rows: list) -> None:
    """``rows`` holds (experiment name, list of per-run summary dicts)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for name, summaries in rows:
            line = [name, len(summaries)]
            for f in SUMMARY_FIELDS:
                m, ci = mean_ci([s[f] for s in summaries])
                line += ["NA" if math.isnan(m) else repr(m), "NA" if math.isnan(ci) else repr(ci)]
            w.writerow(line)


def read_summary(path) -> dict:
    """Parse a summary CSV into {experiment: {column: float or None}}."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {
            row["experiment"]: {k: (None if v == "NA" else float(v)) for k, v in row.items() if k != "experiment"}
            for row in reader
        }


def run_suite(doc: dict, suite: ExperimentSuite, jobs: int = 1) -> Path:
    out = suite.out
    out.mkdir(parents=True, exist_ok=True)
    _ensure_dataset(doc, suite)
    echo = {
        "name": suite.name,
        "seed": suite.seed,
        "dataset": doc.get("dataset"),
        "experiments": [c.to_dict() for c in suite.experiments],
    }
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")

    tasks = []
    for cfg in suite.experiments:
        for k in range(cfg.runs):
            tasks.append((cfg, k, run_seed(suite.seed, cfg.name, k), str(out / "runs" / cfg.name / str(k))))
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, *zip(*tasks)))
    else:
        results = []
        for cfg, k, seed, run_dir in tasks:
            log.info("%s run %d (seed %d)", cfg.name, k, seed)
            results.append(_run_one(cfg, k, seed, run_dir))

    grouped = {cfg.name: [] for cfg in suite.experiments}
    timing = {}
    for (cfg, k, _, _), res in zip(tasks, results):
        grouped[cfg.name].append(res["summary"])
        timing[f"{cfg.name}/{k}"] = round(res["wall_clock"], 3)
    write_summary(out / "summary.csv", list(grouped.items()))
    timing["total"] = round(time.perf_counter() - t0, 3)
    # wall-clock numbers differ between runs, so they stay out of the deterministic files
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    return out / "summary.csv"


def _cmd_run(args) -> int:
    doc, base = read_suite_doc(args.config)
    suite = build_suite(doc, base, Path(args.out), args.seed, args.runs, args.iterations, args.only)
    path = run_suite(doc, suite, args.jobs)
    print(path)
    return 0


def _cmd_gen_data(args) -> int:
    env = MicroRally(load_track(args.track))
    cfg = demos.SyntheticConfig(sessions=args.sessions)
    manifest = demos.generate_synthetic(args.out, cfg, args.seed, env)
    print(f"wrote {len(manifest['sessions'])} sessions to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="goblend", description="Affect-driven archive exploration on MicroRally.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment suite")
    run.add_argument("--config", help=f"suite JSON file or a built-in suite name {BUILTIN_SUITES} (default table1)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=_parse_seed, default=0, help="master seed (unsigned 64-bit)")
    run.add_argument("--runs", type=_positive, help="override runs per experiment")
    run.add_argument("--iterations", type=_positive, help="override iterations per run")
    run.add_argument("--only", action="append", metavar="NAME", help="run only this experiment (repeatable)")
    run.add_argument("--jobs", type=_positive, default=1, help="parallel worker processes")
    run.set_defaults(func=_cmd_run)

    gen = sub.add_parser("gen-data", help="generate a synthetic demonstration dataset")
    gen.add_argument("--track", help="track JSON (default: built-in track)")
    gen.add_argument("--sessions", type=_positive, default=27)
    gen.add_argument("--seed", type=_parse_seed, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ParseError, GenerationError) as exc:
        print(f"goblend: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"goblend: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
