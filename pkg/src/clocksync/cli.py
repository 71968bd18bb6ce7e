"""``clocksync CONFIG`` - run a scenario file and write result tables.

Outputs in ``--out`` (default ``.``):

* ``results.{csv,json}``  one row per sweep value with columns
  noise_value, delta, trace_distance_max, qfi, mle_estimate, mle_stderr, shots
* ``outcomes.{csv,json}`` outcome probabilities (exact) or counts (sampled)
* ``states.{csv,json}``   reduced states of both actors, entries as (re, im)

Floats are written with 17 significant digits, so identical inputs give
identical bytes. Exit status: 0 ok, 1 invalid config, 2 scenario error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, build_timeline, parse_config
from .estimation import max_pairwise_distance, mle_offset, qfi
from .hilbert import Owner, StateError
from .protocols import ScenarioError, measure_labels, outcome_distribution, run_exact, run_sampled_batch

log = logging.getLogger("clocksync")

RESULT_COLUMNS = ("noise_value", "delta", "trace_distance_max", "qfi", "mle_estimate", "mle_stderr", "shots")
OUTCOME_COLUMNS = ("noise_value", "delta", "outcome", "probability", "count")
STATE_COLUMNS = ("noise_value", "delta", "actor", "row", "col", "re", "im")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.17g" % float(x)


def _json_value(x):
    if x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else fmt(x)


@dataclass
class RowResult:
    values: dict
    outcomes: list
    states: list


def row_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _outcome_key(key) -> str:
    return ";".join(key)


def compute_row(cfg: ScenarioConfig, index: int) -> RowResult:
    value = cfg.sweep_values[index] if cfg.sweep_values is not None else None
    tl = build_timeline(cfg, value)
    noise = value if value is not None else cfg.channel.get(cfg.noise_parameter() or "", None)
    observer = Owner(cfg.observer)

    def state_of(d):
        return run_exact(tl.with_delta(d)).state(observer)

    if cfg.delta_grid is not None:
        delta = (min(cfg.delta_grid) + max(cfg.delta_grid)) / 2
        tdmax = max_pairwise_distance([state_of(d) for d in cfg.delta_grid])
    else:
        delta, tdmax = cfg.delta, None
    row = {"noise_value": noise, "delta": delta, "trace_distance_max": tdmax, "qfi": qfi(state_of, delta).qfi,
           "mle_estimate": None, "mle_stderr": None, "shots": None}

    true_delta = cfg.true_delta()
    outcomes = []
    if cfg.sampled:
        seed = row_seed(cfg.seed, index)
        est = mle_offset(tl, true_delta, cfg.shots, cfg.fit_grid(), seed)
        row.update(mle_estimate=est.estimate, mle_stderr=est.stderr, shots=est.shots)
        batch = run_sampled_batch(tl.with_delta(true_delta), cfg.shots, seed)
        kept = ~batch.discarded
        n = int(kept.sum())
        labels = measure_labels(tl)
        if labels and n:
            cols = np.stack([batch.outcome_index[lab][kept] for lab in labels], axis=1)
            keys, counts = np.unique(cols, axis=0, return_counts=True)
            for k, c in zip(keys, counts):
                name = _outcome_key(batch.outcome_names[lab][j] for lab, j in zip(labels, k))
                outcomes.append({"outcome": name, "probability": c / n, "count": int(c)})
    else:
        for key, p in sorted(outcome_distribution(tl.with_delta(true_delta)).items()):
            outcomes.append({"outcome": _outcome_key(key), "probability": p, "count": None})

    rec = run_exact(tl.with_delta(true_delta))
    states = []
    for actor, rho in (("Alice", rec.rho_A), ("Bob", rec.rho_B)):
        for (i, j), z in np.ndenumerate(np.asarray(rho)):
            states.append({"actor": actor, "row": i, "col": j, "re": z.real, "im": z.imag})
    head = {"noise_value": noise, "delta": true_delta}
    return RowResult(row, [{**head, **o} for o in outcomes], [{**head, **s} for s in states])


def run_rows(cfg: ScenarioConfig, jobs: int = 1) -> list[RowResult]:
    n = len(cfg.sweep_values) if cfg.sweep_values is not None else 1
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(compute_row, [cfg] * n, range(n)))
    return [compute_row(cfg, i) for i in range(n)]


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_text(columns, rows) -> str:
    return json.dumps([{c: _json_value(r.get(c)) for c in columns} for r in rows], indent=2) + "\n"


def write_outputs(results: list[RowResult], out_dir: Path, fmt_name: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = _csv_text if fmt_name == "csv" else _json_text
    tables = {
        "results": (RESULT_COLUMNS, [r.values for r in results]),
        "outcomes": (OUTCOME_COLUMNS, [o for r in results for o in r.outcomes]),
        "states": (STATE_COLUMNS, [s for r in results for s in r.states]),
    }
    paths = []
    for name, (cols, rows) in tables.items():
        p = out_dir / f"{name}.{fmt_name}"
        p.write_text(writer(cols, rows))
        paths.append(p)
    return paths


def summary_line(i: int, values: dict) -> str:
    parts = [f"row {i}:"] + [f"{c}={fmt(values[c])}" for c in RESULT_COLUMNS if values[c] is not None]
    return " ".join(parts)


def execute(cfg: ScenarioConfig, out_dir, jobs: int = 1, echo=print) -> list[RowResult]:
    results = run_rows(cfg, jobs)
    for i, r in enumerate(results):
        echo(summary_line(i, r.values))
    for p in write_outputs(results, Path(out_dir), cfg.output_format):
        log.info("wrote %s", p)
    return results


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clocksync", description="Run a clock-exchange scenario file.")
    p.add_argument("config", help="YAML scenario file")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--format", choices=("csv", "json"), help="override output.format")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep rows")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text, seed=args.seed, output_format=args.format)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        execute(cfg, args.out, args.jobs)
    except (ScenarioError, StateError, ValueError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
