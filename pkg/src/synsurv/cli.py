"""Experiment command line: generate / inject / run / score.

``generate`` builds a synthetic corpus from a generator spec, ``inject``
plants single-slot outbreaks of duplicated records into existing streams,
``run`` executes a detector grid over a corpus and writes the results table
(CSV, optional per-stream alarm-curve CSVs and PNG figures), and ``score``
runs one detector on one stream and emits its score series as CSV.

Everything is seed-driven: rerunning any command with the same arguments
reproduces its outputs byte for byte. Logs go to stderr, data to files, and
the summary table to stdout.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as sio
from .detectors import (
    DETECTOR_KINDS,
    DetectorConfig,
    run_detector,
)
from .evaluate import DEFAULT_FAR_CAP, aauc, amoc_curve
from .simulate import (
    OutbreakSpec,
    default_generator_spec,
    generate_corpus,
    inject_corpus,
    load_generator_spec,
    parse_outbreak_spec,
)
from .stream import Syndrome
from .syndromes import enumerate_syndromes

logger = logging.getLogger("synsurv")

JOBS_ENV_VAR = "SYNSURV_JOBS"


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer (got {text})")
    return value


def config_to_dict(config: DetectorConfig) -> dict:
    d = asdict(config)
    d["wsare20_lags"] = list(config.wsare20_lags)
    return d


def config_from_dict(d: dict) -> DetectorConfig:
    known = {
        "kind",
        "max_order",
        "aggregation",
        "permutation_reps",
        "wsare20_lags",
        "moving_average_window",
        "anomaly_backend",
        "rng_seed",
    }
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown detector config fields: {sorted(extra)}")
    if "kind" not in d:
        raise ValueError("detector config needs a 'kind'")
    kwargs = dict(d)
    if "wsare20_lags" in kwargs:
        kwargs["wsare20_lags"] = tuple(kwargs["wsare20_lags"])
    return DetectorConfig(**kwargs)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    if args.spec == "default":
        spec = default_generator_spec()
        spec_doc: dict = {}
    else:
        with open(args.spec, encoding="utf-8") as fh:
            spec_doc = json.load(fh)
        spec = load_generator_spec(spec_doc)

    outbreak = None
    if not args.no_outbreak:
        if "outbreak" in spec_doc:
            outbreak = parse_outbreak_spec(spec_doc["outbreak"])
        elif args.spec == "default":
            outbreak = OutbreakSpec(mode="boost", target=Syndrome.from_label("symptom=rash"), magnitude=10.0)
        if args.target:
            base = outbreak or OutbreakSpec(mode="boost")
            outbreak = OutbreakSpec(
                mode="boost",
                target=Syndrome.from_label(args.target),
                duration=args.duration or base.duration,
                magnitude=args.magnitude if args.magnitude is not None else base.magnitude,
            )
        elif outbreak is not None and (args.magnitude is not None or args.duration):
            outbreak = OutbreakSpec(
                mode=outbreak.mode,
                target=outbreak.target,
                duration=args.duration or outbreak.duration,
                magnitude=args.magnitude if args.magnitude is not None else outbreak.magnitude,
            )
        if outbreak is None:
            logger.error("no outbreak target: set one in the spec file, pass --target, or use --no-outbreak")
            return 1
    manifest = generate_corpus(spec, args.n, outbreak, args.out, master_seed=args.seed)
    logger.info("wrote %d streams to %s", manifest["n_streams"], args.out)
    return 0


# ---------------------------------------------------------------------------
# inject
# ---------------------------------------------------------------------------


def cmd_inject(args: argparse.Namespace) -> int:
    if bool(args.corpus) == bool(args.stream):
        logger.error("pass exactly one of --corpus or --stream")
        return 1
    if args.corpus:
        corpus = sio.load_corpus(args.corpus)
        bases = [corpus.load(i) for i in range(corpus.n_streams)]
        n = args.n or corpus.n_streams
    else:
        if args.train_len is None:
            logger.error("--stream needs --train-len")
            return 1
        bases = [sio.load_stream_dir(args.stream, train_len=args.train_len)]
        n = args.n or 100
    bases = [b.with_outbreaks(()) for b in bases]  # injection defines the ground truth
    manifest = inject_corpus(bases, n, args.out, master_seed=args.seed, rare_quota=args.rare_quota)
    s = manifest["summary"]
    logger.info(
        "wrote %d injected streams to %s (%d single / %d pair conditions, %d rare)",
        n, args.out, s["n_single"], s["n_pair"], s["n_rare"],
    )
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _resolve_experiment(config_path: str) -> dict:
    with open(config_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "corpus" not in doc or "detectors" not in doc or "output_dir" not in doc:
        raise ValueError("experiment config needs 'corpus', 'detectors', and 'output_dir'")
    if not doc["detectors"]:
        raise ValueError("experiment config needs at least one detector")
    resolved = {
        "corpus": doc["corpus"],
        "detectors": [config_to_dict(config_from_dict(d)) for d in doc["detectors"]],
        "max_orders": sorted(set(doc.get("max_orders", [1]))),
        "far_cap": float(doc.get("far_cap", DEFAULT_FAR_CAP)),
        "output_dir": doc["output_dir"],
        "master_seed": int(doc.get("master_seed", 0)),
        "syndrome_mode": doc.get("syndrome_mode", "auto"),
    }
    if not (0.0 < resolved["far_cap"] <= 1.0):
        raise ValueError("far_cap must be in (0, 1]")
    if any(o not in (1, 2) for o in resolved["max_orders"]) or not resolved["max_orders"]:
        raise ValueError("max_orders must be a non-empty subset of {1, 2}")
    if resolved["syndrome_mode"] not in ("auto", "full", "observed"):
        raise ValueError("syndrome_mode must be auto, full, or observed")
    return resolved


def _expand_cells(resolved: dict) -> list[tuple[str, DetectorConfig]]:
    """Grid cells (cell_id, config); global detectors ignore the order axis."""
    from dataclasses import replace

    cells = []
    for i, d in enumerate(resolved["detectors"]):
        config = config_from_dict(d)
        if config.uses_syndromes:
            for order in resolved["max_orders"]:
                c = replace(config, max_order=order)
                cells.append((f"{i:02d}_{c.kind}_o{order}", c))
        else:
            cells.append((f"{i:02d}_{config.kind}_o0", config))
    return cells


def _run_cell_stream(task: dict) -> dict:
    """Worker: score one stream with one detector and evaluate its curve."""
    from dataclasses import replace

    corpus = sio.load_corpus(task["corpus_dir"])
    stream = corpus.load(task["stream_index"])
    config = replace(config_from_dict(task["config"]), rng_seed=task["stream_seed"])
    syndromes = None
    if config.uses_syndromes and task["syndrome_mode"] == "observed":
        syndromes = enumerate_syndromes(
            stream.schema, config.max_order, mode="observed", history=stream.train_slots
        )
    try:
        series = run_detector(config, stream, syndromes)
        curve = amoc_curve(series, stream.outbreaks, stream.train_len)
        value = aauc(curve, task["far_cap"])
        return {"aauc5": value, "curve": [list(p) for p in curve], "error": None}
    except Exception as exc:  # failures are recorded per stream, not fatal
        return {"aauc5": None, "curve": None, "error": f"{type(exc).__name__}: {exc}"}


def _state_path(out_dir: Path, cell_id: str, stream_index: int) -> Path:
    return out_dir / "state" / cell_id / f"stream_{stream_index:03d}.json"


def cmd_run(args: argparse.Namespace) -> int:
    resolved = _resolve_experiment(args.config)
    if args.out:
        resolved["output_dir"] = args.out
    out_dir = Path(resolved["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    sio.atomic_write_text(out_dir / "config.resolved.json", json.dumps(resolved, indent=2) + "\n")

    corpus = sio.load_corpus(resolved["corpus"])
    syndrome_mode = resolved["syndrome_mode"]
    if syndrome_mode == "auto":
        # full enumeration suits generated corpora; external/injected data are
        # monitored on syndromes observed in training
        syndrome_mode = "full" if corpus.manifest.get("kind") == "generated" else "observed"
    cells = _expand_cells(resolved)
    master_seed = resolved["master_seed"]

    tasks = []
    for cell_pos, (cell_id, config) in enumerate(cells):
        for i in range(corpus.n_streams):
            state = _state_path(out_dir, cell_id, i)
            if state.exists():
                continue
            stream_seed = int(
                np.random.SeedSequence(
                    entropy=(master_seed, config.rng_seed, cell_pos, i)
                ).generate_state(1)[0]
            )
            tasks.append(
                {
                    "cell_id": cell_id,
                    "stream_index": i,
                    "corpus_dir": str(corpus.root),
                    "config": config_to_dict(config),
                    "syndrome_mode": syndrome_mode,
                    "far_cap": resolved["far_cap"],
                    "stream_seed": stream_seed,
                }
            )

    jobs = args.jobs or int(os.environ.get(JOBS_ENV_VAR, "1"))
    logger.info("running %d tasks (%d cells x %d streams, %d cached) with %d job(s)",
                len(tasks), len(cells), corpus.n_streams,
                len(cells) * corpus.n_streams - len(tasks), jobs)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell_stream, tasks, chunksize=1))
    else:
        outcomes = [_run_cell_stream(t) for t in tasks]
    for task, outcome in zip(tasks, outcomes):
        sio.atomic_write_text(
            _state_path(out_dir, task["cell_id"], task["stream_index"]),
            json.dumps(outcome) + "\n",
        )

    # aggregate from state files (covers both fresh and resumed runs)
    rows = []
    failed_cells = 0
    cell_curves: dict[str, list] = {}
    for cell_id, config in cells:
        values, curves, failures = [], [], 0
        for i in range(corpus.n_streams):
            with open(_state_path(out_dir, cell_id, i), encoding="utf-8") as fh:
                st = json.load(fh)
            if st["aauc5"] is None:
                failures += 1
                logger.warning("cell %s stream %d failed: %s", cell_id, i, st["error"])
            else:
                values.append((i, st["aauc5"]))
                curves.append((i, st["curve"]))
        if not values:
            failed_cells += 1
            mean = float("nan")
        else:
            mean = float(np.mean([v for _, v in values]))
        rows.append(
            {
                "cell_id": cell_id,
                "detector": config.kind,
                "max_order": config.max_order if config.uses_syndromes else 0,
                # corpus name keeps results CSVs byte-identical across roots;
                # the full path is in config.resolved.json
                "corpus": Path(resolved["corpus"]).name,
                "mean_aauc5": mean,
                "n_streams": len(values),
                "n_failures": failures,
                "per_stream": values,
            }
        )
        cell_curves[cell_id] = curves
    rows.sort(key=lambda r: (np.isnan(r["mean_aauc5"]), r["mean_aauc5"]))

    buf = _io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["detector", "max_order", "corpus", "mean_aauc5", "n_streams", "n_failures"])
    for r in rows:
        writer.writerow(
            [r["detector"], r["max_order"], r["corpus"], f"{r['mean_aauc5']:.6f}", r["n_streams"], r["n_failures"]]
        )
    sio.atomic_write_text(out_dir / "results.csv", buf.getvalue())

    buf = _io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["detector", "max_order", "stream", "aauc5"])
    for r in rows:
        for i, v in r["per_stream"]:
            writer.writerow([r["detector"], r["max_order"], i, f"{v:.6f}"])
    sio.atomic_write_text(out_dir / "per_stream.csv", buf.getvalue())

    if args.curves:
        for r in rows:
            cdir = out_dir / "curves" / r["cell_id"]
            for i, curve in cell_curves[r["cell_id"]]:
                lines = ["far,delay"] + [f"{f!r},{d!r}" for f, d in curve]
                sio.atomic_write_text(cdir / f"stream_{i:03d}.csv", "\n".join(lines) + "\n")

    if args.plots:
        from . import plots

        plot_dir = out_dir / "plots"
        plot_dir.mkdir(parents=True, exist_ok=True)
        summary_rows = []
        for r in rows:
            if np.isnan(r["mean_aauc5"]):
                continue
            name = f"{r['detector']}" + (f" (order {r['max_order']})" if r["max_order"] else "")
            summary_rows.append((name, r["mean_aauc5"]))
            curves = [c for _, c in cell_curves[r["cell_id"]]]
            if curves:
                plots.save_amoc_figure(
                    curves, name, plot_dir / f"amoc_{r['cell_id']}.png", resolved["far_cap"]
                )
        if summary_rows:
            plots.save_summary_figure(summary_rows, plot_dir / "summary.png", resolved["far_cap"])

    width = max(len(r["detector"]) for r in rows) + 2
    print(f"{'detector':<{width}}{'order':>6}{'mean_aauc5':>12}{'streams':>9}{'failures':>10}")
    for r in rows:
        mean = "nan" if np.isnan(r["mean_aauc5"]) else f"{r['mean_aauc5']:.3f}"
        print(f"{r['detector']:<{width}}{r['max_order']:>6}{mean:>12}{r['n_streams']:>9}{r['n_failures']:>10}")

    return 1 if failed_cells == len(cells) else 0


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def cmd_score(args: argparse.Namespace) -> int:
    stream = sio.load_stream_dir(args.stream, train_len=args.train_len)
    config = DetectorConfig(
        kind=args.detector,
        max_order=args.order,
        aggregation=args.aggregation,
        permutation_reps=args.reps,
        moving_average_window=args.window,
        anomaly_backend=args.backend,
        rng_seed=args.seed,
    )
    syndromes = None
    if config.uses_syndromes and args.mode == "observed":
        syndromes = enumerate_syndromes(
            stream.schema, config.max_order, mode="observed", history=stream.train_slots
        )
    series = run_detector(config, stream, syndromes)
    sio.write_scores_csv(series.scores, series.start, args.out)
    logger.info("wrote %d scores to %s", len(series), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synsurv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="generator spec JSON path, or 'default'")
    p.add_argument("--n", type=_positive_int, required=True, help="number of streams")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--no-outbreak", action="store_true", help="generate without outbreaks")
    p.add_argument("--target", help="outbreak target syndrome label (attr=value[&attr=value])")
    p.add_argument("--magnitude", type=float, help="mean extra cases per outbreak slot")
    p.add_argument("--duration", type=int, help="outbreak duration in slots")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("inject", help="inject single-slot outbreaks into existing streams")
    p.add_argument("--corpus", help="input corpus directory")
    p.add_argument("--stream", help="single stream directory to replicate")
    p.add_argument("--train-len", type=_positive_int, help="training slots (with --stream)")
    p.add_argument("--n", type=_positive_int, help="output streams (default: corpus size, or 100)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rare-quota", type=int, default=20,
                   help="max streams with sub-1/day target syndromes")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("run", help="run a detector grid over a corpus")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="override the config's output_dir")
    p.add_argument("--curves", action="store_true", help="write per-stream far,delay CSVs")
    p.add_argument("--plots", action="store_true", help="render PNG figures next to the CSVs")
    p.add_argument("--jobs", type=_positive_int, help=f"parallel workers (default ${JOBS_ENV_VAR} or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="score one stream with one detector")
    p.add_argument("--stream", required=True, help="stream directory")
    p.add_argument("--train-len", type=_positive_int, required=True)
    p.add_argument("--detector", required=True, choices=DETECTOR_KINDS)
    p.add_argument("--order", type=int, default=1, choices=(1, 2))
    p.add_argument("--aggregation", default="min_p", choices=("min_p", "permutation"))
    p.add_argument("--reps", type=_positive_int, default=1000)
    p.add_argument("--window", type=_positive_int, default=7)
    p.add_argument("--backend", default="mahalanobis_diag")
    p.add_argument("--mode", default="full", choices=("full", "observed"),
                   help="syndrome enumeration mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output scores CSV")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:
        logger.error("%s", exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
