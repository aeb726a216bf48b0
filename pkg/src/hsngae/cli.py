"""Command-line runner: ``hsngae synth|baseline|transfer|ablation|gradcheck``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .autodiff import NumericalError
from .experiments import (
    ExperimentConfig,
    aggregate,
    baseline_run,
    load_experiment_data,
    model_name,
    read_results,
    save_transfer_artifacts,
    seed_config,
    transfer_run,
    write_aggregate,
    write_results,
)
from .gradcheck import run_suite
from .metrics import RunSummary, relative_score
from .sitegraph import AdjacencyDesign
from .synthhome import SynthConfig, generate_homes, write_homes
from .training import ConfigError

logger = logging.getLogger("hsngae")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
BASELINE_KINDS = ("dt", "knn", "mlp")
ABLATION_KIND = "dt"


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError(f"{args.command} needs --config")
    config = ExperimentConfig.from_json(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.adjacency is not None:
        changes["adjacency"] = AdjacencyDesign.parse(args.adjacency)
    if args.target_points is not None:
        changes["target_points"] = args.target_points
    if args.out is not None:
        changes["out"] = args.out
    return replace(config, **changes) if changes else config


def _snapshot(config: ExperimentConfig, seed_dir: Path, seed: int) -> None:
    seed_dir.mkdir(parents=True, exist_ok=True)
    snap = config.to_dict()
    snap["train"]["seed"] = seed
    (seed_dir / "config.json").write_text(json.dumps(snap, indent=2), encoding="utf-8")


def _print_aggregates(aggs) -> None:
    for a in aggs:
        ci = "" if a.f1_ci95 is None else f" +- {a.f1_ci95:.3f}"
        rel = "" if a.relative_score is None else f"  relative {a.relative_score:.1f}%"
        print(f"{a.model:<10} {a.source}->{a.target}  F1 {a.f1_mean:.3f}{ci}  (n={a.runs}){rel}")


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    data = _read_json(args.config) if args.config else {}
    synth = SynthConfig.from_dict(data.get("synth", data) if data else {})
    if args.seed is not None:
        synth = replace(synth, seed=args.seed)
    synth.validate_for_transfer()
    out = Path(args.out or "data")
    try:
        written = write_homes(generate_homes(synth), out)
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from None
    experiment = {
        "name": "synthetic",
        "source": {"events": Path(written[0]["events"]).name, "layout": Path(written[0]["layout"]).name},
        "target": {"events": Path(written[1]["events"]).name, "layout": Path(written[1]["layout"]).name},
        "synth": synth.to_dict(),
    }
    (out / "experiment.json").write_text(json.dumps(experiment, indent=2), encoding="utf-8")
    for w in written:
        print(f"{w['home_id']}: {w['events']} {w['layout']}")
    print(f"experiment config: {out / 'experiment.json'}")
    return EXIT_OK


def run_baselines(config: ExperimentConfig) -> list[RunSummary]:
    _, target = load_experiment_data(config)
    rows = []
    for seed in config.seeds:
        _snapshot(config, config.run_dir / str(seed), seed)
        for kind in BASELINE_KINDS:
            out = baseline_run(kind, target, seed_config(config, seed), config.weights)
            logger.info("baseline %s seed %d: F1 %.3f", kind, seed, out.f1)
            rows.append(RunSummary(model_name(kind, False), target.home_id, target.home_id, seed, out.f1))
    return rows


def cmd_baseline(args) -> int:
    config = load_config(args)
    rows = run_baselines(config)
    write_results(rows, config.run_dir / "results_baseline.csv")
    aggs = aggregate(rows)
    write_aggregate(aggs, config.run_dir / "aggregate_baseline.csv")
    _print_aggregates(aggs)
    return EXIT_OK


def _baseline_f1(config: ExperimentConfig, kind: str) -> dict[int, float]:
    path = config.run_dir / "results_baseline.csv"
    if not path.is_file():
        raise ConfigError(f"no baseline results at {path}; run 'hsngae baseline' with this config first")
    name = model_name(kind, False)
    found = {r.seed: r.f1 for r in read_results(path) if r.model == name}
    missing = [s for s in config.seeds if s not in found]
    if missing:
        raise ConfigError(f"{path} has no {name} rows for seeds {missing}; rerun 'hsngae baseline'")
    return found


def run_transfers(config: ExperimentConfig, kind: str, label: str | None = None, subdir: str | None = None
                  ) -> list[RunSummary]:
    baseline = _baseline_f1(config, kind)
    source, target = load_experiment_data(config)
    label = label or model_name(kind, True)
    rows = []
    for seed in config.seeds:
        seed_dir = config.run_dir / str(seed)
        _snapshot(config, seed_dir, seed)
        t0 = time.perf_counter()
        out = transfer_run(kind, source, target, seed_config(config, seed), config.weights, config.target_points)
        save_transfer_artifacts(out, seed_dir / subdir if subdir else seed_dir)
        rel = relative_score(out.f1, baseline[seed])
        logger.info("%s seed %d: F1 %.3f relative %.1f%% (%.1fs)", label, seed, out.f1, rel, time.perf_counter() - t0)
        rows.append(RunSummary(label, source.home_id, target.home_id, seed, out.f1, rel))
    return rows


def _baseline_means(config: ExperimentConfig, kind: str, label: str) -> dict[str, float]:
    f1 = _baseline_f1(config, kind)
    return {label: sum(f1[s] for s in config.seeds) / len(config.seeds)}


def cmd_transfer(args) -> int:
    config = load_config(args)
    kind = config.classifier
    suffix = "" if config.target_points is None else f"_k{config.target_points}"
    rows = run_transfers(config, kind, subdir=suffix.lstrip("_") or None)
    write_results(rows, config.run_dir / f"results_transfer{suffix}.csv")
    aggs = aggregate(rows, _baseline_means(config, kind, model_name(kind, True)))
    write_aggregate(aggs, config.run_dir / f"aggregate_transfer{suffix}.csv")
    _print_aggregates(aggs)
    return EXIT_OK


def cmd_ablation(args) -> int:
    """GAE+DT under each adjacency design."""
    config = load_config(args)
    rows, means = [], {}
    for design in AdjacencyDesign:
        cfg = replace(config, adjacency=design)
        label = f"GAE+DT/{design.value}"
        rows += run_transfers(cfg, ABLATION_KIND, label, f"ablation-{design.value}")
        means.update(_baseline_means(cfg, ABLATION_KIND, label))
    write_results(rows, config.run_dir / "results_ablation.csv")
    aggs = aggregate(rows, means)
    write_aggregate(aggs, config.run_dir / "aggregate_ablation.csv")
    _print_aggregates(aggs)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = run_suite(seed=args.seed or 0)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "baseline": cmd_baseline,
    "transfer": cmd_transfer,
    "ablation": cmd_ablation,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsngae", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="JSON config (synthetic-home settings for synth, experiment otherwise)")
    p.add_argument("--seed", type=int, help="first seed; repetitions use consecutive seeds")
    p.add_argument("--adjacency", choices=[d.value for d in AdjacencyDesign])
    p.add_argument("--target-points", type=int, help="train on only the k earliest target windows")
    p.add_argument("--out", help="output directory (data dir for synth, runs root otherwise)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
