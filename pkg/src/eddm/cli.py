"""Command-line entry point.

    eddm simulate        one episode (``--steady`` for a noise-free steady run)
    eddm build-datasets  the configured datasets, with feature selection
    eddm train           a twin library from ``--dataset`` sources
    eddm evaluate        the PVA ensemble of ``--library`` on eval datasets
    eddm compare         the six ensemble-vs-single cases -> table2.csv
    eddm context-switch  baseline vs switched run of ``--library``

Every command writes ``report.json`` into ``--out``. Exit code is 0 on
success, 2 on any error (with a one-line diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .config import ConfigError, EddmConfig, load_config
from .dataset import pooled_correlations, save_dataset
from .fnn import LibraryError, TrainingDivergedError, load_library, save_library
from .harness import (
    EVAL_LABELS,
    CaseError,
    build_context,
    context_switch_experiment,
    evaluate_library,
    report_document,
    run_case,
    comparison_specs,
    write_comparison_table,
)
from .plant import InvalidScenarioError, PumpProfile, save_episode, simulate_episode, with_noise_off
from .pva import export_trace


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eddm", description="Ensemble digital-twin diagnosis experiments.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", type=Path, help="JSON configuration (defaults when omitted)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, help="override the master seed")
        return sp

    sp = add("simulate", "simulate one pump ramp-down episode")
    sp.add_argument("--w-end", type=float, help="final pump-1 speed as a fraction of nominal")
    sp.add_argument("--steady", action="store_true", help="no ramp and no sensor noise")

    add("build-datasets", "generate and save the configured datasets")

    sp = add("train", "train a twin library")
    sp.add_argument("--library", type=Path, help="library directory (default: OUT/library)")
    sp.add_argument("--dataset", default="Train", help="comma-separated source datasets, first one is primary")

    sp = add("evaluate", "evaluate a twin library with the voting ensemble")
    sp.add_argument("--library", type=Path, required=True)
    sp.add_argument("--dataset", help="evaluate only this dataset label")

    add("compare", "run the six ensemble-vs-single cases")

    sp = add("context-switch", "inject an unannounced pump-2 action mid-transient")
    sp.add_argument("--library", type=Path, required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        body = COMMANDS[args.command](args, cfg, out)
        doc = report_document(args.command, cfg, body)
        (out / "report.json").write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
    except (ConfigError, LibraryError, CaseError, TrainingDivergedError, InvalidScenarioError, OSError, KeyError, ValueError) as exc:
        print(f"eddm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out / 'report.json'}")
    return 0


def _simulate(args, cfg: EddmConfig, out: Path) -> dict:
    if args.steady:
        profile, plant = PumpProfile(w0=1.0, w_end=1.0), with_noise_off(cfg.plant)
    else:
        w_end = cfg.experiment.base_w_end if args.w_end is None else args.w_end
        profile, plant = PumpProfile(w0=1.0, w_end=w_end), cfg.plant
    ep = simulate_episode(profile, cfg.experiment.base_actions, plant, seed=cfg.derived_seed("simulate"))
    path = save_episode(ep, out / "episode")
    return {"episode": path.name, "n_steps": len(ep.ssf), "ssf_min": float(ep.ssf.min()), "ssf_max": float(ep.ssf.max())}


def _build_datasets(args, cfg, out) -> dict:
    ctx = build_context(cfg)
    train = ctx.datasets["Train"]
    for label, ds in ctx.datasets.items():
        save_dataset(ds, out / "datasets" / label)
    return {
        "datasets": {label: len(ds) for label, ds in ctx.datasets.items()},
        "features": list(train.feature_names),
        "twin_inputs": ctx.inputs,
        "correlations": pooled_correlations(train),
    }


def _train(args, cfg, out) -> dict:
    sources = tuple(s.strip() for s in args.dataset.split(",") if s.strip())
    ctx = build_context(cfg)
    missing = [s for s in sources if s not in ctx.datasets]
    if missing or not sources:
        raise KeyError(f"unknown dataset label(s) {missing or sources}")
    twins = ctx.library(sources, cfg.experiment.coverage)
    save_library(twins, args.library or out / "library")
    return {
        "sources": list(sources),
        "twins": [{**t.regime, "epochs": len(t.history["train_loss"]), "train_ssf_mse": t.history["train_ssf_mse"][-1]} for t in twins],
    }


def _evaluate(args, cfg, out) -> dict:
    library = load_library(args.library)
    ctx = build_context(cfg)
    labels = [args.dataset] if args.dataset else [l for l in EVAL_LABELS if l in ctx.datasets]
    results = {}
    for label in labels:
        if label not in ctx.datasets:
            raise KeyError(f"unknown dataset label {label!r}")
        results[label] = evaluate_library(library, ctx.datasets[label], cfg, out / "traces")
    return {
        "n_twins": len(library),
        "twins": [t.name for t in library],
        "results": {k: asdict(v) for k, v in results.items()},
    }


def _compare(args, cfg, out) -> dict:
    ctx = build_context(cfg)
    reports = [run_case(spec, ctx, out / "traces") for spec in comparison_specs(cfg)]
    write_comparison_table(reports, out / "table2.csv")
    return {"cases": [r.to_dict() for r in reports]}


def _context_switch(args, cfg, out) -> dict:
    library = load_library(args.library)
    profile = PumpProfile(w0=1.0, w_end=cfg.experiment.base_w_end)
    switch = cfg.experiment.switch
    pair = context_switch_experiment(library, profile, switch, cfg, cfg.experiment.base_actions)
    for trace in pair:
        export_trace(trace.steps, out / "traces" / f"{trace.label}.csv")
    return {"switch": {"t_start": switch.t_start, "pump2_target": switch.pump2_target, "ramp_duration": switch.ramp_duration}, "runs": [t.summary() for t in pair]}


COMMANDS = {
    "simulate": _simulate,
    "build-datasets": _build_datasets,
    "train": _train,
    "evaluate": _evaluate,
    "compare": _compare,
    "context-switch": _context_switch,
}


if __name__ == "__main__":
    sys.exit(main())
