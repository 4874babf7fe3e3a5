"""Command-line entry point.

Subcommands: generate, train, eval, analyze, compare, gradcheck. Exit
codes: 0 success, 2 missing/invalid configuration, 3 training aborted on a
non-finite loss. Outputs are staged in a temporary directory and renamed
into place, so a failed command leaves no partial output behind. The
WTX_SEED environment variable overrides the configured seed(s).
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict

import numpy as np

from .bench import generate_benchmark, save_instance
from .config import (ExperimentConfig, config_from_dict, config_to_dict,
                     default_config)
from .errors import ConfigError, StateError, TrainingDiverged, ValidationError
from .evaluation import (comparison_csv, comparison_table, evaluate, nn_overlap,
                         norm_stats)
from .gradcheck import run_gradient_suite
from .matrix import atomic_write_text, load_matrix_json, save_matrix_json
from .models import (DetectionProxyHead, TransferModel, export_transferred,
                     load_model_params, save_model_params, train_joint)


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return default_config()
    with open(path) as f:
        return config_from_dict(json.load(f))


def _env_seed() -> int | None:
    raw = os.environ.get("WTX_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"WTX_SEED must be an integer, got {raw!r}")


def _resolve_seeds(cfg: ExperimentConfig, cli_seed: int | None) -> list[int]:
    if cli_seed is not None:
        return [cli_seed]
    env = _env_seed()
    if env is not None:
        return [env]
    return list(cfg.seeds)


@contextmanager
def staged_output(final_path: str, overwrite: bool):
    """Create the output directory atomically: build in a temp dir, rename."""
    final_path = os.path.abspath(final_path)
    if os.path.exists(final_path) and not overwrite:
        raise ConfigError(f"output {final_path} already exists (use --overwrite)")
    tmp = final_path + f".staging{os.getpid()}"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if os.path.exists(final_path):
        shutil.rmtree(final_path)
    os.replace(tmp, final_path)


def _write_json(path: str, payload) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=1))


def _run_config_payload(cfg: ExperimentConfig, variant: str, seed: int,
                        alpha: float | None, method: str) -> dict:
    doc = config_to_dict(cfg)
    doc["resolved"] = {"variant": variant, "seed": seed,
                       "alpha": cfg.train.alpha if alpha is None else alpha,
                       "method": method}
    return doc


def run_training(cfg: ExperimentConfig, variant: str, seed: int, outdir: str,
                 alpha: float | None = None, model_overrides: dict | None = None,
                 method: str | None = None) -> dict:
    """Train one (variant, seed) run and write all artifacts into outdir."""
    method = method or variant
    bench = generate_benchmark(cfg.benchmark, seed)
    mc = cfg.model_config(variant, **(model_overrides or {}))
    model = TransferModel(mc, bench.source, seed)
    head = DetectionProxyHead(bench.num_other, bench.d_feat)
    tc = cfg.train_config(seed, alpha)

    tag = f"{method}__seed{seed}"
    report = train_joint(model, head, bench.source, bench, tc,
                         csv_path=os.path.join(outdir, f"losses__{tag}.csv"))
    report.config_echo = _run_config_payload(cfg, variant, seed, alpha, method)
    if model_overrides:
        report.config_echo["resolved"]["model_overrides"] = dict(model_overrides)

    export_transferred(model, bench.source, os.path.join(outdir, f"weights__{tag}.json"))
    save_model_params(model, os.path.join(outdir, f"model_params__{tag}.json"))
    save_matrix_json(head.other_weights.data, os.path.join(outdir, f"head__{tag}.json"))
    atomic_write_text(os.path.join(outdir, "report.json"), report.to_json())
    _write_json(os.path.join(outdir, "config.json"), report.config_echo)
    return {"tag": tag, "report": report, "bench": bench, "model": model, "head": head}


def _run_dir_context(run_dir: str):
    """Reload config, benchmark, exported weights and head of a finished run."""
    cfg_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(cfg_path):
        raise ConfigError(f"{run_dir} has no config.json (not a run directory?)")
    with open(cfg_path) as f:
        doc = json.load(f)
    resolved = doc.pop("resolved", None)
    if resolved is None:
        raise ConfigError(f"{run_dir}/config.json lacks the 'resolved' block")
    overrides = resolved.get("model_overrides") or {}
    cfg = config_from_dict(doc)
    seed, variant = int(resolved["seed"]), resolved["variant"]
    tag = f"{resolved['method']}__seed{seed}"
    bench = generate_benchmark(cfg.benchmark, seed)
    w_d = load_matrix_json(os.path.join(run_dir, f"weights__{tag}.json"))
    head = DetectionProxyHead(bench.num_other, bench.d_feat)
    head.other_weights.data[...] = load_matrix_json(os.path.join(run_dir, f"head__{tag}.json"))
    return cfg, resolved, tag, bench, w_d, head, overrides


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seeds(cfg, args.seed)[0]
    with staged_output(args.out, args.overwrite) as tmp:
        bench = generate_benchmark(cfg.benchmark, seed)
        save_instance(bench, tmp)
        _write_json(os.path.join(tmp, "config.json"),
                    _run_config_payload(cfg, cfg.variant, seed, None, "benchmark"))
    print(f"benchmark written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    variant = args.variant or cfg.variant
    seed = _resolve_seeds(cfg, args.seed)[0]
    with staged_output(args.out, args.overwrite) as tmp:
        res = run_training(cfg, variant, seed, tmp, alpha=args.alpha)
    print(f"run {res['tag']} written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = args.run_dir
    cfg, resolved, tag, bench, w_d, head, _ = _run_dir_context(run_dir)
    k = cfg.evaluation.recall_k
    for split in ("eval_seen", "eval_novel"):
        rep = evaluate(head, w_d, bench, split, k=k)
        rep.config_echo = {"resolved": resolved}
        atomic_write_text(os.path.join(run_dir, f"metrics__{tag}__{split}.json"),
                          rep.to_json())
    print(f"metrics written to {run_dir}")
    return 0


def cmd_analyze(args) -> int:
    run_dir = args.run_dir
    cfg, resolved, tag, bench, w_d, head, overrides = _run_dir_context(run_dir)
    rng = np.random.default_rng(cfg.evaluation.analysis_seed)
    curve = nn_overlap(bench.source.weights, w_d, cfg.evaluation.overlap_ks,
                       cfg.evaluation.sample_classes, rng)
    atomic_write_text(os.path.join(run_dir, f"overlap__{tag}.json"), curve.to_json())
    atomic_write_text(os.path.join(run_dir, f"overlap__{tag}.csv"), curve.to_csv())

    mc = cfg.model_config(resolved["variant"], **overrides)
    model = TransferModel(mc, bench.source, int(resolved["seed"]))
    load_model_params(model, os.path.join(run_dir, f"model_params__{tag}.json"))
    stats = norm_stats(model, bench.source)
    atomic_write_text(os.path.join(run_dir, f"norm_stats__{tag}.json"), stats.to_json())
    print(f"analysis written to {run_dir}")
    return 0


GRID_METHODS = (
    # method label, variant, model overrides
    ("wtn", "wtn", {}),
    ("wtn_plus_in_only", "wtn_plus", {"feature_norm": False}),
    ("wtn_plus_gn_only", "wtn_plus", {"input_norm": False}),
    ("wtn_plus", "wtn_plus", {}),
)


def _sweep_methods(grid: bool):
    if grid:
        return GRID_METHODS
    return (("wtn", "wtn", {}), ("wtn_plus", "wtn_plus", {}), ("ae_wtn", "ae_wtn", {}))


def _row_from_run(cfg: ExperimentConfig, method: str, variant: str, overrides: dict,
                  seed: int, head, w_d, bench) -> dict:
    mc = cfg.model_config(variant, **overrides)
    k = cfg.evaluation.recall_k
    seen = evaluate(head, w_d, bench, "eval_seen", k=k)
    novel = evaluate(head, w_d, bench, "eval_novel", k=k)
    return {"method": method, "seed": seed,
            "input_norm": mc.resolved_input_norm(),
            "group_norm": mc.resolved_feature_norm(),
            "seen_top1": seen.top1, "novel_top1": novel.top1,
            "novel_recall": novel.recall_k,
            "benchmark_echo": asdict(cfg.benchmark)}


def cmd_compare(args) -> int:
    if args.run_dirs:
        rows = []
        for rd in args.run_dirs:
            cfg, resolved, tag, bench, w_d, head, overrides = _run_dir_context(rd)
            rows.append(_row_from_run(cfg, resolved["method"], resolved["variant"],
                                      overrides, int(resolved["seed"]), head, w_d, bench))
        table = comparison_table(rows)
        with staged_output(args.out, args.overwrite) as tmp:
            _write_json(os.path.join(tmp, "comparison.json"), table)
            atomic_write_text(os.path.join(tmp, "comparison.csv"), comparison_csv(table))
        print(f"comparison written to {args.out}")
        return 0

    cfg = _load_config(args.config)
    seeds = _resolve_seeds(cfg, args.seed)
    methods = _sweep_methods(args.grid)

    def one(job):
        method, variant, overrides, seed = job
        outdir = os.path.join(sweep_tmp, "runs", f"{method}__seed{seed}")
        os.makedirs(outdir)
        res = run_training(cfg, variant, seed, outdir, alpha=args.alpha,
                           model_overrides=overrides, method=method)
        return _row_from_run(cfg, method, variant, overrides, seed,
                             res["head"], res["model"].transfer(res["bench"].source.weights),
                             res["bench"])

    jobs = [(m, v, o, s) for (m, v, o) in methods for s in seeds]
    with staged_output(args.out, args.overwrite) as sweep_tmp:
        os.makedirs(os.path.join(sweep_tmp, "runs"))
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(one, jobs))
        else:
            rows = [one(j) for j in jobs]
        table = comparison_table(rows)
        _write_json(os.path.join(sweep_tmp, "comparison.json"), table)
        atomic_write_text(os.path.join(sweep_tmp, "comparison.csv"), comparison_csv(table))
    print(f"comparison written to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seeds=range(args.seeds))
    by_name: dict[str, list] = {}
    for r in results:
        by_name.setdefault(r.name, []).append(r)
    ok = True
    for name, rs in by_name.items():
        worst = max(rs, key=lambda r: r.error)
        status = "PASS" if all(r.passed for r in rs) else "FAIL"
        ok &= status == "PASS"
        print(f"{status} {name:<16} max_rel_err={worst.error:.3e} tol={worst.tol:.0e} "
              f"(over {len(rs)} seeds)")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wtx",
                                description="Weight transfer network training and analysis")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment config JSON (defaults used if omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
            sp.add_argument("--overwrite", action="store_true",
                            help="replace the output directory if it exists")

    sp = sub.add_parser("generate", help="generate a benchmark directory")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train one (variant, seed) run")
    common(sp)
    sp.add_argument("--variant", choices=("wtn", "wtn_plus", "ae_wtn"))
    sp.add_argument("--alpha", type=float, help="reconstruction loss weight override")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="compute metrics for a finished run")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("analyze", help="neighbor overlap and activation-norm stats")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("compare", help="aggregate runs (or run a full sweep) into a table")
    common(sp)
    sp.add_argument("run_dirs", nargs="*", help="evaluated run directories to aggregate")
    sp.add_argument("--grid", action="store_true",
                    help="sweep the input-norm x group-norm ablation grid")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--jobs", type=int, default=1, help="parallel (variant, seed) runs")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    sp.add_argument("--seeds", type=int, default=10, help="number of seeds to check")
    sp.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FileNotFoundError,
            json.JSONDecodeError, StateError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
