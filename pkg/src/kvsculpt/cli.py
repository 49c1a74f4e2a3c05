"""Command-line entry points: gen, compress, allocate, eval.

Flags override values from an optional JSON config file (--config), which
in turn override built-in defaults. All randomness flows from a single
--seed, fanned out per (layer, head) by runner.task_seed. Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .allocate import BudgetPlan, PilotReport, allocate_heads, allocate_layers, uniform_plan
from .attention import ModelShape
from .cache import budget_for_ratio
from .distill import DistillConfig
from .evaluate import evaluate_compressed
from .kvdfile import read_kvd, write_kvd
from .pipeline import compress_model, gen_toy_cache, model_for_cache, run_pilot
from .toymodel import ToyModelConfig

ALLOC_POLICIES = ("uniform", "layer", "head")
DEFAULT_FLOOR = 4


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """Precedence: explicit flags > config file > defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
    merged = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in file_cfg:
            merged[key] = file_cfg[key]
        else:
            merged[key] = default
    return merged


def _distill_config(opts: dict) -> DistillConfig:
    return DistillConfig(
        outer_steps=opts["outer_steps"], v_solve_every=opts["v_solve_every"],
        lbfgs_lr=opts["lbfgs_lr"], lbfgs_inner_iters=opts["lbfgs_inner_iters"],
        lbfgs_history=opts["lbfgs_history"], lambda_lse=opts["lambda_lse"],
        lambda_ridge=opts["lambda_ridge"], n_synth=opts["n_synth"],
        seed=opts["seed"],
    )


_DISTILL_DEFAULTS = {
    "outer_steps": 100, "v_solve_every": 5, "lbfgs_lr": 0.5,
    "lbfgs_inner_iters": 10, "lbfgs_history": 10, "lambda_lse": 1.0,
    "lambda_ridge": 1e-3, "n_synth": 128, "seed": 0,
}


def cmd_gen(args) -> int:
    opts = _merge(args, {
        "seed": 0, "layers": 4, "qheads": 4, "kvheads": 2, "dim": 16,
        "vocab": 64, "ctx": 256, "cont": 32, "weight_scale": 1.7,
        "theta_base": 10000.0,
    })
    config = ToyModelConfig(
        shape=ModelShape(num_layers=opts["layers"], num_q_heads=opts["qheads"],
                         num_kv_heads=opts["kvheads"], head_dim=opts["dim"]),
        vocab=opts["vocab"], seed=opts["seed"],
        weight_scale=opts["weight_scale"], theta_base=opts["theta_base"],
    )
    cache = gen_toy_cache(config, opts["ctx"], opts["cont"])
    write_kvd(cache, args.out)
    print(f"wrote {args.out}: {opts['layers']} layers, ctx {opts['ctx']}, cont {opts['cont']}")
    return 0


def _make_plan(cache, opts, config) -> tuple[BudgetPlan, PilotReport | None]:
    k_uniform = budget_for_ratio(opts["ratio"], opts["retain"], cache.context_len)
    shape = cache.shape
    total = k_uniform * shape.num_layers * shape.num_kv_heads
    head_cap = cache.context_len - opts["retain"]
    if opts["alloc"] == "uniform":
        return uniform_plan(shape.num_layers, shape.num_kv_heads, k_uniform), None
    pilot_steps = opts["pilot_steps"]
    if pilot_steps is None:
        pilot_steps = 60 if opts["alloc"] == "layer" else 30
    pilot = run_pilot(cache, opts["ratio"], opts["retain"], pilot_steps, config)
    floor = min(opts["floor"], k_uniform)
    layer_budgets = allocate_layers(pilot, total, opts["alpha"], floor, head_cap)
    if opts["alloc"] == "layer":
        even = PilotReport(mse=np.ones_like(pilot.mse), pilot_steps=pilot_steps,
                           uniform_k=k_uniform)
        plan = allocate_heads(even, layer_budgets, 0.0, floor, head_cap)
        plan = BudgetPlan(k=plan.k, total=plan.total, alpha=opts["alpha"],
                          k_min_floor=floor)
    else:
        plan = allocate_heads(pilot, layer_budgets, opts["alpha"], floor, head_cap)
    return plan, pilot


def cmd_compress(args) -> int:
    opts = _merge(args, {
        "ratio": 0.3, "retain": 32, "method": "kvsculpt", "alloc": "uniform",
        "alpha": 0.5, "pilot_steps": None, "floor": DEFAULT_FLOOR,
        "strategy": "uniform", **_DISTILL_DEFAULTS,
    })
    if opts["alloc"] not in ALLOC_POLICIES:
        raise ValueError(f"alloc must be one of {ALLOC_POLICIES}")
    cache = read_kvd(args.cache)
    config = _distill_config(opts)
    plan, pilot = _make_plan(cache, opts, config)
    compressed, results = compress_model(cache, opts["retain"], plan, config,
                                         method=opts["method"], strategy=opts["strategy"])
    write_kvd(compressed, args.out)
    report = {
        "method": opts["method"], "ratio": opts["ratio"], "retain": opts["retain"],
        "seed": opts["seed"], "alloc": opts["alloc"], "alpha": opts["alpha"],
        "total_budget": int(plan.total),
        "plan": json.loads(plan.to_json()),
        "heads": [{"layer": r.layer, "head": r.head, "k": r.k, "loss": r.loss,
                   "output_mse": r.output_mse, "lse_mse": r.lse_mse}
                  for r in results],
    }
    if pilot is not None:
        report["pilot"] = json.loads(pilot.to_json())
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
    if args.trace:
        with open(args.trace, "w") as fh:
            for r in results:
                if r.trace is None:
                    continue
                for record in r.trace.jsonl_records(r.layer, r.head):
                    fh.write(json.dumps(record) + "\n")
    print(f"wrote {args.out}: method={opts['method']} total_budget={plan.total}")
    return 0


def cmd_allocate(args) -> int:
    opts = _merge(args, {"alpha": 0.5, "floor": DEFAULT_FLOOR, "cap": None})
    with open(args.pilot) as fh:
        pilot = PilotReport.from_json(fh.read())
    n_layers, n_heads = pilot.mse.shape
    cap = opts["cap"] if opts["cap"] is not None else args.budget
    layer_budgets = allocate_layers(pilot, args.budget, opts["alpha"], opts["floor"], cap)
    plan = allocate_heads(pilot, layer_budgets, opts["alpha"], opts["floor"], cap)
    text = plan.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 0


def _eval_single(ref_cache, comp_cache, out_path, plot_data=None) -> None:
    model = model_for_cache(ref_cache)
    report = evaluate_compressed(model, ref_cache, comp_cache)
    with open(out_path, "w") as fh:
        fh.write(report.to_json())
    if plot_data:
        with open(f"{plot_data}_kl_per_token.csv", "w") as fh:
            fh.write("token,kl\n")
            for i, v in enumerate(report.kl_per_token):
                fh.write(f"{i},{v}\n")
        with open(f"{plot_data}_layer_profile.csv", "w") as fh:
            fh.write("layer,mse\n")
            for i, v in enumerate(report.layer_mse_profile):
                fh.write(f"{i},{v}\n")
    print(f"wrote {out_path}: kl_mean={report.kl_mean:.6g}")


def cmd_eval(args) -> int:
    cache = read_kvd(args.cache)
    if args.ratios:
        opts = _merge(args, {
            "retain": 32, "method": "kvsculpt", "alloc": "uniform", "alpha": 0.5,
            "pilot_steps": None, "floor": DEFAULT_FLOOR, "strategy": "uniform",
            **_DISTILL_DEFAULTS,
        })
        config = _distill_config(opts)
        stem, dot, ext = args.out.rpartition(".")
        if not dot:
            stem, ext = args.out, "json"
        for ratio in [float(r) for r in args.ratios.split(",")]:
            ropts = dict(opts, ratio=ratio)
            plan, _ = _make_plan(cache, ropts, config)
            compressed, _ = compress_model(cache, ropts["retain"], plan, config,
                                           method=ropts["method"],
                                           strategy=ropts["strategy"])
            _eval_single(cache, compressed, f"{stem}_r{ratio}.{ext}", args.plot_data)
        return 0
    if not args.compressed:
        raise ValueError("eval needs --compressed or --ratios")
    comp = read_kvd(args.compressed)
    _eval_single(cache, comp, args.out, args.plot_data)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvsculpt")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a toy model cache file")
    p_gen.add_argument("--config")
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--layers", type=int)
    p_gen.add_argument("--qheads", type=int)
    p_gen.add_argument("--kvheads", type=int)
    p_gen.add_argument("--dim", type=int)
    p_gen.add_argument("--vocab", type=int)
    p_gen.add_argument("--ctx", type=int)
    p_gen.add_argument("--cont", type=int)
    p_gen.add_argument("--weight-scale", dest="weight_scale", type=float)
    p_gen.add_argument("--theta-base", dest="theta_base", type=float)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_comp = sub.add_parser("compress", help="compress a cache file")
    p_comp.add_argument("--config")
    p_comp.add_argument("--cache", required=True)
    p_comp.add_argument("--out", required=True)
    p_comp.add_argument("--ratio", type=float)
    p_comp.add_argument("--retain", type=int)
    p_comp.add_argument("--method", choices=["random", "attn", "selectfit", "kvsculpt"])
    p_comp.add_argument("--alloc", choices=list(ALLOC_POLICIES))
    p_comp.add_argument("--alpha", type=float)
    p_comp.add_argument("--pilot-steps", dest="pilot_steps", type=int)
    p_comp.add_argument("--floor", type=int)
    p_comp.add_argument("--strategy", choices=["uniform", "bootstrap", "random", "kmeans", "farthest"])
    p_comp.add_argument("--seed", type=int)
    p_comp.add_argument("--outer-steps", dest="outer_steps", type=int)
    p_comp.add_argument("--v-solve-every", dest="v_solve_every", type=int)
    p_comp.add_argument("--lbfgs-lr", dest="lbfgs_lr", type=float)
    p_comp.add_argument("--lbfgs-inner-iters", dest="lbfgs_inner_iters", type=int)
    p_comp.add_argument("--lbfgs-history", dest="lbfgs_history", type=int)
    p_comp.add_argument("--lambda-lse", dest="lambda_lse", type=float)
    p_comp.add_argument("--lambda-ridge", dest="lambda_ridge", type=float)
    p_comp.add_argument("--n-synth", dest="n_synth", type=int)
    p_comp.add_argument("--report")
    p_comp.add_argument("--trace")
    p_comp.set_defaults(func=cmd_compress)

    p_alloc = sub.add_parser("allocate", help="turn a pilot report into a budget plan")
    p_alloc.add_argument("--config")
    p_alloc.add_argument("--pilot", required=True)
    p_alloc.add_argument("--budget", type=int, required=True)
    p_alloc.add_argument("--alpha", type=float)
    p_alloc.add_argument("--floor", type=int)
    p_alloc.add_argument("--cap", type=int)
    p_alloc.add_argument("--out")
    p_alloc.set_defaults(func=cmd_allocate)

    p_eval = sub.add_parser("eval", help="evaluate a compressed cache")
    p_eval.add_argument("--config")
    p_eval.add_argument("--cache", required=True)
    p_eval.add_argument("--compressed")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--plot-data", dest="plot_data")
    p_eval.add_argument("--ratios")
    p_eval.add_argument("--retain", type=int)
    p_eval.add_argument("--method", choices=["random", "attn", "selectfit", "kvsculpt"])
    p_eval.add_argument("--alloc", choices=list(ALLOC_POLICIES))
    p_eval.add_argument("--alpha", type=float)
    p_eval.add_argument("--pilot-steps", dest="pilot_steps", type=int)
    p_eval.add_argument("--floor", type=int)
    p_eval.add_argument("--strategy", choices=["uniform", "bootstrap", "random", "kmeans", "farthest"])
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--outer-steps", dest="outer_steps", type=int)
    p_eval.add_argument("--n-synth", dest="n_synth", type=int)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures are exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
