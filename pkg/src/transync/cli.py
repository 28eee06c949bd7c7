"""Command line entry points.

Subcommands cover the full artifact path: data generation, training,
held-out evaluation, wall-clock benchmarking, the analytic cost model,
and anchor-plan inspection. A JSON config file plus flag overrides
feeds the train/eval commands; --seed, --out-dir and --precision are
accepted by every subcommand. Unknown flags exit 2 with usage text,
runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    CostModel,
    ExperimentConfig,
    _schema_from_name,
    attention_cost,
    compare_encoder_speed,
    generate_task_data,
    prepare_input,
    run_experiment,
)
from .segmentation import Vocab, build_anchor_plan, build_pseudo_plan, build_segmented_input
from .tasks import (
    MultihopConfig,
    NeighborConfig,
    PRESETS,
    audit_multihop,
    audit_neighbor,
    evaluate_answers,
    gen_multihop_task,
    gen_neighbor_task,
    load_dataset,
    save_dataset,
)
from .tensor import set_default_dtype

__all__ = ["main"]

CONFIG_VERSION = 1


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--precision", choices=("f32", "f64"), default="f64")
    return common


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


_CONFIG_FLAGS = {
    "baseline": str, "task": str, "preset": str, "n_train": int,
    "n_test": int, "sentences_per_doc": int, "d": int, "heads": int,
    "enc_layers": int, "dec_layers": int, "sync_heads": int, "steps": int,
    "lr": float, "warmup_frac": float, "grad_clip": float,
    "prompt_loss_weight": float, "tied_readout": _parse_bool,
    "batch_size": int, "segment_policy": str,
    "max_input_len": int, "max_answer_len": int,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config file")
    parser.add_argument("--schema", help="sync schema name")
    parser.add_argument("--window", type=int, help="neighbor chain window")
    for name, kind in _CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=kind,
                            dest=name, default=None)


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    rec: dict = {}
    if args.config:
        rec = json.loads(Path(args.config).read_text())
        version = rec.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version!r}")
    for name in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            rec[name] = value
    if args.schema is not None:
        rec["schema"] = _schema_from_name(args.schema, window=args.window or 1)
    rec["seed"] = args.seed
    return ExperimentConfig.from_json_dict(rec)


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1, default=str))


# -- subcommand bodies -----------------------------------------------------------


def _cmd_gen_data(args) -> int:
    total = args.n_samples
    if args.task == "multihop":
        base = PRESETS[args.preset]
        cfg = replace(base, n_samples=total)
        samples = gen_multihop_task(args.seed, cfg)
        audit_multihop(samples)
    else:
        cfg = NeighborConfig(n_samples=total,
                             sentences_per_doc=args.sentences_per_doc)
        samples = gen_neighbor_task(args.seed, cfg)
        audit_neighbor(samples)
    out = Path(args.out_dir) / (args.out or f"{args.task}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, samples)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg, args.out_dir)
    m = report["metrics"]
    print(f"em={m['em']:.4f} f1={m['f1']:.4f} rouge_l={m['rouge_l']:.4f} "
          f"report={Path(args.out_dir) / 'report.json'}")
    return 0


def _cmd_eval(args) -> int:
    from .checkpoint import load_model
    from .decoder import generate

    model, _ = load_model(args.model)
    cfg = _load_config(args)
    samples = load_dataset(args.data)
    hyps = []
    for sample in samples:
        inp, plan = prepare_input(sample, cfg, model.vocab)
        ids = generate(model, inp, plan, max_len=cfg.max_answer_len,
                       prompt_ids=model.vocab.encode(sample.question))
        hyps.append(model.vocab.decode(ids))
    report = evaluate_answers(hyps, [s.answer for s in samples])
    out = Path(args.out_dir) / "eval.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {"em": report.em, "f1": report.f1, "rouge_l": report.rouge_l,
               "n": report.n}
    out.write_text(json.dumps(payload, sort_keys=True, indent=1))
    _print(payload)
    return 0


def _cmd_bench(args) -> int:
    out = compare_encoder_speed(l_q=args.lq, l_c=args.lc, n=args.n,
                                d=args.d, n_layers=args.layers,
                                heads=args.heads, repeats=args.repeats,
                                seed=args.seed)
    _print(out)
    return 0


def _cmd_cost(args) -> int:
    cost = CostModel(l_q=args.lq, l_c=args.lc, n=args.n)
    out = attention_cost(cost, sync_groups=args.sync_groups,
                         sync_layers=args.sync_layers)
    payload = {k: str(v) for k, v in out.items()}
    payload["ratio_float"] = float(out["ratio"])
    payload.update(l_q=args.lq, l_c=args.lc, n=args.n)
    _print(payload)
    return 0


def _cmd_inspect_plan(args) -> int:
    words = [f"w{i}" for i in range(8)]
    vocab = Vocab.from_texts([" ".join(words + [f"t{i}" for i in range(args.segments)])])
    segments: list = []
    for i in range(args.segments):
        text = " ".join(words[:4])
        segments.append((text, f"t{i}") if args.titled else text)
    inp = build_segmented_input("w0 w1", segments, vocab,
                                prepend_pseudo=args.pseudo)
    if args.pseudo:
        plan = build_pseudo_plan(inp)
    else:
        schema = _schema_from_name(args.schema, window=args.window)
        plan = build_anchor_plan(inp, schema)
    _print(plan.to_json_dict())
    return 0


# -- parser wiring ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transync",
        description="segmented seq2seq with anchor synchronization")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    p = sub.add_parser("gen-data", parents=[common],
                       help="generate and audit a synthetic dataset")
    p.add_argument("task", choices=("multihop", "neighbor"))
    p.add_argument("--preset", default="multihop-6", choices=sorted(PRESETS))
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--sentences-per-doc", type=int, default=8)
    p.add_argument("--out", default=None, help="file name under --out-dir")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", parents=[common],
                       help="train one configuration and write artifacts")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint on a JSONL dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", parents=[common],
                       help="compare encoder wall-clock per token")
    p.add_argument("--lq", type=int, default=20)
    p.add_argument("--lc", type=int, default=1000)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("cost", parents=[common],
                       help="print the analytic attention cost model")
    p.add_argument("--lq", type=int, required=True)
    p.add_argument("--lc", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sync-groups", type=int, default=0)
    p.add_argument("--sync-layers", type=int, default=0)
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("inspect-plan", parents=[common],
                       help="print the anchor plan for a demo input")
    p.add_argument("--schema", default="neighbor")
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--titled", action="store_true")
    p.add_argument("--pseudo", action="store_true")
    p.set_defaults(func=_cmd_inspect_plan)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    set_default_dtype(args.precision)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - single reporting point
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
