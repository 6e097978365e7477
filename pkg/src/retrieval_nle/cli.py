"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad flags, files or config),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.harness.config import RunConfig, provider_from_settings
from retrieval_nle.harness.data import SPLITS, load_dataset
from retrieval_nle.harness.evaluation import PHASES, build_memory_for_phase, evaluate, oracle_test
from retrieval_nle.harness.synthetic import gen_synthetic
from retrieval_nle.memory import (
    MODES,
    ORACLE_MODES,
    RetrievalConfig,
    assemble_retrieval_features,
    query_for_sample,
    retrieve,
    save_store,
)
from retrieval_nle.model.checkpoint import load_checkpoint, save_checkpoint
from retrieval_nle.model.generation import generate
from retrieval_nle.training.loop import image_features, train, write_loss_curve

log = logging.getLogger("retrieval_nle")

CHECKPOINT_NAME = "model.ckpt.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _checkpoint_provider(bundle):
    settings = bundle.meta.get("provider")
    if not settings:
        raise ValidationError("checkpoint carries no embedding-provider settings")
    return provider_from_settings(settings)


def _resolve_checkpoint(path) -> Path:
    path = Path(path)
    return path / CHECKPOINT_NAME if path.is_dir() else path


def cmd_gen_synthetic(args) -> int:
    cfg = _run_config(args)
    splits = gen_synthetic(cfg.synthetic(), args.out)
    print(f"wrote {len(splits.train)}/{len(splits.val)}/{len(splits.test)} train/val/test samples to {args.out}")
    return 0


def cmd_build_memory(args) -> int:
    cfg = _run_config(args)
    splits = load_dataset(args.data)
    store = build_memory_for_phase(splits, args.phase, provider_from_settings(cfg.provider_settings()))
    save_store(store, args.out)
    print(f"{args.phase} memory: {len(store)} entries -> {args.out}")
    return 0


def cmd_retrieve(args) -> int:
    cfg = _run_config(args)
    splits = load_dataset(args.data)
    provider = provider_from_settings(cfg.provider_settings())
    store = build_memory_for_phase(splits, args.phase, provider)
    _, sample = splits.find(args.id)
    rcfg = RetrievalConfig(k=args.k, mode=args.mode, random_seed=cfg.random_seed)
    result = retrieve(store, query_for_sample(sample, provider, with_ground_truth=args.mode in ORACLE_MODES), rcfg)
    print(json.dumps({"query": sample.id, "mode": args.mode, "truncated": result.truncated,
                      "ranked": [{"id": i, "score": s, "answer": store.get(i).answer_text,
                                  "explanation": store.get(i).explanation_text} for i, s in result.ranked]},
                     indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    splits = load_dataset(args.data)
    settings = cfg.provider_settings()
    provider = provider_from_settings(settings)
    rcfg = cfg.retrieval()
    store = None if rcfg.mode == "zero" else build_memory_for_phase(splits, "training", provider)
    result = train(cfg.model(), cfg.training(), splits.train, store, provider, rcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CHECKPOINT_NAME,
                    result.bundle({"provider": settings, "run_config": cfg.to_dict()}))
    write_loss_curve(out / "loss.csv", result.losses)
    print(f"final training loss {result.losses[-1]:.4f}; checkpoint -> {out / CHECKPOINT_NAME}")
    return 0


def cmd_generate(args) -> int:
    bundle = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    provider = _checkpoint_provider(bundle)
    splits = load_dataset(args.data)
    _, sample = splits.find(args.id)
    rcfg = RetrievalConfig(k=args.k, mode=args.mode)
    if args.mode == "zero":
        retr = np.zeros((2, bundle.config.d_feat))
    else:
        store = build_memory_for_phase(splits, "inference", provider)
        q = query_for_sample(sample, provider, with_ground_truth=args.mode in ORACLE_MODES)
        retr = assemble_retrieval_features(retrieve(store, q, rcfg))
    gen_cfg = replace(RunConfig().generation(), max_new_tokens=args.max_new_tokens)
    text = generate(bundle.params, bundle.config, sample.question,
                    image_features(provider, sample.image_ref, bundle.config.n_img_tokens), retr,
                    gen_cfg, bundle.tokenizer)
    print(text)
    return 0


def _evaluate_common(args, mode: str, oracle: bool) -> int:
    bundle = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    provider = _checkpoint_provider(bundle)
    splits = load_dataset(args.data)
    samples = splits.split(args.split)
    store = None if mode == "zero" else build_memory_for_phase(splits, "inference", provider)
    gen_cfg = replace(RunConfig().generation(), max_new_tokens=args.max_new_tokens)
    if oracle:
        report = oracle_test(bundle, store, samples, provider, mode, gen_cfg, k=args.k)
    else:
        report = evaluate(bundle, store, samples, provider, RetrievalConfig(k=args.k, mode=mode), gen_cfg)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json() + "\n", encoding="utf-8")
        out.with_suffix(".txt").write_text(report.table() + "\n", encoding="utf-8")
    print(report.table())
    return 0


def cmd_evaluate(args) -> int:
    return _evaluate_common(args, args.mode, oracle=False)


def cmd_oracle_test(args) -> int:
    return _evaluate_common(args, args.mode, oracle=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="retrieval-nle", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synthetic", help="write a synthetic train/val/test dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_synthetic)

    b = sub.add_parser("build-memory", help="embed a split policy into a memory store file")
    b.add_argument("--data", default="data")
    b.add_argument("--phase", choices=PHASES, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--config")
    b.set_defaults(func=cmd_build_memory)

    r = sub.add_parser("retrieve", help="show the top-K memory entries for one sample")
    r.add_argument("--data", default="data")
    r.add_argument("--id", required=True)
    r.add_argument("--k", type=int, default=10)
    r.add_argument("--mode", choices=MODES, default="rere")
    r.add_argument("--phase", choices=PHASES, default="inference")
    r.add_argument("--config")
    r.set_defaults(func=cmd_retrieve)

    t = sub.add_parser("train", help="train the decoder and write a checkpoint")
    t.add_argument("--config")
    t.add_argument("--data", default="data")
    t.add_argument("--out", default="run")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    for name, fn, modes, default in (
        ("generate", cmd_generate, MODES, "rere"),
        ("evaluate", cmd_evaluate, MODES, "rere"),
        ("oracle-test", cmd_oracle_test, ORACLE_MODES, "oracle_ae"),
    ):
        e = sub.add_parser(name)
        e.add_argument("--data", default="data")
        e.add_argument("--checkpoint", default="run")
        e.add_argument("--mode", choices=modes, default=default)
        e.add_argument("--k", type=int, default=10)
        e.add_argument("--max-new-tokens", type=int, default=24)
        if name == "generate":
            e.add_argument("--id", required=True)
        else:
            e.add_argument("--split", choices=SPLITS, default="test")
            e.add_argument("--out", help="write the JSON report here (plus a .txt table)")
        e.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValidationError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
