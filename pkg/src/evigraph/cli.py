"""Command-line interface: synth, retrieve, fewshot, train, eval, ablate,
report, gradcheck. Config is a flat key=value file; every key can be
overridden by a same-named flag."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

from .corpus import (GenConfig, generate_synthetic, load_dataset, sample_few_shot,
                     save_dataset, split_dataset)
from .trainer import (ABLATION_VARIANTS, ModelConfig, ablate, attention_report,
                      evaluate, load_model, retrieve_evidence, save_model, train)

DATA_FILES = ("claims.jsonl", "evidence.jsonl", "contexts.jsonl", "references.jsonl")


def _coerce(raw: str, target_type):
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return target_type(raw)


def load_config_file(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key=value config file")
    for f in fields(ModelConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}",
                            metavar="V", help=f"override config key {f.name}")


def build_config(args) -> ModelConfig:
    cfg = ModelConfig()
    raw: dict[str, str] = {}
    if getattr(args, "config", None):
        raw.update(load_config_file(args.config))
    for f in fields(ModelConfig):
        flag = getattr(args, f"cfg_{f.name}", None)
        if flag is not None:
            raw[f.name] = flag
    types = {f.name: f.type for f in fields(ModelConfig)}
    defaults = ModelConfig()
    for key, value in raw.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(value, type(getattr(defaults, key))))
    cfg.validate()
    return cfg


def _data_paths(args, prefix=""):
    base = getattr(args, f"{prefix}data_dir")
    names = [getattr(args, f"{prefix}{n}", None) or d
             for n, d in zip(("claims", "evidence", "contexts", "references"), DATA_FILES)]
    return [os.path.join(base, n) for n in names]


def add_data_flags(parser, prefix="", required=True):
    dash = prefix.replace("_", "-")
    parser.add_argument(f"--{dash}data-dir", dest=f"{prefix}data_dir", required=required,
                        help="directory holding the four JSONL corpus files")
    for name in ("claims", "evidence", "contexts", "references"):
        parser.add_argument(f"--{dash}{name}", dest=f"{prefix}{name}", metavar="FILE",
                            help=f"{name} file name within the data dir")


def _load(args, prefix=""):
    return load_dataset(*_data_paths(args, prefix))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    gen = GenConfig(n_claims_per_class=args.n_claims_per_class,
                    n_entities=args.n_entities,
                    n_attributes=args.n_attributes,
                    n_values=args.n_values,
                    reference_fraction=args.reference_fraction,
                    evidence_per_claim=args.evidence_per_claim,
                    nei_value_match=args.nei_value_match)
    ds = generate_synthetic(gen, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    save_dataset(ds, *[os.path.join(args.out_dir, n) for n in DATA_FILES])
    print(f"wrote {len(ds.claims)} claims to {args.out_dir}")


def cmd_retrieve(args):
    ds = _load(args)
    retrieved = retrieve_evidence(ds, ds.ordered_claims(), args.k)
    with open(args.out, "w", encoding="utf-8") as fh:
        for cid in ds.claim_order:
            fh.write(json.dumps({"claim_id": cid, "retrieved_ids": retrieved[cid]}) + "\n")
    print(f"wrote {len(retrieved)} retrievals to {args.out}")


def cmd_fewshot(args):
    ds = _load(args)
    sub = sample_few_shot(ds, args.k, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    save_dataset(sub, *[os.path.join(args.out_dir, n) for n in DATA_FILES])
    print(f"wrote {len(sub.claims)} few-shot claims to {args.out_dir}")


def _train_valid_split(args, cfg):
    ds = _load(args)
    if args.valid_fraction > 0:
        train_ds, valid_ds = split_dataset(ds, (1 - args.valid_fraction, args.valid_fraction),
                                           cfg.seed)
    else:
        train_ds, valid_ds = ds, None
    return train_ds, valid_ds


def cmd_train(args):
    cfg = build_config(args)
    train_ds, valid_ds = _train_valid_split(args, cfg)
    model, history = train(cfg, train_ds, valid_ds)
    save_model(args.checkpoint, model, history)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for record in history:
                fh.write(json.dumps(record) + "\n")
    last = history[-1] if history else {}
    print(f"trained {len(history)} epochs; final {last}")
    print(f"wrote checkpoint {args.checkpoint}")


def cmd_eval(args):
    model = load_model(args.checkpoint)
    ds = _load(args)
    report = evaluate(model, ds)
    _write_json(args.out, report.to_dict())
    print(f"macro F1 {report.macro_f1:.2f}  micro F1 {report.micro_f1:.2f}")


def cmd_ablate(args):
    cfg = build_config(args)
    train_ds, valid_ds = _train_valid_split(args, cfg)
    test_ds = _load(args, "test_")
    m_values = tuple(int(x) for x in args.m_values.split(",")) if args.m_values else (2, 4, 8, 16)
    results = ablate(cfg, args.variant, train_ds, test_ds, valid_ds, m_values=m_values)
    with open(args.out, "w", encoding="utf-8") as fh:
        for tag, report in results:
            fh.write(json.dumps({"variant": tag, **report.to_dict()}) + "\n")
    for tag, report in results:
        print(f"{tag}: macro F1 {report.macro_f1:.2f}  micro F1 {report.micro_f1:.2f}")
    print(f"wrote {args.out}")


def cmd_report(args):
    model = load_model(args.checkpoint)
    ds = _load(args)
    dump = attention_report(model, args.claim_id, ds)
    _write_json(args.out, dump)


def cmd_gradcheck(args):
    from .gradcheck import end_to_end_gradient_error
    worst = 0.0
    for seed in range(args.seed, args.seed + args.n_graphs):
        err = end_to_end_gradient_error(seed)
        worst = max(worst, err)
        print(f"seed {seed}: max relative gradient error {err:.3e}")
    ok = worst < args.tolerance
    print(f"worst {worst:.3e} ({'PASS' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="evigraph",
                                     description="Graph-augmented fact verification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-claims-per-class", type=int, default=30)
    p.add_argument("--n-entities", type=int, default=8)
    p.add_argument("--n-attributes", type=int, default=5)
    p.add_argument("--n-values", type=int, default=10)
    p.add_argument("--reference-fraction", type=float, default=0.5)
    p.add_argument("--evidence-per-claim", type=int, default=1)
    p.add_argument("--nei-value-match", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("retrieve", help="BM25 top-k evidence per claim")
    add_data_flags(p)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("fewshot", help="sample k claims per label")
    add_data_flags(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("train", help="train a model")
    add_data_flags(p)
    add_config_flags(p)
    p.add_argument("--valid-fraction", type=float, default=0.1)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", help="per-epoch loss log (JSONL)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train + evaluate an ablation variant")
    add_data_flags(p)
    add_data_flags(p, prefix="test_")
    add_config_flags(p)
    p.add_argument("--variant", required=True, choices=ABLATION_VARIANTS)
    p.add_argument("--valid-fraction", type=float, default=0.0)
    p.add_argument("--m-values", help="comma-separated M values for M-sweep")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="attention/case-study dump for one claim")
    add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--claim-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--n-graphs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    args = parser.parse_args(argv)
    rc = args.func(args)
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
