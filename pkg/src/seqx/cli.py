"""Command-line entry points.

Subcommands:

* ``gen-data``    write a synthetic benchmark dataset as JSONL,
* ``train``       train a model on a dataset under a JSON config,
* ``eval``        score a trained model under the rs or bs decoding protocol,
* ``score``       standalone metric scoring of candidate/reference JSONL files,
* ``check-exact`` run the enumeration-based exactness checks on a fresh model.

Exit codes: 0 success, 1 validation or I/O error, 2 check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, oracle
from .diversity import diversity_report
from .metrics import build_doc_freq, cider_d
from .model import ModelDims, Vocab, init_params, load_model, sample_caption, save_model, sequence_log_prob
from .objectives import TrainConfig, TrainingDivergedError, train


class CliError(Exception):
    """Validation failure that should end the process with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise CliError(f"{self.format_usage()}error: {message}")


def build_parser() -> _Parser:
    parser = _Parser(prog="seqx", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--scenes", type=int, required=True)
    gen.add_argument("--refs", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train a captioning model")
    tr.add_argument("--config", required=True, help="JSON file of TrainConfig fields")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--objective", choices=["xe", "sll", "sll-me", "sll-sle"])
    tr.add_argument("--emb-dim", type=int, default=64)
    tr.add_argument("--hidden", type=int, default=512)

    ev = sub.add_parser("eval", help="evaluate a model under rs or bs decoding")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--strategy", choices=["rs", "bs"], required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--count", type=int, default=5)
    ev.add_argument("--max-len", type=int, default=12)
    ev.add_argument("--report", required=True)

    sc = sub.add_parser("score", help="score candidate captions against references")
    sc.add_argument("--candidates", required=True)
    sc.add_argument("--references", required=True)
    sc.add_argument("--report", required=True)

    ck = sub.add_parser("check-exact", help="run enumeration-based exactness checks")
    ck.add_argument("--vocab-size", type=int, required=True, help="number of content tokens")
    ck.add_argument("--max-len", type=int, required=True)
    ck.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_gen_data(args) -> int:
    scenes = bench.generate_dataset(args.scenes, args.refs, noise=args.noise, seed=args.seed)
    bench.save_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config)
    if args.objective:
        config = dataclasses.replace(config, objective=args.objective)
        config.validate()
    scenes = bench.load_dataset(args.data)
    if not scenes:
        raise CliError(f"{args.data}: dataset is empty")
    vocab = Vocab.from_texts(ref for scene in scenes for ref in scene.refs)
    instances = bench.to_instances(scenes, vocab)
    dims = ModelDims(
        feature_dim=len(scenes[0].features),
        emb_dim=args.emb_dim,
        hidden_dim=args.hidden,
        vocab_size=vocab.size,
    )
    params, logs = train(instances, vocab, dims, config)
    for record in logs:
        print(record.to_json())
    save_model(params, vocab, args.out)
    print(f"saved model to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    params, vocab = load_model(args.model)
    scenes = bench.load_dataset(args.data)
    report = bench.evaluate_model(
        params, vocab, scenes, args.strategy, count=args.count, seed=args.seed, max_len=args.max_len
    )
    Path(args.report).write_text(report.to_json() + "\n")
    print(report.to_json())
    return 0


def _load_caption_file(path: str) -> dict[str, list[str]]:
    records: dict[str, list[str]] = {}
    with open(path) as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                records[record["id"]] = list(record["captions"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CliError(f"{path}: malformed record on line {line_number}: {exc}") from exc
    return records


def _cmd_score(args) -> int:
    candidates = _load_caption_file(args.candidates)
    references = _load_caption_file(args.references)
    if not candidates:
        raise CliError(f"{args.candidates}: no candidate records")
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise CliError(f"ids without references: {missing[:5]}")

    texts = [c for caps in candidates.values() for c in caps]
    texts += [r for refs in references.values() for r in refs]
    vocab = Vocab.from_texts(texts)
    ref_sets = {key: [vocab.encode(r) for r in refs] for key, refs in references.items()}
    df = build_doc_freq([ref_sets[key] for key in sorted(references)])

    per_id = {}
    cider_values = []
    div1s, div2s, mbleus = [], [], []
    for key in sorted(candidates):
        encoded = [vocab.encode(c) for c in candidates[key]]
        scores = [cider_d(c, ref_sets[key], df) for c in encoded]
        entry = {"mean_cider": float(np.mean(scores))}
        cider_values.extend(scores)
        if len(encoded) >= 2:
            report = diversity_report(encoded)
            entry.update({"div1": report.div1, "div2": report.div2, "mbleu4": report.mbleu4})
            div1s.append(report.div1)
            div2s.append(report.div2)
            mbleus.append(report.mbleu4)
        per_id[key] = entry

    summary = {
        "mean_cider": float(np.mean(cider_values)),
        "div1": float(np.mean(div1s)) if div1s else None,
        "div2": float(np.mean(div2s)) if div2s else None,
        "mbleu4": float(np.mean(mbleus)) if mbleus else None,
        "num_inputs": len(candidates),
        "per_id": per_id,
    }
    Path(args.report).write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps({k: v for k, v in summary.items() if k != "per_id"}, indent=2))
    return 0


def _cmd_check_exact(args) -> int:
    if args.vocab_size < 1:
        raise CliError(f"--vocab-size must be >= 1, got {args.vocab_size}")
    if args.max_len < 1:
        raise CliError(f"--max-len must be >= 1, got {args.max_len}")
    vocab = Vocab([f"w{i}" for i in range(args.vocab_size)])
    dims = ModelDims(feature_dim=4, emb_dim=6, hidden_dim=8, vocab_size=vocab.size)
    rng = np.random.default_rng(args.seed)
    params = init_params(dims, args.seed)
    features = rng.normal(size=dims.feature_dim)

    captions = oracle.enumerate_captions(vocab, args.max_len)
    # A few enumerated captions serve as references; several reference sets
    # keep the document frequencies informative.
    refs = [captions[int(i)] for i in rng.choice(len(captions), size=min(3, len(captions)), replace=False)]
    extra_sets = [
        [captions[int(i)] for i in rng.choice(len(captions), size=min(2, len(captions)), replace=False)]
        for _ in range(4)
    ]
    df = build_doc_freq([refs, *extra_sets])
    tables = oracle.space_tables(refs, df, vocab, args.max_len)

    checks = []

    def record(name: str, value: float, threshold: float):
        checks.append(
            {"name": name, "value": value, "threshold": threshold, "passed": bool(value <= threshold)}
        )

    space = oracle.enumerate_space(features, params, vocab, args.max_len)
    record("probability_normalization", abs(float(space.probabilities.sum()) - 1.0), 1e-9)
    record(
        "score_function_identity",
        oracle.score_function_identity_check(features, params, vocab, args.max_len),
        1e-8,
    )

    alpha = 0.75
    analytic = oracle.exact_gradient(features, refs, params, df, vocab, args.max_len, alpha, tables)
    numeric = oracle.numeric_gradient(
        lambda p: -oracle.exact_objective(features, refs, p, df, vocab, args.max_len, alpha, tables),
        params,
    )
    errors = oracle.gradient_relative_errors(analytic, numeric)
    record("exact_gradient_vs_finite_difference", max(errors.values()), 1e-4)

    gp = oracle.exact_gp(features, refs, params, df, vocab, args.max_len, tables)
    at_one = oracle.exact_objective(features, refs, params, df, vocab, args.max_len, 1.0, tables)
    record("objective_at_alpha_1_equals_gp", abs(at_one - gp), 0.0)

    sample_rng = np.random.default_rng((args.seed, 1))
    trace = sample_caption(features, params, sample_rng, args.max_len)
    rescored = sequence_log_prob(features, trace.caption, params, args.max_len)
    record("sample_rescore_consistency", abs(trace.total_logprob - rescored.total_logprob), 1e-12)

    all_passed = all(check["passed"] for check in checks)
    print(json.dumps({"checks": checks, "all_passed": all_passed}, indent=2))
    return 0 if all_passed else 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "gen-data": _cmd_gen_data,
            "train": _cmd_train,
            "eval": _cmd_eval,
            "score": _cmd_score,
            "check-exact": _cmd_check_exact,
        }[args.command]
        return handler(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())
