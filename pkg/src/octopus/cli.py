"""Command-line harness: dataset generation, evaluation, analyses, training.

Every command is deterministic given its flags (seeds are always flags).
Reports are JSON plus a CSV row file; all file writes are atomic
(write-temp-then-rename). Exit codes: 0 success, 1 usage error,
2 data-integrity error, 3 threshold failure (gradcheck).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import asdict
from itertools import product

import numpy as np

from . import __version__
from .decoding import (Action, CdConfig, decode_with_policy, run_workflow,
                       step_logits)
from .errors import (CheckpointError, DataIntegrityError,
                     InvalidArgumentError)
from .head import (HeadConfig, load_checkpoint, model_fingerprint,
                   save_checkpoint)
from .metrics import disc_metrics, gen_metrics, parse_mentions
from .preference import (CRITERIA, DEFAULT_N_ROLLOUTS,
                         build_pairs_discriminative, build_pairs_generative,
                         pairs_from_jsonl, pairs_to_jsonl, sample_rollouts)
from .rng import RngState
from .simulator import ModelConfig, base_logits
from .training import TrainConfig, grad_check, train
from .world import (BOS, CAUSES, YES, Dataset, Sample, WorldConfig,
                    dataset_from_jsonl, dataset_to_jsonl, gen_dataset,
                    prior_set)

GRADCHECK_THRESHOLD = 1e-4

FIXED_POLICIES = {"fixed:s1": Action.S1, "fixed:s2": Action.S2,
                  "fixed:s3": Action.S3}


def _fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_report(path: str, report: dict, csv_rows: list[dict]) -> None:
    """JSON report at path, CSV rows at path with a .csv suffix."""
    _write_atomic(path, json.dumps(report, sort_keys=True, indent=2) + "\n")
    if csv_rows:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(csv_rows[0].keys()))
        writer.writeheader()
        for row in csv_rows:
            writer.writerow(row)
        base, _ = os.path.splitext(path)
        _write_atomic(base + ".csv", buf.getvalue())


def _load_data(path: str, seed: int) -> tuple[Dataset, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise InvalidArgumentError(f"cannot read dataset {path!r}: {e}") from e
    try:
        return dataset_from_jsonl(text, seed=seed), _fingerprint(text)
    except (KeyError, ValueError) as e:
        raise DataIntegrityError(f"malformed dataset {path!r}: {e}") from e


def _base_fingerprints(model: ModelConfig, cfg: CdConfig) -> dict:
    return {
        "model": _fingerprint(model.to_json()),
        "cd": _fingerprint(json.dumps(asdict(cfg), sort_keys=True)),
    }


# ---------------------------------------------------------------------------
# Policies

def _policy_workflow(policy: str, model: ModelConfig, sample: Sample,
                     seed: int) -> tuple[Action, ...] | None:
    """Pre-determined workflow for non-learned policies (None for octopus)."""
    if policy == "base":
        return (Action.NULL,) * model.max_len
    if policy in FIXED_POLICIES:
        return (FIXED_POLICIES[policy],) * model.max_len
    if policy == "random":
        rng = RngState(seed, f"random-policy/{sample.sample_id}")
        return tuple(Action(a) for a in rng.integers(0, 4, model.max_len))
    raise InvalidArgumentError(f"unknown policy {policy!r}")


def _decode_all(policy: str, model: ModelConfig, samples: list[Sample],
                cfg: CdConfig, prior, seed: int,
                checkpoint: str | None) -> list[tuple[int, ...]]:
    if policy.startswith("octopus:") or checkpoint:
        path = checkpoint or policy.split(":", 1)[1]
        params, head_config, meta = load_checkpoint(path)
        want = meta.get("model_fingerprint")
        have = model_fingerprint(model.to_json())
        if want is not None and want != have:
            raise DataIntegrityError(
                f"checkpoint was trained against model {want}, "
                f"current model is {have}")
        out = []
        for s in samples:
            result, _ = decode_with_policy(model, s, params, head_config,
                                           cfg, prior=prior)
            out.append(result.tokens)
        return out
    out = []
    for s in samples:
        workflow = _policy_workflow(policy, model, s, seed)
        out.append(run_workflow(model, s, workflow, cfg, prior=prior).tokens)
    return out


# ---------------------------------------------------------------------------
# Commands

def cmd_gen_data(args) -> int:
    config = WorldConfig(n_describe=args.n_describe, n_exists=args.n_exists)
    dataset = gen_dataset(config, args.seed)
    _write_atomic(args.out, dataset_to_jsonl(dataset))
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = ModelConfig()
    cfg = CdConfig(alpha=args.alpha)
    dataset, data_fp = _load_data(args.data, args.seed)
    task = "describe" if args.task == "gen" else "exists"
    samples = [s for s in dataset.samples if s.task == task]
    if not samples:
        raise InvalidArgumentError(f"dataset has no {task} samples")

    responses = _decode_all(args.policy, model, samples, cfg, dataset.prior,
                            args.seed, checkpoint=None)

    fingerprints = _base_fingerprints(model, cfg)
    fingerprints["data"] = data_fp
    rows: list[dict] = []
    if args.task == "gen":
        overall = gen_metrics(samples, responses, prior=dataset.prior)
        metrics = asdict(overall)
        for cause in CAUSES:
            idx = [i for i, s in enumerate(samples) if s.scene.cause == cause]
            if not idx:
                continue
            m = gen_metrics([samples[i] for i in idx],
                            [responses[i] for i in idx], prior=dataset.prior)
            rows.append({"policy": args.policy, "cause": cause,
                         **asdict(m)})
    else:
        gold = [s.gold_label for s in samples]
        predicted = ["yes" if r and r[0] == YES else "no" for r in responses]
        overall = disc_metrics(gold, predicted)
        metrics = asdict(overall)
        for cause in CAUSES:
            idx = [i for i, s in enumerate(samples) if s.scene.cause == cause]
            if not idx:
                continue
            m = disc_metrics([gold[i] for i in idx],
                             [predicted[i] for i in idx])
            rows.append({"policy": args.policy, "cause": cause, **asdict(m)})
    rows.insert(0, {"policy": args.policy, "cause": "all", **metrics})

    report = {
        "experiment": "eval",
        "version": __version__,
        "policy": args.policy,
        "task": args.task,
        "seed": args.seed,
        "fingerprints": fingerprints,
        "metrics": metrics,
        "per_cause": {r["cause"]: r for r in rows[1:]},
    }
    _write_report(args.report, report, rows)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _response_chair(sample: Sample, tokens: tuple[int, ...]) -> float:
    mentions = parse_mentions(tokens)
    if not mentions:
        return 0.0
    halluc = sum(1 for m in mentions if m not in sample.scene.objects)
    return halluc / len(mentions)


def cmd_analyze_overlap(args) -> int:
    model = ModelConfig()
    cfg = CdConfig()
    dataset, data_fp = _load_data(args.data, args.seed)
    samples = [s for s in dataset.samples if s.task == "describe"]
    if not samples:
        raise InvalidArgumentError("dataset has no describe samples")

    counts = {0: 0, 1: 0, 2: 0, 3: 0}
    for sample in samples:
        base = run_workflow(model, sample, (Action.NULL,) * model.max_len,
                            cfg, prior=dataset.prior)
        base_chair = _response_chair(sample, base.tokens)
        effective = 0
        for action in (Action.S1, Action.S2, Action.S3):
            result = run_workflow(model, sample, (action,) * model.max_len,
                                  cfg, prior=dataset.prior)
            if _response_chair(sample, result.tokens) < base_chair:
                effective += 1
        counts[effective] += 1

    n = len(samples)
    partition = {
        "none": counts[0] / n,
        "exactly_one": counts[1] / n,
        "exactly_two": counts[2] / n,
        "all_three": counts[3] / n,
    }
    report = {
        "experiment": "analyze-overlap",
        "version": __version__,
        "seed": args.seed,
        "n_samples": n,
        "fingerprints": {**_base_fingerprints(model, cfg), "data": data_fp},
        "partition": partition,
    }
    rows = [{"bucket": k, "fraction": v} for k, v in partition.items()]
    _write_report(args.report, report, rows)
    print(json.dumps(partition, sort_keys=True))
    return 0


# Action subsets for the enumeration families. Null is always available so
# each family's assignment space contains the base decode, which makes the
# nested-subset monotonicity exact on any dataset.
_FAMILIES: dict[str, tuple[Action, ...]] = {
    "base": (),
    "s1": (Action.S1,),
    "s2": (Action.S2,),
    "s3": (Action.S3,),
    "s1+s2": (Action.S1, Action.S2),
    "s1+s3": (Action.S1, Action.S3),
    "s2+s3": (Action.S2, Action.S3),
    "s1+s2+s3": (Action.S1, Action.S2, Action.S3),
}

_ENUM_METRICS = ("chair", "hal", "cog")


def _response_enum_metrics(sample: Sample, tokens: tuple[int, ...],
                           prior) -> dict[str, float]:
    mentions = parse_mentions(tokens)
    halluc = [m for m in mentions if m not in sample.scene.objects]
    pset = prior_set(sample.scene.objects, prior)
    chair = len(halluc) / len(mentions) if mentions else 0.0
    cog = (sum(1 for m in halluc if m in pset) / len(mentions)
           if mentions else 0.0)
    return {"chair": chair, "hal": 1.0 if halluc else 0.0, "cog": cog}


def _decode_targeting_nouns(model: ModelConfig, sample: Sample,
                            nouns: tuple[int, ...],
                            assignment: tuple[Action, ...],
                            cfg: CdConfig, prior) -> tuple[int, ...]:
    """Greedy decode applying assignment[k] whenever nouns[k] would be
    emitted under the base (null-action) logits; all other steps are null."""
    from .simulator import slot_state
    from .world import Vocab
    target = {Vocab.object_token(n): a for n, a in zip(nouns, assignment)}
    history: tuple[int, ...] = (BOS,)
    tokens: list[int] = []
    while (len(tokens) < model.max_len
           and slot_state(sample, history).kind != "done"):
        bundle = base_logits(model, sample, history, prior=prior)
        null_token = int(np.argmax(bundle.base))
        action = target.get(null_token, Action.NULL)
        logits = step_logits(bundle, action, cfg)
        token = int(np.argmax(logits))
        tokens.append(token)
        history = history + (token,)
    return tuple(tokens)


def cmd_analyze_enumerate(args) -> int:
    if args.prefix_len < 1 or args.prefix_len > 4:
        raise InvalidArgumentError(
            f"prefix-len must be in 1..4, got {args.prefix_len}")
    model = ModelConfig()
    cfg = CdConfig()
    dataset, data_fp = _load_data(args.data, args.seed)
    samples = [s for s in dataset.samples if s.task == "describe"]
    if not samples:
        raise InvalidArgumentError("dataset has no describe samples")

    totals = {fam: {m: 0.0 for m in _ENUM_METRICS} for fam in _FAMILIES}
    all_actions = (Action.NULL, Action.S1, Action.S2, Action.S3)
    for sample in samples:
        base_wf = (Action.NULL,) * model.max_len
        base = run_workflow(model, sample, base_wf, cfg, prior=dataset.prior)
        base_m = _response_enum_metrics(sample, base.tokens, dataset.prior)
        # the first prefix-len distinct hallucinated nouns, in order of
        # first appearance under base decoding
        halluc_nouns: list[int] = []
        for m in parse_mentions(base.tokens):
            if m not in sample.scene.objects and m not in halluc_nouns:
                halluc_nouns.append(m)
        halluc_nouns = halluc_nouns[:args.prefix_len]
        if not halluc_nouns:
            for fam in _FAMILIES:
                for m in _ENUM_METRICS:
                    totals[fam][m] += base_m[m]
            continue
        # decode every assignment once, then take family minima
        per_assignment: dict[tuple[Action, ...], dict[str, float]] = {}
        for assignment in product(all_actions, repeat=len(halluc_nouns)):
            tokens = _decode_targeting_nouns(
                model, sample, tuple(halluc_nouns), assignment, cfg,
                dataset.prior)
            per_assignment[assignment] = _response_enum_metrics(
                sample, tokens, dataset.prior)
        for fam, actions in _FAMILIES.items():
            allowed = set(actions) | {Action.NULL}
            candidates = [m for a, m in per_assignment.items()
                          if set(a) <= allowed]
            for m in _ENUM_METRICS:
                totals[fam][m] += min(c[m] for c in candidates)

    n = len(samples)
    families = {fam: {m: totals[fam][m] / n for m in _ENUM_METRICS}
                for fam in _FAMILIES}
    singles = [families[f]["chair"] for f in ("s1", "s2", "s3")]
    pairs = [families[f]["chair"] for f in ("s1+s2", "s1+s3", "s2+s3")]
    summary = {
        "base_chair": families["base"]["chair"],
        "best_single_chair": min(singles),
        "best_pair_chair": min(pairs),
        "all_three_chair": families["s1+s2+s3"]["chair"],
        "base_hal": families["base"]["hal"],
        "all_three_hal": families["s1+s2+s3"]["hal"],
    }
    report = {
        "experiment": "analyze-enumerate",
        "version": __version__,
        "seed": args.seed,
        "prefix_len": args.prefix_len,
        "n_samples": n,
        "fingerprints": {**_base_fingerprints(model, cfg), "data": data_fp},
        "families": families,
        "summary": summary,
        "note": ("assignment spaces include the null action for each "
                 "targeted noun; for two strategies over three nouns this "
                 "is larger than the six combinations sometimes quoted "
                 "for that setting"),
    }
    rows = [{"family": fam, **vals} for fam, vals in families.items()]
    _write_report(args.report, report, rows)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_rollout(args) -> int:
    model = ModelConfig()
    cfg = CdConfig()
    dataset, _ = _load_data(args.data, args.seed)
    samples = [s for s in dataset.samples if s.task == "describe"]
    lines = []
    for sample in samples:
        rollouts = sample_rollouts(model, sample, cfg, args.seed,
                                   n_rollouts=args.n_rollouts,
                                   criterion=args.criterion,
                                   prior=dataset.prior)
        for i, r in enumerate(rollouts):
            lines.append(json.dumps({
                "sample_id": sample.sample_id, "rollout": i,
                "workflow": [int(a) for a in r.workflow],
                "tokens": list(r.tokens), "score": r.score,
            }, sort_keys=True, separators=(",", ":")))
    _write_atomic(args.out, "\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(lines)} rollouts to {args.out}")
    return 0


def cmd_build_prefs(args) -> int:
    model = ModelConfig()
    cfg = CdConfig()
    dataset, _ = _load_data(args.data, args.seed)
    describe = [s for s in dataset.samples if s.task == "describe"]
    exists = [s for s in dataset.samples if s.task == "exists"]
    pairs = []
    if describe:
        pairs.extend(build_pairs_generative(
            model, describe, cfg, args.seed, n_rollouts=args.n_rollouts,
            criterion=args.criterion, prior=dataset.prior))
    if exists:
        pairs.extend(build_pairs_discriminative(
            model, exists, cfg, prior=dataset.prior))
    _write_atomic(args.out, pairs_to_jsonl(pairs))
    print(f"wrote {len(pairs)} preference pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    model = ModelConfig()
    cfg = CdConfig()
    dataset, data_fp = _load_data(args.data, args.seed)
    try:
        with open(args.pairs, "r", encoding="utf-8") as fh:
            pairs_text = fh.read()
        pairs = pairs_from_jsonl(pairs_text)
    except OSError as e:
        raise InvalidArgumentError(f"cannot read pairs {args.pairs!r}: {e}") from e
    except (KeyError, ValueError) as e:
        raise DataIntegrityError(f"malformed pairs {args.pairs!r}: {e}") from e

    head_config = HeadConfig()
    train_config = TrainConfig(beta=args.beta, lr=args.lr, epochs=args.epochs,
                               batch_size=args.batch_size, seed=args.seed)
    params, training = train(model, dataset.samples, pairs, head_config,
                             train_config, cfg, prior=dataset.prior)
    meta = {
        "model_fingerprint": model_fingerprint(model.to_json()),
        "train_config": asdict(train_config),
        "data_fingerprint": data_fp,
        "pairs_fingerprint": _fingerprint(pairs_text),
    }
    save_checkpoint(args.out, params, head_config, meta=meta)
    epochs = [asdict(e) for e in training.epochs]
    if args.report:
        report = {
            "experiment": "train",
            "version": __version__,
            "seed": args.seed,
            "fingerprints": {**_base_fingerprints(model, cfg),
                             "data": data_fp,
                             "pairs": meta["pairs_fingerprint"]},
            "n_pairs": len(pairs),
            "epochs": epochs,
        }
        _write_report(args.report, report,
                      [{"epoch": i, **e} for i, e in enumerate(epochs)])
    final = epochs[-1]
    print(f"trained on {len(pairs)} pairs; final loss {final['loss']:.4f}, "
          f"preference accuracy {final['pref_accuracy']:.3f}")
    return 0


def cmd_gradcheck(args) -> int:
    model = ModelConfig()
    cfg = CdConfig()
    dataset = gen_dataset(WorldConfig(n_describe=4, n_exists=4), args.seed)
    describe = [s for s in dataset.samples if s.task == "describe"]
    exists = [s for s in dataset.samples if s.task == "exists"]
    pairs = build_pairs_generative(model, describe, cfg, args.seed,
                                   n_rollouts=6, prior=dataset.prior)
    pairs += build_pairs_discriminative(model, exists, cfg,
                                        prior=dataset.prior)
    if not pairs:
        raise DataIntegrityError("gradcheck could not build any pairs")
    worst = 0.0
    for offset in range(3):
        err = grad_check(model, dataset.samples, pairs[:3], HeadConfig(),
                         cfg, seed=args.seed + offset,
                         n_coords=args.n_coords, prior=dataset.prior)
        worst = max(worst, err)
    ok = bool(worst < GRADCHECK_THRESHOLD)
    if args.report:
        report = {
            "experiment": "gradcheck",
            "version": __version__,
            "seed": args.seed,
            "max_relative_error": worst,
            "threshold": GRADCHECK_THRESHOLD,
            "passed": ok,
        }
        _write_report(args.report, report,
                      [{"max_relative_error": worst, "passed": ok}])
    print(f"max relative error {worst:.3e} "
          f"({'<' if ok else '>='} {GRADCHECK_THRESHOLD:.0e})")
    return 0 if ok else 3


# ---------------------------------------------------------------------------
# Argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octopus",
        description="Adaptive contrastive decoding testbed and trainer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset JSONL")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-describe", type=int, default=0)
    p.add_argument("--n-exists", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("eval", help="evaluate a decoding policy")
    p.add_argument("--data", required=True)
    p.add_argument("--policy", required=True,
                   help="base | fixed:s1|s2|s3 | random | octopus:CKPT")
    p.add_argument("--task", choices=("gen", "disc"), required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-overlap",
                       help="per-sample strategy-effectiveness partition")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze_overlap)

    p = sub.add_parser("analyze-enumerate",
                       help="exhaustive strategy assignment over the first "
                            "hallucinated nouns")
    p.add_argument("--data", required=True)
    p.add_argument("--prefix-len", type=int, default=3)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze_enumerate)

    p = sub.add_parser("rollout", help="sample exploratory workflows")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-rollouts", type=int, default=DEFAULT_N_ROLLOUTS)
    p.add_argument("--criterion", choices=CRITERIA, default="chair")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("build-prefs", help="build preference pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-rollouts", type=int, default=DEFAULT_N_ROLLOUTS)
    p.add_argument("--criterion", choices=CRITERIA, default="chair")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_prefs)

    p = sub.add_parser("train", help="train the decision head with DPO")
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of training gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-coords", type=int, default=40)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except InvalidArgumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataIntegrityError, CheckpointError) as e:
        print(f"data integrity error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
