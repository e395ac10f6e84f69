"""Command-line pipeline: ingest, embed, train, predict, explain, eval, nfsf, llm, report.

Stages compose through files.  ``ingest`` normalizes a corpus (masking +
truncation) into a data directory; ``embed`` materializes matrix files;
``train`` produces ``checkpoint.ckpt``; the remaining stages consume those
artifacts and write JSON/JSONL/CSV reports.

Options may come from a TOML config file (``--config``); explicit flags
win.  All randomness flows from ``--seed``.  Every artifact embeds the
seed and effective configuration that produced it: JSON artifacts carry a
``provenance`` key, JSONL artifacts start with a ``{"_provenance": ...}``
line, and directory artifacts (ingested data, embeddings) carry it in
their manifest/index file.

Exit codes: 0 success, 1 user error (bad flags, unreadable inputs,
validation failures), 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import checkpoint as ckpt
from . import embeddings as emb
from . import explain as expl
from . import llm as llmmod
from . import metrics, model, training
from .corpus import (
    CorpusError,
    Dataset,
    load_dataset,
    load_statutes,
    name_index,
    prepare_dataset,
    save_cases,
    save_statutes,
)
from . import matrixio
from .matrixio import MatrixFormatError

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib


class UsageError(Exception):
    """Bad command line; message already includes usage text."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


USER_ERRORS = (
    CorpusError,
    emb.EmbeddingError,
    ckpt.CheckpointError,
    MatrixFormatError,
    llmmod.ChatClientError,
    training.TrainingDiverged,
    FileNotFoundError,
    NotADirectoryError,
    ValueError,
)


# ---------------------------------------------------------------- artifacts

def _provenance(command: str, seed: int, config: dict) -> dict:
    return {"command": command, "seed": seed, "config": config}


def _write_jsonl(path: Path, records: Sequence[dict], provenance: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"_provenance": provenance}, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            if "_provenance" in record:
                continue
            records.append(record)
    return records


def _write_json(path: Path, payload: dict, provenance: dict) -> None:
    payload = dict(payload)
    payload["provenance"] = provenance
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _pick(flag_value, config_section: dict, key: str, default):
    """Flag beats config file beats built-in default."""
    if flag_value is not None:
        return flag_value
    if key in config_section:
        return config_section[key]
    return default


# ---------------------------------------------------------------- loading

def _load_data_dir(data_dir: str, splits: Sequence[str] | None = None) -> Dataset:
    base = Path(data_dir)
    manifest_path = base / "manifest.json"
    if not manifest_path.exists():
        raise CorpusError(f"{base}: no manifest.json (run ingest first)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    statutes_path = base / manifest.get("statutes", "statutes.jsonl")
    wanted = splits or [s for s in ("train", "dev", "test") if manifest.get(s)]
    split_paths = {s: base / manifest[s] for s in wanted if manifest.get(s)}
    return load_dataset(statutes_path, split_paths=split_paths)


def _embedded_cases(dataset: Dataset, emb_dir: str, split: str) -> list[emb.EmbeddedCase]:
    index = emb.load_embedding_index(emb_dir)
    cases = []
    for case in dataset.cases(split):
        rel = index["cases"].get(case.case_id)
        if rel is None:
            raise emb.EmbeddingError(f"case {case.case_id!r} missing from embedding index")
        matrix = matrixio.read_matrix(Path(emb_dir) / rel)
        cases.append(
            emb.EmbeddedCase(case_id=case.case_id, matrix=matrix, gold_labels=case.gold_labels)
        )
    return cases


def _model_config_from_args(args, config_file: dict, num_statutes: int, embed_dim: int) -> model.ModelConfig:
    section = config_file.get("model", {})
    return model.ModelConfig(
        num_statutes=num_statutes,
        heads=int(_pick(args.heads, section, "heads", 3)),
        embed_dim=embed_dim,
        attn_dim=int(_pick(args.attn_dim, section, "attn_dim", 100)),
        hidden_dim=int(_pick(args.hidden_dim, section, "hidden_dim", 1536)),
        dropout=float(_pick(args.dropout, section, "dropout", 0.1)),
        positive_class_weight=float(_pick(None, section, "positive_class_weight", 3.0)),
        negative_class_weight=float(_pick(None, section, "negative_class_weight", 1.0)),
        max_sentences=int(_pick(args.max_sentences, section, "max_sentences", 150)),
    )


# ---------------------------------------------------------------- commands

def _cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        dataset = load_dataset(args.statutes, manifest_path=args.manifest)
    else:
        split_paths = {
            split: getattr(args, split)
            for split in ("train", "dev", "test")
            if getattr(args, split)
        }
        dataset = load_dataset(args.statutes, split_paths=split_paths)
    dataset = prepare_dataset(dataset, args.max_sentences)

    save_statutes(dataset.registry, out / "statutes.jsonl")
    manifest = {"statutes": "statutes.jsonl", "counts": dataset.counts()}
    for split, cases in dataset.splits.items():
        save_cases(cases, out / f"{split}.jsonl", dataset.registry)
        manifest[split] = f"{split}.jsonl"
    manifest["provenance"] = _provenance(
        "ingest", args.seed, {"max_sentences": args.max_sentences}
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    counts = " ".join(f"{s}={n}" for s, n in sorted(dataset.counts().items()))
    print(f"ingest: {len(dataset.registry)} statutes, {counts} -> {out}")
    return 0


def _build_provider(args) -> emb.EmbeddingProvider:
    if args.provider == "hashing":
        return emb.HashingProvider(dim=args.dim or 32)
    if args.provider == "http":
        if not args.endpoint or not args.identity:
            raise UsageError("http provider needs --endpoint and --identity")
        return emb.HttpEmbeddingProvider(
            args.endpoint, identity=args.identity, dim=args.dim or emb.DEFAULT_DIM
        )
    if args.provider == "precomputed":
        if not args.matrix:
            raise UsageError("precomputed provider needs --matrix")
        return emb.PrecomputedProvider(args.matrix, identity=args.identity)
    raise UsageError(f"unknown provider {args.provider!r}")


def _cmd_embed(args) -> int:
    dataset = _load_data_dir(args.data)
    provider = _build_provider(args)
    cache = emb.EmbeddingCache(args.cache) if args.cache else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = emb.embed_dataset(
        provider, dataset.registry, dataset.splits, out, cache=cache, in_flight=args.in_flight
    )
    index["provenance"] = _provenance(
        "embed", args.seed, {"provider": provider.identity, "dim": provider.dim}
    )
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
    print(f"embed: {len(index['cases'])} cases + {len(dataset.registry)} statutes ({provider.identity}) -> {out}")
    return 0


def _cmd_train(args) -> int:
    config_file = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else int(config_file.get("seed", 0))
    dataset = _load_data_dir(args.data)
    Y = emb.load_statute_matrix(args.embeddings)
    config = _model_config_from_args(args, config_file, len(dataset.registry), int(Y.shape[1]))

    trainer_section = config_file.get("trainer", {})
    options = training.TrainerOptions(
        learning_rate=float(_pick(args.learning_rate, trainer_section, "learning_rate", 5e-5)),
        batch_size=int(_pick(args.batch_size, trainer_section, "batch_size", 32)),
        epochs=int(_pick(args.epochs, trainer_section, "epochs", 30)),
        patience=_pick(args.patience, trainer_section, "patience", 5),
        seed=seed,
    )
    train_cases = _embedded_cases(dataset, args.embeddings, "train")
    dev_cases = _embedded_cases(dataset, args.embeddings, "dev") if dataset.cases("dev") else []

    params = model.init_params(config, seed)
    result = training.train(params, config, train_cases, dev_cases, Y, options)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best = next((e for e in result.history if e.epoch == result.best_epoch), None)
    dev_metrics = best.as_dict() if best else None
    ckpt.save_checkpoint(
        out / "checkpoint.ckpt",
        result.params,
        config,
        seed=seed,
        epoch=result.best_epoch,
        dev_metrics=dev_metrics,
        extra={"trainer": asdict(options)},
    )
    _write_json(
        out / "history.json",
        {"best_epoch": result.best_epoch, "epochs": [e.as_dict() for e in result.history]},
        _provenance("train", seed, {"model": asdict(config), "trainer": asdict(options)}),
    )
    dev_note = f", dev macro-F1 {best.dev_macro_f1:.3f}" if best else ""
    print(f"train: {len(result.history)} epochs, best epoch {result.best_epoch}{dev_note} -> {out / 'checkpoint.ckpt'}")
    return 0


def _load_model(checkpoint_path: str) -> tuple[model.ModelParams, model.ModelConfig, dict]:
    loaded = ckpt.load_checkpoint(checkpoint_path)
    return loaded.params, loaded.config, loaded.header


def _cmd_predict(args) -> int:
    params, config, header = _load_model(args.checkpoint)
    dataset = _load_data_dir(args.data, splits=[args.split])
    Y = emb.load_statute_matrix(args.embeddings)
    cases = _embedded_cases(dataset, args.embeddings, args.split)
    names = {s.statute_id: s.name for s in dataset.registry}
    records = []
    for case in cases:
        pred = model.predict(params, config, case.matrix, Y)
        records.append(
            {
                "case_id": case.case_id,
                "probs": {names[i]: float(p) for i, p in enumerate(pred.probs)},
                "predicted": [names[i] for i in sorted(pred.predicted)],
            }
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = _provenance("predict", header.get("seed") or 0, {"split": args.split})
    _write_jsonl(out / "predictions.jsonl", records, provenance)
    total = sum(len(r["predicted"]) for r in records)
    print(f"predict: {len(records)} cases, {total} predicted statutes -> {out / 'predictions.jsonl'}")
    return 0


def _cmd_explain(args) -> int:
    params, config, header = _load_model(args.checkpoint)
    dataset = _load_data_dir(args.data, splits=[args.split])
    Y = emb.load_statute_matrix(args.embeddings)
    cases = {c.case_id: c for c in dataset.cases(args.split)}
    embedded = _embedded_cases(dataset, args.embeddings, args.split)
    names = {s.statute_id: s.name for s in dataset.registry}
    records = []
    for case in embedded:
        sentences = cases[case.case_id].sentences
        for explanation in expl.explanations_for_case(params, config, case.case_id, case.matrix, Y):
            records.append(
                {
                    "case_id": case.case_id,
                    "statute": names[explanation.statute_id],
                    "sentences": [
                        {
                            "index": pick.sentence,
                            "text": sentences[pick.sentence],
                            "weight": pick.weight,
                            "head": pick.head,
                        }
                        for pick in explanation.head_picks
                    ],
                }
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = _provenance("explain", header.get("seed") or 0, {"split": args.split})
    _write_jsonl(out / "explanations.jsonl", records, provenance)
    print(f"explain: {len(records)} explanations -> {out / 'explanations.jsonl'}")
    return 0


def _label_universe(pred_records: list[dict], statutes_path: str | None) -> list[str]:
    if statutes_path:
        return [s.name for s in load_statutes(statutes_path)]
    names: set[str] = set()
    for record in pred_records:
        if "probs" in record:
            names |= set(record["probs"])
        names |= set(record.get("predicted", ()))
    if not names:
        raise CorpusError("cannot infer the statute universe; pass --statutes")
    return sorted(names)


def _eval_payload(args) -> tuple[dict, metrics.LabelConfusion, list[str], list[dict]]:
    pred_records = _read_jsonl(Path(args.pred))
    labels = _label_universe(pred_records, args.statutes)
    label_ids = {name: i for i, name in enumerate(labels)}
    gold_records = _read_jsonl(Path(args.gold))
    gold_by_case = {}
    for record in gold_records:
        gold_by_case[record["case_id"]] = {
            label_ids[name] for name in record.get("labels", []) if name in label_ids
        }
    predicted, gold = [], []
    for record in pred_records:
        case_id = record["case_id"]
        if case_id not in gold_by_case:
            raise CorpusError(f"case {case_id!r} has predictions but no gold labels")
        predicted.append((case_id, {label_ids[n] for n in record.get("predicted", []) if n in label_ids}))
        gold.append((case_id, gold_by_case[case_id]))
    conf = metrics.confusion_from_sets([p for _, p in predicted], [g for _, g in gold], len(labels))
    report = metrics.evaluate_sets(predicted, gold, len(labels))
    return report, conf, labels, pred_records


def _cmd_eval(args) -> int:
    report, _, _, pred_records = _eval_payload(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = _provenance("eval", args.seed, {"pred": str(args.pred), "gold": str(args.gold)})
    _write_json(out / "metrics.json", report, provenance)
    micro, macro = report["micro"], report["macro"]
    print(
        f"eval: {len(pred_records)} cases  micro-F1 {micro['f1']:.3f}  "
        f"macro-F1 {macro['f1']:.3f}  jaccard {report['avg_jaccard']:.3f} -> {out / 'metrics.json'}"
    )
    return 0


def _cmd_nfsf(args) -> int:
    params, config, header = _load_model(args.checkpoint)
    dataset = _load_data_dir(args.data, splits=[args.split])
    Y = emb.load_statute_matrix(args.embeddings)
    cases = _embedded_cases(dataset, args.embeddings, args.split)
    names = {s.statute_id: s.name for s in dataset.registry}
    report = expl.counterfactual_report(params, config, cases, Y)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = _provenance("nfsf", header.get("seed") or 0, {"split": args.split})
    _write_json(out / "nfsf.json", report.as_dict(names), provenance)
    print(
        f"nfsf: total {report.total_predictions}  NF {report.nf:.3f}  SF {report.sf:.3f} "
        f"-> {out / 'nfsf.json'}"
    )
    return 0


def _cmd_llm(args) -> int:
    config_file = _load_config_file(args.config)
    llm_section = config_file.get("llm", {})
    params, config, header = _load_model(args.checkpoint)
    dataset = _load_data_dir(args.data, splits=[args.split])
    Y = emb.load_statute_matrix(args.embeddings)
    embedded = {c.case_id: c for c in _embedded_cases(dataset, args.embeddings, args.split)}
    cases = [(case, embedded[case.case_id].matrix) for case in dataset.cases(args.split)]

    client_config = llmmod.LlmClientConfig(
        endpoint=_pick(args.endpoint, llm_section, "endpoint", ""),
        model=_pick(args.model, llm_section, "model", ""),
        temperature=float(_pick(args.temperature, llm_section, "temperature", 0.3)),
        max_tokens=int(_pick(args.max_tokens, llm_section, "max_tokens", 200)),
        in_flight=int(_pick(args.in_flight, llm_section, "in_flight", 1)),
        max_retries=int(_pick(args.retries, llm_section, "max_retries", 2)),
    )
    client: llmmod.ChatClient
    if args.replay:
        client = llmmod.ReplayChatClient(args.replay)
    else:
        client = llmmod.HttpChatClient(client_config)
    if args.record:
        client = llmmod.RecordingChatClient(client, args.record)

    k = args.k if args.k is not None else int(llm_section.get("k", 5))
    result = llmmod.run_pipeline(
        cases, params, config, Y, dataset.registry, k, client,
        mode=args.mode, in_flight=client_config.in_flight,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = _provenance(
        "llm",
        header.get("seed") or 0,
        {"mode": args.mode, "k": k, "model": client_config.model, "split": args.split},
    )
    _write_jsonl(out / "llm_verdicts.jsonl", [p.as_record() for p in result.pairs], provenance)
    names = {s.statute_id: s.name for s in dataset.registry}
    prediction_records = [
        {"case_id": case.case_id, "predicted": [names[i] for i in sorted(result.predicted[case.case_id])]}
        for case, _ in cases
    ]
    _write_jsonl(out / "llm_predictions.jsonl", prediction_records, provenance)
    yes = sum(1 for p in result.pairs if p.verdict and p.verdict.applicable)
    print(
        f"llm: {len(result.pairs)} prompts ({args.mode}, k={k}), {yes} applicable, "
        f"{len(result.errored)} errored -> {out / 'llm_verdicts.jsonl'}"
    )
    return 0


def _cmd_report(args) -> int:
    report, conf, labels, _ = _eval_payload(args)
    registry = load_statutes(args.statutes)
    if [s.name for s in registry] != labels:
        # eval used sorted prob keys; align the confusion to registry order
        position = {name: i for i, name in enumerate(labels)}
        conf = metrics.LabelConfusion(
            tp=[conf.tp[position[s.name]] for s in registry],
            fp=[conf.fp[position[s.name]] for s in registry],
            fn=[conf.fn[position[s.name]] for s in registry],
        )
    train_counts: dict[int, int] = {}
    if args.train_cases:
        ids = name_index(registry)
        for record in _read_jsonl(Path(args.train_cases)):
            for name in record.get("labels", []):
                if name in ids:
                    train_counts[ids[name]] = train_counts.get(ids[name], 0) + 1
    statute_matrix = emb.load_statute_matrix(args.embeddings) if args.embeddings else None
    rows = metrics.per_statute_report(conf, registry, train_counts, statute_matrix)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = _provenance("report", args.seed, {"pred": str(args.pred), "gold": str(args.gold)})
    with open(out / "per_statute.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# provenance: {json.dumps(provenance, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(["statute_id", "name", "f1", "train_count", "confusable_count"])
        for row in rows:
            writer.writerow(
                [row.statute_id, row.name, f"{row.f1:.6f}", row.train_count,
                 "" if row.confusable_count is None else row.confusable_count]
            )
    report["per_statute"] = [
        {
            "statute_id": r.statute_id,
            "name": r.name,
            "f1": r.f1,
            "train_count": r.train_count,
            "confusable_count": r.confusable_count,
        }
        for r in rows
    ]
    _write_json(out / "metrics.json", report, provenance)
    print(f"report: {len(rows)} statutes -> {out / 'per_statute.csv'}")
    return 0


# ---------------------------------------------------------------- parser

def _build_parser() -> _Parser:
    parser = _Parser(prog="statutepred", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="seed recorded in artifacts")
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = add("ingest", "validate, mask, and truncate a corpus into a data directory")
    p.add_argument("--statutes", required=True)
    p.add_argument("--manifest")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--max-sentences", type=int, default=150)

    p = add("embed", "embed statute contents and case sentences into matrix files")
    p.add_argument("--data", required=True)
    p.add_argument("--provider", choices=["hashing", "http", "precomputed"], default="hashing")
    p.add_argument("--dim", type=int)
    p.add_argument("--endpoint")
    p.add_argument("--identity")
    p.add_argument("--matrix")
    p.add_argument("--cache")
    p.add_argument("--in-flight", type=int, default=1)

    p = add("train", "train the attention classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--attn-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--max-sentences", type=int)

    for name, help_text in (
        ("predict", "write per-case statute probabilities and predicted sets"),
        ("explain", "write attention explanations for every predicted statute"),
        ("nfsf", "counterfactual necessity/sufficiency evaluation of explanations"),
    ):
        p = add(name, help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--embeddings", required=True)
        p.add_argument("--split", default="test")

    p = add("eval", "score predictions against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--statutes")

    p = add("llm", "zero-shot prompting over the attention model's top-k statutes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--k", type=int)
    p.add_argument("--mode", choices=list(llmmod.MODES), default="standard")
    p.add_argument("--config")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--in-flight", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--replay", help="recorded-response fixture; no network")
    p.add_argument("--record", help="append live responses to this fixture")

    p = add("report", "per-statute F1 table with training frequency and confusability")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--statutes", required=True)
    p.add_argument("--train-cases")
    p.add_argument("--embeddings")

    return parser


_COMMANDS = {
    "ingest": _cmd_ingest,
    "embed": _cmd_embed,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "explain": _cmd_explain,
    "eval": _cmd_eval,
    "nfsf": _cmd_nfsf,
    "llm": _cmd_llm,
    "report": _cmd_report,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Execute one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed is None and getattr(args, "config", None):
            args.seed = int(_load_config_file(args.config).get("seed", 0))
        if args.seed is None:
            args.seed = 0
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return exc.code if isinstance(exc.code, int) else 0
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
