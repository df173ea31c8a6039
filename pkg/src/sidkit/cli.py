"""Command-line entry point: ``sidkit <command> ...``.

Every command reads a JSON pipeline config (``--config``); flags override
config values. Outputs are written atomically under the config's
``work_dir``. Set ``SIDKIT_LOG_LEVEL`` to change log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import synth as synth_mod
from .catalog import read_catalog, read_registry, write_registry
from .datagen import (
    InstructionOptions,
    build_alignment_records,
    build_instruction_records,
    read_logs,
    temporal_split,
    write_records,
)
from .decoder import (
    build_trie,
    build_tries,
    constrained_beam_search,
    sample_top_p,
    spans_resolve,
    unconstrained_generate,
)
from .embeddings import _atomic_write, load_embeddings
from .eval import EvalRecord, metrics_rows, write_metrics_report
from .pipeline import (
    PipelineConfig,
    TypeConfig,
    build_registry,
    fit_quantizer,
    history_sequence,
    load_config,
    prepare,
    quantize,
    train_history_scorer,
)
from .quantizer import (
    Codebook,
    KMeansConfig,
    collision_rate,
    format_sweep,
    load_codebook,
    load_lsh,
    save_codebook,
    save_lsh,
    sweep_configs,
)
from .scorer import TrigramTable, UniformScorer
from .sequence import decode, encode

log = logging.getLogger("sidkit")


class UsageError(Exception):
    pass


def _work(cfg: PipelineConfig, *parts: str) -> Path:
    p = Path(cfg.work_dir, *parts)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _codebook_path(cfg: PipelineConfig, tc: TypeConfig) -> Path:
    ext = "sidc" if tc.quantizer == "rkmeans" else "sidl"
    return _work(cfg, "codebooks", f"{tc.item_type}.{ext}")


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_prepared(tc: TypeConfig):
    return prepare(load_embeddings(_require(tc.embeddings, f"embeddings for {tc.item_type!r}"), tc.item_type), tc)


def _write_jsonl(rows, path: Path) -> None:
    _atomic_write(path, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows).encode("utf-8"))


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


# -- commands --------------------------------------------------------------------


def cmd_build_codebooks(cfg: PipelineConfig, args) -> int:
    for tc in cfg.types:
        if args.seed is not None:
            tc = replace(tc, seed=args.seed)
        E = _load_prepared(tc)
        q = fit_quantizer(E, tc)
        path = _codebook_path(cfg, tc)
        (save_codebook if isinstance(q, Codebook) else save_lsh)(q, path)
        print(f"{tc.item_type}\t{tc.quantizer}\tM={tc.M}\tK={tc.K}\tdim={E.dim}\t{path}")
        if tc.candidates:
            print(format_sweep(sweep_configs(E, tc.candidates, KMeansConfig(seed=tc.seed))), end="")
    return 0


def _assign_sids(cfg: PipelineConfig) -> dict[str, tuple[int, ...]]:
    sids = {}
    for tc in cfg.types:
        path = _require(_codebook_path(cfg, tc), f"codebook for {tc.item_type!r} (run build-codebooks)")
        q = load_codebook(path) if tc.quantizer == "rkmeans" else load_lsh(path)
        sids.update(quantize(q, _load_prepared(tc), tc))
    return sids


def cmd_assign(cfg: PipelineConfig, args) -> int:
    catalog = read_catalog(_require(cfg.catalog, "catalog"))
    policy = args.policy or cfg.collision_policy
    seed = cfg.collision_seed if args.collision_seed is None else args.collision_seed
    registry = build_registry(catalog, _assign_sids(cfg), policy, seed, args.permute_seed)
    out = Path(args.out) if args.out else _work(cfg, "registry.tsv")
    write_registry(registry, out)
    _atomic_write(_work(cfg, "vocab.json"), json.dumps(cfg.vocabulary().to_dict(), indent=1).encode())
    print(f"registered {registry.item_count} items in {sum(len(t) for t in registry.buckets.values())} tuples -> {out}")
    return 0


def _registry(cfg: PipelineConfig, args=None):
    path = getattr(args, "registry", None) or _work(cfg, "registry.tsv")
    return read_registry(_require(path, "registry (run assign)"))


def cmd_build_trie(cfg: PipelineConfig, args) -> int:
    registry = _registry(cfg, args)
    v = cfg.vocabulary()
    for item_type in v.item_types:
        trie = build_trie(registry, item_type, v)
        leaves = {sid for sid, _ in trie.leaves()}
        if leaves != set(registry.buckets[item_type]):
            raise RuntimeError(f"trie for {item_type!r} does not match the registry")
        print(f"{item_type}\tM={trie.M}\tleaves={len(leaves)}\tnodes={trie.node_count()}\troot_children={len(trie.root.children)}")
    return 0


def cmd_train_scorer(cfg: PipelineConfig, args) -> int:
    registry = _registry(cfg, args)
    logs = read_logs(_require(cfg.logs, "interaction log"))
    if args.split_day is not None:
        logs, _ = temporal_split(logs, args.split_day, args.gap)
    table = train_history_scorer(logs, registry, cfg.vocabulary(), args.alpha or cfg.trigram_alpha)
    out = Path(args.out) if args.out else _work(cfg, "trigram.tsv")
    table.save(out)
    print(f"trigram over {len(table.counts)} contexts -> {out}")
    return 0


def _read_tsv_annotations(path: str | None, width: int) -> list[list[str]]:
    if not path:
        return []
    rows = []
    with open(_require(path, "annotation file"), encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split("\t")
            if line.strip() and len(parts) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} tab-separated fields")
            if line.strip():
                rows.append(parts)
    return rows


def cmd_datagen(cfg: PipelineConfig, args) -> int:
    v = cfg.vocabulary()
    registry = _registry(cfg, args)
    catalog = [e for e in read_catalog(_require(cfg.catalog, "catalog")) if e.item_id in registry]
    logs = read_logs(_require(cfg.logs, "interaction log"))
    out_dir = Path(args.out) if args.out else Path(cfg.work_dir, "records")
    out_dir.mkdir(parents=True, exist_ok=True)

    n = write_records(build_alignment_records(catalog, registry, v, args.seed), v, out_dir / "alignment.jsonl")
    print(f"alignment\t{n}")

    train = logs
    if args.split_day is not None:
        train, pairs = temporal_split(logs, args.split_day, args.gap)
        prompts, labels = [], []
        for p in pairs:
            if p.label.item_id not in registry:
                continue
            ctx = [e for e in p.context if e.item_id in registry]
            prompts.append(
                {
                    "id": p.user_id,
                    "prompt_ids": encode(history_sequence(ctx, registry), v),
                    "target_type": registry.type_of(p.label.item_id),
                }
            )
            labels.append(f"{p.user_id}\t{p.label.item_id}\n")
        _write_jsonl(prompts, out_dir / "eval_prompts.jsonl")
        _atomic_write(out_dir / "eval_labels.tsv", "".join(labels).encode("utf-8"))
        print(f"eval_prompts\t{len(prompts)}")

    opts = InstructionOptions(
        template_seed=args.seed,
        gap_days=args.gap,
        queries={(u, i): q for u, i, q in _read_tsv_annotations(args.queries, 3)},
        rationales={u: (int(t), r) for u, t, r in _read_tsv_annotations(args.rationales, 3)},
        summaries={u: s for u, s in _read_tsv_annotations(args.summaries, 2)},
    )
    for task in ("recommend", "retrieve", "recsplain", "profile"):
        records = build_instruction_records(train, task, catalog, registry, v, opts)
        n = write_records(records, v, out_dir / f"{task}.jsonl")
        print(f"{task}\t{n}")
    return 0


def cmd_generate(cfg: PipelineConfig, args) -> int:
    v = cfg.vocabulary()
    registry = _registry(cfg, args)
    scorer_path = args.scorer or (_work(cfg, "trigram.tsv") if _work(cfg, "trigram.tsv").exists() else None)
    scorer = TrigramTable.load(scorer_path) if scorer_path else UniformScorer(v.vocab_size)
    if scorer.vocab_size != v.vocab_size:
        raise ValueError(f"scorer vocab_size {scorer.vocab_size} does not match config ({v.vocab_size})")
    prompts = _read_jsonl(_require(args.prompts, "prompt file"))
    subset = None
    if args.subset:
        subset = [s.strip() for s in _require(args.subset, "subset file").read_text(encoding="utf-8").splitlines() if s.strip()]
    tries = build_tries(registry, v)
    width = args.beam or cfg.decoding.beam_width
    dec = cfg.decoding
    rows = []
    for i, p in enumerate(prompts):
        pid = p.get("id", str(i))
        prompt = p["prompt_ids"]
        target = args.target_type or p.get("target_type")
        if target is not None and target not in tries:
            raise ValueError(f"prompt {pid}: unknown target type {target!r}")
        if not args.constrained:
            out, valid = unconstrained_generate(
                scorer, prompt + [v.sid_open], v, registry, "sample" if args.sample else "greedy",
                max_len=max(b.M for b in v.type_blocks) + 1, seed=args.seed + i, temperature=dec.temperature,
            )
            items = []
            if valid:
                ref = decode([v.sid_open] + out, v).item_refs[0]
                items.append({"item_id": registry.resolve(ref.item_type, ref.sid), "item_type": ref.item_type, "sid": list(ref.sid), "score": None})
            rows.append({"id": pid, "items": items, "sequences": [[v.sid_open] + out], "valid": valid})
        elif args.sample:
            out = sample_top_p(
                scorer, prompt + [v.sid_open], tries if subset is None else build_tries(registry, v, subset), v,
                dec.temperature, dec.top_k, dec.top_p, seed=args.seed + i, max_len=1, target_type=target,
            )
            seq = [v.sid_open] + out
            ref = decode(seq, v).item_refs[0]
            item = registry.resolve(ref.item_type, ref.sid)
            rows.append({"id": pid, "items": [{"item_id": item, "item_type": ref.item_type, "sid": list(ref.sid), "score": None}],
                         "sequences": [seq], "valid": spans_resolve(seq, v, registry)})
        else:
            res = constrained_beam_search(scorer, prompt, tries, v, width, target, subset, registry)
            rows.append(
                {
                    "id": pid,
                    "items": [{"item_id": c.item_id, "item_type": c.item_type, "sid": list(c.sid), "score": c.score} for c in res.candidates],
                    "sequences": res.sequences,
                    "valid": all(spans_resolve(s, v, registry) for s in res.sequences),
                }
            )
    out = Path(args.out) if args.out else _work(cfg, "results.jsonl")
    _write_jsonl(rows, out)
    rate = sum(r["valid"] for r in rows) / len(rows) if rows else float("nan")
    print(f"generated {len(rows)} results, valid_sid_rate={rate:.4f} -> {out}")
    return 0


def _parse_k(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"K must be a positive integer, got {text!r}") from None
    if math.isinf(value) or math.isnan(value) or value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"K must be a positive integer, got {text!r}")
    return int(value)


def cmd_eval(args) -> int:
    results = {r["id"]: [it["item_id"] for it in r["items"]] for r in _read_jsonl(_require(args.results, "results file"))}
    labels = []
    with open(_require(args.labels, "labels file"), encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"{args.labels}:{lineno}: expected id TAB item_id")
            labels.append(parts)
    if not labels:
        raise ValueError(f"{args.labels}: no labels")
    records = []
    for qid, label in labels:
        ranked = list(dict.fromkeys(results.get(qid, [])))
        records.append(EvalRecord(qid, ranked, label))
    rows = metrics_rows(records, args.k or [10, 30])
    if args.out:
        text = write_metrics_report(rows, args.out)
    else:
        text = "".join(f"{m}\t{k}\t{val:.10f}\t{n}\n" for m, k, val, n in rows)
    print(text, end="")
    return 0


def cmd_synth(args) -> int:
    cfg = synth_mod.SynthConfig(
        seed=args.seed,
        n_items=args.items,
        item_types=tuple(args.types.split(",")),
        n_interactions=args.interactions,
        n_users=args.users,
        clusters=args.clusters,
        affinity=args.affinity,
    )
    corpus = synth_mod.generate_corpus(cfg)
    paths = synth_mod.write_corpus(corpus, args.out)
    config = {
        "version": 1,
        "types": [
            {"item_type": t, "embeddings": f"{t}.emb", "M": 2, "K": 64, "target_dim": 32, "quantizer": "rkmeans", "seed": args.seed}
            for t in cfg.item_types
        ],
        "catalog": "catalog.tsv",
        "logs": "logs.tsv",
        "work_dir": "work",
    }
    _atomic_write(Path(args.out, "config.json"), (json.dumps(config, indent=2) + "\n").encode())
    print(f"{len(corpus.catalog)} items, {len(corpus.logs)} interactions -> {args.out}")
    for role, p in sorted(paths.items()):
        print(f"{role}\t{p}")
    return 0


def cmd_stats(cfg: PipelineConfig, args) -> int:
    v = cfg.vocabulary()
    print(f"vocab_size\t{v.vocab_size}\ttext\t{v.text_token_count}\t[SID]\t{v.sid_open}\t[/SID]\t{v.sid_close}")
    registry = _registry(cfg, args)
    for item_type in registry.item_types:
        table = registry.buckets[item_type]
        sids = [sid for sid, b in table.items() for _ in b.colliders]
        print(
            f"{item_type}\titems={len(sids)}\ttuples={len(table)}\tcollision_rate={collision_rate(sids):.4f}"
            f"\tmax_bucket={max(len(b.colliders) for b in table.values())}"
        )
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sidkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="pipeline config (JSON)")
        p.add_argument("--work-dir", help="override the config's work_dir")
        return p

    p = with_config("build-codebooks", "train one quantizer per item type")
    p.add_argument("--seed", type=int)

    p = with_config("assign", "assign SIDs and write the registry")
    p.add_argument("--policy", choices=["popularity", "random"])
    p.add_argument("--collision-seed", type=int)
    p.add_argument("--permute-seed", type=int, help="randomly permute tuples across items (atomic-ID ablation)")
    p.add_argument("--out")

    p = with_config("build-trie", "build and verify per-type prefix tries")
    p.add_argument("--registry")

    p = with_config("train-scorer", "train the reference trigram scorer on encoded histories")
    p.add_argument("--registry")
    p.add_argument("--split-day", type=int, help="train only on events up to this day")
    p.add_argument("--gap", type=int, default=1)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")

    p = with_config("datagen", "emit alignment and instruction records")
    p.add_argument("--registry")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-day", type=int, help="also emit eval prompts/labels for this split day")
    p.add_argument("--gap", type=int, default=1)
    p.add_argument("--queries", help="TSV: user_id, item_id, query")
    p.add_argument("--rationales", help="TSV: user_id, cut index, rationale")
    p.add_argument("--summaries", help="TSV: user_id, summary")
    p.add_argument("--out")

    p = with_config("generate", "decode items for a prompt file")
    p.add_argument("--registry")
    p.add_argument("--prompts", required=True, help="JSONL with id, prompt_ids, optional target_type")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--constrained", dest="constrained", action="store_true", default=True)
    g.add_argument("--unconstrained", dest="constrained", action="store_false")
    m = p.add_mutually_exclusive_group()
    m.add_argument("--beam", type=int, help="beam width (default from config)")
    m.add_argument("--sample", action="store_true", help="top-p sampling instead of beam search")
    p.add_argument("--target-type")
    p.add_argument("--subset", help="file with one item_id per line")
    p.add_argument("--scorer", help="trigram file (default: work_dir/trigram.tsv, else uniform)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="HR@K / NDCG@K report")
    p.add_argument("--results", required=True)
    p.add_argument("--labels", required=True, help="TSV: id, label item_id")
    p.add_argument("--k", type=_parse_k, action="append", help="cutoff (repeatable; default 10 and 30)")
    p.add_argument("--out")

    p = sub.add_parser("synth", help="write a synthetic corpus and a matching config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--items", type=int, default=10_000)
    p.add_argument("--types", default="episode,audiobook")
    p.add_argument("--interactions", type=int, default=100_000)
    p.add_argument("--users", type=int, default=2_000)
    p.add_argument("--clusters", type=int, default=16)
    p.add_argument("--affinity", type=float, default=0.8)

    p = with_config("stats", "vocabulary and registry statistics")
    p.add_argument("--registry")
    return parser


_COMMANDS = {
    "build-codebooks": cmd_build_codebooks,
    "assign": cmd_assign,
    "build-trie": cmd_build_trie,
    "train-scorer": cmd_train_scorer,
    "datagen": cmd_datagen,
    "generate": cmd_generate,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("SIDKIT_LOG_LEVEL", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "synth":
            return cmd_synth(args)
        cfg = load_config(_require(args.config, "config"))
        if args.work_dir:
            cfg.work_dir = args.work_dir
        return _COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sidkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"sidkit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
