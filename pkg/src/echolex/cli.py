"""Command-line gateway: ingest, caption, features, train, embed, index,
search, classify, eval, and serve subcommands, each a thin composition of the
library modules over files on disk.

Failures print a machine-readable JSON error line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import audio as dsp
from . import captioning, evaluation, ingest, service, synth
from .encoder import (Embedding, EncoderConfig, audio_input_features,
                      embed_text, normalize, save_embeddings,
                      load_embeddings, text_input_features)
from .index import IndexEntry, VectorIndex
from .training import (CorpusItem, TrainConfig, load_checkpoint, train,
                       write_loss_log, TrainState, _branch_forward)


class CliError(Exception):
    pass


def _clip_id(recording_id: str, chunk_index: int) -> str:
    # "~" is URL-unreserved, so chunk ids survive /v1/audio/{clipId} intact
    return recording_id if chunk_index == 0 else f"{recording_id}~c{chunk_index}"


def _recording_id(clip_id: str) -> str:
    base, sep, tail = clip_id.rpartition("~c")
    if sep and tail.isdigit():
        return base
    return clip_id


# ---------------------------------------------------------------- ingest

def cmd_ingest(args) -> int:
    records, issues = ingest.parse_manifest(args.manifest, args.source)
    if args.name_map:
        table = ingest.SpeciesNameTable.from_csv(args.name_map)
        records, mapping_report = ingest.map_species_names(records, table)
        print(f"name mapping: +{mapping_report.filled_common} common, "
              f"+{mapping_report.filled_scientific} scientific, "
              f"{len(mapping_report.unmapped)} unmapped", file=sys.stderr)
    ingest.write_normalized(records, args.out)
    if args.errors:
        ingest.write_issues(issues, args.errors)
    print(f"{len(records)} records -> {args.out}; {len(issues)} row issues",
          file=sys.stderr)
    if args.split:
        split = ingest.build_species_split(
            records, min_count=args.min_count,
            test_fraction=args.test_fraction, seed=args.seed)
        split.save(args.split)
        print(f"split: {len(split.train_ids)} train / {len(split.test_ids)} "
              f"test -> {args.split}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- caption

def cmd_caption(args) -> int:
    records = ingest.load_normalized(args.manifest)
    client = None
    if args.endpoint:
        token = os.environ.get(service.TOKEN_ENV, "")
        client = captioning.HttpCaptionClient(args.endpoint, token=token)
    captions, issues = captioning.caption_corpus(
        records, client=client, max_retries=args.max_retries,
        max_in_flight=args.max_in_flight)
    captioning.write_captions(captions, args.out)
    if args.issues:
        with Path(args.issues).open("w", encoding="utf-8") as fh:
            for issue in issues:
                fh.write(issue.to_json() + "\n")
    print(f"{len(captions)} captions -> {args.out}; {len(issues)} issues",
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------- features

def _load_clip_table(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def cmd_features(args) -> int:
    records = ingest.load_normalized(args.manifest)
    corpus_root = Path(args.corpus_root)
    out_dir = Path(args.out_dir)
    (out_dir / "mels").mkdir(parents=True, exist_ok=True)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    mel_config = dsp.MelConfig(mel_bins=args.mel_bins)

    species_counts = Counter(r.species_key() for r in records)
    table_path = out_dir / "clips.jsonl"
    n_clips = 0
    with table_path.open("w", encoding="utf-8") as table:
        for rec in records:
            clip = dsp.load_wav(corpus_root / rec.audio_path, recording_id=rec.id)
            clip = dsp.resample(clip, dsp.CANONICAL_RATE)
            n_chunks = dsp.chunk_plan(clip.duration,
                                      species_counts[rec.species_key()])
            for chunk in dsp.chunk_clip(clip, n_chunks):
                cid = _clip_id(rec.id, chunk.chunk_index)
                mel = dsp.mel_spectrogram(chunk, mel_config)
                mel_path = out_dir / "mels" / f"{cid}.mel"
                dsp.save_mel(mel, mel_path)
                clip_path = out_dir / "clips" / f"{cid}.wav"
                dsp.save_wav(chunk, clip_path)
                table.write(json.dumps({
                    "clipId": cid,
                    "recordingId": rec.id,
                    "speciesCommon": rec.species_common,
                    "speciesScientific": rec.species_scientific,
                    "melPath": str(mel_path.relative_to(out_dir)),
                    "clipPath": str(clip_path.relative_to(out_dir)),
                }, ensure_ascii=False) + "\n")
                n_clips += 1
    print(f"{n_clips} clips from {len(records)} recordings -> {out_dir}",
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------- train

def _captions_by_recording(path: str | Path) -> dict[str, list[captioning.Caption]]:
    table: dict[str, list[captioning.Caption]] = {}
    for cap in captioning.load_captions(path):
        table.setdefault(cap.recording_id, []).append(cap)
    return table


def cmd_train(args) -> int:
    clips = _load_clip_table(args.clips)
    caps = _captions_by_recording(args.captions)
    features_dir = Path(args.clips).parent
    train_ids = None
    if args.split:
        train_ids = ingest.CorpusSplit.load(args.split).train_ids

    encoder_config = EncoderConfig(
        d=args.dim, mel_bins=args.mel_bins,
        audio_feature_dim=args.audio_feature_dim,
        text_feature_dim=args.text_feature_dim,
        hidden_dim=args.hidden_dim,
        vocab_hash_buckets=args.vocab_buckets)
    corpus = []
    for row in clips:
        rid = row["recordingId"]
        if train_ids is not None and rid not in train_ids:
            continue
        row_caps = caps.get(rid)
        if not row_caps:
            continue
        mel = dsp.load_mel(features_dir / row["melPath"])
        corpus.append(CorpusItem(
            recording_id=row["clipId"],
            audio_input=audio_input_features(mel),
            captions=row_caps,
            text_inputs=[text_input_features(c.text,
                                             encoder_config.vocab_hash_buckets)
                         for c in row_caps]))
    if not corpus:
        raise CliError("no training items (check --split and captions)")

    config = TrainConfig(batch_size=args.batch_size,
                         learning_rate=args.learning_rate,
                         epochs=args.epochs, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state, logs = train(corpus, config, encoder_config=encoder_config,
                        checkpoint_path=out_dir / "checkpoint.npz")
    write_loss_log(logs, out_dir / "loss_log.csv")
    print(f"trained {config.epochs} epochs on {len(corpus)} clips; "
          f"loss {logs[0].train_loss:.4f} -> {logs[-1].train_loss:.4f}; "
          f"tau {logs[-1].tau:.4f}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- embed

def _embed_mel_matrix(mel_mean: np.ndarray, state: TrainState) -> Embedding:
    cache = _branch_forward(mel_mean[None, :], state.params.audio_encoder,
                            state.params.audio_head)
    return Embedding(values=cache.unit[0], normalized=True)


def cmd_embed(args) -> int:
    clips = _load_clip_table(args.clips)
    state = load_checkpoint(args.checkpoint)
    features_dir = Path(args.clips).parent
    keep = None
    if args.split and args.subset != "all":
        split = ingest.CorpusSplit.load(args.split)
        keep = split.test_ids if args.subset == "test" else split.train_ids
    out = {}
    for row in clips:
        if keep is not None and row["recordingId"] not in keep:
            continue
        mel = dsp.load_mel(features_dir / row["melPath"])
        out[row["clipId"]] = _embed_mel_matrix(audio_input_features(mel), state)
    if not out:
        raise CliError("no clips selected")
    save_embeddings(out, args.out)
    print(f"{len(out)} embeddings -> {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- index

def cmd_index(args) -> int:
    clips = {row["clipId"]: row for row in _load_clip_table(args.clips)}
    caps = _captions_by_recording(args.captions)
    embeddings = load_embeddings(args.embeddings)
    if not embeddings:
        raise CliError("embedding container is empty")
    dim = next(iter(embeddings.values())).dim
    idx = VectorIndex(dim=dim)
    for cid in sorted(embeddings):
        row = clips.get(cid)
        if row is None:
            raise CliError(f"clip {cid!r} missing from {args.clips}")
        rid = row["recordingId"]
        common = next((c.text for c in caps.get(rid, [])
                       if c.name_form == "common"), "")
        idx.add(IndexEntry(
            clip_id=cid,
            embedding=normalize(embeddings[cid]),
            caption_common=common,
            species_common=row.get("speciesCommon"),
            species_scientific=row.get("speciesScientific"),
            audio_path=row["clipPath"]))
    idx.save(args.out)
    print(f"indexed {len(idx)} clips (dim {dim}) -> {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- search

def cmd_search(args) -> int:
    idx = VectorIndex.load(args.index)
    state = load_checkpoint(args.checkpoint)
    query = embed_text(args.query, state.params)
    for res in idx.search_topk(query, args.k):
        meta = idx.entry_meta(res.clip_id)
        print(f"{res.rank}\t{res.score:.6f}\t{res.clip_id}\t{meta.caption_common}")
    return 0


# ---------------------------------------------------------------- classify

def cmd_classify(args) -> int:
    state = load_checkpoint(args.checkpoint)
    labels = [part.strip() for part in args.labels.split(",") if part.strip()]
    if not labels:
        raise CliError("no labels given")
    if args.clip_id:
        if not args.index:
            raise CliError("--clip-id needs --index")
        idx = VectorIndex.load(args.index)
        if args.clip_id not in idx:
            raise CliError(f"unknown clip id {args.clip_id!r}")
        audio_emb = idx.embedding_for(args.clip_id)
    elif args.wav:
        clip = dsp.fix_length(dsp.resample(dsp.load_wav(args.wav)))
        mel = dsp.mel_spectrogram(clip, dsp.MelConfig(
            mel_bins=state.params.config.mel_bins))
        from .encoder import embed_audio
        audio_emb = embed_audio(mel, state.params)
    else:
        raise CliError("provide --clip-id or --wav")
    prompt_set = evaluation.LabelPromptSet.build(
        labels, lambda t: embed_text(t, state.params), template=args.template)
    scores = evaluation.zero_shot_detection_scores(audio_emb, prompt_set)
    best = evaluation.zero_shot_classify(audio_emb, prompt_set)
    print(json.dumps({
        "scores": [{"label": lab, "score": float(sc)}
                   for lab, sc in zip(labels, scores)],
        "argmaxLabel": best}, indent=2))
    return 0


# ---------------------------------------------------------------- eval

def _index_corpus_clips(idx: VectorIndex) -> list[evaluation.CorpusClip]:
    clips = []
    for cid in idx.clip_ids:
        meta = idx.entry_meta(cid)
        clips.append(evaluation.CorpusClip(
            clip_id=cid,
            species=meta.species_common or meta.species_scientific or "",
            caption_common=meta.caption_common))
    return clips


def _query_clip_ids(idx: VectorIndex, split_path: str | None,
                    subset: str = "test") -> list[str]:
    if not split_path:
        return idx.clip_ids
    split = ingest.CorpusSplit.load(split_path)
    keep = split.test_ids if subset == "test" else split.train_ids
    return [cid for cid in idx.clip_ids if _recording_id(cid) in keep]


def cmd_eval(args) -> int:
    idx = VectorIndex.load(args.index)
    state = load_checkpoint(args.checkpoint)
    query_ids = _query_clip_ids(idx, args.test)
    if not query_ids:
        raise CliError("no query clips selected")
    captions_by_clip = {cid: idx.entry_meta(cid).caption_common
                        for cid in idx.clip_ids}

    if args.mode == "retrieval":
        ranked_lists = []
        for cid in query_ids:
            q = captions_by_clip[cid]
            results = idx.search_topk(embed_text(q, state.params), args.n)
            ranked_lists.append(evaluation.build_ranked_list(
                q, [r.clip_id for r in results], [r.score for r in results],
                captions_by_clip))
        report = {
            "queryCount": len(ranked_lists),
            "metrics": [
                {"metricName": f"mAP@{args.n}",
                 "value": evaluation.map_at_n(ranked_lists, args.n),
                 "N": args.n},
                {"metricName": "precision@1",
                 "value": evaluation.precision_at_1(ranked_lists)},
            ],
        }
        if args.diagnostics:
            evaluation.write_query_diagnostics(ranked_lists, args.diagnostics,
                                               args.n)
        print(json.dumps(report, indent=2))
    elif args.mode == "zeroshot":
        clips = {c.clip_id: c for c in _index_corpus_clips(idx)}
        labels = sorted({clips[cid].species for cid in query_ids})
        prompt_set = evaluation.LabelPromptSet.build(
            labels, lambda t: embed_text(t, state.params),
            template=args.template)
        correct = sum(
            1 for cid in query_ids
            if evaluation.zero_shot_classify(idx.embedding_for(cid),
                                             prompt_set) == clips[cid].species)
        report = {"queryCount": len(query_ids),
                  "metrics": [{"metricName": "zeroShotAccuracy",
                               "value": correct / len(query_ids)}],
                  "labelCount": len(labels)}
        print(json.dumps(report, indent=2))
    else:  # oracle
        corpus = [c for c in _index_corpus_clips(idx) if c.clip_id in
                  set(query_ids)]
        value = evaluation.oracle_precision_at_1(corpus)
        print(json.dumps({"queryCount": len(corpus),
                          "metrics": [{"metricName": "oraclePrecision@1",
                                       "value": value}]}, indent=2))
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    species = synth.make_species(args.species, seed=args.seed)
    records = synth.make_recordings(species, clips_per_species=args.clips)
    by_name = {s.common_name: s for s in species}
    for rec in records:
        clip = synth.synth_clip(by_name[rec.species_common],
                                synth.clip_seed_for(rec.id, args.seed))
        dsp.save_wav(clip, out_dir / rec.audio_path)
    ingest.write_normalized(records, out_dir / "manifest.jsonl")
    print(f"{len(records)} synthetic recordings ({args.species} species) "
          f"-> {out_dir}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- serve

def cmd_serve(args) -> int:
    config = service.ServiceConfig.from_file(args.config)
    if args.port:
        config.port = args.port
    service.run(config)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echolex",
        description="Cross-modal bioacoustic workbench: build caption-paired "
                    "corpora, train contrastive audio/text encoders, and "
                    "search them with free text.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a source manifest to normalized JSONL")
    p.add_argument("--manifest", required=True)
    p.add_argument("--source", required=True, choices=ingest.SOURCES)
    p.add_argument("--out", required=True)
    p.add_argument("--errors", help="row-issue report JSONL")
    p.add_argument("--name-map", help="scientific/common name table CSV")
    p.add_argument("--split", help="also write a train/test split JSON here")
    p.add_argument("--min-count", type=int, default=70)
    p.add_argument("--test-fraction", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("caption", help="generate common+scientific captions")
    p.add_argument("--manifest", required=True, help="normalized JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--issues", help="caption-issue log JSONL")
    p.add_argument("--endpoint", help="captioning HTTP endpoint (else templates only)")
    p.add_argument("--max-retries", type=int, default=2)
    p.add_argument("--max-in-flight", type=int, default=1)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("features", help="decode, chunk, and extract mel features")
    p.add_argument("--manifest", required=True, help="normalized JSONL")
    p.add_argument("--corpus-root", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mel-bins", type=int, default=64)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="contrastive training over cached features")
    p.add_argument("--clips", required=True, help="clips.jsonl from features")
    p.add_argument("--captions", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", help="train only on the split's train ids")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--mel-bins", type=int, default=64)
    p.add_argument("--audio-feature-dim", type=int, default=128)
    p.add_argument("--text-feature-dim", type=int, default=128)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--vocab-buckets", type=int, default=1024)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed clips with a trained checkpoint")
    p.add_argument("--clips", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split")
    p.add_argument("--subset", choices=["all", "train", "test"], default="all")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="build the search index from embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="free-text top-k search over an index")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("classify", help="zero-shot classify a clip against labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", required=True, help="comma-separated label prompts")
    p.add_argument("--index")
    p.add_argument("--clip-id")
    p.add_argument("--wav")
    p.add_argument("--template", default="{label}")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="retrieval / zero-shot / oracle evaluation")
    p.add_argument("mode", choices=["retrieval", "zeroshot", "oracle"])
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", help="split JSON; queries restricted to test ids")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--template", default="The sound of a {label}")
    p.add_argument("--diagnostics", help="per-query CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic demo corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--species", type=int, default=8)
    p.add_argument("--clips", type=int, default=12, help="clips per species")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="run the HTTP search service")
    p.add_argument("--config", required=True, help="TOML or JSON config file")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ingest.IngestError, dsp.AudioError,
            evaluation.EvaluationError, FileNotFoundError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
