#!/usr/bin/env python3
"""Run the whole workbench on a synthetic corpus, end to end, via the CLI.

Produces a working directory with every artifact (normalized manifest, split,
captions, mel cache, checkpoint, embeddings, index) plus retrieval and
zero-shot reports, and prints a ready-to-use `echolex serve` config. With the
defaults this takes a couple of minutes on a laptop.

Usage:
    python scripts/run_desk_demo.py --work-dir demo [--species 8] [--clips 12]
"""

import argparse
import json
import sys
from pathlib import Path

from echolex.cli import main as cli


def run(argv):
    print("+ echolex " + " ".join(argv), file=sys.stderr)
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--work-dir", default="demo")
    parser.add_argument("--species", type=int, default=8)
    parser.add_argument("--clips", type=int, default=12)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    work = Path(args.work_dir)
    corpus = work / "corpus"
    run(["synth", "--out-dir", str(corpus), "--species", str(args.species),
         "--clips", str(args.clips), "--seed", str(args.seed)])
    run(["ingest", "--manifest", str(corpus / "manifest.jsonl"),
         "--source", "synthetic", "--out", str(work / "normalized.jsonl"),
         "--errors", str(work / "errors.jsonl"),
         "--split", str(work / "split.json"),
         "--min-count", str(args.clips), "--test-fraction", "0.25",
         "--seed", str(args.seed)])
    run(["caption", "--manifest", str(work / "normalized.jsonl"),
         "--out", str(work / "captions.jsonl"),
         "--issues", str(work / "issues.jsonl")])
    run(["features", "--manifest", str(work / "normalized.jsonl"),
         "--corpus-root", str(corpus), "--out-dir", str(work / "features")])
    run(["train", "--clips", str(work / "features" / "clips.jsonl"),
         "--captions", str(work / "captions.jsonl"),
         "--out-dir", str(work / "run"), "--split", str(work / "split.json"),
         "--epochs", str(args.epochs), "--batch-size", "16",
         "--seed", str(args.seed)])
    run(["embed", "--clips", str(work / "features" / "clips.jsonl"),
         "--checkpoint", str(work / "run" / "checkpoint.npz"),
         "--out", str(work / "embeddings.bin")])
    run(["index", "--embeddings", str(work / "embeddings.bin"),
         "--clips", str(work / "features" / "clips.jsonl"),
         "--captions", str(work / "captions.jsonl"),
         "--out", str(work / "index.bin")])
    run(["eval", "retrieval", "--index", str(work / "index.bin"),
         "--checkpoint", str(work / "run" / "checkpoint.npz"),
         "--test", str(work / "split.json"),
         "--diagnostics", str(work / "retrieval_queries.csv")])
    run(["eval", "zeroshot", "--index", str(work / "index.bin"),
         "--checkpoint", str(work / "run" / "checkpoint.npz"),
         "--test", str(work / "split.json")])

    config = {
        "corpus_root": str(work / "features"),
        "index_path": str(work / "index.bin"),
        "checkpoint_path": str(work / "run" / "checkpoint.npz"),
        "port": 8710,
    }
    config_path = work / "service.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    print(f"\nDone. Start the search service with:\n"
          f"  echolex serve --config {config_path}", file=sys.stderr)


if __name__ == "__main__":
    main()
