#!/usr/bin/env python3
"""End-to-end pipeline demo driven through the CLI.

Generates a synthetic dataset, dumps commuting matrices, trains a model,
evaluates the probe + clustering protocol, and exports embeddings.
"""

import argparse
import json
import sys
from pathlib import Path

from hae.cli import main as hae


def run(argv):
    print("+ hae " + " ".join(argv), file=sys.stderr)
    rc = hae(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="demo_run")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()
    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)

    synth = work / "synthetic.json"
    synth.write_text(json.dumps({
        "communities": 4, "authors": 200, "papers": 600, "venues": 8,
        "terms": 100, "cross_community_noise": 0.1, "feature_dim": 64,
        "feature_noise": 0.25, "seed": args.seed,
    }, indent=2))
    train_cfg = work / "train.json"
    train_cfg.write_text(json.dumps({
        "epochs": args.epochs, "patience": 60, "seed": args.seed,
        "train_ratio": 0.72, "val_ratio": 0.08,
    }, indent=2))

    data = work / "data"
    run(["generate", "--config", str(synth), "--out", str(data), "--force"])
    run([
        "commute", "--dataset", str(data),
        "--structure", "A-P-C-P-A", "--structure", "A-P-(C|T)-P-A",
        "--out", str(work / "commute"), "--force",
    ])
    model_out = work / "model"
    run([
        "train", "--dataset", str(data), "--train-config", str(train_cfg),
        "--out", str(model_out), "--force",
    ])
    run([
        "eval", "--dataset", str(data),
        "--checkpoint", str(model_out / "model.ckpt"),
        "--train-ratio", "0.8", "--repeats", "10",
    ])
    run([
        "embed", "--dataset", str(data),
        "--checkpoint", str(model_out / "model.ckpt"),
        "--out", str(work / "embeddings.tsv"),
    ])
    report = json.loads((model_out / "report.json").read_text())
    print("\nlearned structure weights per SCL:", report["omegas"])


if __name__ == "__main__":
    main()
