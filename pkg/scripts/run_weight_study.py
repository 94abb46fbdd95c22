#!/usr/bin/env python3
"""Structure-weight interpretability study.

Builds a dataset where a meta-graph (same venue AND shared hub term) is
community-informative while the hub-term meta-path alone is noise-dominated,
then reports the learned weights over several seeds.
"""

import argparse

import numpy as np

from hae.autodiff import RngStream
from hae.hin import SyntheticConfig, generate_synthetic_hin, split_labels
from hae.layers import ModelConfig, build_graph_inputs, build_stack
from hae.train_eval import TrainConfig, train

STRUCTURES = ["A-P-(C|T)-P-A", "A-P-T-P-A"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=800)
    ap.add_argument("--learning-rate", type=float, default=0.03)
    args = ap.parse_args()

    cfg = SyntheticConfig(
        communities=4, authors=120, papers=360, venues=12, terms=4,
        cross_community_noise=0.3, feature_dim=16, feature_noise=0.4, seed=900,
    )
    g = generate_synthetic_hin(cfg)
    inputs = build_graph_inputs(g, STRUCTURES)
    labels = g.labels
    same = np.equal.outer(labels, labels)
    for name, sim in zip(STRUCTURES, inputs.sims):
        print(
            f"{name}: mean similarity within community {sim[same].mean():.4f}, "
            f"across {sim[~same].mean():.4f}"
        )
    split = split_labels(g, 0.6, 0.2, seed=900)

    wins = 0
    print(f"\n{'seed':>4}  " + "  ".join(f"{s:>14}" for s in STRUCTURES))
    for seed in range(args.seeds):
        mc = ModelConfig(variant="scl-2l", dim=16, heads=2, structures=STRUCTURES)
        stack = build_stack(mc, 16, g.n_classes(), len(STRUCTURES), RngStream(seed))
        tc = TrainConfig(
            seed=seed, epochs=args.epochs, patience=args.epochs,
            learning_rate=args.learning_rate,
        )
        stack, report = train(stack, inputs, g.labels, split, tc)
        omega = report.omegas[0]
        wins += omega[0] > omega[1]
        print(f"{seed:>4}  " + "  ".join(f"{w:>14.4f}" for w in omega))
    print(f"\nmeta-graph ranked first in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
