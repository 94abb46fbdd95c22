"""Shared fixtures: hand-built graphs for oracle and receptive-field tests."""

import numpy as np
import scipy.sparse as sp

from hae.hin import HeteroGraph
from hae.rng import RngStream


def make_graph(mats, features=None, labels=None):
    """Assemble a HeteroGraph straight from dense 0/1 biadjacency blocks."""
    counts = {}
    bi = {}
    for (a, b), m in mats.items():
        m = np.asarray(m, dtype=np.int8)
        counts.setdefault(a, m.shape[0])
        counts.setdefault(b, m.shape[1])
        csr = sp.csr_matrix(m)
        bi[(a, b)] = csr
        bi[(b, a)] = csr.T.tocsr()
    types = tuple(counts)
    ids = {t: [f"{t.lower()}{i}" for i in range(counts[t])] for t in types}
    return HeteroGraph(
        node_types=types,
        node_counts=counts,
        biadjacency=bi,
        features=features or {},
        target_type="A" if labels is not None else None,
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        ids=ids,
        index_of={e: (t, i) for t in types for i, e in enumerate(ids[t])},
    )


def random_hin(rng: RngStream, max_nodes=50, density=0.1):
    sizes = {t: 2 + int(rng.integers(max_nodes - 1)) for t in "APCT"}
    mats = {}
    for a, b in [("A", "P"), ("P", "C"), ("P", "T")]:
        mats[(a, b)] = (rng.random((sizes[a], sizes[b])) < density).astype(np.int8)
    return make_graph(mats)


def ring_fixture(n=12, feature_dim=8, seed=0):
    """Sparse n-author ring: paper i joins authors (i, i+1), venues pair up
    consecutive papers, terms chain them. Keeps neighborhoods small so
    attention gradients stay well-conditioned in 12-node gradient checks."""
    n_p, n_c, n_t = n, n // 2, n
    ap = np.zeros((n, n_p), dtype=np.int8)
    pc = np.zeros((n_p, n_c), dtype=np.int8)
    pt = np.zeros((n_p, n_t), dtype=np.int8)
    for i in range(n_p):
        ap[i, i] = 1
        ap[(i + 1) % n, i] = 1
        pc[i, (i // 2) % n_c] = 1
        pt[i, i] = 1
        pt[i, (i + 1) % n_t] = 1
    feats = RngStream(seed).uniform(-1.0, 1.0, (n, feature_dim))
    labels = [i * 2 // n for i in range(n)]
    return make_graph(
        {("A", "P"): ap, ("P", "C"): pc, ("P", "T"): pt},
        features={"A": feats},
        labels=labels,
    )


def chain_fixture(feature_dim=6, seed=2):
    """Five authors wired so the structure neighborhood graph is exactly
    a1-{a2,a3}, a2-a4, a4-a5: the distance from a1 to a5 is three hops.

    Co-authorship papers: (a1,a2), (a1,a3), (a2,a4), (a4,a5); every paper
    gets a private venue and term so no extra author pairs appear.
    """
    pairs = [(0, 1), (0, 2), (1, 3), (3, 4)]
    n_a, n_p = 5, len(pairs) + 5
    ap = np.zeros((n_a, n_p), dtype=np.int8)
    for p, (i, j) in enumerate(pairs):
        ap[i, p] = ap[j, p] = 1
    for a in range(n_a):  # one solo paper each keeps diagonals positive
        ap[a, len(pairs) + a] = 1
    pc = np.eye(n_p, dtype=np.int8)
    pt = np.eye(n_p, dtype=np.int8)
    feats = RngStream(seed).uniform(-1.0, 1.0, (n_a, feature_dim))
    return make_graph(
        {("A", "P"): ap, ("P", "C"): pc, ("P", "T"): pt},
        features={"A": feats},
        labels=[0, 0, 0, 1, 1],
    )
