"""Typed heterogeneous graph data model, TSV I/O, label splits, and a
synthetic planted-community generator.

Graphs are immutable after construction: biadjacency matrices are stored for
both directions of every relation and downstream code treats them as
read-only. External node ids are arbitrary strings; internally every type
gets dense integer indices in first-appearance order, with the id map kept
for traceability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .rng import RngStream

NODES_HEADER = "id\ttype\tlabel"
EDGES_HEADER = "src\tdst"
FEATURES_HEADER = "id\tdim\tvalue"

# Fixed shape knobs of the synthetic generator (not exposed in the config:
# the acceptance fixtures only vary counts and noise).
AUTHORS_PER_PAPER = 2
TERMS_PER_PAPER = 3


@dataclass(frozen=True)
class HeteroGraph:
    """A heterogeneous graph: typed node sets plus per-type-pair 0/1
    biadjacency matrices.

    ``biadjacency[(a, b)]`` exists iff ``biadjacency[(b, a)]`` exists and each
    is the transpose of the other. ``labels`` (when present) hold a class id
    per node of ``target_type``, with -1 marking unlabeled nodes.
    """

    node_types: tuple[str, ...]
    node_counts: dict[str, int]
    biadjacency: dict[tuple[str, str], sp.csr_matrix]
    features: dict[str, np.ndarray] = field(default_factory=dict)
    target_type: str | None = None
    labels: np.ndarray | None = None
    ids: dict[str, list[str]] = field(default_factory=dict)
    index_of: dict[str, tuple[str, int]] = field(default_factory=dict)

    def count(self, t: str) -> int:
        if t not in self.node_counts:
            raise DataError(f"unknown node type {t!r}")
        return self.node_counts[t]

    def n_classes(self) -> int:
        if self.labels is None:
            raise DataError("graph has no labels")
        labeled = self.labels[self.labels >= 0]
        if labeled.size == 0:
            raise DataError("graph has no labeled nodes")
        return int(labeled.max()) + 1

    def labeled_ids(self) -> np.ndarray:
        if self.labels is None:
            raise DataError("graph has no labels")
        return np.flatnonzero(self.labels >= 0)


@dataclass(frozen=True)
class MetaSchema:
    """Node types and the ordered type pairs permitted as edges."""

    types: frozenset[str]
    relations: frozenset[tuple[str, str]]

    @staticmethod
    def of(g: HeteroGraph) -> "MetaSchema":
        return MetaSchema(frozenset(g.node_types), frozenset(g.biadjacency))


@dataclass(frozen=True)
class LabelSplit:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    train_ratio: float


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the planted-community generator.

    Requires venues >= communities and terms >= communities so that every
    community owns at least one venue and one term block.
    """

    communities: int = 4
    authors: int = 400
    papers: int = 1200
    venues: int = 8
    terms: int = 200
    cross_community_noise: float = 0.1
    feature_dim: int = 64
    feature_noise: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.communities < 2:
            raise ConfigError("communities must be >= 2")
        for name in ("authors", "papers", "venues", "terms", "feature_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("cross_community_noise", "feature_noise"):
            p = getattr(self, name)
            if not (0.0 <= p < 1.0):
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.feature_dim < self.communities:
            raise ConfigError("feature_dim must be >= communities")
        if self.venues < self.communities or self.terms < self.communities:
            raise ConfigError("need at least one venue and one term per community")


def _freeze(mat: sp.csr_matrix) -> sp.csr_matrix:
    mat.data.flags.writeable = False
    mat.indices.flags.writeable = False
    mat.indptr.flags.writeable = False
    return mat


def _build_graph(
    types: list[str],
    ids: dict[str, list[str]],
    edges: list[tuple[str, int, str, int]],
    features: dict[str, np.ndarray],
    target_type: str | None,
    labels: np.ndarray | None,
) -> HeteroGraph:
    counts = {t: len(ids[t]) for t in types}
    by_pair: dict[tuple[str, str], tuple[list[int], list[int]]] = {}
    for ta, ia, tb, ib in edges:
        # store canonically under the sorted type pair; mirror on access
        if (ta, tb) <= (tb, ta):
            key, r, c = (ta, tb), ia, ib
        else:
            key, r, c = (tb, ta), ib, ia
        rows, cols = by_pair.setdefault(key, ([], []))
        rows.append(r)
        cols.append(c)
        if ta == tb:
            rows.append(c)
            cols.append(r)
    biadj: dict[tuple[str, str], sp.csr_matrix] = {}
    for (ta, tb), (rows, cols) in by_pair.items():
        data = np.ones(len(rows), dtype=np.int16)
        mat = sp.csr_matrix(
            (data, (rows, cols)), shape=(counts[ta], counts[tb])
        ).astype(np.int8)
        mat.data[:] = 1  # collapse summed duplicate edges back to 0/1
        biadj[(ta, tb)] = _freeze(mat)
        if ta != tb:
            biadj[(tb, ta)] = _freeze(mat.T.tocsr())
    index_of = {
        ext: (t, i) for t in types for i, ext in enumerate(ids[t])
    }
    return HeteroGraph(
        node_types=tuple(types),
        node_counts=counts,
        biadjacency=biadj,
        features=features,
        target_type=target_type,
        labels=labels,
        ids=ids,
        index_of=index_of,
    )


def _read_rows(path: Path, header: str) -> list[tuple[int, list[str]]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    # CRLF input is normalized to LF before parsing
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: empty file, expected header {header!r}")
    if lines[0] != header:
        raise DataError(f"{path}:1: expected header {header!r}, got {lines[0]!r}")
    return [(lineno, line.split("\t")) for lineno, line in enumerate(lines[1:], start=2)]


def load_hetero_graph(
    nodes_path: str | Path,
    edges_path: str | Path,
    features_path: str | Path | None = None,
) -> HeteroGraph:
    """Load a graph from the nodes/edges/features TSV formats.

    Node ids are re-indexed densely per type in first-appearance order; the
    external-id map is retained on the returned graph. Edges are undirected
    and stored in both directions.
    """
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    types: list[str] = []
    ids: dict[str, list[str]] = {}
    raw_labels: dict[str, dict[int, str]] = {}
    index_of: dict[str, tuple[str, int]] = {}
    for lineno, fields in _read_rows(nodes_path, NODES_HEADER):
        if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
            raise DataError(f"{nodes_path}:{lineno}: malformed node row {fields!r}")
        ext, t = fields[0], fields[1]
        label = fields[2] if len(fields) == 3 else ""
        if ext in index_of:
            raise DataError(f"{nodes_path}:{lineno}: duplicate node id {ext!r}")
        if t not in ids:
            types.append(t)
            ids[t] = []
            raw_labels[t] = {}
        idx = len(ids[t])
        ids[t].append(ext)
        index_of[ext] = (t, idx)
        if label != "":
            raw_labels[t][idx] = label

    edges: list[tuple[str, int, str, int]] = []
    for lineno, fields in _read_rows(edges_path, EDGES_HEADER):
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise DataError(f"{edges_path}:{lineno}: malformed edge row {fields!r}")
        for ext in fields:
            if ext not in index_of:
                raise DataError(
                    f"{edges_path}:{lineno}: edge references unknown node {ext!r}"
                )
        (ta, ia), (tb, ib) = index_of[fields[0]], index_of[fields[1]]
        edges.append((ta, ia, tb, ib))

    features: dict[str, np.ndarray] = {}
    if features_path is not None:
        features_path = Path(features_path)
        triplets: dict[str, list[tuple[int, int, float]]] = {}
        for lineno, fields in _read_rows(features_path, FEATURES_HEADER):
            if len(fields) != 3:
                raise DataError(
                    f"{features_path}:{lineno}: malformed feature row {fields!r}"
                )
            ext, dim_s, val_s = fields
            if ext not in index_of:
                raise DataError(
                    f"{features_path}:{lineno}: feature for unknown node {ext!r}"
                )
            try:
                dim, val = int(dim_s), float(val_s)
            except ValueError as e:
                raise DataError(f"{features_path}:{lineno}: {e}") from e
            if dim < 0:
                raise DataError(f"{features_path}:{lineno}: negative dim {dim}")
            t, idx = index_of[ext]
            triplets.setdefault(t, []).append((idx, dim, val))
        for t, rows in triplets.items():
            d = max(dim for _, dim, _ in rows) + 1
            mat = np.zeros((len(ids[t]), d), dtype=np.float64)
            for idx, dim, val in rows:
                mat[idx, dim] = val
            features[t] = mat

    labeled_types = [t for t in types if raw_labels[t]]
    target_type: str | None = None
    labels: np.ndarray | None = None
    if len(labeled_types) > 1:
        raise DataError(f"labels present on multiple types: {labeled_types}")
    if labeled_types:
        target_type = labeled_types[0]
        classes = sorted(set(raw_labels[target_type].values()))
        class_id = {c: k for k, c in enumerate(classes)}
        labels = np.full(len(ids[target_type]), -1, dtype=np.int64)
        for idx, c in raw_labels[target_type].items():
            labels[idx] = class_id[c]
    return _build_graph(types, ids, edges, features, target_type, labels)


def save_hetero_graph(g: HeteroGraph, out_dir: str | Path) -> dict[str, Path]:
    """Write nodes.tsv / edges.tsv / features.tsv for ``g``.

    Rows are emitted in internal index order, so a reload reproduces the
    same indexing (load . save round-trips bit-exactly).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / f"{name}.tsv" for name in ("nodes", "edges", "features")}

    lines = [NODES_HEADER]
    for t in g.node_types:
        for i, ext in enumerate(g.ids[t]):
            label = ""
            if t == g.target_type and g.labels is not None and g.labels[i] >= 0:
                label = str(int(g.labels[i]))
            lines.append(f"{ext}\t{t}\t{label}")
    paths["nodes"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = [EDGES_HEADER]
    for (ta, tb), mat in sorted(g.biadjacency.items()):
        if (ta, tb) > (tb, ta):
            continue  # each undirected relation is written once
        coo = mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for r, c in zip(coo.row[order], coo.col[order]):
            if ta == tb and r > c:
                continue
            lines.append(f"{g.ids[ta][r]}\t{g.ids[tb][c]}")
    paths["edges"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = [FEATURES_HEADER]
    for t in g.node_types:
        if t not in g.features:
            continue
        mat = g.features[t]
        for i in range(mat.shape[0]):
            for dim in np.flatnonzero(mat[i]):
                lines.append(f"{g.ids[t][i]}\t{dim}\t{mat[i, dim]:.17g}")
    paths["features"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths


def typed_adjacency(g: HeteroGraph, src_type: str, dst_type: str) -> sp.csr_matrix:
    """Return the stored 0/1 biadjacency between two node types (read-only)."""
    for t in (src_type, dst_type):
        if t not in g.node_counts:
            raise DataError(f"unknown node type {t!r}")
    key = (src_type, dst_type)
    if key not in g.biadjacency:
        raise DataError(f"relation absent: no {src_type}-{dst_type} edges")
    return g.biadjacency[key]


def generate_synthetic_hin(cfg: SyntheticConfig) -> HeteroGraph:
    """Planted-community HIN over types A (authors), P (papers), C (venues),
    T (terms).

    Authors are evenly assigned to communities and labeled by community.
    Every paper belongs to one community and draws its authors, venue and
    terms from it, except that each edge independently flips to a uniformly
    random other community with probability ``cross_community_noise``.
    Author features are the bag-of-words over the terms of their papers with
    each bit flipped independently with probability ``feature_noise``.
    Deterministic given the seed, and every author ends up with >= 1 paper.
    """
    cfg.validate()
    rng = RngStream(cfg.seed)
    k = cfg.communities

    def block(i: int, n: int) -> int:
        return i * k // n

    def members(n: int, c: int) -> np.ndarray:
        return np.flatnonzero(np.array([block(i, n) for i in range(n)]) == c)

    authors_in = [members(cfg.authors, c) for c in range(k)]
    venues_in = [members(cfg.venues, c) for c in range(k)]
    terms_in = [members(cfg.terms, c) for c in range(k)]

    def noised(c: int) -> int:
        if cfg.cross_community_noise > 0 and rng.random() < cfg.cross_community_noise:
            return int((c + 1 + rng.integers(k - 1)) % k)
        return c

    edges: list[tuple[str, int, str, int]] = []
    paper_terms: list[set[int]] = []
    author_papers: dict[int, list[int]] = {a: [] for a in range(cfg.authors)}
    slot_cursor = [0] * k
    for p in range(cfg.papers):
        c = block(p, cfg.papers)
        # first author slot cycles through the community so that coverage is
        # guaranteed at zero noise; remaining slots are random
        c1 = noised(c)
        if c1 == c:
            pool = authors_in[c]
            first = int(pool[slot_cursor[c] % len(pool)])
        else:
            pool = authors_in[c1]
            first = int(pool[int(rng.integers(len(pool)))])
        slot_cursor[c] += 1
        chosen = {first}
        for _ in range(AUTHORS_PER_PAPER - 1):
            pool = authors_in[noised(c)]
            chosen.add(int(pool[int(rng.integers(len(pool)))]))
        for a in chosen:
            edges.append(("A", a, "P", p))
            author_papers[a].append(p)
        vpool = venues_in[noised(c)]
        edges.append(("P", p, "C", int(vpool[int(rng.integers(len(vpool)))])))
        terms = set()
        for _ in range(TERMS_PER_PAPER):
            tpool = terms_in[noised(c)]
            terms.add(int(tpool[int(rng.integers(len(tpool)))]))
        for t in terms:
            edges.append(("P", p, "T", t))
        paper_terms.append(terms)

    for a in range(cfg.authors):
        if not author_papers[a]:
            c = block(a, cfg.authors)
            papers_c = [p for p in range(cfg.papers) if block(p, cfg.papers) == c]
            p = papers_c[int(rng.integers(len(papers_c)))]
            edges.append(("A", a, "P", p))
            author_papers[a].append(p)

    term_dim = np.array(
        [t * cfg.feature_dim // cfg.terms for t in range(cfg.terms)]
    )
    feats = np.zeros((cfg.authors, cfg.feature_dim), dtype=np.float64)
    for a in range(cfg.authors):
        for p in author_papers[a]:
            for t in paper_terms[p]:
                feats[a, term_dim[t]] = 1.0
    if cfg.feature_noise > 0:
        flips = rng.random((cfg.authors, cfg.feature_dim)) < cfg.feature_noise
        feats = np.where(flips, 1.0 - feats, feats)

    labels = np.array([block(a, cfg.authors) for a in range(cfg.authors)], dtype=np.int64)
    ids = {
        "A": [f"a{i}" for i in range(cfg.authors)],
        "P": [f"p{i}" for i in range(cfg.papers)],
        "C": [f"c{i}" for i in range(cfg.venues)],
        "T": [f"t{i}" for i in range(cfg.terms)],
    }
    return _build_graph(
        ["A", "P", "C", "T"], ids, edges, {"A": feats}, "A", labels
    )


def _allocate(sizes: np.ndarray, total: int, ratio: float) -> np.ndarray:
    """Largest-remainder allocation of ``round(total * ratio)`` slots across
    classes, proportional to class sizes."""
    want = int(round(total * ratio))
    exact = sizes * ratio
    base = np.floor(exact).astype(int)
    rem = want - int(base.sum())
    if rem > 0:
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:rem]] += 1
    elif rem < 0:
        order = np.argsort(exact - base, kind="stable")
        take = 0
        for i in order:
            if take == -rem:
                break
            if base[i] > 0:
                base[i] -= 1
                take += 1
    return base


def split_labels(
    g: HeteroGraph, train_ratio: float, val_ratio: float = 0.0, seed: int = 0
) -> LabelSplit:
    """Stratified train/val/test split over the labeled target-type nodes.

    Per-class proportions match the ratios within one node and the split is
    deterministic given the seed.
    """
    if not (0 < train_ratio < 1) or val_ratio < 0 or train_ratio + val_ratio >= 1:
        raise ConfigError(
            f"invalid split ratios train={train_ratio} val={val_ratio}"
        )
    labeled = g.labeled_ids()
    labels = g.labels[labeled]
    classes = np.unique(labels)
    sizes = np.array([(labels == c).sum() for c in classes])
    n_train = _allocate(sizes, labeled.size, train_ratio)
    n_val = _allocate(sizes, labeled.size, val_ratio) if val_ratio > 0 else np.zeros_like(sizes)
    rng = RngStream(seed)
    train, val, test = [], [], []
    for ci, c in enumerate(classes):
        pool = labeled[labels == c]
        if n_train[ci] < 1 or (val_ratio > 0 and n_val[ci] < 1) or (
            n_train[ci] + n_val[ci] >= pool.size
        ):
            raise DataError(
                f"class {c} has {pool.size} nodes, fewer than the splits requested"
            )
        perm = pool[rng.permutation(pool.size)]
        train.extend(perm[: n_train[ci]])
        val.extend(perm[n_train[ci] : n_train[ci] + n_val[ci]])
        test.extend(perm[n_train[ci] + n_val[ci] :])
    return LabelSplit(
        train_ids=np.sort(np.array(train, dtype=np.int64)),
        val_ids=np.sort(np.array(val, dtype=np.int64)),
        test_ids=np.sort(np.array(test, dtype=np.int64)),
        train_ratio=train_ratio,
    )
