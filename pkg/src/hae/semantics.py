"""Semantic structures over a heterogeneous graph: parsing, commuting
matrices, normalized similarities, and the binary neighborhood adjacency.

A structure spec is a chain of type names with optional parallel groups,
e.g. ``A-P-C-P-A`` (a meta-path) or ``A-P-(A|C)-P-A`` (a meta-graph whose
two branches share the flanking P nodes). A chain compiles to the product
of biadjacency matrices along it; a parallel group compiles to the Hadamard
product of its branch chains, spliced into the surrounding product. All
count arithmetic is integer-exact with explicit overflow checks.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericError
from .hin import HeteroGraph, typed_adjacency

_I64_MAX = 2**63 - 1
_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[()|\-]|\S")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class Step:
    type_name: str


@dataclass(frozen=True)
class ParallelGroup:
    branches: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class SemanticStructure:
    """Parsed meta-path or meta-graph (single split-merge groups only)."""

    elements: tuple[Step | ParallelGroup, ...]

    @property
    def source_type(self) -> str:
        return self.elements[0].type_name

    @property
    def sink_type(self) -> str:
        return self.elements[-1].type_name

    @property
    def is_meta_graph(self) -> bool:
        return any(isinstance(e, ParallelGroup) for e in self.elements)

    def canonical(self) -> str:
        parts = []
        for e in self.elements:
            if isinstance(e, Step):
                parts.append(e.type_name)
            else:
                parts.append("(" + "|".join("-".join(b) for b in e.branches) + ")")
        return "-".join(parts)

    def type_pairs(self) -> list[tuple[str, str]]:
        """Every (src, dst) type pair the structure traverses."""
        pairs = []
        for left, mid, right in _segments(self.elements):
            if mid is None:
                pairs.append((left, right))
            else:
                for branch in mid:
                    seq = (left, *branch, right)
                    pairs.extend(zip(seq, seq[1:]))
        return pairs


def _segments(
    elements: Sequence[Step | ParallelGroup],
) -> list[tuple[str, tuple[tuple[str, ...], ...] | None, str]]:
    """Decompose into (left type, branches-or-None, right type) segments."""
    segs = []
    i = 0
    while i < len(elements) - 1:
        left = elements[i].type_name
        nxt = elements[i + 1]
        if isinstance(nxt, Step):
            segs.append((left, None, nxt.type_name))
            i += 1
        else:
            right = elements[i + 2].type_name
            segs.append((left, nxt.branches, right))
            i += 2
    return segs


def parse_structure(
    text: str, known_types: Iterable[str] | None = None
) -> SemanticStructure:
    """Parse a structure spec; round-trips through ``canonical()``.

    Grammar: ``chain := item ('-' item)*``,
    ``item := TYPE | '(' chain ('|' chain)+ ')'``, with group branches
    restricted to plain type chains (no nested groups).
    """
    tokens = _TOKEN.findall(text)
    if "".join(tokens) != text.replace(" ", ""):
        raise ConfigError(f"cannot tokenize structure spec {text!r}")
    known = set(known_types) if known_types is not None else None

    def is_name(tok: str) -> bool:
        return _NAME.fullmatch(tok) is not None

    def check_name(tok: str) -> str:
        if not is_name(tok):
            raise ConfigError(f"{text!r}: expected a type name, got {tok!r}")
        if known is not None and tok not in known:
            raise ConfigError(f"{text!r}: unknown type name {tok!r}")
        return tok

    pos = 0

    def peek() -> str | None:
        return tokens[pos] if pos < len(tokens) else None

    def take() -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise ConfigError(f"{text!r}: unexpected end of spec")
        tok = tokens[pos]
        pos += 1
        return tok

    def parse_branch() -> tuple[str, ...]:
        names = [check_name(take())]
        while peek() == "-":
            take()
            if peek() == "(":
                raise ConfigError(f"{text!r}: nested groups are not supported")
            names.append(check_name(take()))
        return tuple(names)

    elements: list[Step | ParallelGroup] = []
    while True:
        tok = take()
        if tok == "(":
            branches = [parse_branch()]
            while peek() == "|":
                take()
                branches.append(parse_branch())
            if take() != ")":
                raise ConfigError(f"{text!r}: unclosed group")
            if len(branches) < 2:
                raise ConfigError(f"{text!r}: group must have >= 2 branches")
            if not elements or not isinstance(elements[-1], Step):
                raise ConfigError(f"{text!r}: group must be flanked by type names")
            elements.append(ParallelGroup(tuple(branches)))
        else:
            elements.append(Step(check_name(tok)))
        if peek() is None:
            break
        if take() != "-":
            raise ConfigError(f"{text!r}: expected '-' at token {pos - 1}")

    if not isinstance(elements[0], Step) or not isinstance(elements[-1], Step):
        raise ConfigError(f"{text!r}: structure must start and end with a type name")
    for a, b in zip(elements, elements[1:]):
        if isinstance(a, ParallelGroup) and isinstance(b, ParallelGroup):
            raise ConfigError(f"{text!r}: adjacent groups are not supported")
    if elements[0].type_name != elements[-1].type_name:
        raise ConfigError(
            f"{text!r}: structure must begin and end with the same type "
            f"({elements[0].type_name} vs {elements[-1].type_name})"
        )
    if len(elements) < 2:
        raise ConfigError(f"{text!r}: structure needs at least two steps")
    return SemanticStructure(tuple(elements))


@dataclass(frozen=True)
class CommutingMatrix:
    structure: SemanticStructure
    counts: np.ndarray  # dense int64, (N, N) over structure source-type nodes


@dataclass(frozen=True)
class SimilarityMatrix:
    structure: SemanticStructure
    values: np.ndarray  # dense float64 in [0, 1], unit diagonal


@dataclass(frozen=True)
class BinaryAdjacency:
    mask: np.ndarray  # dense 0/1 int8, unit diagonal
    neighbors: list[np.ndarray]  # sorted ascending, includes self


def _to_int64(mat: sp.spmatrix) -> sp.csr_matrix:
    return mat.tocsr().astype(np.int64)


def _exact_object_matmul(a: sp.csr_matrix, b: sp.csr_matrix) -> sp.csr_matrix:
    da = a.toarray().astype(object)
    db = b.toarray().astype(object)
    prod = da.dot(db)
    mx = max((int(v) for v in prod.flat), default=0)
    if mx > _I64_MAX:
        raise NumericError(
            f"commuting-matrix count overflow: entry {mx} exceeds 64-bit range"
        )
    return sp.csr_matrix(prod.astype(np.int64))


def _checked_matmul(a: sp.csr_matrix, b: sp.csr_matrix) -> sp.csr_matrix:
    if a.nnz == 0 or b.nnz == 0:
        return sp.csr_matrix((a.shape[0], b.shape[1]), dtype=np.int64)
    bound = int(a.data.max()) * int(b.data.max()) * a.shape[1]
    if bound <= _I64_MAX:
        return (a @ b).tocsr()
    return _exact_object_matmul(a, b)


def _checked_hadamard(a: sp.csr_matrix, b: sp.csr_matrix) -> sp.csr_matrix:
    if a.nnz and b.nnz:
        bound = int(a.data.max()) * int(b.data.max())
        if bound > _I64_MAX:
            raise NumericError(
                "commuting-matrix count overflow in Hadamard merge"
            )
    return a.multiply(b).tocsr()


def _chain_product(mats: list[sp.csr_matrix], order: str) -> sp.csr_matrix:
    """Multiply a chain of sparse matrices.

    ``order="auto"`` picks the association by interval DP on estimated
    sparse-multiply work; ``order="left"`` forces left-to-right. Both give
    identical integer results, only speed differs.
    """
    if len(mats) == 1:
        return mats[0]
    if order == "left":
        out = mats[0]
        for m in mats[1:]:
            out = _checked_matmul(out, m)
        return out
    n = len(mats)
    nnz = [[0.0] * n for _ in range(n)]
    cost = [[0.0] * n for _ in range(n)]
    split = [[0] * n for _ in range(n)]
    for i, m in enumerate(mats):
        nnz[i][i] = float(max(m.nnz, 1))
    for span in range(1, n):
        for i in range(n - span):
            j = i + span
            best = None
            for k in range(i, j):
                inner = mats[k].shape[1]
                work = nnz[i][k] * nnz[k][j] / max(inner, 1)
                total = cost[i][k] + cost[k][j] + work
                if best is None or total < best:
                    best = total
                    split[i][j] = k
                    full = mats[i].shape[0] * mats[j].shape[1]
                    nnz[i][j] = min(float(full), work)
            cost[i][j] = best

    def build(i: int, j: int) -> sp.csr_matrix:
        if i == j:
            return mats[i]
        k = split[i][j]
        return _checked_matmul(build(i, k), build(k + 1, j))

    return build(0, n - 1)


def _segment_matrix(
    g: HeteroGraph,
    left: str,
    branches: tuple[tuple[str, ...], ...] | None,
    right: str,
    order: str,
) -> sp.csr_matrix:
    if branches is None:
        return _to_int64(typed_adjacency(g, left, right))
    merged = None
    for branch in branches:
        seq = (left, *branch, right)
        mats = [_to_int64(typed_adjacency(g, a, b)) for a, b in zip(seq, seq[1:])]
        prod = _chain_product(mats, order)
        merged = prod if merged is None else _checked_hadamard(merged, prod)
    return merged


def commuting_matrix(
    g: HeteroGraph, s: SemanticStructure, order: str = "auto"
) -> CommutingMatrix:
    """Instance counts of ``s`` between every pair of source-type nodes.

    counts(i, j) is the exact number of structure instances from node i to
    node j; branches of a parallel group share their flanking nodes and
    combine by Hadamard product.
    """
    segs = [
        _segment_matrix(g, left, mid, right, order)
        for left, mid, right in _segments(s.elements)
    ]
    product = _chain_product(segs, order)
    counts = np.asarray(product.todense(), dtype=np.int64)
    return CommutingMatrix(structure=s, counts=counts)


def structure_similarity(c: CommutingMatrix) -> SimilarityMatrix:
    """Per-structure normalized similarity
    ``S(i, j) = 2 * counts(i, j) / (counts(i, i) + counts(j, j))``.

    The diagonal is defined as 1 even for nodes with zero self-counts, and
    off-diagonal entries with a zero denominator are 0.
    """
    counts = c.counts.astype(np.float64)
    diag = np.diag(counts)
    denom = diag[:, None] + diag[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(denom > 0, 2.0 * counts / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(structure=c.structure, values=values)


def semsim_adjacency(
    sims: Sequence[SimilarityMatrix], omega: np.ndarray
) -> np.ndarray:
    """Weighted mixture ``A = sum_m omega_m * S_m`` for simplex weights.

    A has unit diagonal and entries in [0, 1] whenever every S_m does.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 1 or len(sims) != omega.size:
        raise ConfigError(
            f"omega length {omega.size} does not match {len(sims)} similarity matrices"
        )
    if np.any(omega < 0) or abs(omega.sum() - 1.0) > 1e-9:
        raise ConfigError("omega must be non-negative and sum to 1 within 1e-9")
    shapes = {s.values.shape for s in sims}
    if len(shapes) != 1:
        raise ConfigError(f"similarity matrices disagree on shape: {shapes}")
    out = np.zeros(next(iter(shapes)), dtype=np.float64)
    for w, s in zip(omega, sims):
        out += w * s.values
    return out


def binary_adjacency(cs: Sequence[CommutingMatrix]) -> BinaryAdjacency:
    """Union neighborhood mask: 1 iff any structure has >= 1 instance between
    the pair, plus forced self-loops."""
    shapes = {c.counts.shape for c in cs}
    if len(shapes) != 1:
        raise ConfigError(f"commuting matrices disagree on shape: {shapes}")
    shape = next(iter(shapes))
    mask = np.zeros(shape, dtype=np.int8)
    for c in cs:
        mask |= (c.counts > 0).astype(np.int8)
    np.fill_diagonal(mask, 1)
    neighbors = [np.flatnonzero(row) for row in mask]
    return BinaryAdjacency(mask=mask, neighbors=neighbors)


def sym_normalize(a: np.ndarray) -> np.ndarray:
    """Two-sided degree normalization ``D^{-1/2} A D^{-1/2}``."""
    a = np.asarray(a, dtype=np.float64)
    d = a.sum(axis=1)
    if np.any(d <= 0):
        raise NumericError(
            f"zero row sum at rows {np.flatnonzero(d <= 0).tolist()[:5]}"
        )
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def _adjacency_lists(g: HeteroGraph) -> dict[tuple[str, str], list[np.ndarray]]:
    adj: dict[tuple[str, str], list[np.ndarray]] = {}
    for key, mat in g.biadjacency.items():
        csr = mat.tocsr()
        adj[key] = [
            csr.indices[csr.indptr[r] : csr.indptr[r + 1]]
            for r in range(csr.shape[0])
        ]
    return adj


def brute_force_instance_row(
    g: HeteroGraph, s: SemanticStructure, i: int
) -> dict[int, int]:
    """Exact instance counts from source node ``i`` to every sink node, by
    enumeration over adjacency lists (test oracle, exponential in length)."""
    adj = _adjacency_lists(g)

    def branch_counts(u: int, seq: tuple[str, ...]) -> dict[int, int]:
        out: dict[int, int] = defaultdict(int)

        def rec(node: int, k: int) -> None:
            if k == len(seq) - 1:
                out[node] += 1
                return
            lists = adj.get((seq[k], seq[k + 1]))
            if lists is None:
                return
            for w in lists[node]:
                rec(int(w), k + 1)

        rec(u, 0)
        return out

    frontier: dict[int, int] = {i: 1}
    for left, branches, right in _segments(s.elements):
        nxt: dict[int, int] = defaultdict(int)
        for u, c in frontier.items():
            if branches is None:
                for v, m in branch_counts(u, (left, right)).items():
                    nxt[v] += c * m
            else:
                per_branch = [branch_counts(u, (left, *b, right)) for b in branches]
                common = set(per_branch[0])
                for d in per_branch[1:]:
                    common &= set(d)
                for v in common:
                    prod = 1
                    for d in per_branch:
                        prod *= d[v]
                    nxt[v] += c * prod
        frontier = dict(nxt)
        if not frontier:
            break
    return frontier


def brute_force_instance_count(
    g: HeteroGraph, s: SemanticStructure, i: int, j: int
) -> int:
    return brute_force_instance_row(g, s, i).get(j, 0)


class SemanticCache:
    """Per-graph cache of commuting and similarity matrices, keyed by the
    canonical structure string (omega changes every step, these never do)."""

    def __init__(self, g: HeteroGraph):
        self.graph = g
        self._counts: dict[str, CommutingMatrix] = {}
        self._sims: dict[str, SimilarityMatrix] = {}

    def _resolve(self, s: SemanticStructure | str) -> SemanticStructure:
        if isinstance(s, str):
            return parse_structure(s, self.graph.node_types)
        return s

    def commuting(self, s: SemanticStructure | str) -> CommutingMatrix:
        s = self._resolve(s)
        key = s.canonical()
        if key not in self._counts:
            self._counts[key] = commuting_matrix(self.graph, s)
        return self._counts[key]

    def similarity(self, s: SemanticStructure | str) -> SimilarityMatrix:
        s = self._resolve(s)
        key = s.canonical()
        if key not in self._sims:
            self._sims[key] = structure_similarity(self.commuting(s))
        return self._sims[key]
