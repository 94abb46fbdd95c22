import numpy as np
import pytest
from helpers import make_graph, random_hin
from hypothesis import given, settings
from hypothesis import strategies as st

from hae.errors import ConfigError, NumericError
from hae.rng import RngStream
from hae.semantics import (
    CommutingMatrix,
    SemanticCache,
    binary_adjacency,
    brute_force_instance_count,
    brute_force_instance_row,
    commuting_matrix,
    parse_structure,
    semsim_adjacency,
    structure_similarity,
    sym_normalize,
)

STRUCTURES = ["A-P-C-P-A", "A-P-T-P-A", "A-P-(A|C)-P-A", "A-P-(C|T)-P-A"]


class TestParser:
    def test_meta_path(self):
        s = parse_structure("A-P-C-P-A", "APCT")
        assert not s.is_meta_graph
        assert len(s.elements) == 5
        assert s.source_type == s.sink_type == "A"
        assert s.canonical() == "A-P-C-P-A"

    def test_meta_graph(self):
        s = parse_structure("A-P-(A|C)-P-A", "APCT")
        assert s.is_meta_graph
        groups = [e for e in s.elements if hasattr(e, "branches")]
        assert len(groups) == 1 and groups[0].branches == (("A",), ("C",))
        assert s.canonical() == "A-P-(A|C)-P-A"

    def test_multi_step_branch_roundtrip(self):
        text = "A-P-(C-P-A|T)-P-A"
        assert parse_structure(text, "APCT").canonical() == text

    @pytest.mark.parametrize(
        "bad",
        [
            "A-P-(C)-P-A",      # single-branch group
            "A-P-C-P",          # endpoint mismatch
            "(A|C)-P-A",        # group at the start
            "A-P-(A|C)",        # group at the end
            "A-P-(A|(C|T))-P-A",  # nested group
            "A--P-A",           # empty item
            "A-P-X-P-A",        # unknown type
            "A",                # single step
        ],
    )
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            parse_structure(bad, "APCT")

    @given(st.sampled_from(STRUCTURES + ["A-P-A", "A-P-C-P-(A|T)-P-A"]))
    def test_roundtrip(self, text):
        s = parse_structure(text, "APCT")
        assert parse_structure(s.canonical(), "APCT") == s


class TestCommuting:
    def test_paper_toy(self):
        # a1 -> {p1, p2}, a2 -> {p2}; counts of A-P-A by hand enumeration
        g = make_graph({("A", "P"): [[1, 1], [0, 1]]})
        cm = commuting_matrix(g, parse_structure("A-P-A", "AP"))
        assert cm.counts.tolist() == [[2, 1], [1, 1]]

    def test_isolated_author_zero_row(self):
        g = make_graph({("A", "P"): [[1], [0]]})
        cm = commuting_matrix(g, parse_structure("A-P-A", "AP"))
        assert cm.counts[1].tolist() == [0, 0]
        assert cm.counts[:, 1].tolist() == [0, 0]

    def test_metagraph_hadamard_merge(self):
        rng = RngStream(40)
        g = random_hin(rng, max_nodes=12, density=0.4)
        w_ap = g.biadjacency[("A", "P")].toarray().astype(np.int64)
        w_pc = g.biadjacency[("P", "C")].toarray().astype(np.int64)
        expected = w_ap @ ((w_ap.T @ w_ap) * (w_pc @ w_pc.T)) @ w_ap.T
        cm = commuting_matrix(g, parse_structure("A-P-(A|C)-P-A", "APCT"))
        np.testing.assert_array_equal(cm.counts, expected)

    def test_missing_relation(self):
        g = make_graph({("A", "P"): [[1]], ("C", "T"): [[1]]})
        with pytest.raises(Exception, match="relation absent"):
            commuting_matrix(g, parse_structure("A-P-C-P-A", "APC"))

    def test_overflow_reported(self):
        n = 60
        g = make_graph({("A", "P"): np.ones((n, n), dtype=np.int8)})
        long_chain = "-".join(["A", "P"] * 12 + ["A"])
        with pytest.raises(NumericError, match="overflow"):
            commuting_matrix(g, parse_structure(long_chain, "AP"))

    def test_order_independence(self):
        rng = RngStream(41)
        g = random_hin(rng, max_nodes=20, density=0.3)
        for text in STRUCTURES:
            s = parse_structure(text, "APCT")
            auto = commuting_matrix(g, s, order="auto").counts
            left = commuting_matrix(g, s, order="left").counts
            np.testing.assert_array_equal(auto, left)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_oracle_equivalence_small(self, seed):
        g = random_hin(RngStream(seed), max_nodes=10, density=0.3)
        for text in STRUCTURES:
            s = parse_structure(text, "APCT")
            cm = commuting_matrix(g, s)
            n = g.node_counts["A"]
            for i in range(n):
                row = brute_force_instance_row(g, s, i)
                expected = np.zeros(n, dtype=np.int64)
                for j, v in row.items():
                    expected[j] = v
                np.testing.assert_array_equal(cm.counts[i], expected)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=10, deadline=None)
    def test_palindromic_counts_symmetric(self, seed):
        g = random_hin(RngStream(seed), max_nodes=15, density=0.3)
        for text in STRUCTURES:
            cm = commuting_matrix(g, parse_structure(text, "APCT"))
            np.testing.assert_array_equal(cm.counts, cm.counts.T)

    def test_oracle_spot_values(self):
        g = make_graph({("A", "P"): [[1, 1], [0, 1]]})
        s = parse_structure("A-P-A", "AP")
        assert brute_force_instance_count(g, s, 0, 0) == 2
        assert brute_force_instance_count(g, s, 0, 1) == 1

    def test_metagraph_single_instance_fixture(self):
        # exactly one author pair shares both a co-author and a venue
        w_ap = np.zeros((3, 4), dtype=np.int8)
        # a0 and a2 both co-author with a1 (papers p0, p1) and share venue c0
        w_ap[0, 0] = w_ap[1, 0] = 1
        w_ap[2, 1] = w_ap[1, 1] = 1
        w_ap[0, 2] = 1  # extra solo papers
        w_ap[2, 3] = 1
        w_pc = np.zeros((4, 2), dtype=np.int8)
        w_pc[0, 0] = w_pc[1, 0] = 1
        w_pc[2, 1] = w_pc[3, 1] = 1
        g = make_graph({("A", "P"): w_ap, ("P", "C"): w_pc})
        s = parse_structure("A-P-(A|C)-P-A", "APC")
        assert brute_force_instance_count(g, s, 0, 2) == 1
        assert commuting_matrix(g, s).counts[0, 2] == 1


class TestSimilarity:
    def test_hand_fraction(self):
        c = CommutingMatrix(
            structure=parse_structure("A-P-A", "AP"),
            counts=np.array([[2, 1], [1, 1]], dtype=np.int64),
        )
        s = structure_similarity(c)
        assert s.values[0, 1] == pytest.approx(2 / 3)
        assert s.values[0, 0] == 1.0 and s.values[1, 1] == 1.0

    def test_zero_denominator_convention(self):
        c = CommutingMatrix(
            structure=parse_structure("A-P-A", "AP"),
            counts=np.zeros((3, 3), dtype=np.int64),
        )
        s = structure_similarity(c)
        np.testing.assert_array_equal(s.values, np.eye(3))

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_range_and_diagonal(self, seed):
        g = random_hin(RngStream(seed), max_nodes=20, density=0.25)
        for text in STRUCTURES:
            s = structure_similarity(commuting_matrix(g, parse_structure(text, "APCT")))
            assert np.all(s.values >= 0.0) and np.all(s.values <= 1.0)
            np.testing.assert_array_equal(np.diag(s.values), 1.0)


class TestSemsimAdjacency:
    def _sims(self, seed=50):
        g = random_hin(RngStream(seed), max_nodes=15, density=0.3)
        cache = SemanticCache(g)
        return [cache.similarity(t) for t in STRUCTURES]

    def test_identity_mixture(self):
        sims = self._sims()
        a = semsim_adjacency(sims[:1], np.array([1.0]))
        np.testing.assert_array_equal(a, sims[0].values)

    def test_hand_mixture(self):
        sims = self._sims()
        half = semsim_adjacency(sims[:2], np.array([0.5, 0.5]))
        expected = 0.5 * sims[0].values + 0.5 * sims[1].values
        np.testing.assert_allclose(half, expected)

    def test_unit_diagonal(self):
        sims = self._sims()
        a = semsim_adjacency(sims, np.array([0.1, 0.2, 0.3, 0.4]))
        np.testing.assert_allclose(np.diag(a), 1.0, atol=1e-12)

    def test_affine_in_omega(self):
        sims = self._sims()
        w1 = np.array([0.7, 0.1, 0.1, 0.1])
        w2 = np.array([0.25, 0.25, 0.25, 0.25])
        lam = 0.3
        mixed = semsim_adjacency(sims, lam * w1 + (1 - lam) * w2)
        expected = lam * semsim_adjacency(sims, w1) + (1 - lam) * semsim_adjacency(sims, w2)
        np.testing.assert_allclose(mixed, expected, atol=1e-12)

    def test_rejects_off_simplex(self):
        sims = self._sims()
        with pytest.raises(ConfigError):
            semsim_adjacency(sims, np.array([0.5, 0.5, 0.5, 0.5]))
        with pytest.raises(ConfigError):
            semsim_adjacency(sims, np.array([1.0]))


class TestBinaryAdjacency:
    def _counts(self, arr):
        return CommutingMatrix(
            structure=parse_structure("A-P-A", "AP"),
            counts=np.asarray(arr, dtype=np.int64),
        )

    def test_single_offdiagonal(self):
        counts = np.zeros((4, 4), dtype=np.int64)
        counts[0, 3] = 5
        adj = binary_adjacency([self._counts(counts)])
        assert adj.neighbors[0].tolist() == [0, 3]

    def test_all_zero_is_identity(self):
        adj = binary_adjacency([self._counts(np.zeros((3, 3)))])
        np.testing.assert_array_equal(adj.mask, np.eye(3, dtype=np.int8))

    def test_union_of_patterns(self):
        c1 = np.zeros((3, 3), dtype=np.int64)
        c2 = np.zeros((3, 3), dtype=np.int64)
        c1[0, 1] = 1
        c2[1, 2] = 7
        adj = binary_adjacency([self._counts(c1), self._counts(c2)])
        assert adj.mask[0, 1] == 1 and adj.mask[1, 2] == 1

    def test_monotone_under_more_structures(self):
        rng = RngStream(60)
        g = random_hin(rng, max_nodes=15, density=0.2)
        cache = SemanticCache(g)
        counts = [cache.commuting(t) for t in STRUCTURES]
        prev = binary_adjacency(counts[:1]).mask
        for m in range(2, len(counts) + 1):
            cur = binary_adjacency(counts[:m]).mask
            assert np.all(cur >= prev)
            prev = cur


class TestSymNormalize:
    def test_identity(self):
        np.testing.assert_array_equal(sym_normalize(np.eye(3)), np.eye(3))

    def test_hand_case(self):
        out = sym_normalize(np.array([[1.0, 1.0], [1.0, 1.0]]))
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]])

    def test_symmetry_preserved(self):
        rng = RngStream(61)
        a = rng.random((6, 6))
        a = (a + a.T) / 2 + np.eye(6)
        out = sym_normalize(a)
        np.testing.assert_allclose(out, out.T, atol=1e-15)

    def test_zero_row_reported(self):
        with pytest.raises(NumericError, match="zero row sum"):
            sym_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestCache:
    def test_cached_objects_reused(self):
        g = random_hin(RngStream(62), max_nodes=10, density=0.3)
        cache = SemanticCache(g)
        first = cache.similarity("A-P-C-P-A")
        again = cache.similarity(parse_structure("A-P-C-P-A", "APCT"))
        assert first is again
