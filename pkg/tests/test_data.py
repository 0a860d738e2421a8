import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarmp.data import (DatasetError, KnowledgeGraph, build_edge_neighbors,
                        categorize_relations, corrupt_entities_filtered, edge_keys,
                        load_dataset, sample_negatives, write_dataset, write_vocab)

from conftest import DATA, have_dataset, toy_kg


def write_splits(path, train, valid="", test=""):
    path.mkdir(parents=True, exist_ok=True)
    (path / "train.txt").write_text(train)
    (path / "valid.txt").write_text(valid)
    (path / "test.txt").write_text(test)
    return path


def kg_from(triples, num_entities, num_relations=1):
    return KnowledgeGraph([f"e{i}" for i in range(num_entities)],
                          [f"r{i}" for i in range(num_relations)],
                          np.array(triples), np.zeros((0, 3)), np.zeros((0, 3)))


# ---------------------------------------------------------------- load_dataset

@pytest.mark.skipif(not have_dataset("umls"), reason="UMLS files not present")
def test_umls_counts():
    kg = load_dataset(DATA / "umls")
    assert kg.num_entities == 135
    assert kg.num_base_relations == 46
    assert kg.num_relations == 92
    assert (len(kg.train), len(kg.valid), len(kg.test)) == (5216, 652, 661)


def test_one_line_file(tmp_path):
    kg = load_dataset(write_splits(tmp_path, "a\tr\tb\n"))
    assert kg.num_entities == 2
    assert kg.num_base_relations == 1 and kg.num_relations == 2
    assert len(kg.train) == 1
    np.testing.assert_array_equal(kg.edges, [[0, 0, 1], [1, 1, 0]])
    assert kg.relation_name(1) == "r^-1"


def test_malformed_line_names_line_number(tmp_path):
    with pytest.raises(DatasetError, match="line 1"):
        load_dataset(write_splits(tmp_path, "a\tr\n"))


def test_missing_file_named(tmp_path):
    (tmp_path / "train.txt").write_text("a\tr\tb\n")
    with pytest.raises(DatasetError, match="valid.txt"):
        load_dataset(tmp_path)


def test_test_only_entity_rejected(tmp_path):
    with pytest.raises(DatasetError, match="'c'"):
        load_dataset(write_splits(tmp_path, "a\tr\tb\n", test="a\tr\tc\n"))


def test_ids_are_sorted_surface_forms(tmp_path):
    kg = load_dataset(write_splits(tmp_path, "z\tq\ty\ny\tp\tx\n"))
    assert kg.entities == ["x", "y", "z"]
    assert kg.relations == ["p", "q"]


def test_round_trip(tmp_path):
    kg = toy_kg(seed=4, num_entities=6, num_triples=12)
    write_dataset(kg, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    # surface forms e0..e5 sort the same way as their ids
    for s in ("train", "valid", "test"):
        np.testing.assert_array_equal(getattr(back, s), getattr(kg, s))


def test_vocab_dump(tmp_path):
    kg = toy_kg()
    write_vocab(kg, tmp_path)
    rel_lines = (tmp_path / "relation2id.tsv").read_text().splitlines()
    assert len(rel_lines) == kg.num_relations
    assert rel_lines[kg.num_base_relations] == "r0^-1\t3"
    assert len((tmp_path / "entity2id.tsv").read_text().splitlines()) == kg.num_entities


def test_all_true_is_union():
    kg = toy_kg()
    expect = {tuple(x) for s in (kg.train, kg.valid, kg.test) for x in s.tolist()}
    assert kg.all_true == expect


def test_head_query_maps_to_inverse():
    kg = toy_kg()
    q = kg.queries("test")
    n = len(kg.test)
    h, r, t = kg.test[0]
    assert tuple(q[0]) == (h, r, t)
    assert tuple(q[n]) == (t, r + kg.num_base_relations, h)


# ---------------------------------------------------------------- neighbourhoods

def test_path_graph_each_edge_one_neighbor():
    # a-b-c as a path; forward and inverse edges all share b
    kg = kg_from([[0, 0, 1], [1, 0, 2]], 3)
    full = [kg.edge_neighbors(e) for e in range(kg.num_edges)]
    # the inverse of an edge shares both endpoints; across triples only one
    fwd_only = [[n for n in nb if n < len(kg.train)] for nb in full[:2]]
    assert fwd_only == [[1], [0]]


def test_star_with_five_leaves():
    kg = kg_from([[0, 0, i] for i in range(1, 6)], 6)
    T = len(kg.train)
    for e in range(T):
        fwd = [n for n in kg.edge_neighbors(e) if n < T]
        assert len(fwd) == 4  # brute force: C(5,2) pairs, each edge in 4 of them


def test_star_neighbor_counts_vs_brute_force():
    kg = kg_from([[0, 0, i] for i in range(1, 6)], 6)
    E = kg.edges
    for e in range(kg.num_edges):
        brute = [f for f in range(kg.num_edges)
                 if f != e and {E[e, 0], E[e, 2]} & {E[f, 0], E[f, 2]}]
        assert kg.edge_neighbors(e).tolist() == brute
    # 5 triples -> 10 edges, all touch the hub
    assert all(len(kg.edge_neighbors(e)) == 9 for e in range(10))


def test_truncation_is_subset_and_seeded():
    kg = kg_from([[0, 0, i] for i in range(1, 6)], 6)
    nb = build_edge_neighbors(kg, max_neighbors=2, seed=3)
    assert nb.shape == (kg.num_edges, 2)
    for e in range(kg.num_edges):
        assert set(nb[e]) <= set(kg.edge_neighbors(e))
        assert len(set(nb[e])) == 2
    np.testing.assert_array_equal(nb, build_edge_neighbors(kg, 2, seed=3))


def test_untruncated_rows_are_full_lists():
    kg = toy_kg()
    nb = build_edge_neighbors(kg, max_neighbors=1000)
    for e in range(kg.num_edges):
        row = nb[e][nb[e] >= 0]
        np.testing.assert_array_equal(row, kg.edge_neighbors(e))


def test_max_neighbors_must_be_positive():
    with pytest.raises(ValueError):
        build_edge_neighbors(toy_kg(), 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), n=st.integers(3, 9))
def test_line_graph_symmetry_and_incidence(seed, n):
    kg = toy_kg(seed=seed, num_entities=n, num_triples=n + 3, valid=0, test=0)
    for e in range(kg.num_edges):
        for f in kg.edge_neighbors(e):
            assert e in kg.edge_neighbors(int(f))
    for v in range(kg.num_entities):
        inc = set(kg.incident_edges(v).tolist())
        ends = {e for e in range(kg.num_edges) if v in (kg.edges[e, 0], kg.edges[e, 2])}
        assert inc == ends
        assert inc or v in kg.isolated


# ---------------------------------------------------------------- negatives

def test_two_entity_tail_corruption():
    kg = kg_from([[0, 0, 1]], 2)
    batch = sample_negatives(kg, [[0, 0, 1]], 1, "tail", seed=0)
    np.testing.assert_array_equal(batch.corrupted, [[[0, 0, 0]]])


@pytest.mark.skipif(not have_dataset("umls"), reason="UMLS files not present")
def test_umls_negatives_contract():
    kg = load_dataset(DATA / "umls")
    pos = kg.train[:200]
    for direction, slot in (("tail", 2), ("head", 0)):
        batch = sample_negatives(kg, pos, 5, direction, seed=1)
        assert batch.corrupted.shape == (200, 5, 3)
        same = batch.corrupted == pos[:, None, :]
        assert not same.all(axis=2).any()
        others = [i for i in range(3) if i != slot]
        assert same[:, :, others].all()


def test_negatives_deterministic():
    kg = toy_kg()
    a = sample_negatives(kg, kg.train, 4, "tail", seed=9)
    b = sample_negatives(kg, kg.train, 4, "tail", seed=9)
    np.testing.assert_array_equal(a.corrupted, b.corrupted)


def test_single_entity_cannot_corrupt():
    kg = KnowledgeGraph(["a"], ["r"], np.array([[0, 0, 0]]), np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(DatasetError):
        sample_negatives(kg, kg.train, 1)


def test_negatives_uniform_over_other_entities():
    kg = kg_from([[0, 0, 1]], 5)
    batch = sample_negatives(kg, [[0, 0, 2]], 40_000, "tail", seed=0)
    counts = np.bincount(batch.corrupted[0, :, 2], minlength=5)
    assert counts[2] == 0
    assert np.all(np.abs(counts[[0, 1, 3, 4]] / 40_000 - 0.25) < 0.01)


def filtered(kg, queries, n, seed=0):
    keys = edge_keys(kg.edges, kg.num_relations, kg.num_entities)
    return corrupt_entities_filtered(np.asarray(queries), n, kg.num_entities, kg.num_relations,
                                     keys, np.random.default_rng(seed))


def test_filtered_negatives_skip_known_triples():
    # (0, r, 1) and (0, r, 3) are known; corrupting (0, r, 1) leaves 0, 2 and 4
    kg = kg_from([[0, 0, 1], [0, 0, 3]], 5)
    counts = np.bincount(filtered(kg, [[0, 0, 1]], 30_000)[0], minlength=5)
    assert counts[1] == counts[3] == 0
    assert np.all(np.abs(counts[[0, 2, 4]] / 30_000 - 1 / 3) < 0.01)


def test_filtered_negatives_respect_inverse_edges():
    kg = kg_from([[0, 0, 1], [2, 0, 1]], 4)
    # inverse query (1, r^-1, 0): entity 2 is a known head of (?, r, 1)
    negs = filtered(kg, [[1, 1, 0]], 2000)
    assert set(negs[0].tolist()) == {1, 3}


def test_filtered_negatives_single_admissible_entity():
    kg = kg_from([[0, 0, 1], [0, 0, 2]], 3)
    assert filtered(kg, [[0, 0, 1]], 50)[0].tolist() == [0] * 50


def test_filtered_negatives_fall_back_when_all_known():
    kg = kg_from([[0, 0, 0], [0, 0, 1], [0, 0, 2]], 3)
    negs = filtered(kg, [[0, 0, 1]], 200)
    assert set(negs[0].tolist()) == {0, 2}


@pytest.mark.skipif(not have_dataset("umls"), reason="UMLS files not present")
def test_filtered_negatives_on_umls():
    kg = load_dataset(DATA / "umls")
    known = {tuple(x) for x in kg.edges.tolist()}
    q = kg.edges[::7]
    negs = filtered(kg, q, 16, seed=3)
    assert not any((h, r, int(t)) in known for (h, r, _), row in zip(q.tolist(), negs) for t in row)
    np.testing.assert_array_equal(negs, filtered(kg, q, 16, seed=3))


# ---------------------------------------------------------------- categories

def test_single_pair_is_one_to_one():
    assert categorize_relations(kg_from([[0, 0, 1]], 2)) == {0: "1-1"}


def test_one_head_ten_tails_is_one_to_many():
    kg = kg_from([[0, 0, i] for i in range(1, 11)], 11)
    assert categorize_relations(kg) == {0: "1-N"}


def test_categories_all_four():
    triples = ([[0, 0, 1]]
               + [[2, 1, i] for i in range(3, 6)]
               + [[i, 2, 6] for i in range(7, 10)]
               + [[h, 3, t] for h, t in itertools.product(range(10, 12), range(12, 14))])
    assert categorize_relations(kg_from(triples, 14, 4)) == {0: "1-1", 1: "1-N", 2: "N-1", 3: "N-N"}
