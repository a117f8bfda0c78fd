import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grassp.graph import (
    DatasetSplit,
    GraphValidationError,
    TemporalGraph,
    aggregate_contacts,
    all_dyads,
    build_event_sequence,
    load_graph,
    save_graph,
    split_dataset,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_single_row(tmp_path):
    g = load_graph(_write(tmp_path / "g.csv", "i,j,t_start,t_end\n0,1,0.2,0.5\n"), 2, 1.0)
    assert g.records() == [(0, 1, 0.2, 0.5)]


def test_load_overlap_after_normalisation(tmp_path):
    path = _write(tmp_path / "g.csv", "i,j,t_start,t_end\n0,1,0.2,0.5\n1,0,0.4,0.6\n")
    with pytest.raises(GraphValidationError, match=r"\(0, 1\)"):
        load_graph(path, 2, 1.0)


def test_load_empty(tmp_path):
    g = load_graph(_write(tmp_path / "g.csv", "i,j,t_start,t_end\n"), 3, 1.0)
    assert g.num_intervals == 0 and g.num_nodes == 3


@pytest.mark.parametrize("row", ["0,1,0.5,0.5", "0,1,0.6,0.5", "0,3,0.1,0.2", "1,1,0.1,0.2",
                                 "0,1,-0.1,0.2", "0,1,0.1,1.5"])
def test_load_rejects_invalid(tmp_path, row):
    with pytest.raises(GraphValidationError):
        load_graph(_write(tmp_path / "g.csv", f"i,j,t_start,t_end\n{row}\n"), 3, 1.0)


def test_load_rejects_bad_header(tmp_path):
    with pytest.raises(GraphValidationError, match="header"):
        load_graph(_write(tmp_path / "g.csv", "a,b,c,d\n0,1,0.1,0.2\n"), 2, 1.0)


def test_load_rescale(tmp_path):
    path = _write(tmp_path / "g.csv", "i,j,t_start,t_end\n0,1,10,20\n0,2,15,30\n")
    g = load_graph(path, 3, 1.0, rescale=True)
    np.testing.assert_allclose(g.dyad_intervals(0, 2), [[0.25, 1.0]])
    assert g.horizon == 1.0


def test_touching_intervals_merge(caplog):
    g = TemporalGraph.from_records(2, 1.0, [(0, 1, 0.1, 0.3), (1, 0, 0.3, 0.4)])
    np.testing.assert_array_equal(g.dyad_intervals(0, 1), [[0.1, 0.4]])
    with pytest.raises(GraphValidationError):
        TemporalGraph.from_records(2, 1.0, [(0, 1, 0.1, 0.3), (0, 1, 0.3, 0.4)],
                                   merge_touching=False)


def test_intervals_read_only():
    g = TemporalGraph.from_records(2, 1.0, [(0, 1, 0.1, 0.3)])
    with pytest.raises(ValueError):
        g.intervals[(0, 1)][0, 0] = 0.0
    with pytest.raises(TypeError):
        g.intervals[(0, 1)] = np.zeros((1, 2))


def test_save_load_round_trip(tmp_path):
    g = TemporalGraph.from_records(4, 2.0, [(2, 3, 0.1, 0.7), (0, 1, 1 / 3, 2.0), (0, 1, 0.0, 0.2)])
    save_graph(g, tmp_path / "a.csv")
    g2 = load_graph(tmp_path / "a.csv", 4, 2.0)
    assert g2 == g
    save_graph(g2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("times, expect", [
    ([0, 30], [[0, 50]]),
    ([0, 200], [[0, 20], [200, 220]]),
    ([7], [[7, 27]]),
])
def test_aggregate_contacts_examples(times, expect):
    g = aggregate_contacts([(0, 1, t) for t in times], 20, 120, num_nodes=2, horizon=300)
    np.testing.assert_array_equal(g.dyad_intervals(0, 1), expect)


def test_aggregate_contacts_errors():
    with pytest.raises(GraphValidationError):
        aggregate_contacts([(0, 1, -1.0)], num_nodes=2, horizon=100)
    with pytest.raises(GraphValidationError):
        aggregate_contacts([(0, 1, 1.0)], contact_len=0)
    with pytest.raises(GraphValidationError):
        aggregate_contacts([(0, 1, 1.0)], contact_len=20, merge_window=10)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3),
                          st.floats(0, 1000, allow_nan=False)), max_size=40),
       st.floats(1, 50), st.floats(0, 100))
def test_aggregate_contacts_always_valid(rows, contact_len, extra):
    rows = [(i, j, t) for i, j, t in rows if i != j]
    g = aggregate_contacts(rows, contact_len, contact_len + extra, num_nodes=4, horizon=1100)
    for arr in g.intervals.values():
        assert np.all(arr[:, 1] > arr[:, 0])
        assert np.all(arr[1:, 0] > arr[:-1, 1])


@pytest.mark.parametrize("intervals, events, states", [
    ([(0.2, 0.5)], [0, 0.2, 0.5], [-1, 1, -1]),
    ([(0.0, 0.3)], [0, 0.3], [1, -1]),
    ([], [0], [-1]),
    ([(0.5, 1.0)], [0, 0.5], [-1, 1]),
])
def test_event_sequence_examples(intervals, events, states):
    g = TemporalGraph.from_records(2, 1.0, [(0, 1, a, b) for a, b in intervals])
    seq = build_event_sequence(g, (0, 1))
    np.testing.assert_array_equal(seq.events, events)
    np.testing.assert_array_equal(seq.states, states)


@st.composite
def interval_lists(draw):
    cuts = sorted(set(draw(st.lists(st.floats(0, 1, allow_nan=False), max_size=12))))
    if len(cuts) % 2:
        cuts = cuts[:-1]
    return [(a, b) for a, b in zip(cuts[::2], cuts[1::2])]


@given(interval_lists())
def test_event_sequence_round_trip(intervals):
    g = TemporalGraph.from_records(2, 1.0, [(0, 1, a, b) for a, b in intervals])
    seq = build_event_sequence(g, (0, 1))
    np.testing.assert_array_equal(seq.intervals(), g.dyad_intervals(0, 1))
    assert np.all(np.abs(np.diff(seq.states)) == 2)


def test_event_sequence_with_window_start():
    g = TemporalGraph.from_records(2, 10.0, [(0, 1, 8.5, 9.5)])
    seq = build_event_sequence(g, (0, 1), start=9.0)
    np.testing.assert_array_equal(seq.events, [9.0, 9.5])
    np.testing.assert_array_equal(seq.states, [1, -1])


def test_split_boundary_clipping():
    g = TemporalGraph.from_records(20, 10.0, [(0, 1, 8.5, 9.5)])
    split = split_dataset(g, 0.1, 0.2, seed=0)
    np.testing.assert_array_equal(split.future_graph.dyad_intervals(0, 1), [[9.0, 9.5]])
    first = split.first_period_graph()
    np.testing.assert_array_equal(first.dyad_intervals(0, 1), [[8.5, 9.0]])
    assert split.boundary == 9.0 and split.horizon == 10.0


def _random_graph(rng, n=100, horizon=1.0, density=0.3):
    rows = []
    for i, j in all_dyads(n).tolist():
        if rng.random() < density:
            a, b = np.sort(rng.uniform(0, horizon, 2))
            rows.append((i, j, a, b))
    return TemporalGraph.from_records(n, horizon, rows)


def test_split_counts_and_disjointness(rng):
    g = _random_graph(rng)
    split = split_dataset(g, seed=3)
    drawn = len(split.validation_dyads) + len(split.test_dyads) + len(split.removed_dyads)
    assert drawn == 990
    val = {tuple(d) for d in split.validation_dyads.tolist()}
    test = {tuple(d) for d in split.test_dyads.tolist()}
    removed = {tuple(d) for d in split.removed_dyads.tolist()}
    assert not (val & test) and not (val & removed) and not (test & removed)
    assert not (val | test | removed) & set(split.train_graph.intervals)
    first = split.first_period_graph()
    for d in removed:
        assert d not in first.intervals
    for d in val | test:
        assert d in first.intervals


def test_split_without_removals_is_even():
    rows = [(i, j, 0.1, 0.2) for i, j in all_dyads(100).tolist()]
    split = split_dataset(TemporalGraph.from_records(100, 1.0, rows), seed=0)
    assert len(split.validation_dyads) == 495 and len(split.test_dyads) == 495
    assert len(split.removed_dyads) == 0


def test_split_partition_identity(rng):
    g = _random_graph(rng, n=30)
    split = split_dataset(g, seed=1)
    pieces = sorted(split.train_graph.records() + split.heldout_graph.records()
                    + split.future_graph.records())
    clipped = sorted(g.clipped(0, split.boundary).records() + [
        (i, j, max(a, split.boundary), b) for i, j, a, b in g.records() if b > split.boundary])
    assert pieces == clipped


def test_split_deterministic_and_seed_sensitive(rng):
    g = _random_graph(rng, n=30)
    a, b, c = split_dataset(g, seed=5), split_dataset(g, seed=5), split_dataset(g, seed=6)
    assert a.manifest() == b.manifest()
    assert a.manifest()["validation_dyads"] != c.manifest()["validation_dyads"]


def test_split_errors():
    g = TemporalGraph(3, 1.0)
    with pytest.raises(ValueError):
        split_dataset(g, future_frac=0.0)
    with pytest.raises(ValueError):
        split_dataset(g, heldout_frac=1.0)
    with pytest.raises(ValueError, match="held-out"):
        split_dataset(g, heldout_frac=0.2)


def test_split_save_load(tmp_path, rng):
    split = split_dataset(_random_graph(rng, n=20), seed=2)
    split.save(tmp_path / "s")
    back = DatasetSplit.load(tmp_path / "s")
    assert back.train_graph == split.train_graph
    assert back.future_graph == split.future_graph
    assert back.manifest() == split.manifest()
    assert json.loads((tmp_path / "s" / "split.json").read_text())["seed"] == 2
