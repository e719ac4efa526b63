import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spoalign.data import (
    Dataset,
    EmbeddingTable,
    ScoreRecord,
    group_scores_by_pair,
    load_embeddings,
    load_scores,
    mean_pair_score,
    save_embeddings,
    save_scores,
    split_by_text,
)
from spoalign.errors import DataError

from conftest import make_dataset


def rec(pair, listener, score, text="t1", audio=None):
    return {"pair_id": pair, "text_id": text, "audio_id": audio or f"a_{pair}",
            "listener_id": listener, "score": score}


def test_load_four_scores_on_one_pair(write_jsonl):
    path = write_jsonl([rec("p1", f"L{i}", s) for i, s in enumerate([0, 8, 9, 10])])
    ds = load_scores(path)
    assert len(ds) == 4
    assert [r.score for r in ds] == [0, 8, 9, 10]


def test_load_empty_file(write_jsonl):
    assert len(load_scores(write_jsonl([]))) == 0


def test_load_rejects_out_of_range(write_jsonl):
    with pytest.raises(DataError, match="score out of range"):
        load_scores(write_jsonl([rec("p1", "L1", 11)]))


def test_load_rejects_non_integer_score(write_jsonl):
    with pytest.raises(DataError, match="integer"):
        load_scores(write_jsonl([rec("p1", "L1", 7.5)]))


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(rec("p1", "L1", 3)) + "\n{not json\n")
    with pytest.raises(DataError, match=r":2: malformed"):
        load_scores(path)


def test_duplicate_pair_listener(write_jsonl):
    with pytest.raises(DataError, match="duplicate"):
        load_scores(write_jsonl([rec("p1", "L1", 3), rec("p1", "L1", 4)]))


def test_pair_maps_to_one_text_audio(write_jsonl):
    with pytest.raises(DataError, match="maps to both"):
        load_scores(write_jsonl([rec("p1", "L1", 3, audio="a1"), rec("p1", "L2", 4, audio="a2")]))


def test_unknown_keys_ignored(write_jsonl):
    row = rec("p1", "L1", 3)
    row["extra"] = "whatever"
    assert load_scores(write_jsonl([row])).records[0].score == 3


def test_strict_triplets(write_jsonl):
    rows = [rec(f"p{j}", "L1", 5, text="t1", audio=f"a{j}") for j in range(3)]
    rows += [rec("q0", "L1", 5, text="t2", audio="b0")]
    path = write_jsonl(rows)
    assert len(load_scores(path, strict_triplets=False)) == 4
    with pytest.raises(DataError, match="expected exactly 3"):
        load_scores(path, strict_triplets=True)


def test_group_scores_by_pair_orders_by_listener():
    ds = make_dataset([("p1", "L4", 10), ("p1", "L2", 8), ("p1", "L1", 0), ("p1", "L3", 9)])
    assert group_scores_by_pair(ds) == {"p1": [0, 8, 9, 10]}


def test_group_scores_edge_cases():
    assert group_scores_by_pair(make_dataset([])) == {}
    ds = make_dataset([("p1", "L1", 3), ("p2", "L1", 4)])
    assert group_scores_by_pair(ds) == {"p1": [3], "p2": [4]}


@pytest.mark.parametrize("scores, expected", [([0, 8, 9, 10], 6.75), ([7], 7.0), ([0, 10], 5.0)])
def test_mean_pair_score(scores, expected):
    assert mean_pair_score(scores) == expected


def test_mean_pair_score_empty():
    with pytest.raises(DataError):
        mean_pair_score([])


@given(st.integers(0, 10), st.integers(1, 30))
def test_mean_of_constant_list(c, n):
    assert mean_pair_score([c] * n) == c


records = st.lists(
    st.tuples(st.integers(0, 20), st.integers(0, 6), st.integers(0, 10)),
    max_size=60,
    unique_by=lambda t: (t[0], t[1]),
)


@given(records)
def test_grouping_partitions_records(rows):
    ds = make_dataset([(f"p{p}", f"L{l}", s) for p, l, s in rows])
    groups = group_scores_by_pair(ds)
    assert sum(len(g) for g in groups.values()) == len(ds)
    assert sorted(s for g in groups.values() for s in g) == sorted(r.score for r in ds)


@given(records)
def test_scores_roundtrip(tmp_path_factory, rows):
    ds = make_dataset([(f"p{p}", f"L{l}", s) for p, l, s in rows])
    path = tmp_path_factory.mktemp("rt") / "s.jsonl"
    save_scores(ds, path)
    again = load_scores(path)
    assert again.records == ds.records


def _manifest(tmp_path, dim, rows):
    lines = [f"dim={dim}", "id\tpath"]
    for key, payload in rows:
        name = f"{key}_{len(lines)}.f32"
        (tmp_path / name).write_bytes(payload)
        lines.append(f"{key}\t{name}")
    path = tmp_path / "manifest.tsv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_load_embeddings_size_arithmetic(tmp_path):
    payload = struct.pack("<4f", 1.0, -2.0, 0.5, 3.25)
    assert len(payload) == 16
    table = load_embeddings(_manifest(tmp_path, 4, [("a1", payload)]))
    assert len(table) == 1
    np.testing.assert_array_equal(table["a1"], [1.0, -2.0, 0.5, 3.25])


def test_load_embeddings_truncated(tmp_path):
    with pytest.raises(DataError, match="truncated embedding"):
        load_embeddings(_manifest(tmp_path, 4, [("a1", b"\x00" * 15)]))


def test_load_embeddings_duplicate_id(tmp_path):
    payload = struct.pack("<4f", 1, 2, 3, 4)
    with pytest.raises(DataError, match="duplicate id"):
        load_embeddings(_manifest(tmp_path, 4, [("a1", payload), ("a1", payload)]))


def test_load_embeddings_non_finite(tmp_path):
    payload = struct.pack("<2f", 1.0, float("nan"))
    with pytest.raises(DataError, match="non-finite"):
        load_embeddings(_manifest(tmp_path, 2, [("a1", payload)]))


def test_load_embeddings_bad_dim(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("dim=0\nid\tpath\n")
    with pytest.raises(DataError):
        load_embeddings(path)


def test_embeddings_roundtrip(tmp_path, rng):
    vecs = {f"x{i}": rng.standard_normal(5).astype(np.float32) for i in range(4)}
    table = EmbeddingTable(5, vecs)
    back = load_embeddings(save_embeddings(table, tmp_path / "emb"))
    assert back.ids() == table.ids()
    for k in vecs:
        np.testing.assert_array_equal(back[k], table[k])


def test_embedding_table_rejects_wrong_length():
    with pytest.raises(DataError):
        EmbeddingTable(3, {"a": [1.0, 2.0]})


def test_split_by_text_keeps_texts_together(small_synth):
    ds, _, _ = small_synth
    train, val = split_by_text(ds, 0.25, seed=1)
    assert len(train) + len(val) == len(ds)
    assert not ({r.text_id for r in train} & {r.text_id for r in val})
    train2, val2 = split_by_text(ds, 0.25, seed=1)
    assert train2.records == train.records and val2.records == val.records
