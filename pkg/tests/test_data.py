import json

import numpy as np
import pytest

from aggcn import data
from aggcn import depgraph as dg
from aggcn.data import CorpusFormatError, SyntheticSpec
from aggcn.model import PAD, UNK
from aggcn.numerics import ContractError, Rng


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def record(**kw):
    rec = {"id": "i0", "tokens": ["a", "b", "c"], "heads": [0, 1, 1], "entities": [[2, 2], [3, 3]], "label": "r"}
    rec.update(kw)
    return rec


class TestRead:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.jsonl"
        path.write_text("")
        c = data.read_corpus(path)
        assert len(c) == 0 and c.label_vocab == [] and c.token_vocab == [PAD, UNK]

    def test_single_instance(self, tmp_path):
        c = data.read_corpus(write_lines(tmp_path / "a.jsonl", [record()]))
        assert len(c) == 1 and c.instances[0].graph.n == 3
        assert c.token_vocab == [PAD, UNK, "a", "b", "c"]

    def test_cycle_is_structure_error(self, tmp_path):
        path = write_lines(tmp_path / "c.jsonl", [record(), record(tokens=["a", "b"], heads=[2, 1], entities=[[1, 1], [2, 2]])])
        with pytest.raises(dg.StructureError, match=r"c\.jsonl:2"):
            data.read_corpus(path)

    def test_head_out_of_range(self, tmp_path):
        with pytest.raises(dg.StructureError, match="out of range"):
            data.read_corpus(write_lines(tmp_path / "h.jsonl", [record(heads=[0, 1, 9])]))

    def test_bad_json_line_number(self, tmp_path):
        path = tmp_path / "b.jsonl"
        path.write_text(json.dumps(record()) + "\n\n{oops\n")
        with pytest.raises(CorpusFormatError, match=r"b\.jsonl:3"):
            data.read_corpus(path)

    def test_missing_field(self, tmp_path):
        rec = record()
        del rec["label"]
        with pytest.raises(CorpusFormatError, match="malformed"):
            data.read_corpus(write_lines(tmp_path / "m.jsonl", [rec]))

    def test_bad_entities(self, tmp_path):
        with pytest.raises(CorpusFormatError):
            data.read_corpus(write_lines(tmp_path / "x.jsonl", [record(entities=[[1, 5], [2, 2]])]))

    def test_negative_label(self, tmp_path):
        path = write_lines(tmp_path / "n.jsonl", [record(label="none"), record(id="i1", label="r")])
        c = data.read_corpus(path, negative_label="none")
        assert c.label_vocab == ["none", "r"] and c.negative_label == 0


class TestRoundTrip:
    def test_synthetic_round_trip(self, tmp_path):
        c = data.generate_synthetic(SyntheticSpec(n_instances=30, off_path_distance=1, seed=3))
        data.write_corpus(c, tmp_path / "s.jsonl")
        back = data.read_corpus(tmp_path / "s.jsonl")
        assert back.instances == c.instances
        assert back.token_vocab == c.token_vocab

    def test_deprels_and_bounds_survive(self, tmp_path):
        rec = record(tokens=["a", "b", "c", "d"], heads=[0, 1, 0, 3], deprels=["root", "x", "root", "y"],
                     sent_bounds=[[1, 2], [3, 4]], entities=[[1, 1], [4, 4]])
        c = data.read_corpus(write_lines(tmp_path / "d.jsonl", [rec]))
        data.write_corpus(c, tmp_path / "d2.jsonl")
        assert json.loads((tmp_path / "d2.jsonl").read_text()) == rec


class TestEmbeddings:
    def test_copy_and_specials(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a 1 2\nb 3 4\n<unk> 9 9\n")
        table = data.load_embeddings(path, [PAD, UNK, "a", "b"], Rng(0))
        np.testing.assert_array_equal(table, [[0, 0], [0, 0], [1, 2], [3, 4]])

    def test_missing_tokens_seeded(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("zz 1 2 3\n")
        a = data.load_embeddings(path, [PAD, UNK, "a", "b"], Rng(5))
        b = data.load_embeddings(path, [PAD, UNK, "a", "b"], Rng(5))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (4, 3) and np.all(np.abs(a[2:]) <= 0.1) and a[2:].any()

    def test_dimension_mismatch_line_seven(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("".join(f"t{i} 1 2\n" for i in range(6)) + "t6 1 2 3\n")
        with pytest.raises(CorpusFormatError, match=r"v\.txt:7"):
            data.load_embeddings(path, [PAD, UNK], Rng(0))


def cue_position(inst):
    return next(i for i, t in enumerate(inst.graph.tokens, start=1) if t.startswith("cue"))


class TestSynthetic:
    def test_distance_zero_cue_on_path(self):
        c = data.generate_synthetic(SyntheticSpec(n_instances=100, off_path_distance=0, seed=1))
        for inst in c.instances:
            assert cue_position(inst) in dg.prune_tree(inst.graph, inst.entity_spans, 0)

    @pytest.mark.parametrize("dist", [1, 2, 3])
    def test_cue_at_exact_distance(self, dist):
        c = data.generate_synthetic(SyntheticSpec(n_instances=100, off_path_distance=dist, seed=dist))
        for inst in c.instances:
            cue = cue_position(inst)
            assert cue not in dg.prune_tree(inst.graph, inst.entity_spans, dist - 1)
            assert cue in dg.prune_tree(inst.graph, inst.entity_spans, dist)

    def test_label_is_function_of_cue(self):
        c = data.generate_synthetic(SyntheticSpec(n_instances=200, seed=2))
        for inst in c.instances:
            cues = [t for t in inst.graph.tokens if t.startswith("cue")]
            assert len(cues) == 1
            assert c.label_vocab[inst.label] == data.label_name(int(cues[0][3:]))

    def test_trees_valid_and_sized(self):
        spec = SyntheticSpec(n_instances=50, min_length=9, max_length=11, n_entities=3, seed=4)
        for inst in data.generate_synthetic(spec).instances:
            inst.graph.validate()
            assert 9 <= inst.graph.n <= 11 and len(inst.entity_spans) == 3

    def test_byte_identical(self, tmp_path):
        spec = SyntheticSpec(n_instances=40, off_path_distance=2, seed=7)
        data.write_corpus(data.generate_synthetic(spec), tmp_path / "a.jsonl")
        data.write_corpus(data.generate_synthetic(spec), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_all_labels_in_vocab(self):
        c = data.generate_synthetic(SyntheticSpec(n_instances=3, n_labels=6))
        assert c.label_vocab == [data.label_name(k) for k in range(6)]

    def test_too_short(self):
        with pytest.raises(ContractError, match="too small"):
            data.generate_synthetic(SyntheticSpec(min_length=4, max_length=6, off_path_distance=3))

    def test_prufer_matches_networkx(self):
        nx = pytest.importorskip("networkx")
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(3, 12))
            seq = [int(v) for v in rng.integers(0, n, size=n - 2)]
            ours = {frozenset(e) for e in data.prufer_tree(seq, n)}
            theirs = {frozenset(e) for e in nx.from_prufer_sequence(seq).edges()}
            assert ours == theirs

    def test_parse(self):
        spec = data.parse_synthetic("n=50, labels=3, distance=2", seed=9)
        assert (spec.n_instances, spec.n_labels, spec.off_path_distance, spec.seed) == (50, 3, 2, 9)
        assert data.parse_synthetic("default") == SyntheticSpec()
        with pytest.raises(ContractError):
            data.parse_synthetic("bogus=1")
        with pytest.raises(ContractError):
            data.parse_synthetic("n")


class TestSplit:
    def corpus(self, n):
        return data.generate_synthetic(SyntheticSpec(n_instances=n, seed=0))

    def test_all_train(self):
        tr, dv, te = data.split(self.corpus(7), (1, 0, 0), 0)
        assert (len(tr), len(dv), len(te)) == (7, 0, 0)

    def test_sizes(self):
        tr, dv, te = data.split(self.corpus(10), (0.8, 0.1, 0.1), 0)
        assert (len(tr), len(dv), len(te)) == (8, 1, 1)

    def test_seeded_disjoint_exhaustive(self):
        c = self.corpus(30)
        a = data.split(c, (0.6, 0.2, 0.2), 4)
        b = data.split(c, (0.6, 0.2, 0.2), 4)
        ids = [[i.id for i in part.instances] for part in a]
        assert ids == [[i.id for i in part.instances] for part in b]
        flat = sum(ids, [])
        assert sorted(flat) == sorted(i.id for i in c.instances)

    def test_errors(self):
        with pytest.raises(ContractError):
            data.split(self.corpus(3).subset([]), (1, 0, 0), 0)
        with pytest.raises(ContractError):
            data.split(self.corpus(3), (0.5, 0.2, 0.2), 0)


def test_align_labels():
    c = data.generate_synthetic(SyntheticSpec(n_instances=20, n_labels=2))
    target = ["extra"] + c.label_vocab
    aligned = data.align_labels(c, target, negative_label="extra")
    assert aligned.negative_label == 0
    for a, b in zip(aligned.instances, c.instances):
        assert target[a.label] == c.label_vocab[b.label]
    with pytest.raises(ContractError):
        data.align_labels(c, ["only"])


def test_tacred_mapping(tmp_path):
    raw = {"id": "t1", "token": ["Bill", "Gates", "founded", "Microsoft"], "stanford_head": [2, 3, 0, 3],
           "stanford_deprel": ["compound", "nsubj", "ROOT", "dobj"], "subj_start": 0, "subj_end": 1,
           "obj_start": 3, "obj_end": 3, "relation": "org:founded_by"}
    rec = data.tacred_record(raw)
    assert rec["entities"] == [[1, 2], [4, 4]]
    c = data.read_corpus(write_lines(tmp_path / "t.jsonl", [rec]))
    assert c.instances[0].graph.n == 4
