import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taem.network import length_regulate
from taem.autodiff import Tensor
from taem.textalign import (
    AlignmentRecord,
    LexiconError,
    PhonemeVocab,
    durations_from_alignment,
    load_vocab,
    parse_alignment,
    phonemes_from_alignment,
    tokenize,
)


@pytest.fixture(scope="module")
def vocab():
    return load_vocab()


def test_packaged_vocab(vocab):
    assert vocab.version == "arpabet-en-v1"
    assert vocab.labels[vocab.pad_id] == "<pad>"
    assert vocab.labels[vocab.silence_id] == "<sil>"
    assert vocab.size == 71
    assert vocab.id_of("AH0") >= 0


def test_tokenize_single_entry_lexicon(vocab):
    seq = tokenize("a", {"A": ["AH0"]}, vocab)
    np.testing.assert_array_equal(seq.ids, [vocab.id_of("AH0")])
    assert seq.vocab_version == vocab.version


def test_tokenize_empty_text_errors(vocab):
    with pytest.raises(ValueError, match="empty"):
        tokenize("", {"A": ["AH0"]}, vocab)


def test_tokenize_cmu_style(vocab):
    lexicon = {"SET": ["S", "EH1", "T"], "BLUE": ["B", "L", "UW1"]}
    seq = tokenize("set blue", lexicon, vocab)
    labels = [vocab.labels[i] for i in seq.ids]
    assert labels == ["S", "EH1", "T", "B", "L", "UW1"]


def test_tokenize_out_of_lexicon_lists_word(vocab):
    with pytest.raises(LexiconError, match="zork"):
        tokenize("set zork", {"SET": ["S", "EH1", "T"]}, vocab)


def test_tokenize_inserts_alignment_silences(vocab):
    lexicon = {"SET": ["S", "EH1", "T"], "BLUE": ["B", "L", "UW1"]}
    rec = AlignmentRecord(
        entries=[
            ("S", 0.0, 0.1),
            ("EH1", 0.1, 0.2),
            ("T", 0.2, 0.3),
            ("sil", 0.3, 0.4),
            ("B", 0.4, 0.5),
            ("L", 0.5, 0.6),
            ("UW1", 0.6, 0.7),
        ]
    )
    seq = tokenize("set blue", lexicon, vocab, alignment=rec)
    labels = [vocab.labels[i] for i in seq.ids]
    assert labels == ["S", "EH1", "T", "<sil>", "B", "L", "UW1"]


def test_tokenize_alignment_label_mismatch(vocab):
    rec = AlignmentRecord(entries=[("S", 0.0, 0.1), ("AH0", 0.1, 0.2), ("T", 0.2, 0.3)])
    with pytest.raises(ValueError, match="does not match"):
        tokenize("set", {"SET": ["S", "EH1", "T"]}, vocab, alignment=rec)


class TestDurations:
    def test_worked_example_3_1_2(self):
        rec = AlignmentRecord(
            entries=[("P", 0.00, 0.03), ("AH0", 0.03, 0.04), ("T", 0.04, 0.06)]
        )
        np.testing.assert_array_equal(
            durations_from_alignment(rec, 100, 6), [3, 1, 2]
        )

    def test_single_phoneme_full_utterance(self):
        rec = AlignmentRecord(entries=[("AH0", 0.0, 0.96)])
        np.testing.assert_array_equal(durations_from_alignment(rec, 100, 96), [96])

    def test_rounding_drift_absorbed_by_final_entry(self):
        # boundaries quantize to 95 frames; reconciliation adds 1 to the end
        rec = AlignmentRecord(entries=[("A", 0.0, 0.5), ("B", 0.5, 0.95)])
        d = durations_from_alignment(rec, 100, 96)
        np.testing.assert_array_equal(d, [50, 46])
        assert d.sum() == 96

    def test_trailing_zero_entries_skipped_by_reconciliation(self):
        rec = AlignmentRecord(
            entries=[("A", 0.0, 0.94), ("B", 0.94, 0.943)]  # B rounds to 0 frames
        )
        d = durations_from_alignment(rec, 100, 96)
        np.testing.assert_array_equal(d, [96, 0])

    def test_large_drift_rejected(self):
        rec = AlignmentRecord(entries=[("A", 0.0, 0.80)])
        with pytest.raises(ValueError, match="drift"):
            durations_from_alignment(rec, 100, 96)

    @given(
        st.lists(st.integers(min_value=0, max_value=30), min_size=1, max_size=20).filter(
            lambda d: sum(d) >= 1
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip_with_length_regulator(self, frames):
        # alignment boundaries on exact frame edges -> durations reproduce, and
        # expanding them regulates to exactly l_a rows
        bounds = np.concatenate([[0], np.cumsum(frames)]) / 100.0
        entries = [
            (f"P{i}", bounds[i], bounds[i + 1]) for i in range(len(frames))
            if frames[i] > 0
        ]
        l_a = int(sum(frames))
        d = durations_from_alignment(AlignmentRecord(entries=entries), 100, l_a)
        assert d.sum() == l_a
        expanded = length_regulate(
            Tensor(np.arange(len(entries), dtype=np.float64)[:, None]), d
        )
        assert expanded.shape == (l_a, 1)


def test_parse_alignment_and_validation(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("S\t0.0\t0.1\nEH1\t0.1\t0.25\n", "utf-8")
    rec = parse_alignment(p)
    assert rec.entries == [("S", 0.0, 0.1), ("EH1", 0.1, 0.25)]

    p.write_text("S\t0.2\t0.1\n", "utf-8")
    with pytest.raises(ValueError, match="start"):
        parse_alignment(p)

    p.write_text("S\t0.0\t0.3\nT\t0.2\t0.4\n", "utf-8")
    with pytest.raises(ValueError, match="overlap"):
        parse_alignment(p)

    p.write_text("only_two_fields\t0.0\n", "utf-8")
    with pytest.raises(ValueError, match="TAB"):
        parse_alignment(p)


def test_phonemes_from_alignment_maps_silence_aliases(vocab):
    rec = AlignmentRecord(entries=[("S", 0.0, 0.1), ("sp", 0.1, 0.2), ("T", 0.2, 0.3)])
    seq = phonemes_from_alignment(rec, vocab)
    assert [vocab.labels[i] for i in seq.ids] == ["S", "<sil>", "T"]


def test_tokenize_is_pure(vocab):
    lexicon = {"SET": ["S", "EH1", "T"]}
    a = tokenize("set", lexicon, vocab)
    b = tokenize("set", lexicon, vocab)
    np.testing.assert_array_equal(a.ids, b.ids)


def test_custom_vocab_rejects_unknown_label(tmp_path):
    p = tmp_path / "v.txt"
    p.write_text("# vocab_version: tiny-v0\n<pad>\n<sil>\nAA1\n", "utf-8")
    vocab = PhonemeVocab(labels=("<pad>", "<sil>", "AA1"), version="tiny-v0")
    with pytest.raises(KeyError, match="ZZ9"):
        vocab.id_of("ZZ9")
