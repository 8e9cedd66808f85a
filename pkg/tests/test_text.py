import numpy as np
import pytest

from qbm.exceptions import ConfigurationError, ParseError
from qbm.text import PAD_ID, UNK_ID, Vocabulary, build_vocab, encode, load_embeddings, tokenize


@pytest.mark.parametrize("text, tokens", [
    ("What is REFUND?", ["what", "is", "refund", "?"]),
    ("", []),
    ("don't ship-today", ["don", "'", "t", "ship", "-", "today"]),
    ("  many   spaces\there ", ["many", "spaces", "here"]),
    ("退款多久到账", ["退", "款", "多", "久", "到", "账"]),
    ("refund退款ok", ["refund", "退", "款", "ok"]),
    ("snake_case", ["snake", "_", "case"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_vocab_ordering_and_min_count():
    vocab = build_vocab(["a a b"])
    assert vocab.stoi == {"<pad>": 0, "<unk>": 1, "a": 2, "b": 3}
    assert build_vocab(["a a b"], min_count=2)["b"] == UNK_ID
    assert build_vocab(["zeta alpha"]).itos[2:] == ["alpha", "zeta"]
    assert vocab["never-seen"] == UNK_ID


def test_encode_padding_and_truncation():
    vocab = build_vocab(["one two three"])
    enc = encode("one two three", vocab)
    assert enc.true_length == 3
    assert enc.mask.tolist() == [1, 1, 1] + [0] * 17
    assert (enc.ids[3:] == PAD_ID).all()
    long = encode(" ".join(["one"] * 25), vocab)
    assert long.true_length == 20 and long.mask.all()
    empty = encode("", vocab)
    assert empty.empty and not empty.mask.any() and (empty.ids == PAD_ID).all()


def test_encode_is_stable_under_reencoding():
    vocab = build_vocab(["alpha beta gamma delta"])
    enc = encode("alpha gamma unknown beta", vocab, max_len=6)
    tokens = [vocab.itos[i] for i in enc.ids[:enc.true_length]]
    again = encode(tokens, vocab, max_len=6)
    np.testing.assert_array_equal(enc.ids, again.ids)
    np.testing.assert_array_equal(enc.mask, again.mask)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_embeddings_present_absent_pad(tmp_path):
    vocab = Vocabulary(["cat", "dog"])
    path = _write(tmp_path / "vec.txt", "2 3\ncat 0.5 -1 2\nbird 1 1 1\n")
    table = load_embeddings(path, vocab, dim=3, seed=4, dtype=np.float64)
    assert table[vocab["cat"]].tolist() == [0.5, -1.0, 2.0]
    assert not table[PAD_ID].any()
    assert np.abs(table[vocab["dog"]]).max() <= 0.25
    again = load_embeddings(path, vocab, dim=3, seed=4, dtype=np.float64)
    np.testing.assert_array_equal(table, again)


def test_load_embeddings_dimension_mismatch(tmp_path):
    vocab = Vocabulary(["cat"])
    path = _write(tmp_path / "vec.txt", "cat 1 2 3 4 5\n")
    with pytest.raises(ConfigurationError):
        load_embeddings(path, vocab, dim=300)
    with pytest.raises(ConfigurationError):
        load_embeddings(_write(tmp_path / "h.txt", "1 5\ncat 1 2 3 4 5\n"), vocab, dim=300)


def test_load_embeddings_malformed_line_reports_line_number(tmp_path):
    vocab = Vocabulary(["cat"])
    path = _write(tmp_path / "vec.txt", "cat 1 2 3\ndog 1 2\n")
    with pytest.raises(ParseError) as info:
        load_embeddings(path, vocab, dim=3)
    assert info.value.line == 2
