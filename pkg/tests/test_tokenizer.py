import numpy as np
import pytest

from bytepatch import tokenizer as tok
from bytepatch.tokenizer import (
    SubwordVocab,
    SuffixIndex,
    TokenizerError,
    longest_suffix_token,
    subword_boundary_mask,
    train_bpe,
    utf8_to_bytes,
)


def test_utf8_ascii():
    assert list(utf8_to_bytes("A")) == [65]


def test_utf8_multibyte():
    assert list(utf8_to_bytes("é")) == [195, 169]


def test_utf8_empty_rejected():
    with pytest.raises(TokenizerError):
        utf8_to_bytes("")


def test_train_bpe_aaab():
    # adjacent-pair counting gives (a,a)=2, (a,b)=1 -> merge "aa"
    vocab = train_bpe([b"aaab"], 258)
    assert vocab.merges == [(ord("a"), ord("a"))]
    assert vocab.token_bytes[256] == b"aa"


def test_train_bpe_abab():
    vocab = train_bpe([b"abab"], 258)
    assert vocab.token_bytes[256] == b"ab"


def test_train_bpe_minimum_size_is_identity():
    # smallest legal vocabulary: 256 bytes + BOS, no merges
    vocab = train_bpe([b"hello world"], 257)
    assert vocab.merges == []
    assert vocab.n_tokens == 256
    with pytest.raises(TokenizerError):
        train_bpe([b"hello"], 256)


def test_train_bpe_truncates_on_small_corpus():
    vocab = train_bpe([b"ab"], 400)
    assert vocab.truncated
    assert vocab.size < 400


def test_encode_single_merge():
    vocab = train_bpe([b"abab"], 258)
    assert tok.encode(vocab, b"ab") == [256]
    assert tok.encode(vocab, b"ba") == [ord("b"), ord("a")]


def test_encode_decode_roundtrip_random():
    rng = np.random.default_rng(7)
    corpus = [bytes(rng.integers(97, 105, size=rng.integers(5, 60)).tolist()) for _ in range(50)]
    vocab = train_bpe(corpus, 300)
    for _ in range(1000):
        data = bytes(rng.integers(0, 256, size=rng.integers(1, 40)).tolist())
        assert tok.decode(vocab, tok.encode(vocab, data)) == data


def test_boundary_mask_ab_ab():
    vocab = train_bpe([b"ab ab ab"], 259)
    ids = tok.encode(vocab, b"ab ab")
    assert [vocab.token_bytes[i] for i in ids] == [b"ab", b" ab"]
    mask = subword_boundary_mask(vocab, b"ab ab")
    assert mask.tolist() == [False, True, False, False, True]


def test_boundary_mask_single_token():
    vocab = train_bpe([b"aaaa aaaa"], 260)
    assert tok.encode(vocab, b"aaaa") == [257]
    mask = subword_boundary_mask(vocab, b"aaaa")
    assert mask.tolist() == [False, False, False, True]


def test_boundary_mask_popcount_equals_token_count():
    rng = np.random.default_rng(11)
    words = [b"sun", b"flower", b"bed", b"rain", b"bow"]
    corpus = [b" ".join(rng.choice(words, size=20).tolist()) for _ in range(20)]
    vocab = train_bpe(corpus, 320)
    for _ in range(30):
        data = b" ".join(rng.choice(words, size=rng.integers(1, 10)).tolist())
        ids = tok.encode(vocab, data)
        mask = subword_boundary_mask(vocab, data)
        assert int(mask.sum()) == len(ids)
        # patch byte-lengths equal token byte-lengths
        ends = np.flatnonzero(mask)
        lengths = np.diff(np.concatenate([[-1], ends]))
        assert lengths.tolist() == tok.token_lengths(vocab, ids)


def _tiny_suffix_vocab() -> SubwordVocab:
    token_bytes = [bytes([i]) for i in range(256)] + [b"ab", b"bc"]
    return SubwordVocab(token_bytes, [(ord("a"), ord("b")), (ord("b"), ord("c"))])


def test_longest_suffix_hand_cases():
    vocab = _tiny_suffix_vocab()
    index = SuffixIndex(vocab)
    x = b"abc"
    assert vocab.token_bytes[longest_suffix_token(index, x, 0)] == b"a"
    assert vocab.token_bytes[longest_suffix_token(index, x, 1)] == b"ab"
    assert vocab.token_bytes[longest_suffix_token(index, x, 2)] == b"bc"


def _brute_longest_suffix(vocab: SubwordVocab, x: bytes, i: int) -> int:
    best, best_len = -1, 0
    prefix = x[: i + 1]
    for tid, tb in enumerate(vocab.token_bytes):
        if len(tb) > best_len and prefix.endswith(tb):
            best, best_len = tid, len(tb)
    return best


def test_longest_suffix_matches_bruteforce():
    rng = np.random.default_rng(3)
    corpus = [bytes(rng.integers(97, 103, size=80).tolist()) for _ in range(10)]
    vocab = train_bpe(corpus, 300)
    index = SuffixIndex(vocab)
    for _ in range(100):
        x = bytes(rng.integers(97, 103, size=rng.integers(1, 30)).tolist())
        for i in range(len(x)):
            assert longest_suffix_token(index, x, i) == _brute_longest_suffix(vocab, x, i)


def test_vocab_serialization_roundtrip(tmp_path):
    vocab = train_bpe([b"the cat sat on the mat, the cat sat"], 300)
    path = tmp_path / "vocab.txt"
    tok.save_vocab(vocab, str(path))
    loaded = tok.load_vocab(str(path))
    assert loaded.token_bytes == vocab.token_bytes
    assert loaded.merges == vocab.merges
    assert loaded.bos_id == vocab.bos_id
    data = b"the cat sat"
    assert tok.encode(loaded, data) == tok.encode(vocab, data)


def test_vocab_check_rejects_bad_merge():
    token_bytes = [bytes([i]) for i in range(256)] + [b"xy"]
    vocab = SubwordVocab.__new__(SubwordVocab)
    vocab.token_bytes = token_bytes
    vocab.merges = [(0, 1)]  # claims token 256 = \x00\x01, actually b"xy"
    vocab.bos_id = 257
    with pytest.raises(TokenizerError):
        vocab.check()
