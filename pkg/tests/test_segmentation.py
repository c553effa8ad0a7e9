import pytest
from hypothesis import given
from hypothesis import strategies as st

from canto_umt.bpe import apply_bpe, learn_bpe
from canto_umt.corpus import is_cjk
from canto_umt.segmentation import (
    Lexicon,
    TokenizedSentence,
    char_tokenize,
    detokenize,
    join_subwords,
    tokenize,
    word_tokenize,
)

mixed_text = st.text(alphabet="我哋今朝點有個開心中意思朋友abcXYZ0123 。，!?-", max_size=40)


def test_char_examples():
    assert list(char_tokenize("我哋今朝9點有個meeting。").tokens) == [
        "我", "哋", "今", "朝", "9", "點", "有", "個", "meeting", "。",
    ]
    assert char_tokenize("a").tokens == ("a",)
    assert char_tokenize("開open開").tokens == ("開", "open", "開")


def test_char_digits_and_letters_separate_runs():
    assert char_tokenize("abc123def 45").tokens == ("abc", "123", "def", "45")


def test_word_examples():
    assert word_tokenize("我的朋友", Lexicon.from_words(["朋友"])).tokens == ("我", "的", "朋友")
    assert word_tokenize("中意思", Lexicon.from_words(["中意", "意思"])).tokens == ("中意", "思")


def test_lexicon_rejects_whitespace_entries():
    with pytest.raises(ValueError):
        Lexicon.from_words(["朋 友"])


def test_lexicon_file(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("朋友\n\n開心\n", encoding="utf-8")
    lex = Lexicon.load(p)
    assert "朋友" in lex and lex.max_entry_len == 2


def test_detokenize_examples():
    assert detokenize(TokenizedSentence(("我", "哋"), "char")) == "我哋"
    table = learn_bpe([[["朋友"], ["朋友"], ["朋"]]], 10)
    bpe = apply_bpe(["朋友"], table)
    assert detokenize(bpe) == "朋友"


def test_dangling_continuation():
    with pytest.raises(ValueError, match="dangling continuation"):
        join_subwords(["朋", "友"])


def test_tokenized_sentence_line_roundtrip():
    t = TokenizedSentence(("我", "meeting", "。"), "char")
    assert TokenizedSentence.from_line(t.to_line(), "char") == t


def test_tokenize_rejects_bpe_scheme():
    with pytest.raises(ValueError):
        tokenize("我", "bpe")


@given(mixed_text)
def test_char_roundtrip(text):
    toks = char_tokenize(text)
    assert all(toks.tokens)
    assert detokenize(toks) == "".join(text.split())


@given(mixed_text, st.lists(st.sampled_from(["開心", "中意", "意思", "朋友", "我哋", "今朝點"]), max_size=5))
def test_word_roundtrip_and_bound(text, words):
    lex = Lexicon.from_words(words)
    wt = word_tokenize(text, lex)
    ct = char_tokenize(text)
    assert "".join(wt.tokens) == "".join(text.split())
    cjk = sum(1 for t in ct.tokens if len(t) == 1 and is_cjk(t))
    assert len(wt.tokens) <= cjk + (len(ct.tokens) - cjk)


@given(mixed_text)
def test_empty_lexicon_equals_char(text):
    assert word_tokenize(text, Lexicon.from_words([])).tokens == char_tokenize(text).tokens


@given(mixed_text, st.lists(st.sampled_from(["開心", "中意", "意思", "朋友", "今朝點"]), max_size=5))
def test_greedy_takes_longest_match(text, words):
    lex = Lexicon.from_words(words)
    for tok in word_tokenize(text, lex).tokens:
        assert len(tok) == 1 or tok in lex or not any(is_cjk(c) for c in tok)
