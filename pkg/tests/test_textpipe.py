import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmtl.textpipe import (
    CorpusDecodeError,
    TruecaseModel,
    apply_truecase,
    detokenize,
    detruecase,
    normalize_text,
    postprocess_tokens,
    read_lines,
    tokenize,
    train_truecaser,
)


def test_normalize_examples():
    assert normalize_text("abc") == "abc"
    assert normalize_text("a“b”") == 'a"b"'
    assert normalize_text("a  b ") == "a b"
    assert normalize_text("  x\t\ty \n") == "x y"
    assert normalize_text("é") == "é"  # NFC
    assert normalize_text("wait… – ok") == "wait... - ok"


def test_tokenize_examples():
    assert tokenize("abc") == ["abc"]
    assert tokenize("Hello, world!") == ["Hello", ",", "world", "!"]
    assert tokenize("3.14 m") == ["3.14", "m"]
    assert tokenize("") == []
    assert tokenize("end.") == ["end", "."]
    assert tokenize("don't stop") == ["don't", "stop"]


def test_detokenize_examples():
    assert detokenize(["abc"]) == "abc"
    assert detokenize(["Hello", ",", "world", "!"]) == "Hello, world!"
    assert detokenize([]) == ""
    assert detokenize(["he", "said", '"', "hi", '"', "(", "ok", ")", "."]) == 'he said "hi" (ok).'


def test_truecaser_examples():
    m = train_truecaser([["The", "cat"], ["the", "cat"]])
    assert m.lookup("the") == "the"
    assert m.lookup("cat") == "cat"
    assert train_truecaser([["NASA", "works"]]).lookup("nasa") == "NASA"
    assert train_truecaser([["a"]]).lookup("a") == "a"
    with pytest.raises(ValueError):
        train_truecaser([])


def test_truecaser_prefers_non_initial_occurrences():
    m = train_truecaser([["Paris", "is"], ["in", "Paris"], ["Paris", "x"]])
    assert m.lookup("paris") == "Paris"
    m = train_truecaser([["The", "x"], ["The", "y"], ["see", "the"]])
    assert m.lookup("the") == "the"


def test_apply_truecase_examples():
    assert apply_truecase(TruecaseModel({"the": ("the", 1)}), ["The", "cat"]) == ["the", "cat"]
    assert apply_truecase(TruecaseModel({}), ["ABC"]) == ["ABC"]
    assert apply_truecase(TruecaseModel({"nasa": ("NASA", 1)}), ["Nasa", "x"]) == ["NASA", "x"]
    assert apply_truecase(TruecaseModel({}), ["Hello", "World"]) == ["hello", "World"]
    assert apply_truecase(TruecaseModel({}), []) == []


def test_detruecase_examples():
    assert detruecase(["the", "cat"]) == ["The", "cat"]
    assert detruecase([]) == []
    assert detruecase(["3.14", "ok"]) == ["3.14", "ok"]


def test_truecase_model_file_roundtrip(tmp_path):
    m = train_truecaser([["NASA", "and", "the", "Moon"], ["The", "moon"]])
    path = tmp_path / "tc"
    m.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert [ln.split("\t")[0].lower() for ln in lines] == sorted(m.casing)
    assert TruecaseModel.load(path) == m


def test_invalid_utf8_names_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_bytes(b"ok\nalso ok\nbad \xff byte\n")
    with pytest.raises(CorpusDecodeError) as err:
        list(read_lines(path))
    assert err.value.lineno == 3
    assert ":3:" in str(err.value)


WORDS = st.text(alphabet="abcdefghijklmnopqrstuvwxyzABCDEFG", min_size=1, max_size=8)
NUMBERS = st.builds(lambda a, b: f"{a}.{b}", st.integers(0, 999), st.integers(0, 99))


@st.composite
def sentences(draw):
    """Canonically punctuated sentences over the covered punctuation."""
    parts = []
    for _ in range(draw(st.integers(1, 8))):
        kind = draw(st.sampled_from(["word", "word", "num", "paren", "quote"]))
        if kind == "word":
            parts.append(draw(WORDS))
        elif kind == "num":
            parts.append(draw(NUMBERS))
        elif kind == "paren":
            parts.append("(" + draw(WORDS) + ")")
        else:
            parts.append('"' + draw(WORDS) + '"')
        if draw(st.booleans()):
            parts[-1] += draw(st.sampled_from([",", ";", ":", "%"]))
    return " ".join(parts) + draw(st.sampled_from(["", ".", "!", "?"]))


@settings(max_examples=300, deadline=None)
@given(sentences())
def test_tokenize_roundtrip(sentence):
    s = normalize_text(sentence)
    assert detokenize(tokenize(s)) == s


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=40))
def test_tokenize_deterministic_and_whitespace_free(text):
    s = normalize_text(text)
    toks = tokenize(s)
    assert toks == tokenize(s)
    assert all(t and not any(c.isspace() for c in t) for t in toks)


@settings(max_examples=200, deadline=None)
@given(st.lists(WORDS, min_size=1, max_size=6))
def test_detruecase_idempotent_at_head(tokens):
    tokens = [tokens[0].lower()] + tokens[1:]
    model = TruecaseModel({tokens[0]: (tokens[0], 1)})
    x = detruecase(tokens)
    assert detruecase(apply_truecase(model, x)) == x


def test_postprocess_chain():
    assert postprocess_tokens(["the", "cat", "sat", "."]) == "The cat sat."
