import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstoken.corpus import (
    END,
    N_SPECIAL,
    RawRecord,
    TemplateSpec,
    assemble_sample,
    detokenize,
    load_corpus,
    tokenize,
)
from sstoken.errors import EmptyResponse, FormatError, SampleTooLong


def test_tokenize_bytes_offset():
    assert tokenize("Hi") == [ord("H") + N_SPECIAL, ord("i") + N_SPECIAL]
    assert tokenize("") == []


@settings(max_examples=1000, deadline=None)
@given(st.text())
def test_tokenize_roundtrip(text):
    ids = tokenize(text)
    assert all(N_SPECIAL <= i < 256 + N_SPECIAL for i in ids)
    assert detokenize(ids) == text


def test_assemble_literal_tags():
    tmpl = TemplateSpec(collapse_tags=False)
    s = assemble_sample(RawRecord("Q", "A"), tmpl)
    # prompt = "<|User|>\n" + "Q" + "\n<|Assistant|>\n", bytes counted by hand
    assert s.prompt_len == len(tokenize("<|User|>\nQ\n<|Assistant|>\n")) == 9 + 1 + 15
    assert s.resp_len == len(tokenize("A")) + 1
    assert s.ids[-1] == END
    assert detokenize(s.ids[s.prompt_len :]) == "A"


def test_assemble_collapsed_tags():
    s = assemble_sample(RawRecord("abc", "xy"))
    assert s.prompt_len == 5
    assert s.resp_len == 3
    assert list(s.prompt_positions) + list(s.resp_positions) == list(range(s.total_len))


def test_assemble_errors():
    with pytest.raises(EmptyResponse):
        assemble_sample(RawRecord("q", ""))
    with pytest.raises(EmptyResponse):
        assemble_sample(RawRecord("q", "  \n"))
    with pytest.raises(SampleTooLong):
        assemble_sample(RawRecord("q", "x" * 10_000), TemplateSpec(max_seq_len=256))


@given(st.text(max_size=40), st.text(min_size=1, max_size=40).filter(lambda t: t.strip()))
def test_index_sets_partition(prompt, response):
    s = assemble_sample(RawRecord(prompt, response), TemplateSpec(max_seq_len=1000))
    assert max(s.prompt_positions) + 1 == min(s.resp_positions)
    assert len(s.prompt_positions) + len(s.resp_positions) == s.total_len
    assert detokenize(s.ids[s.prompt_len :]) == response


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_corpus_good(tmp_path):
    p = tmp_path / "c.jsonl"
    _write(p, [json.dumps({"prompt": f"p{i}", "response": f"r{i}"}) for i in range(3)])
    c = load_corpus(p)
    assert len(c) == 3 and c.skipped_count == 0
    assert [s.sample_id for s in c] == [0, 1, 2]


def test_load_corpus_skips_malformed(tmp_path):
    p = tmp_path / "c.jsonl"
    _write(p, [json.dumps({"prompt": "a", "response": "b"}), "{not json", json.dumps({"prompt": "c", "response": "d"})])
    c = load_corpus(p)
    assert len(c) == 2
    assert c.skipped_count == 1
    assert c.skipped["malformed_json"] == 1


def test_load_corpus_reasons(tmp_path):
    p = tmp_path / "c.jsonl"
    _write(p, [
        json.dumps({"prompt": "a", "response": "b"}),
        json.dumps({"prompt": "a"}),
        json.dumps({"prompt": "a", "response": ""}),
        json.dumps({"prompt": "a", "response": "x" * 500}),
    ])
    c = load_corpus(p)
    assert len(c) == 1
    assert dict(c.skipped) == {"bad_fields": 1, "empty_response": 1, "too_long": 1}


def test_load_corpus_errors(tmp_path):
    with pytest.raises(OSError):
        load_corpus(tmp_path / "missing.jsonl")
    p = tmp_path / "bad.jsonl"
    _write(p, ["nope", "[1, 2]"])
    with pytest.raises(FormatError):
        load_corpus(p)


def test_load_corpus_deterministic(tmp_path):
    p = tmp_path / "c.jsonl"
    _write(p, [json.dumps({"prompt": f"p{i}", "response": "é" * i + "r"}) for i in range(20)])
    assert load_corpus(p, seed=3).samples == load_corpus(p, seed=3).samples
