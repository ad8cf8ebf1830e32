"""Prompt/response ingestion with a byte-level tokenizer.

Token ids ``0..N_SPECIAL-1`` are reserved for special tokens; every other id
is a raw byte shifted by ``N_SPECIAL``.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyResponse, FormatError, SampleTooLong

logger = logging.getLogger(__name__)

PAD, BOS, END, USER, ASSISTANT = range(5)
N_SPECIAL = 5
VOCAB_SIZE = 256 + N_SPECIAL
SPECIAL_NAMES = {PAD: "<pad>", BOS: "<bos>", END: "<end>", USER: "<|User|>", ASSISTANT: "<|Assistant|>"}


def tokenize(text: str) -> list[int]:
    return [b + N_SPECIAL for b in text.encode("utf-8")]


def detokenize(ids: Iterable[int]) -> str:
    """Inverse of :func:`tokenize`. Special ids are dropped."""
    return bytes(i - N_SPECIAL for i in ids if i >= N_SPECIAL).decode("utf-8")


def token_repr(token_id: int) -> str:
    """Printable form of one token, used by the visualizer."""
    if token_id < N_SPECIAL:
        return SPECIAL_NAMES[token_id]
    return bytes([token_id - N_SPECIAL]).decode("latin-1")


@dataclass(frozen=True)
class TemplateSpec:
    """Chat template marking the user and assistant roles.

    With ``collapse_tags`` the role tags become the single special ids
    USER / ASSISTANT; otherwise they are tokenized as literal text.
    """

    user_tag: str = "<|User|>\n"
    assistant_tag: str = "\n<|Assistant|>\n"
    collapse_tags: bool = True
    max_seq_len: int = 256

    def role_ids(self, role: str) -> list[int]:
        if role == "user":
            return [USER] if self.collapse_tags else tokenize(self.user_tag)
        if role == "assistant":
            return [ASSISTANT] if self.collapse_tags else tokenize(self.assistant_tag)
        raise ValueError(f"unknown role {role!r}")


@dataclass(frozen=True)
class RawRecord:
    prompt: str
    response: str


@dataclass(frozen=True)
class TokenizedSample:
    ids: tuple[int, ...]
    prompt_len: int
    sample_id: int = 0

    @property
    def total_len(self) -> int:
        return len(self.ids)

    @property
    def resp_len(self) -> int:
        return len(self.ids) - self.prompt_len

    @property
    def prompt_positions(self) -> range:
        return range(0, self.prompt_len)

    @property
    def resp_positions(self) -> range:
        return range(self.prompt_len, self.total_len)

    def __post_init__(self):
        if self.prompt_len < 1 or self.resp_len < 1:
            raise ValueError(
                f"sample needs prompt_len >= 1 and resp_len >= 1, got {self.prompt_len}/{self.resp_len}"
            )


def assemble_sample(record: RawRecord, template: TemplateSpec = TemplateSpec(), sample_id: int = 0) -> TokenizedSample:
    if not record.response.strip():
        raise EmptyResponse("response is empty after trimming whitespace")
    prompt_ids = template.role_ids("user") + tokenize(record.prompt) + template.role_ids("assistant")
    resp_ids = tokenize(record.response) + [END]
    total = len(prompt_ids) + len(resp_ids)
    if total > template.max_seq_len:
        raise SampleTooLong(f"{total} tokens exceeds max_seq_len={template.max_seq_len}")
    return TokenizedSample(ids=tuple(prompt_ids + resp_ids), prompt_len=len(prompt_ids), sample_id=sample_id)


@dataclass
class Corpus:
    samples: list[TokenizedSample]
    split: str = "train"
    skipped: Counter = field(default_factory=Counter)
    seed: int = 0

    @property
    def skipped_count(self) -> int:
        return sum(self.skipped.values())

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def parse_record(line: str) -> RawRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise FormatError("line is not a JSON object")
    prompt, response = obj.get("prompt"), obj.get("response")
    if not isinstance(prompt, str) or not isinstance(response, str):
        raise FormatError('missing string fields "prompt"/"response"')
    return RawRecord(prompt, response)


def load_corpus(
    path: str | Path, template: TemplateSpec = TemplateSpec(), seed: int = 0, split: str = "train"
) -> Corpus:
    """Read a JSONL file of ``{"prompt", "response"}`` objects, in file order.

    Bad lines are skipped and tallied by reason; a file with no usable line
    raises :class:`FormatError`. ``sample_id`` is the 0-based line number.
    """
    path = Path(path)
    samples: list[TokenizedSample] = []
    skipped: Counter = Counter()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                record = parse_record(line)
                samples.append(assemble_sample(record, template, sample_id=lineno))
            except json.JSONDecodeError:
                skipped["malformed_json"] += 1
            except FormatError:
                skipped["bad_fields"] += 1
            except EmptyResponse:
                skipped["empty_response"] += 1
            except SampleTooLong:
                skipped["too_long"] += 1
    if skipped:
        logger.warning("%s: skipped %d lines %s", path, sum(skipped.values()), dict(skipped))
    if not samples:
        raise FormatError(f"{path}: no parsable lines")
    return Corpus(samples=samples, split=split, skipped=skipped, seed=seed)


def write_records(path: str | Path, records: Sequence[RawRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"prompt": r.prompt, "response": r.response}, ensure_ascii=False) + "\n")
