"""Word-level tokenization and fixed-shape document encoding."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyCorpus, InputShapeError, IoError

PAD, CLS, SEP, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")
SPECIAL_IDS = frozenset((PAD, CLS, SEP, UNK))

# sentence-final punctuation only splits when followed by whitespace or end of text,
# so decimals such as "3.5" stay inside one sentence
_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")
_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_PUNCT_ONLY = re.compile(r"^[^\w]+$", re.UNICODE)

STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just let me more most my myself
    no nor not now of off on once only or other our ours ourselves out over own
    same she should so some such than that the their theirs them themselves then
    there these they this those through to too under until up very was we were
    what when where which while who whom why will with would you your yours
    yourself yourselves may might must shall also
    """.split()
)


def split_sentences(text: str) -> list[str]:
    parts = _SENTENCE_END.split(text)
    return [p.strip() for p in parts if p.strip()]


def tokenize(sentence: str) -> list[str]:
    return [t.lower() for t in _TOKEN.findall(sentence)]


def is_punctuation(token: str) -> bool:
    return bool(_PUNCT_ONLY.match(token))


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    stopwords: frozenset = STOPWORDS
    token_to_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIAL_TOKENS:
            raise InputShapeError("vocabulary must start with the four special tokens")
        mapping = {t: i for i, t in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise InputShapeError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self):
        return self.size

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def is_displayable(self, token_id: int) -> bool:
        """False for special, stopword and punctuation-only tokens."""
        if token_id in SPECIAL_IDS:
            return False
        tok = self.id_to_token[token_id]
        return tok not in self.stopwords and not is_punctuation(tok)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.id_to_token).encode("utf-8"))
        h.update(b"\x00")
        h.update("\n".join(sorted(self.stopwords)).encode("utf-8"))
        return h.hexdigest()

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.id_to_token), "stopwords": sorted(self.stopwords)}, indent=0)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        data = json.loads(text)
        return cls(tuple(data["tokens"]), frozenset(data["stopwords"]))


def build_vocabulary(training_documents: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts: Counter = Counter()
    n_docs = 0
    for text in training_documents:
        n_docs += 1
        for sent in split_sentences(text):
            counts.update(tokenize(sent))
    if n_docs == 0 or not counts:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    kept = [t for t in kept if t not in SPECIAL_TOKENS]
    return Vocabulary(SPECIAL_TOKENS + tuple(kept))


@dataclass
class EncodedDocument:
    doc_id: str
    year: int
    token_ids: np.ndarray
    token_mask: np.ndarray
    sentence_mask: np.ndarray
    label: Optional[int] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.token_ids.shape

    def copy(self) -> "EncodedDocument":
        return EncodedDocument(
            self.doc_id,
            self.year,
            self.token_ids.copy(),
            self.token_mask.copy(),
            self.sentence_mask.copy(),
            self.label,
        )

    def same_as(self, other: "EncodedDocument") -> bool:
        return (
            self.doc_id == other.doc_id
            and self.year == other.year
            and self.label == other.label
            and np.array_equal(self.token_ids, other.token_ids)
            and np.array_equal(self.token_mask, other.token_mask)
            and np.array_equal(self.sentence_mask, other.sentence_mask)
        )


def encode_document(
    text: str,
    vocab: Vocabulary,
    L: int = 350,
    l: int = 40,
    *,
    doc_id: str = "",
    year: int = 0,
    label: Optional[int] = None,
) -> EncodedDocument:
    if l < 3 or L < 1:
        raise InputShapeError(f"grid must be at least 1x3, got {L}x{l}")
    ids = np.full((L, l), PAD, dtype=np.int64)
    for row, sent in enumerate(split_sentences(text)[:L]):
        toks = [vocab.lookup(t) for t in tokenize(sent)][: l - 2]
        seq = [CLS, *toks, SEP]
        ids[row, : len(seq)] = seq
    token_mask = ids != PAD
    return EncodedDocument(doc_id, int(year), ids, token_mask, token_mask.any(axis=1), label)


def decode_row(row_ids, vocab: Vocabulary) -> list[str]:
    return [vocab.id_to_token[i] for i in row_ids if i not in (PAD, CLS, SEP)]


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    year: int
    text: str


def read_jsonl(path) -> list[RawDocument]:
    docs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    docs.append(RawDocument(str(rec["doc_id"]), int(rec["year"]), str(rec["text"])))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise IoError(f"{path}:{lineno}: bad record ({exc})") from exc
    except OSError as exc:
        raise IoError(f"cannot read corpus {path}: {exc}") from exc
    return docs


def write_jsonl(path, docs: Iterable[RawDocument]):
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({"doc_id": d.doc_id, "year": d.year, "text": d.text}) + "\n")


class CorpusStore:
    """Keyed access to raw documents with an access log.

    Every lookup is appended to ``audit`` as ``(phase, doc_id)`` so callers
    can prove which documents a stage touched.
    """

    def __init__(self, docs: Iterable[RawDocument]):
        self._docs = {d.doc_id: d for d in docs}
        self.audit: list[tuple[str, str]] = []
        self.phase = ""

    def __contains__(self, doc_id):
        return doc_id in self._docs

    def __len__(self):
        return len(self._docs)

    def ids(self) -> list[str]:
        return list(self._docs)

    def year_of(self, doc_id: str) -> int:
        # metadata only; does not count as reading the text
        return self._docs[doc_id].year

    def get(self, doc_id: str) -> RawDocument:
        self.audit.append((self.phase, doc_id))
        return self._docs[doc_id]


CACHE_MAGIC = b"RRENC001"


def save_encoded(path, docs: list[EncodedDocument], vocab: Vocabulary):
    """Binary cache of encoded documents, keyed by the vocabulary hash."""
    header = {
        "vocab_hash": vocab.content_hash(),
        "docs": [{"doc_id": d.doc_id, "year": d.year, "label": d.label} for d in docs],
        "shape": list(docs[0].shape) if docs else [0, 0],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for d in docs:
            fh.write(d.token_ids.astype("<i8").tobytes())
    tmp.replace(path)


def load_encoded(path, vocab: Vocabulary) -> Optional[list[EncodedDocument]]:
    """Cached documents, or None when the cache is missing or stale."""
    try:
        raw = Path(path).read_bytes()
    except OSError:
        return None
    if raw[:8] != CACHE_MAGIC:
        return None
    size = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + size])
    if header["vocab_hash"] != vocab.content_hash():
        return None
    L, l = header["shape"]
    body = np.frombuffer(raw[16 + size :], dtype="<i8").reshape(len(header["docs"]), L, l)
    out = []
    for meta, grid in zip(header["docs"], body):
        ids = grid.astype(np.int64)
        mask = ids != PAD
        out.append(EncodedDocument(meta["doc_id"], meta["year"], ids, mask, mask.any(axis=1), meta["label"]))
    return out
