"""Knowledge base, review corpus, and embedding store: data model plus file ingestion.

Entities and reviews are read from line-delimited JSON. Embeddings live in a
compact binary store (magic ``AMEV1``) shared by every stage of the pipeline.
All containers are treated as immutable after load and are safe for concurrent
readers.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AMEV_MAGIC = b"AMEV1"
_HEADER = struct.Struct("<IQB")  # dim, row count, normalized flag
_KEYLEN = struct.Struct("<H")

DEFAULT_MAX_REVIEW_TOKENS = 500


class CorpusError(ValueError):
    """Malformed corpus input: bad JSON line, duplicate id, or a broken store file."""


@dataclass
class MentionSpan:
    """Character span of a product mention inside a review text."""

    surface: str
    start: int
    end: int


@dataclass
class Entity:
    """A KB product: title, description, category path (leaf last), attributes, image keys."""

    entity_id: str
    title: str
    description: str
    categories: list[str]
    attributes: dict[str, str]
    image_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.entity_id:
            raise CorpusError("entity with empty entity_id")
        if not self.categories:
            raise CorpusError(f"entity {self.entity_id!r} has no categories")
        # The product name is itself an attribute and always mirrors the title.
        if self.attributes.get("name") != self.title:
            self.attributes["name"] = self.title

    @property
    def leaf_category(self) -> str:
        return self.categories[-1]

    @property
    def first_image_id(self) -> str | None:
        return self.image_ids[0] if self.image_ids else None

    def to_json(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "title": self.title,
            "description": self.description,
            "categories": list(self.categories),
            "attributes": dict(self.attributes),
            "image_ids": list(self.image_ids),
        }


@dataclass
class Review:
    """A user review carrying an optional detected mention and optional gold entity."""

    review_id: str
    text: str
    mention: MentionSpan | None = None
    image_ids: list[str] = field(default_factory=list)
    gold_entity_id: str | None = None
    extracted_attributes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.review_id:
            raise CorpusError("review with empty review_id")
        if self.mention is not None:
            m = self.mention
            if not (0 <= m.start <= m.end <= len(self.text)) or self.text[m.start : m.end] != m.surface:
                raise CorpusError(
                    f"review {self.review_id!r}: mention span [{m.start}:{m.end}] does not match surface {m.surface!r}"
                )

    @property
    def first_image_id(self) -> str | None:
        return self.image_ids[0] if self.image_ids else None

    def to_json(self) -> dict:
        mention = None
        if self.mention is not None:
            mention = {"surface": self.mention.surface, "start": self.mention.start, "end": self.mention.end}
        return {
            "review_id": self.review_id,
            "text": self.text,
            "mention": mention,
            "image_ids": list(self.image_ids),
            "gold_entity_id": self.gold_entity_id,
            "extracted_attributes": dict(self.extracted_attributes),
        }


@dataclass
class KnowledgeBase:
    """Id-keyed entity collection plus derived category and attribute vocabularies."""

    entities: dict[str, Entity]
    category_vocabulary: set[str]
    attribute_vocabulary: dict[str, set[str]]

    @classmethod
    def from_entities(cls, entities) -> "KnowledgeBase":
        by_id: dict[str, Entity] = {}
        for entity in entities:
            if entity.entity_id in by_id:
                raise CorpusError(f"duplicate entity_id {entity.entity_id!r}")
            by_id[entity.entity_id] = entity
        ordered = {eid: by_id[eid] for eid in sorted(by_id)}
        categories: set[str] = set()
        attributes: dict[str, set[str]] = {}
        for entity in ordered.values():
            categories.update(entity.categories)
            for key, value in entity.attributes.items():
                attributes.setdefault(key, set()).add(value)
        return cls(entities=ordered, category_vocabulary=categories, attribute_vocabulary=attributes)

    def __len__(self) -> int:
        return len(self.entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.entities

    def __iter__(self):
        return iter(self.entities.values())

    def get(self, entity_id: str) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise CorpusError(f"unknown entity_id {entity_id!r}") from None


def _iter_jsonl(path):
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def _entity_from_record(record: dict, context: str) -> Entity:
    try:
        return Entity(
            entity_id=str(record["entity_id"]),
            title=str(record["title"]),
            description=str(record.get("description", "")),
            categories=[str(c) for c in record["categories"]],
            attributes={str(k): str(v) for k, v in dict(record.get("attributes", {})).items()},
            image_ids=[str(i) for i in record.get("image_ids", [])],
        )
    except KeyError as exc:
        raise CorpusError(f"{context}: missing field {exc.args[0]!r}") from exc
    except (TypeError, CorpusError) as exc:
        raise CorpusError(f"{context}: {exc}") from exc


def load_kb(path) -> KnowledgeBase:
    """Load entities.jsonl into a KnowledgeBase with deterministic (sorted) iteration order."""
    entities: dict[str, Entity] = {}
    for lineno, record in _iter_jsonl(path):
        entity = _entity_from_record(record, f"{Path(path)}:{lineno}")
        if entity.entity_id in entities:
            raise CorpusError(f"{Path(path)}:{lineno}: duplicate entity_id {entity.entity_id!r}")
        entities[entity.entity_id] = entity
    return KnowledgeBase.from_entities(entities.values())


def _review_from_record(record: dict, context: str) -> Review:
    try:
        mention = None
        raw = record.get("mention")
        if raw is not None:
            mention = MentionSpan(surface=str(raw["surface"]), start=int(raw["start"]), end=int(raw["end"]))
        return Review(
            review_id=str(record["review_id"]),
            text=str(record["text"]),
            mention=mention,
            image_ids=[str(i) for i in record.get("image_ids", [])],
            gold_entity_id=record.get("gold_entity_id"),
            extracted_attributes={str(k): str(v) for k, v in dict(record.get("extracted_attributes", {})).items()},
        )
    except KeyError as exc:
        raise CorpusError(f"{context}: missing field {exc.args[0]!r}") from exc
    except (TypeError, CorpusError) as exc:
        raise CorpusError(f"{context}: {exc}") from exc


def load_reviews(path, max_tokens: int = DEFAULT_MAX_REVIEW_TOKENS) -> tuple[list[Review], list[Review]]:
    """Load reviews.jsonl, partitioning into (kept, dropped_too_long) by whitespace token count.

    Reviews of exactly ``max_tokens`` tokens are kept; longer ones are dropped.
    """
    kept: list[Review] = []
    dropped: list[Review] = []
    for lineno, record in _iter_jsonl(path):
        review = _review_from_record(record, f"{Path(path)}:{lineno}")
        if len(review.text.split()) > max_tokens:
            dropped.append(review)
        else:
            kept.append(review)
    return kept, dropped


def write_jsonl(records, path) -> None:
    """Write an iterable of JSON-serializable dicts as UTF-8, LF-terminated lines."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            handle.write("\n")


class EmbeddingStore:
    """Fixed-dimension float32 vectors keyed by string, with an AMEV1 binary serialization."""

    def __init__(self, dim: int, normalized: bool = False):
        if dim <= 0:
            raise CorpusError(f"embedding dim must be positive, got {dim}")
        self.dim = int(dim)
        self.normalized = bool(normalized)
        self.rows: dict[str, np.ndarray] = {}
        self._dense: tuple[list[str], np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, key: str) -> bool:
        return key in self.rows

    def get(self, key: str) -> np.ndarray | None:
        return self.rows.get(key)

    def add(self, key: str, vector) -> None:
        vec = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vec.shape != (self.dim,):
            raise CorpusError(f"vector for key {key!r} has dim {vec.shape[0]}, store dim is {self.dim}")
        if self.normalized:
            norm = float(np.linalg.norm(vec.astype(np.float64)))
            if abs(norm - 1.0) > 1e-5:
                raise CorpusError(f"vector for key {key!r} flagged normalized but has norm {norm:.8f}")
        self.rows[key] = vec
        self._dense = None

    def dense(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        """Key-sorted view: (keys, matrix of rows, float64 row norms). Cached until mutation."""
        if self._dense is None:
            keys = sorted(self.rows)
            if keys:
                matrix = np.stack([self.rows[k] for k in keys]).astype(np.float64)
            else:
                matrix = np.zeros((0, self.dim), dtype=np.float64)
            norms = np.linalg.norm(matrix, axis=1)
            self._dense = (keys, matrix, norms)
        return self._dense


def write_embeddings(store: EmbeddingStore, path) -> None:
    """Serialize a store; ``read_embeddings`` recovers dim, keys, and every float bit-exactly."""
    with Path(path).open("wb") as handle:
        handle.write(AMEV_MAGIC)
        handle.write(_HEADER.pack(store.dim, len(store.rows), 1 if store.normalized else 0))
        for key, vec in store.rows.items():
            encoded = key.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CorpusError(f"embedding key too long ({len(encoded)} bytes)")
            handle.write(_KEYLEN.pack(len(encoded)))
            handle.write(encoded)
            handle.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def read_embeddings(path) -> EmbeddingStore:
    """Read an AMEV1 store, validating magic, header/payload consistency, and unit norms."""
    data = Path(path).read_bytes()
    if data[: len(AMEV_MAGIC)] != AMEV_MAGIC:
        raise CorpusError(f"{path}: not an AMEV1 embedding store (bad magic)")
    offset = len(AMEV_MAGIC)
    if len(data) < offset + _HEADER.size:
        raise CorpusError(f"{path}: corrupted store (truncated header)")
    dim, count, normalized = _HEADER.unpack_from(data, offset)
    offset += _HEADER.size
    store = EmbeddingStore(dim=dim, normalized=bool(normalized))
    row_bytes = dim * 4
    for index in range(count):
        if len(data) < offset + _KEYLEN.size:
            raise CorpusError(f"{path}: corrupted store (truncated at row {index})")
        (key_len,) = _KEYLEN.unpack_from(data, offset)
        offset += _KEYLEN.size
        if len(data) < offset + key_len + row_bytes:
            raise CorpusError(f"{path}: corrupted store (row {index} payload does not match header dim {dim})")
        key = data[offset : offset + key_len].decode("utf-8")
        offset += key_len
        vec = np.frombuffer(data[offset : offset + row_bytes], dtype="<f4").copy()
        offset += row_bytes
        if key in store.rows:
            raise CorpusError(f"{path}: corrupted store (duplicate key {key!r})")
        store.add(key, vec)
    if offset != len(data):
        raise CorpusError(f"{path}: corrupted store ({len(data) - offset} trailing bytes)")
    return store
