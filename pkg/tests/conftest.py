import json

import numpy as np
import pytest

from attrlink.corpus import Entity, KnowledgeBase, Review


def make_entity(entity_id, title, categories=("gadgets",), description="", attributes=None, image_ids=()):
    return Entity(
        entity_id=entity_id,
        title=title,
        description=description,
        categories=list(categories),
        attributes=dict(attributes or {}),
        image_ids=list(image_ids),
    )


def make_kb(*entities):
    return KnowledgeBase.from_entities(entities)


def make_review(review_id, text, **kwargs):
    return Review(review_id=review_id, text=text, **kwargs)


def write_lines(path, records):
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(0)
