"""Synthetic scene graphs and records for tests, benchmarks and demos."""

from __future__ import annotations

import random

from .model import DatasetRecord, Item, Relation, SceneGraph

LABELS = ("person", "dog", "tree", "car", "building", "sky", "bag", "horse", "hat", "table",
          "cup", "mountain", "river", "bench", "flower", "lamp")
ATTRIBUTES = ("tall", "small", "red", "green", "young", "old", "wooden", "bright", "dark", "white",
              "ornate", "vast", "colorful", "arc-shaped", "female", "male")
RELATIONS = ("holding", "riding", "surrounded by", "adjacent to", "standing on", "span over",
             "adorn", "looking at", "sitting on", "hanging from", "leaning against", "next to")
CAPTION_WORDS = ("a", "the", "photo", "of", "beautiful", "Paris", "sunset", "over", "lake",
                 "Yosemite", "Park", "with", "in", "dog", "garden", "California", "and", "old", "house")


def random_graph(rng: random.Random, max_items: int = 8, max_relations: int | None = None,
                 n_relations: int | None = None, min_attributes: int = 1, max_attributes: int = 3,
                 shuffle_ids: bool = True) -> SceneGraph:
    n_items = rng.randint(1, max_items)
    ids = list(range(n_items * 3))
    ids = rng.sample(ids, n_items) if shuffle_ids else list(range(n_items))
    items = tuple(
        Item(i, rng.choice(LABELS),
             tuple(rng.choice(ATTRIBUTES) for _ in range(rng.randint(min_attributes, max_attributes))))
        for i in ids
    )
    if n_relations is None:
        hi = max_relations if max_relations is not None else n_items + 2
        n_relations = rng.randint(0, hi)
    relations = tuple(
        Relation(t, rng.choice(ids), rng.choice(RELATIONS), rng.choice(ids)) for t in range(n_relations)
    )
    return SceneGraph(items, relations)


def random_caption(rng: random.Random, n_words: int | None = None) -> str:
    n = n_words if n_words is not None else rng.randint(3, 20)
    words = [rng.choice(CAPTION_WORDS) for _ in range(n)]
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def random_record(rng: random.Random, img_id: str, **graph_kwargs) -> DatasetRecord:
    score = f"{rng.uniform(6.5001, 8.0):.15f}"
    return DatasetRecord(img_id, f"{img_id}.jpg", random_caption(rng), score,
                         f"https://example.org/{img_id}.jpg", random_graph(rng, **graph_kwargs))


def synthetic_corpus(n: int, seed: int = 0, **graph_kwargs) -> list[DatasetRecord]:
    rng = random.Random(seed)
    return [random_record(rng, str(100000 + i), **graph_kwargs) for i in range(n)]
