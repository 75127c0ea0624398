"""Sampling of k-way n-shot episodes from the novel split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Episode:
    """One few-shot trial: per selected class, disjoint support/query ids."""

    way: int
    shot: int
    classes: tuple
    support: dict   # class_id -> tuple of sample ids, exactly `shot` each
    query: dict     # class_id -> tuple of sample ids, disjoint from support
    texts_cap: int | None = None


def sample_episode(dataset, way, shot, query_per_class=15, texts_cap=None,
                   rng=None) -> Episode:
    """Draw one episode uniformly at random.

    Classes come uniformly without replacement from the novel classes that
    have at least ``shot + 1`` samples; supports and queries are uniform
    without replacement within each class. ``query_per_class=None`` keeps
    every held-out sample.
    """
    if rng is None:
        rng = np.random.default_rng()
    if way < 1 or shot < 1:
        raise ValueError("way and shot must be >= 1")
    if query_per_class is not None and query_per_class < 1:
        raise ValueError("query_per_class must be >= 1 or None for all")
    novel = dataset.novel_classes
    if way > len(novel):
        raise ValueError(f"way={way} exceeds the {len(novel)} novel classes")
    eligible = [c for c in novel if len(dataset.samples_of(c)) >= shot + 1]
    if way > len(eligible):
        raise ValueError(
            f"only {len(eligible)} novel classes have the {shot + 1} samples "
            f"needed for shot={shot}, cannot sample way={way}"
        )
    chosen = rng.choice(len(eligible), size=way, replace=False)
    classes = tuple(eligible[i] for i in chosen)

    support, query = {}, {}
    for cid in classes:
        ids = [s.id for s in dataset.samples_of(cid)]
        perm = rng.permutation(len(ids))
        support[cid] = tuple(ids[i] for i in perm[:shot])
        rest = perm[shot:]
        if query_per_class is not None:
            rest = rest[:query_per_class]
        query[cid] = tuple(ids[i] for i in rest)

    return Episode(way, shot, classes, support, query, texts_cap)
