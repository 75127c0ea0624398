"""Class prototypes, multimodal fusion and nearest-prototype classification.

A prototype is the mean of a class's support vectors in the visual embedding
space. Three flavours exist:

* image-only  -- mean of the real support-image embeddings;
* text-only   -- mean over support samples of the per-sample average of
  generated features, one per available text;
* multimodal  -- the image prototype repeatedly pulled toward a freshly
  generated text prototype via ``p <- (p + lam * p_T) / (1 + lam)``.

Classification assigns a query to the class with the smallest cosine
distance; ties break toward the smallest class id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gan, nnet

PROVENANCES = ("image_only", "text_only", "multimodal")


@dataclass(frozen=True)
class Prototype:
    class_id: str
    vector: np.ndarray
    provenance: str
    support_count: int

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        object.__setattr__(self, "vector", vec)
        if vec.ndim != 1:
            raise ValueError("prototype vector must be 1-D")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"prototype for {self.class_id!r} has non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.support_count < 1:
            raise ValueError("support_count must be >= 1")


@dataclass(frozen=True)
class PrototypeSet:
    """Class id -> prototype, all sharing one dimension; cosine distance."""

    prototypes: dict

    def __post_init__(self):
        if not self.prototypes:
            raise ValueError("prototype set is empty")
        dims = {p.vector.shape[0] for p in self.prototypes.values()}
        if len(dims) != 1:
            raise ValueError(f"prototype dims differ: {sorted(dims)}")
        for cid, p in self.prototypes.items():
            if cid != p.class_id:
                raise ValueError(f"key {cid!r} does not match prototype class {p.class_id!r}")

    @property
    def dim(self) -> int:
        return next(iter(self.prototypes.values())).vector.shape[0]

    def class_ids(self):
        return tuple(sorted(self.prototypes))

    def __getitem__(self, class_id) -> Prototype:
        return self.prototypes[class_id]


def visual_prototype(support, class_id) -> Prototype:
    """Arithmetic mean of the real support vectors for one class."""
    vectors = [np.asarray(v, dtype=np.float64) for v in support]
    if not vectors:
        raise ValueError(f"class {class_id!r} has an empty support set")
    mat = np.stack(vectors)
    return Prototype(class_id, mat.mean(axis=0), "image_only", len(vectors))


def text_prototype(state, support_texts, class_id, rng=None, frozen_noise=None) -> Prototype:
    """Mean over support samples of their averaged generated features.

    ``support_texts`` holds one ``(n_texts, text_dim)`` matrix per support
    sample. ``frozen_noise``, when given, is a matching list of per-sample
    noise matrices for deterministic generation.
    """
    if not support_texts:
        raise ValueError(f"class {class_id!r} has an empty support set")
    encoded = []
    for i, texts in enumerate(support_texts):
        noise = frozen_noise[i] if frozen_noise is not None else None
        encoded.append(gan.encode_sample_texts(state, texts, frozen_noise=noise, rng=rng))
    return Prototype(class_id, np.stack(encoded).mean(axis=0), "text_only",
                     len(support_texts))


def fuse(p: Prototype, p_t: Prototype, lam: float) -> Prototype:
    """Weighted average ``(p + lam * p_T) / (1 + lam)``, provenance multimodal."""
    if p.class_id != p_t.class_id:
        raise ValueError(f"class mismatch: {p.class_id!r} vs {p_t.class_id!r}")
    if p.vector.shape != p_t.vector.shape:
        raise ValueError("prototype dims differ")
    if lam < 0:
        raise ValueError("fusion weight must be >= 0")
    vec = (p.vector + lam * p_t.vector) / (1.0 + lam)
    return Prototype(p.class_id, vec, "multimodal", p.support_count)


def fusion_rounds(round_states, support_by_class, lam, rng=None, frozen_noise=None):
    """Core of the iterative refinement: one fuse step per generator state.

    ``round_states`` supplies the generator to use in each round (they may
    all be the same state for the noise-only reading). ``support_by_class``
    maps class id to a list of ``(visual_vec, texts_matrix)`` pairs. Classes
    are processed in sorted order so random draws are reproducible.
    """
    protos = {
        cid: visual_prototype([v for v, _ in items], cid)
        for cid, items in support_by_class.items()
    }
    order = sorted(support_by_class)
    for state in round_states:
        for cid in order:
            items = support_by_class[cid]
            noise = frozen_noise.get(cid) if frozen_noise is not None else None
            p_t = text_prototype(state, [t for _, t in items], cid,
                                 rng=rng, frozen_noise=noise)
            protos[cid] = fuse(protos[cid], p_t, lam)
    return PrototypeSet(protos)


def refine_multimodal_prototypes(state, support_by_class, base_dataset, *,
                                 rounds=10, lam=1.0, extra_steps_per_round=50,
                                 rng=None, frozen_noise=None):
    """Iteratively fuse image prototypes with generated text prototypes.

    Starts from the per-class visual prototypes; each round first advances
    adversarial training by ``extra_steps_per_round`` batches of base-class
    data (0 keeps the generator fixed and only resamples noise), then
    recomputes the text prototypes and fuses them in. Returns the final
    ``(PrototypeSet, GanState)``; the input state is not modified, but its
    RNG stream is shared unless the caller snapshots first.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    round_states = []
    for _ in range(rounds):
        if extra_steps_per_round > 0:
            state = gan.continue_training(state, base_dataset, extra_steps_per_round)
        round_states.append(state)
    protos = fusion_rounds(round_states, support_by_class, lam,
                           rng=rng if rng is not None else state.rng,
                           frozen_noise=frozen_noise)
    return protos, state


def classify(prototypes: PrototypeSet, query):
    """Nearest-prototype prediction plus the full distance ranking.

    Returns ``(predicted_class, ranked_class_ids)`` with classes ordered by
    ascending cosine distance, ties by class id.
    """
    q = np.asarray(query, dtype=np.float64)
    scored = []
    for cid in prototypes.class_ids():
        scored.append((nnet.cosine_distance(q, prototypes[cid].vector), cid))
    scored.sort()
    ranked = tuple(cid for _, cid in scored)
    return ranked[0], ranked


def rank_matrix(prototypes: PrototypeSet, queries):
    """Vectorized ranking of many queries at once.

    Returns an ``(n_queries, n_classes)`` array of indices into
    ``prototypes.class_ids()``, each row ordered by ascending cosine
    distance with ties broken toward the smaller class id.
    """
    ids = prototypes.class_ids()
    P = np.stack([prototypes[c].vector for c in ids])
    Q = np.asarray(queries, dtype=np.float64)
    qn = np.linalg.norm(Q, axis=1)
    pn = np.linalg.norm(P, axis=1)
    if np.any(qn == 0.0) or np.any(pn == 0.0):
        raise ValueError("cosine distance is undefined for zero-norm vectors")
    dist = 1.0 - (Q @ P.T) / np.outer(qn, pn)
    # stable sort on distance preserves the ascending-class-id tie order
    return np.argsort(dist, axis=1, kind="stable")
