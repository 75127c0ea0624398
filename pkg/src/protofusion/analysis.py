"""Behavioral studies: reduced-text ablation, prototype-shift ranking,
prototype-based retrieval. All emit plot-ready rows and CSV.

Both studies are paired: every arm (image-only baseline, multimodal at each
text budget) sees the identical episode stream, so differences isolate the
effect of the generated features. Relative ablation gain is a ratio
(multimodal mean accuracy / baseline mean accuracy); per-class shift gain is
an absolute accuracy difference. The CSV headers state the convention.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import gan, prototypes
from .episodes import sample_episode
from .evaluation import _resolve_generator, topk_accuracy
from .nnet import cosine_distance


@dataclass(frozen=True)
class AblationRow:
    texts_per_image: int
    gains: dict          # shot -> multimodal/baseline accuracy ratio


@dataclass(frozen=True)
class ShiftRow:
    rank: int
    class_id: str
    shift: float         # cosine distance between image-only and fused prototype
    gain: float          # multimodal minus baseline per-class accuracy


def _map_ordered(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _round_states(state, dataset, rounds, extra_steps_per_round):
    states = []
    for _ in range(rounds):
        if extra_steps_per_round > 0:
            state = gan.continue_training(state, dataset, extra_steps_per_round)
        states.append(state)
    return states


def _support_with_texts(dataset, episode, cap):
    out = {}
    for cid in episode.classes:
        out[cid] = [
            (dataset.by_id(sid).visual, dataset.texts_for(sid, cap=cap))
            for sid in episode.support[cid]
        ]
    return out


def _query_arrays(dataset, episode):
    queries, truths = [], []
    for cid in episode.classes:
        for sid in episode.query[cid]:
            queries.append(dataset.by_id(sid).visual)
            truths.append(cid)
    return np.stack(queries), truths


def _accuracy(protoset, queries, truths, k):
    ids = protoset.class_ids()
    order = prototypes.rank_matrix(protoset, queries)
    hits = [
        topk_accuracy([ids[i] for i in row], truth, k)
        for row, truth in zip(order, truths)
    ]
    return float(np.mean(hits))


def _image_protoset(dataset, episode):
    return prototypes.PrototypeSet({
        cid: prototypes.visual_prototype(
            [dataset.by_id(sid).visual for sid in episode.support[cid]], cid)
        for cid in episode.classes
    })


def reduced_text_ablation(dataset, gan_model=None, *, text_counts=(1, 2, 5, 10),
                          shots=(1, 2, 5), way=None, episodes=100,
                          query_per_class=15, metric_k=5, lam=1.0, rounds=10,
                          extra_steps_per_round=50, seed=0, threads=1):
    """Relative accuracy gain of the multimodal method per text budget.

    For each (texts-per-image cap k, shot n) cell: mean multimodal top-k
    accuracy with supports limited to the first ``k`` texts, divided by the
    mean image-only accuracy over the same episodes.
    """
    if way is None:
        way = len(dataset.novel_classes)
    available = min(
        dataset.text_count(s.id) for s in dataset.samples if s.split == "novel"
    )
    if max(text_counts) > available:
        raise ValueError(
            f"text cap {max(text_counts)} exceeds the {available} texts "
            f"available on every novel sample"
        )
    state = _resolve_generator(dataset, "multimodal", gan_model, seed)
    round_states = _round_states(state, dataset, rounds, extra_steps_per_round)

    shot_seqs = np.random.SeedSequence(seed).spawn(len(shots))
    gains = {k: {} for k in text_counts}
    for shot, shot_seq in zip(shots, shot_seqs):
        children = shot_seq.spawn(episodes)

        def run_one(child):
            streams = child.spawn(1 + len(text_counts))
            sampler = np.random.default_rng(streams[0])
            episode = sample_episode(dataset, way, shot, query_per_class,
                                     None, sampler)
            queries, truths = _query_arrays(dataset, episode)
            base_acc = _accuracy(_image_protoset(dataset, episode),
                                 queries, truths, metric_k)
            multi_acc = []
            for cap, stream in zip(text_counts, streams[1:]):
                support = _support_with_texts(dataset, episode, cap)
                protoset = prototypes.fusion_rounds(
                    round_states, support, lam, rng=np.random.default_rng(stream))
                multi_acc.append(_accuracy(protoset, queries, truths, metric_k))
            return base_acc, multi_acc

        results = _map_ordered(run_one, children, threads)
        base_mean = float(np.mean([r[0] for r in results]))
        if base_mean == 0.0:
            raise ValueError("image-only baseline accuracy is zero; gain undefined")
        for i, cap in enumerate(text_counts):
            multi_mean = float(np.mean([r[1][i] for r in results]))
            gains[cap][shot] = multi_mean / base_mean

    return [AblationRow(cap, gains[cap]) for cap in text_counts]


def prototype_shift_ranking(dataset, gan_model=None, *, episodes=100, way=None,
                            shot=1, query_per_class=15, metric_k=5, lam=1.0,
                            rounds=10, extra_steps_per_round=50, texts_cap=None,
                            seed=0, threads=1):
    """Classes ranked by how far fusion moves their prototype.

    Per episode and class: shift is the cosine distance between the
    image-only and the fused prototype; gain is the multimodal minus the
    image-only top-k accuracy over that class's queries. Class rows average
    over episodes and are sorted by descending shift.
    """
    if way is None:
        way = len(dataset.novel_classes)
    state = _resolve_generator(dataset, "multimodal", gan_model, seed)
    round_states = _round_states(state, dataset, rounds, extra_steps_per_round)
    children = np.random.SeedSequence(seed).spawn(episodes)

    def run_one(child):
        streams = child.spawn(2)
        sampler = np.random.default_rng(streams[0])
        episode = sample_episode(dataset, way, shot, query_per_class,
                                 texts_cap, sampler)
        image_set = _image_protoset(dataset, episode)
        support = _support_with_texts(dataset, episode, episode.texts_cap)
        multi_set = prototypes.fusion_rounds(
            round_states, support, lam, rng=np.random.default_rng(streams[1]))

        per_class = {}
        ids = image_set.class_ids()
        for cid in episode.classes:
            shift = cosine_distance(image_set[cid].vector, multi_set[cid].vector)
            qids = episode.query[cid]
            if not qids:
                per_class[cid] = (shift, None)
                continue
            queries = np.stack([dataset.by_id(sid).visual for sid in qids])
            truths = [cid] * len(qids)
            gain = (_accuracy(multi_set, queries, truths, metric_k)
                    - _accuracy(image_set, queries, truths, metric_k))
            per_class[cid] = (shift, gain)
        return per_class

    results = _map_ordered(run_one, children, threads)
    shifts, gains = {}, {}
    for per_class in results:
        for cid, (shift, gain) in per_class.items():
            shifts.setdefault(cid, []).append(shift)
            if gain is not None:
                gains.setdefault(cid, []).append(gain)

    entries = sorted(
        ((float(np.mean(shifts[cid])),
          float(np.mean(gains[cid])) if cid in gains else 0.0, cid)
         for cid in shifts),
        key=lambda e: (-e[0], e[2]),
    )
    return [
        ShiftRow(rank, cid, shift, gain)
        for rank, (shift, gain, cid) in enumerate(entries, start=1)
    ]


def shift_gain_correlation(rows) -> float:
    """Spearman rank correlation between prototype shift and accuracy gain."""
    res = stats.spearmanr([r.shift for r in rows], [r.gain for r in rows])
    return float(res.statistic)


def retrieve_nearest(prototype, samples, m):
    """Ids of the ``m`` samples closest to ``prototype`` by cosine distance.

    ``samples`` is an iterable of objects carrying ``id`` and ``visual``.
    Ties order by sample id; when ``m`` exceeds the pool every id is
    returned and a warning is issued.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    vec = getattr(prototype, "vector", prototype)
    scored = sorted(
        (cosine_distance(vec, s.visual), s.id) for s in samples
    )
    if m > len(scored):
        warnings.warn(
            f"requested {m} results but only {len(scored)} samples exist",
            stacklevel=2,
        )
    return [sid for _, sid in scored[:m]]


# ---------------------------------------------------------------------------
# CSV emitters (ratio vs difference conventions stated in the headers)


def write_ablation_csv(rows, shots, fh, comments=()):
    for line in comments:
        fh.write(f"# {line}\n")
    fh.write("# gain columns are accuracy ratios relative to the image-only baseline\n")
    fh.write("k," + ",".join(f"gain_{n}shot" for n in shots) + "\n")
    for row in rows:
        cells = [str(row.texts_per_image)] + [repr(row.gains[n]) for n in shots]
        fh.write(",".join(cells) + "\n")


def write_shift_csv(rows, fh, comments=()):
    for line in comments:
        fh.write(f"# {line}\n")
    fh.write("# shift is a cosine distance; gain is an absolute accuracy difference\n")
    fh.write("rank,class,shift,gain\n")
    for row in rows:
        fh.write(f"{row.rank},{row.class_id},{row.shift!r},{row.gain!r}\n")


def write_retrieval_csv(prototype, samples, m, fh, comments=()):
    for line in comments:
        fh.write(f"# {line}\n")
    vec = getattr(prototype, "vector", prototype)
    by_id = {s.id: s for s in samples}
    fh.write("rank,id,distance\n")
    for rank, sid in enumerate(retrieve_nearest(prototype, samples, m), start=1):
        fh.write(f"{rank},{sid},{cosine_distance(vec, by_id[sid].visual)!r}\n")
