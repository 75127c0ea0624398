"""Episodic evaluation harness: the three modes, top-k metrics, intervals.

Modes:

* ``image_only``  -- prototypes are the means of real support embeddings;
  the text modality is never read.
* ``zsl``         -- prototypes come exclusively from generated features
  conditioned on the support samples' texts.
* ``multimodal``  -- image prototypes iteratively fused with generated text
  prototypes (the full method).

Determinism: the master seed spawns one child seed sequence per episode;
each episode derives its own sampling RNG and generation-noise RNG from that
child. Results are therefore identical regardless of the thread count, and
episodes cannot contaminate each other. For the generator-refinement rounds
the per-round generator states are advanced once, up front, from a snapshot
of the trained state: refinement training touches only base-class data, so
every episode sees the identical per-round generators it would have produced
by refining its own snapshot.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import gan, prototypes
from .episodes import sample_episode

MODES = ("image_only", "zsl", "multimodal")


@dataclass(frozen=True)
class MetricSummary:
    values: tuple        # one accuracy per episode, in episode order
    mean: float
    ci95: float


@dataclass(frozen=True)
class EvalReport:
    mode: str
    way: int
    shot: int
    episode_count: int
    seed: int
    metrics: dict        # "top1" -> MetricSummary


def topk_accuracy(ranked, truth, k) -> float:
    """1.0 iff ``truth`` appears among the first ``k`` ranked classes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked) == 0:
        raise ValueError("ranking is empty")
    return 1.0 if truth in tuple(ranked)[:k] else 0.0


def confidence_interval(values):
    """Normal-approximation 95% interval: ``(mean, 1.96 * s / sqrt(n))``."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size < 2:
        raise ValueError("need at least 2 values for a confidence interval")
    mean = float(vals.mean())
    halfwidth = 1.96 * float(vals.std(ddof=1)) / np.sqrt(vals.size)
    return mean, halfwidth


def _episode_rngs(child_seq):
    sampler_seq, noise_seq = child_seq.spawn(2)
    return np.random.default_rng(sampler_seq), np.random.default_rng(noise_seq)


def _support_items(dataset, episode, with_texts):
    out = {}
    for cid in episode.classes:
        items = []
        for sid in episode.support[cid]:
            visual = dataset.by_id(sid).visual
            texts = dataset.texts_for(sid, cap=episode.texts_cap) if with_texts else None
            items.append((visual, texts))
        out[cid] = items
    return out


def _episode_prototypes(mode, dataset, episode, base_state, round_states,
                        lam, noise_rng):
    support = _support_items(dataset, episode, with_texts=mode != "image_only")
    if mode == "image_only":
        return prototypes.PrototypeSet({
            cid: prototypes.visual_prototype([v for v, _ in items], cid)
            for cid, items in support.items()
        })
    if mode == "zsl":
        return prototypes.PrototypeSet({
            cid: prototypes.text_prototype(base_state, [t for _, t in items], cid,
                                           rng=noise_rng)
            for cid, items in sorted(support.items())
        })
    return prototypes.fusion_rounds(round_states, support, lam, rng=noise_rng)


def _episode_accuracies(dataset, episode, protoset, ks):
    ranks_ids = protoset.class_ids()
    queries, truths = [], []
    for cid in episode.classes:
        for sid in episode.query[cid]:
            queries.append(dataset.by_id(sid).visual)
            truths.append(cid)
    order = prototypes.rank_matrix(protoset, np.stack(queries))
    hits = {k: 0 for k in ks}
    for row, truth in zip(order, truths):
        ranked = [ranks_ids[i] for i in row]
        for k in ks:
            hits[k] += topk_accuracy(ranked, truth, k)
    n = len(truths)
    return {k: hits[k] / n for k in ks}


def _resolve_generator(dataset, mode, gan_config_or_state, seed):
    if mode == "image_only":
        return None
    if isinstance(gan_config_or_state, gan.GanState):
        return gan_config_or_state.snapshot()
    if isinstance(gan_config_or_state, gan.GanConfig):
        return gan.train_tcgan(dataset, gan_config_or_state)
    if gan_config_or_state is None:
        config = gan.GanConfig(text_dim=dataset.text_dim,
                               visual_dim=dataset.visual_dim, seed=seed)
        return gan.train_tcgan(dataset, config)
    raise TypeError("expected a GanConfig, GanState or None")


def evaluate(dataset, mode, way, shot, *, episodes=600, gan_model=None,
             lam=1.0, rounds=10, extra_steps_per_round=50, texts_cap=None,
             query_per_class=15, metrics=(1, 3, 5), seed=0, threads=1) -> EvalReport:
    """Run the episodic protocol and aggregate top-k accuracies.

    ``gan_model`` may be a trained :class:`~protofusion.gan.GanState`, a
    :class:`~protofusion.gan.GanConfig` to train from the base split, or
    None for defaults derived from the dataset dims (ignored for
    ``image_only``). Returns per-metric episode values plus mean and 95%
    confidence halfwidth.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if episodes < 2:
        raise ValueError("need at least 2 episodes")
    ks = tuple(sorted(set(int(k) for k in metrics)))
    if any(k < 1 for k in ks):
        raise ValueError("metric k values must be >= 1")
    for k in ks:
        if k >= way:
            warnings.warn(
                f"top-{k} accuracy is trivially 1.0 with way={way}", stacklevel=2
            )

    base_state = _resolve_generator(dataset, mode, gan_model, seed)
    round_states = None
    if mode == "multimodal":
        state = base_state
        round_states = []
        for _ in range(rounds):
            if extra_steps_per_round > 0:
                state = gan.continue_training(state, dataset, extra_steps_per_round)
            round_states.append(state)

    children = np.random.SeedSequence(seed).spawn(episodes)

    def run_one(child_seq):
        sampler_rng, noise_rng = _episode_rngs(child_seq)
        episode = sample_episode(dataset, way, shot, query_per_class,
                                 texts_cap, sampler_rng)
        protoset = _episode_prototypes(mode, dataset, episode, base_state,
                                       round_states, lam, noise_rng)
        return _episode_accuracies(dataset, episode, protoset, ks)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_episode = list(pool.map(run_one, children))
    else:
        per_episode = [run_one(c) for c in children]

    summaries = {}
    for k in ks:
        vals = tuple(acc[k] for acc in per_episode)
        mean, ci = confidence_interval(vals)
        summaries[f"top{k}"] = MetricSummary(vals, mean, ci)
    return EvalReport(mode, way, shot, episodes, seed, summaries)


def write_report_csv(report: EvalReport, fh, comments=()):
    """Emit ``mode,way,shot,metric,mean,ci95,episodes,seed`` rows."""
    for line in comments:
        fh.write(f"# {line}\n")
    fh.write("mode,way,shot,metric,mean,ci95,episodes,seed\n")
    for name in sorted(report.metrics):
        m = report.metrics[name]
        fh.write(
            f"{report.mode},{report.way},{report.shot},{name},"
            f"{m.mean!r},{m.ci95!r},{report.episode_count},{report.seed}\n"
        )
