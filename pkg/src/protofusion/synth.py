"""Deterministic synthetic multimodal embeddings, plus brute-force oracles.

The generator plants Gaussian class clusters in visual space. Each text
vector is an independent noisy view of its sample's class: a fresh draw
from the class cluster pushed through a fixed full-rank linear map, plus
per-text noise. Texts therefore carry class information complementary to
the specific support image (averaging several texts tightens the estimate
of the class mean), and an affine generator can approximately invert the
map, which is exactly the structure the feature generator exploits.

The oracles reimplement nearest-prototype scoring with plain Python loops,
independent of the numpy code paths they are used to check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset, Sample


@dataclass(frozen=True)
class SynthConfig:
    n_base_classes: int = 40
    n_novel_classes: int = 10
    samples_per_class: int = 50
    texts_per_image: int = 10
    visual_dim: int = 16
    text_dim: int = 32
    between_class_std: float = 1.0
    within_class_std: float = 1.2
    text_map_noise_std: float = 0.25
    class_noise_spread: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("n_base_classes", "n_novel_classes", "samples_per_class",
                     "texts_per_image", "visual_dim", "text_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("between_class_std", "within_class_std", "text_map_noise_std"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.class_noise_spread < 1.0:
            raise ValueError("class_noise_spread must lie in [0, 1)")
        if self.visual_dim > self.text_dim:
            raise ValueError("visual_dim must not exceed text_dim")


def generate_synthetic(config: SynthConfig) -> EmbeddingDataset:
    """Build the dataset described by ``config``; same seed, same dataset."""
    rng = np.random.default_rng(config.seed)
    n_classes = config.n_base_classes + config.n_novel_classes
    width = max(2, len(str(n_classes - 1)))
    class_ids = [f"c{i:0{width}d}" for i in range(n_classes)]
    splits = {
        cid: ("base" if i < config.n_base_classes else "novel")
        for i, cid in enumerate(class_ids)
    }

    # 1/sqrt(visual_dim) scaling keeps text coordinates near unit variance
    text_map = rng.standard_normal(
        (config.text_dim, config.visual_dim)
    ) / np.sqrt(config.visual_dim)
    means = rng.standard_normal((n_classes, config.visual_dim)) * config.between_class_std
    # novel-class images are noisier class descriptors than texts: their
    # noise is scaled into [1, 1 + 2*spread] x within_class_std, varying by
    # class, while text jitter keeps the nominal std. Noisy-image classes
    # are exactly the ones text prototypes can fix. Base classes keep the
    # nominal noise so generator training is unaffected.
    image_noise = config.within_class_std * (
        1.0 + config.class_noise_spread * (1.0 + rng.uniform(-1.0, 1.0, size=n_classes))
    )
    image_noise[:config.n_base_classes] = config.within_class_std

    samples, texts = [], {}
    for ci, cid in enumerate(class_ids):
        visuals = means[ci] + rng.standard_normal(
            (config.samples_per_class, config.visual_dim)
        ) * image_noise[ci]
        # every text gets its own class-cluster draw: texts describe the
        # class, not the pixel noise of one image
        text_points = means[ci] + rng.standard_normal(
            (config.samples_per_class, config.texts_per_image, config.visual_dim)
        ) * config.within_class_std
        noise = rng.standard_normal(
            (config.samples_per_class, config.texts_per_image, config.text_dim)
        ) * config.text_map_noise_std
        for j in range(config.samples_per_class):
            sid = f"{cid}-{j:04d}"
            samples.append(Sample(sid, cid, splits[cid], visuals[j]))
            texts[sid] = text_points[j] @ text_map.T + noise[j]

    return EmbeddingDataset(samples, texts, config.text_dim, splits)


def _loop_cosine(a, b) -> float:
    dot = sq_a = sq_b = 0.0
    for x, y in zip(a, b):
        dot += float(x) * float(y)
        sq_a += float(x) * float(x)
        sq_b += float(y) * float(y)
    return 1.0 - dot / (math.sqrt(sq_a) * math.sqrt(sq_b))


def oracle_ranking(protoset, query):
    """Exhaustive-scan ranking by cosine distance, pure-Python arithmetic."""
    scored = sorted(
        (_loop_cosine(query, protoset[cid].vector), cid)
        for cid in protoset.class_ids()
    )
    return tuple(cid for _, cid in scored)


def oracle_nearest(protoset, query):
    """Independent cross-check for nearest-prototype classification."""
    return oracle_ranking(protoset, query)[0]
