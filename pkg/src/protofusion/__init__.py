"""Few-shot nearest-prototype classification with text-conditioned feature
generation and multimodal prototype fusion."""

from .data import EmbeddingDataset, Sample, load_dataset, write_dataset
from .episodes import Episode, sample_episode
from .errors import DataValidationError, NumericalError
from .evaluation import (EvalReport, confidence_interval, evaluate,
                         topk_accuracy, write_report_csv)
from .gan import (GanConfig, GanState, condition_augment, discriminate,
                  encode_sample_texts, gan_losses, generate_feature,
                  init_gan_state, load_gan_state, save_gan_state, train_step,
                  train_tcgan)
from .nnet import (AdamState, Layer, adam_init, adam_update, cosine_distance,
                   grad_check, mlp_backward, mlp_forward)
from .prototypes import (Prototype, PrototypeSet, classify, fuse,
                         refine_multimodal_prototypes, text_prototype,
                         visual_prototype)
from .synth import SynthConfig, generate_synthetic, oracle_nearest, oracle_ranking

__version__ = "0.1.0"

__all__ = [
    "AdamState", "DataValidationError", "EmbeddingDataset", "Episode",
    "EvalReport", "GanConfig", "GanState", "Layer", "NumericalError",
    "Prototype", "PrototypeSet", "Sample", "SynthConfig", "adam_init",
    "adam_update", "classify", "condition_augment", "confidence_interval",
    "cosine_distance", "discriminate", "encode_sample_texts", "evaluate",
    "fuse", "gan_losses", "generate_feature", "generate_synthetic",
    "grad_check", "init_gan_state", "load_dataset", "load_gan_state",
    "mlp_backward", "mlp_forward", "oracle_nearest", "oracle_ranking",
    "refine_multimodal_prototypes", "sample_episode", "save_gan_state",
    "text_prototype", "topk_accuracy", "train_step", "train_tcgan",
    "visual_prototype", "write_dataset", "write_report_csv",
]
