"""Text-conditional visual-feature generator with adversarial training.

The generator maps a text embedding through a reparameterized Gaussian
conditioning layer (two linear maps producing mu and log-sigma, sampled as
``mu + exp(log_sigma) * eps``) and a small dense net into the visual
embedding space. The discriminator runs the visual vector through a shared
trunk; the unconditional real/fake head and the class-logit head read the
trunk features alone, while the conditional real/fake head reads the trunk
features concatenated with the conditioning vector. Keeping the condition
away from the class head matters: were the class head fed the conditioning
vector it could predict the class from the text alone, and the generator
would receive no pressure to make the visual features class-informative.

Objectives (non-saturating form):

* ``loss_D`` = uncond BCE(real->1) + uncond BCE(fake->0)
             + cond BCE(matched real->1) + cond BCE(fake->0)
             + aux CE on real and fake class logits
             [+ optional cond BCE(mismatched real->0) when mismatch_weight > 0]
* ``loss_G`` = uncond BCE(fake->1) + cond BCE(fake->1)
             + aux CE on fake class logits + KL(N(mu, sigma^2) || N(0, I))

Every BCE/CE term is the mean over its batch, so batch size does not rescale
the losses; the per-term weights come from :class:`GanConfig`.

All gradients are derived by hand and validated against finite differences.
Training is deterministic given (dataset, config.seed): every random draw
comes from the single generator carried in :class:`GanState`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import nnet
from .errors import DataValidationError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GanConfig:
    text_dim: int
    visual_dim: int
    cond_dim: int | None = None          # default min(text_dim, 128)
    gen_hidden: tuple[int, ...] | None = None    # default (2 * visual_dim,)
    disc_hidden: tuple[int, ...] | None = None   # default (2 * visual_dim,)
    lr: float = 2e-4
    iterations: int = 500
    batch_size: int = 64
    kl_weight: float = 0.02
    aux_weight: float = 1.0
    uncond_weight: float = 1.0
    cond_weight: float = 1.0
    mismatch_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.text_dim < 1 or self.visual_dim < 1:
            raise ValueError("embedding dims must be >= 1")
        if self.cond_dim is not None and self.cond_dim < 1:
            raise ValueError("cond_dim must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("kl_weight", "aux_weight", "uncond_weight", "cond_weight",
                     "mismatch_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gen_hidden is not None:
            object.__setattr__(self, "gen_hidden", tuple(self.gen_hidden))
        if self.disc_hidden is not None:
            object.__setattr__(self, "disc_hidden", tuple(self.disc_hidden))

    @property
    def cond(self) -> int:
        return self.cond_dim if self.cond_dim is not None else min(self.text_dim, 128)

    @property
    def gen_layers(self) -> tuple[int, ...]:
        hidden = self.gen_hidden if self.gen_hidden is not None else (2 * self.visual_dim,)
        return (self.cond, *hidden, self.visual_dim)

    @property
    def disc_trunk_hidden(self) -> tuple[int, ...]:
        return (self.disc_hidden if self.disc_hidden is not None
                else (2 * self.visual_dim,))


@dataclass
class GanState:
    """Generator + discriminator parameters, optimizer state and RNG stream.

    Treated functionally: ``train_step`` returns a new state (the numpy
    Generator object is shared and advanced). Use :meth:`snapshot` before
    branching work that must not affect the original stream.
    """

    config: GanConfig
    classes: tuple[str, ...]
    ca_mu: nnet.Layer
    ca_logsigma: nnet.Layer
    gen_mlp: list
    disc_mlp: list
    gen_opt: nnet.AdamState
    disc_opt: nnet.AdamState
    rng: np.random.Generator
    iteration: int = 0
    class_index: dict = field(repr=False, default=None)

    def __post_init__(self):
        if self.class_index is None:
            self.class_index = {c: i for i, c in enumerate(self.classes)}

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def generator_params(self):
        return [self.ca_mu, self.ca_logsigma, *self.gen_mlp]

    def with_generator(self, params):
        return replace(self, ca_mu=params[0], ca_logsigma=params[1],
                       gen_mlp=list(params[2:]))

    def with_discriminator(self, layers):
        return replace(self, disc_mlp=list(layers))

    def snapshot(self) -> "GanState":
        return copy.deepcopy(self)


def init_gan_state(config: GanConfig, classes) -> GanState:
    """Fresh state with Glorot-initialized nets, seeded from config.seed."""
    classes = tuple(sorted(set(classes)))
    if not classes:
        raise ValueError("at least one class is required")
    rng = np.random.default_rng(config.seed)
    ca_mu = nnet.init_layer(rng, config.text_dim, config.cond)
    # zero weights keep sigma input-independent at init (KL finite for any
    # text scale); the negative bias starts the conditioning noise small so
    # the mean path has usable signal-to-noise from the first step
    ca_logsigma = nnet.Layer(np.zeros((config.cond, config.text_dim)),
                             np.full(config.cond, -2.0))
    gen_dims = config.gen_layers
    gen_mlp = [
        nnet.init_layer(rng, gen_dims[i], gen_dims[i + 1],
                        "leaky_relu" if i + 2 < len(gen_dims) else "identity")
        for i in range(len(gen_dims) - 1)
    ]
    # discriminator layout: visual trunk, then unconditional score head and
    # class head on the trunk output, then a two-layer conditional head on
    # [trunk output, conditioning vector]
    trunk_dims = (config.visual_dim, *config.disc_trunk_hidden)
    trunk = [
        nnet.init_layer(rng, trunk_dims[i], trunk_dims[i + 1], "leaky_relu")
        for i in range(len(trunk_dims) - 1)
    ]
    trunk_out = trunk_dims[-1]
    head_u = nnet.init_layer(rng, trunk_out, 1)
    head_cls = nnet.init_layer(rng, trunk_out, len(classes))
    head_c = [
        nnet.init_layer(rng, trunk_out + config.cond, trunk_out, "leaky_relu"),
        nnet.init_layer(rng, trunk_out, 1),
    ]
    disc_mlp = [*trunk, head_u, head_cls, *head_c]
    gen_opt = nnet.adam_init([ca_mu, ca_logsigma, *gen_mlp], config.lr)
    disc_opt = nnet.adam_init(disc_mlp, config.lr)
    return GanState(config, classes, ca_mu, ca_logsigma, gen_mlp, disc_mlp,
                    gen_opt, disc_opt, rng)


# ---------------------------------------------------------------------------
# forward pieces


def _text_batch(state, text_vec):
    t, was_1d = nnet._as_batch(text_vec)
    if t.shape[1] != state.config.text_dim:
        raise ValueError(
            f"text dim {t.shape[1]} does not match config text_dim {state.config.text_dim}"
        )
    return t, was_1d


def _draw_eps(state, n, frozen_noise, rng):
    if frozen_noise is not None:
        eps = np.asarray(frozen_noise, dtype=np.float64)
        if eps.ndim == 1:
            eps = eps[None, :]
        if eps.shape != (n, state.config.cond):
            raise ValueError(
                f"frozen noise shape {eps.shape} != {(n, state.config.cond)}"
            )
        return eps
    return (rng if rng is not None else state.rng).standard_normal((n, state.config.cond))


def _ca_forward(ca_mu, ca_logsigma, texts):
    mu = texts @ ca_mu.weight.T + ca_mu.bias
    ls = texts @ ca_logsigma.weight.T + ca_logsigma.bias
    return mu, ls


def _kl_terms(mu, ls):
    # KL(N(mu, sigma^2) || N(0, I)) with sigma = exp(ls), summed over dims
    return 0.5 * np.sum(mu * mu + np.exp(2.0 * ls) - 1.0 - 2.0 * ls, axis=1)


def condition_augment(state: GanState, text_vec, frozen_noise=None, rng=None):
    """Reparameterized conditioning vector and its per-sample KL penalty.

    Returns ``(cond_vec, kl_term)``; with a batch input the KL is a vector.
    ``frozen_noise`` replaces the N(0, I) draw for deterministic tests.
    """
    t, was_1d = _text_batch(state, text_vec)
    eps = _draw_eps(state, t.shape[0], frozen_noise, rng)
    mu, ls = _ca_forward(state.ca_mu, state.ca_logsigma, t)
    cond = mu + np.exp(ls) * eps
    kl = _kl_terms(mu, ls)
    if was_1d:
        return cond[0], float(kl[0])
    return cond, kl


def generate_feature(state: GanState, text_vec, frozen_noise=None, rng=None):
    """Map text embedding(s) into the visual embedding space."""
    cond, _ = condition_augment(state, text_vec, frozen_noise, rng)
    out, _ = nnet.mlp_forward(state.gen_mlp, cond)
    return out


def encode_sample_texts(state: GanState, texts, frozen_noise=None, rng=None):
    """Average of the generated features over all of a sample's texts."""
    mat = np.asarray(texts, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValueError("a sample needs at least one text vector")
    feats = generate_feature(state, mat, frozen_noise, rng)
    return feats.mean(axis=0)


def _disc_split(cfg: GanConfig, disc_layers):
    """Flat layer list -> (trunk, uncond head, class head, cond head)."""
    n_trunk = len(cfg.disc_trunk_hidden)
    return (list(disc_layers[:n_trunk]), disc_layers[n_trunk],
            disc_layers[n_trunk + 1], list(disc_layers[n_trunk + 2:]))


def _disc_forward(cfg: GanConfig, disc_layers, V, cond):
    trunk, head_u, head_cls, head_c = _disc_split(cfg, disc_layers)
    h, trunk_tape = nnet.mlp_forward(trunk, V)
    o_u, tape_u = nnet.mlp_forward([head_u], h)
    logits, tape_cls = nnet.mlp_forward([head_cls], h)
    o_c, tape_c = nnet.mlp_forward(head_c, np.concatenate([h, cond], axis=1))
    return {
        "o_u": o_u[:, 0], "logits": logits, "o_c": o_c[:, 0],
        "tapes": (trunk_tape, tape_u, tape_cls, tape_c),
        "trunk_out": h.shape[1],
    }


def _disc_backward(cfg: GanConfig, disc_layers, pass_fw, d_ou, d_logits, d_oc):
    """Backprop per-head output gradients through one discriminator pass.

    Returns ``(flat param grads, grad wrt visual input, grad wrt cond)``.
    """
    trunk, head_u, head_cls, head_c = _disc_split(cfg, disc_layers)
    trunk_tape, tape_u, tape_cls, tape_c = pass_fw["tapes"]
    t_out = pass_fw["trunk_out"]
    grads_c, g_hc = nnet.mlp_backward(head_c, tape_c, d_oc[:, None])
    g_h = g_hc[:, :t_out].copy()
    g_cond = g_hc[:, t_out:]
    grads_u, g_hu = nnet.mlp_backward([head_u], tape_u, d_ou[:, None])
    grads_cls, g_hcls = nnet.mlp_backward([head_cls], tape_cls, d_logits)
    g_h += g_hu + g_hcls
    grads_trunk, g_v = nnet.mlp_backward(trunk, trunk_tape, g_h)
    return [*grads_trunk, grads_u[0], grads_cls[0], *grads_c], g_v, g_cond


def discriminate(state: GanState, visual_vec, cond_vec):
    """Score a visual vector against a conditioning vector.

    Returns ``(uncond_score, cond_score, class_logits)``; scores are sigmoid
    outputs in (0, 1). The unconditional score and class logits depend on
    the visual vector alone.
    """
    v, v1d = nnet._as_batch(visual_vec)
    c, c1d = nnet._as_batch(cond_vec)
    if v1d != c1d or v.shape[0] != c.shape[0]:
        raise ValueError("visual and conditioning batches do not align")
    if v.shape[1] != state.config.visual_dim:
        raise ValueError(
            f"visual dim {v.shape[1]} != config visual_dim {state.config.visual_dim}"
        )
    if c.shape[1] != state.config.cond:
        raise ValueError(f"cond dim {c.shape[1]} != config cond dim {state.config.cond}")
    fw = _disc_forward(state.config, state.disc_mlp, v, c)
    u = nnet.sigmoid(fw["o_u"])
    s = nnet.sigmoid(fw["o_c"])
    logits = fw["logits"]
    if v1d:
        return float(u[0]), float(s[0]), logits[0]
    return u, s, logits


# ---------------------------------------------------------------------------
# losses and analytic gradients


def _softplus(x):
    return np.logaddexp(0.0, x)


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    stable = logits - m
    return stable - np.log(np.exp(stable).sum(axis=1, keepdims=True))


def _prepare_batch(state: GanState, batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    V = np.stack([np.asarray(v, dtype=np.float64) for v, _, _ in batch])
    T = np.stack([np.asarray(t, dtype=np.float64) for _, t, _ in batch])
    y = np.empty(len(batch), dtype=np.int64)
    for i, (_, _, cls) in enumerate(batch):
        try:
            y[i] = state.class_index[cls]
        except KeyError:
            raise ValueError(f"unknown class id {cls!r}") from None
    if V.shape[1] != state.config.visual_dim:
        raise ValueError("visual vectors do not match config visual_dim")
    if T.shape[1] != state.config.text_dim:
        raise ValueError("text vectors do not match config text_dim")
    return V, T, y


def _loss_forward(ca_mu, ca_logsigma, gen_mlp, disc_mlp, cfg, V, T, eps):
    mu, ls = _ca_forward(ca_mu, ca_logsigma, T)
    sig = np.exp(ls)
    cond = mu + sig * eps
    kl = _kl_terms(mu, ls)
    fake, gen_tape = nnet.mlp_forward(gen_mlp, cond)
    fw = {
        "mu": mu, "ls": ls, "sig": sig, "cond": cond, "kl": kl,
        "fake": fake, "gen_tape": gen_tape,
        "real": _disc_forward(cfg, disc_mlp, V, cond),
        "fakep": _disc_forward(cfg, disc_mlp, fake, cond),
    }
    if cfg.mismatch_weight > 0:
        if V.shape[0] < 2:
            raise ValueError("mismatched-pair loss needs a batch of at least 2")
        fw["mis"] = _disc_forward(cfg, disc_mlp, V, np.roll(cond, 1, axis=0))
    return fw


def _loss_parts(cfg, fw, y):
    rows = np.arange(len(y))
    real, fakep = fw["real"], fw["fakep"]
    lsm_r = _log_softmax(real["logits"])
    lsm_f = _log_softmax(fakep["logits"])
    parts = {
        "d_uncond_real": cfg.uncond_weight * float(np.mean(_softplus(-real["o_u"]))),
        "d_uncond_fake": cfg.uncond_weight * float(np.mean(_softplus(fakep["o_u"]))),
        "d_cond_real": cfg.cond_weight * float(np.mean(_softplus(-real["o_c"]))),
        "d_cond_fake": cfg.cond_weight * float(np.mean(_softplus(fakep["o_c"]))),
        "d_aux_real": cfg.aux_weight * float(np.mean(-lsm_r[rows, y])),
        "d_aux_fake": cfg.aux_weight * float(np.mean(-lsm_f[rows, y])),
        "g_uncond": cfg.uncond_weight * float(np.mean(_softplus(-fakep["o_u"]))),
        "g_cond": cfg.cond_weight * float(np.mean(_softplus(-fakep["o_c"]))),
        "g_aux": cfg.aux_weight * float(np.mean(-lsm_f[rows, y])),
        "g_kl": cfg.kl_weight * float(np.mean(fw["kl"])),
    }
    if "mis" in fw:
        parts["d_cond_mismatch"] = cfg.mismatch_weight * float(
            np.mean(_softplus(fw["mis"]["o_c"]))
        )
    loss_d = sum(v for k, v in parts.items() if k.startswith("d_"))
    loss_g = sum(v for k, v in parts.items() if k.startswith("g_"))
    return loss_d, loss_g, parts


def _onehot(y, n_classes):
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def _sum_grads(a, b):
    return [(ga[0] + gb[0], ga[1] + gb[1]) for ga, gb in zip(a, b)]


def _disc_grads(cfg, fw, y, disc_mlp, n_classes):
    n = len(y)
    Y = _onehot(y, n_classes)
    real, fakep = fw["real"], fw["fakep"]
    zeros_logits = np.zeros_like(real["logits"])

    grads, _, _ = _disc_backward(
        cfg, disc_mlp, real,
        cfg.uncond_weight * (nnet.sigmoid(real["o_u"]) - 1.0) / n,
        cfg.aux_weight * (np.exp(_log_softmax(real["logits"])) - Y) / n,
        cfg.cond_weight * (nnet.sigmoid(real["o_c"]) - 1.0) / n,
    )
    g_fake, _, _ = _disc_backward(
        cfg, disc_mlp, fakep,
        cfg.uncond_weight * nnet.sigmoid(fakep["o_u"]) / n,
        cfg.aux_weight * (np.exp(_log_softmax(fakep["logits"])) - Y) / n,
        cfg.cond_weight * nnet.sigmoid(fakep["o_c"]) / n,
    )
    grads = _sum_grads(grads, g_fake)
    if "mis" in fw:
        g_mis, _, _ = _disc_backward(
            cfg, disc_mlp, fw["mis"],
            np.zeros(n), zeros_logits,
            cfg.mismatch_weight * nnet.sigmoid(fw["mis"]["o_c"]) / n,
        )
        grads = _sum_grads(grads, g_mis)
    return grads


def _gen_grads(cfg, fw, y, gen_mlp, disc_mlp, T, eps, n_classes):
    n = len(y)
    Y = _onehot(y, n_classes)
    fakep = fw["fakep"]
    _, g_fake, g_cond = _disc_backward(
        cfg, disc_mlp, fakep,
        cfg.uncond_weight * (nnet.sigmoid(fakep["o_u"]) - 1.0) / n,
        cfg.aux_weight * (np.exp(_log_softmax(fakep["logits"])) - Y) / n,
        cfg.cond_weight * (nnet.sigmoid(fakep["o_c"]) - 1.0) / n,
    )
    g_cond = g_cond.copy()
    gen_grads, g_cond_from_gen = nnet.mlp_backward(gen_mlp, fw["gen_tape"], g_fake)
    g_cond += g_cond_from_gen
    d_mu = g_cond + cfg.kl_weight * fw["mu"] / n
    d_ls = g_cond * (eps * fw["sig"]) + cfg.kl_weight * (np.exp(2.0 * fw["ls"]) - 1.0) / n
    ca_mu_grad = (d_mu.T @ T, d_mu.sum(axis=0))
    ca_ls_grad = (d_ls.T @ T, d_ls.sum(axis=0))
    return [ca_mu_grad, ca_ls_grad, *gen_grads]


def gan_losses(state: GanState, batch, frozen_noise=None, rng=None):
    """Both adversarial losses plus a per-term breakdown for one batch.

    ``batch`` is a sequence of ``(visual_vec, text_vec, class_id)`` triples
    drawn from the base classes. Unless ``frozen_noise`` is given, the
    conditioning noise is drawn from ``rng`` (default: the state's stream).
    The breakdown's ``d_*`` entries sum to ``loss_D`` and ``g_*`` to ``loss_G``.
    """
    V, T, y = _prepare_batch(state, batch)
    eps = _draw_eps(state, len(batch), frozen_noise, rng)
    fw = _loss_forward(state.ca_mu, state.ca_logsigma, state.gen_mlp,
                       state.disc_mlp, state.config, V, T, eps)
    loss_d, loss_g, parts = _loss_parts(state.config, fw, y)
    return loss_d, loss_g, parts


def gan_losses_and_grads(state: GanState, batch, frozen_noise=None, rng=None):
    """Like :func:`gan_losses` but also returns analytic gradients.

    Returns ``(loss_D, loss_G, parts, disc_grads, gen_grads)`` where
    ``disc_grads`` aligns with ``state.disc_mlp`` and ``gen_grads`` with
    ``state.generator_params()``.
    """
    V, T, y = _prepare_batch(state, batch)
    eps = _draw_eps(state, len(batch), frozen_noise, rng)
    cfg = state.config
    fw = _loss_forward(state.ca_mu, state.ca_logsigma, state.gen_mlp,
                       state.disc_mlp, cfg, V, T, eps)
    loss_d, loss_g, parts = _loss_parts(cfg, fw, y)
    disc_grads = _disc_grads(cfg, fw, y, state.disc_mlp, state.n_classes)
    gen_grads = _gen_grads(cfg, fw, y, state.gen_mlp, state.disc_mlp, T, eps,
                           state.n_classes)
    return loss_d, loss_g, parts, disc_grads, gen_grads


# ---------------------------------------------------------------------------
# training


def _train_step_arrays(state: GanState, V, T, y) -> GanState:
    cfg = state.config
    eps = state.rng.standard_normal((V.shape[0], cfg.cond))

    fw = _loss_forward(state.ca_mu, state.ca_logsigma, state.gen_mlp,
                       state.disc_mlp, cfg, V, T, eps)
    d_grads = _disc_grads(cfg, fw, y, state.disc_mlp, state.n_classes)
    disc_new, disc_opt_new = nnet.adam_update(state.disc_mlp, d_grads, state.disc_opt)

    # generator step against the freshly updated discriminator, same noise
    fw2 = _loss_forward(state.ca_mu, state.ca_logsigma, state.gen_mlp,
                        disc_new, cfg, V, T, eps)
    g_grads = _gen_grads(cfg, fw2, y, state.gen_mlp, disc_new, T, eps,
                         state.n_classes)
    gen_params = state.generator_params()
    gen_new, gen_opt_new = nnet.adam_update(gen_params, g_grads, state.gen_opt)

    return replace(
        state,
        ca_mu=gen_new[0], ca_logsigma=gen_new[1], gen_mlp=list(gen_new[2:]),
        disc_mlp=list(disc_new),
        gen_opt=gen_opt_new, disc_opt=disc_opt_new,
        iteration=state.iteration + 1,
    )


def train_step(state: GanState, batch) -> GanState:
    """One adversarial update: discriminator first, then the generator."""
    V, T, y = _prepare_batch(state, batch)
    return _train_step_arrays(state, V, T, y)


def _base_training_pool(dataset, config: GanConfig):
    pool = [s for s in dataset.samples if s.split == "base"]
    if not pool:
        raise DataValidationError("dataset has no base-class samples to train on")
    if dataset.visual_dim != config.visual_dim or dataset.text_dim != config.text_dim:
        raise DataValidationError(
            f"dataset dims (visual {dataset.visual_dim}, text {dataset.text_dim}) do not "
            f"match config (visual {config.visual_dim}, text {config.text_dim})"
        )
    for s in pool:
        if dataset.text_count(s.id) < 1:
            raise DataValidationError(f"base sample {s.id!r} has no text vectors")
    return pool


def _sample_batch(dataset, pool, rng, batch_size):
    idx = rng.integers(0, len(pool), size=batch_size)
    picks = rng.random(batch_size)
    V = np.stack([pool[i].visual for i in idx])
    T = np.empty((batch_size, dataset.text_dim))
    y = np.empty(batch_size, dtype=np.int64)
    return idx, picks, V, T, y


def continue_training(state: GanState, dataset, steps: int) -> GanState:
    """Advance adversarial training by ``steps`` batches of base-class data."""
    pool = _base_training_pool(dataset, state.config)
    cfg = state.config
    for _ in range(steps):
        idx, picks, V, T, y = _sample_batch(dataset, pool, state.rng, cfg.batch_size)
        for row, i in enumerate(idx):
            sample = pool[i]
            texts = dataset.texts_for(sample.id)
            T[row] = texts[int(picks[row] * texts.shape[0])]
            y[row] = state.class_index[sample.class_id]
        state = _train_step_arrays(state, V, T, y)
    return state


def train_tcgan(dataset, config: GanConfig) -> GanState:
    """Train a feature generator on the dataset's base split.

    Batches pair each sampled image with one uniformly chosen text of its
    own; runs ``config.iterations`` steps and returns the final state.
    """
    pool = _base_training_pool(dataset, config)
    classes = sorted({s.class_id for s in pool})
    state = init_gan_state(config, classes)
    return continue_training(state, dataset, config.iterations)


# ---------------------------------------------------------------------------
# serialization


def _array_items(state: GanState):
    items = [
        ("ca_mu.weight", state.ca_mu.weight), ("ca_mu.bias", state.ca_mu.bias),
        ("ca_logsigma.weight", state.ca_logsigma.weight),
        ("ca_logsigma.bias", state.ca_logsigma.bias),
    ]
    for i, layer in enumerate(state.gen_mlp):
        items += [(f"gen_mlp.{i}.weight", layer.weight), (f"gen_mlp.{i}.bias", layer.bias)]
    for i, layer in enumerate(state.disc_mlp):
        items += [(f"disc_mlp.{i}.weight", layer.weight), (f"disc_mlp.{i}.bias", layer.bias)]
    for prefix, opt in (("gen_opt", state.gen_opt), ("disc_opt", state.disc_opt)):
        for kind, slots in (("m", opt.m), ("v", opt.v)):
            for j, (mw, mb) in enumerate(slots):
                items += [(f"{prefix}.{kind}.{j}.weight", mw), (f"{prefix}.{kind}.{j}.bias", mb)]
    return items


def _layer_specs(layers):
    return [
        {"shape": list(l.weight.shape), "activation": l.activation, "slope": l.slope}
        for l in layers
    ]


def save_gan_state(state: GanState, path):
    """Write the full state as a JSON header line plus raw float64 blocks.

    The write/read round trip is bit-exact, including optimizer moments and
    the RNG stream, so refinement can resume from a loaded file.
    """
    items = _array_items(state)
    cfg = state.config
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "protofusion-tcgan",
        "config": {
            "text_dim": cfg.text_dim, "visual_dim": cfg.visual_dim,
            "cond_dim": cfg.cond_dim,
            "gen_hidden": list(cfg.gen_hidden) if cfg.gen_hidden is not None else None,
            "disc_hidden": list(cfg.disc_hidden) if cfg.disc_hidden is not None else None,
            "lr": cfg.lr, "iterations": cfg.iterations, "batch_size": cfg.batch_size,
            "kl_weight": cfg.kl_weight, "aux_weight": cfg.aux_weight,
            "uncond_weight": cfg.uncond_weight, "cond_weight": cfg.cond_weight,
            "mismatch_weight": cfg.mismatch_weight, "seed": cfg.seed,
        },
        "classes": list(state.classes),
        "iteration": state.iteration,
        "ca_mu": _layer_specs([state.ca_mu])[0],
        "ca_logsigma": _layer_specs([state.ca_logsigma])[0],
        "gen_mlp": _layer_specs(state.gen_mlp),
        "disc_mlp": _layer_specs(state.disc_mlp),
        "gen_opt": {"step": state.gen_opt.step, "lr": state.gen_opt.lr,
                    "beta1": state.gen_opt.beta1, "beta2": state.gen_opt.beta2,
                    "eps": state.gen_opt.eps},
        "disc_opt": {"step": state.disc_opt.step, "lr": state.disc_opt.lr,
                     "beta1": state.disc_opt.beta1, "beta2": state.disc_opt.beta2,
                     "eps": state.disc_opt.eps},
        "rng_state": state.rng.bit_generator.state,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in items],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for _, arr in items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_gan_state(path) -> GanState:
    """Inverse of :func:`save_gan_state`."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError:
        raise DataValidationError(f"{path}: not a generator model file") from None
    if header.get("kind") != "protofusion-tcgan":
        raise DataValidationError(f"{path}: not a generator model file")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataValidationError(
            f"{path}: unsupported format version {header.get('format_version')}"
        )
    c = header["config"]
    config = GanConfig(
        text_dim=c["text_dim"], visual_dim=c["visual_dim"], cond_dim=c["cond_dim"],
        gen_hidden=tuple(c["gen_hidden"]) if c["gen_hidden"] is not None else None,
        disc_hidden=tuple(c["disc_hidden"]) if c["disc_hidden"] is not None else None,
        lr=c["lr"], iterations=c["iterations"], batch_size=c["batch_size"],
        kl_weight=c["kl_weight"], aux_weight=c["aux_weight"],
        uncond_weight=c["uncond_weight"], cond_weight=c["cond_weight"],
        mismatch_weight=c["mismatch_weight"], seed=c["seed"],
    )

    arrays = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise DataValidationError(f"{path}: truncated parameter block")
        arrays[spec["name"]] = np.frombuffer(
            blob[offset:end], dtype="<f8"
        ).reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise DataValidationError(f"{path}: trailing bytes after parameter blocks")

    def build_layer(name, spec):
        return nnet.Layer(arrays[f"{name}.weight"], arrays[f"{name}.bias"],
                          spec["activation"], spec["slope"])

    ca_mu = build_layer("ca_mu", header["ca_mu"])
    ca_logsigma = build_layer("ca_logsigma", header["ca_logsigma"])
    gen_mlp = [build_layer(f"gen_mlp.{i}", s) for i, s in enumerate(header["gen_mlp"])]
    disc_mlp = [build_layer(f"disc_mlp.{i}", s) for i, s in enumerate(header["disc_mlp"])]

    def build_opt(prefix, meta, n_layers):
        m = tuple((arrays[f"{prefix}.m.{j}.weight"], arrays[f"{prefix}.m.{j}.bias"])
                  for j in range(n_layers))
        v = tuple((arrays[f"{prefix}.v.{j}.weight"], arrays[f"{prefix}.v.{j}.bias"])
                  for j in range(n_layers))
        return nnet.AdamState(meta["step"], m, v, meta["lr"], meta["beta1"],
                              meta["beta2"], meta["eps"])

    gen_opt = build_opt("gen_opt", header["gen_opt"], 2 + len(gen_mlp))
    disc_opt = build_opt("disc_opt", header["disc_opt"], len(disc_mlp))

    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]

    return GanState(config, tuple(header["classes"]), ca_mu, ca_logsigma,
                    gen_mlp, disc_mlp, gen_opt, disc_opt, rng,
                    iteration=header["iteration"])
