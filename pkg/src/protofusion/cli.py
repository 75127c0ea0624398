"""Command-line interface: synth data, generator training, evaluation,
ablation, shift ranking and retrieval, all seeded and file-based.

Option precedence is flags > config file (``key = value`` lines via
``--config``) > built-in defaults. Every output file starts with ``#``
comment lines recording the fully resolved configuration, is written to a
temporary file and renamed into place (no partial outputs), and is
byte-identical across reruns with the same flags.

Exit codes: 0 success, 2 usage error, 3 data validation error, 4 numerical
failure (NaN/Inf detected in results).
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from . import analysis, gan, synth
from .data import load_dataset, write_dataset
from .errors import DataValidationError, NumericalError
from .evaluation import evaluate, write_report_csv


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# option framework


def _int(raw):
    return int(raw)


def _float(raw):
    return float(raw)


def _str(raw):
    return raw


def _intlist(raw):
    try:
        return tuple(int(p) for p in str(raw).split(",") if p != "")
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {raw!r}") from None


def _cap(raw):
    # "all" lifts the cap
    if str(raw).lower() == "all":
        return None
    return int(raw)


def _hidden(raw):
    if str(raw).lower() == "default":
        return None
    return _intlist(raw)


class Opt:
    def __init__(self, name, parse, default, help, flag=None, required=False):
        self.name = name
        self.parse = parse
        self.default = default
        self.help = help
        self.flag = flag or "--" + name.replace("_", "-")
        self.required = required


DATASET_OPTS = [
    Opt("visual", _str, None, "visual embeddings CSV", required=True),
    Opt("texts", _str, None, "text embeddings CSV", required=True),
    Opt("splits", _str, None, "optional class,split override CSV"),
]

GAN_HYPER_OPTS = [
    Opt("lr", _float, 2e-4, "Adam learning rate for both networks"),
    Opt("iterations", _int, 500, "adversarial training iterations"),
    Opt("batch_size", _int, 64, "training batch size"),
    Opt("cond_dim", _cap, None, "conditioning dim (default min(text_dim,128))"),
    Opt("gen_hidden", _hidden, None, "generator hidden sizes, comma ints"),
    Opt("disc_hidden", _hidden, None, "discriminator hidden sizes, comma ints"),
    Opt("kl_weight", _float, 0.02, "weight of the conditioning KL penalty"),
    Opt("aux_weight", _float, 1.0, "weight of the class-prediction loss"),
    Opt("uncond_weight", _float, 1.0, "weight of the unconditional real/fake loss"),
    Opt("cond_weight", _float, 1.0, "weight of the conditional real/fake loss"),
    Opt("mismatch_weight", _float, 0.0,
        "weight of the mismatched-pair loss (0 disables it)"),
    Opt("gan_seed", _int, 0, "seed for generator init and training stream"),
]

MODEL_OPT = Opt("model", _str, None, "trained generator file (skips training)")

REFINE_OPTS = [
    Opt("lam", _float, 1.0, "fusion weight between image and text prototypes",
        flag="--lambda"),
    Opt("rounds", _int, 10, "prototype refinement rounds"),
    Opt("extra_steps_per_round", _int, 50,
        "generator training steps before each refinement round"),
]

COMMANDS = {
    "gen-synth": [
        Opt("n_base_classes", _int, 40, "number of base classes"),
        Opt("n_novel_classes", _int, 10, "number of novel classes"),
        Opt("samples_per_class", _int, 50, "samples per class"),
        Opt("texts_per_image", _int, 10, "text vectors per sample"),
        Opt("visual_dim", _int, 16, "visual embedding dimension"),
        Opt("text_dim", _int, 32, "text embedding dimension"),
        Opt("between_class_std", _float, 1.0, "std of class means"),
        Opt("within_class_std", _float, 1.2, "std of samples around their class mean"),
        Opt("text_map_noise_std", _float, 0.25, "std of per-text noise"),
        Opt("class_noise_spread", _float, 0.8,
            "relative spread of per-class image noise"),
        Opt("seed", _int, 0, "generation seed"),
        Opt("out", _str, None, "output directory for visual.csv and texts.csv",
            required=True),
    ],
    "train-gan": DATASET_OPTS + GAN_HYPER_OPTS + [
        Opt("out", _str, None, "output model file", required=True),
    ],
    "eval": DATASET_OPTS + [MODEL_OPT] + GAN_HYPER_OPTS + REFINE_OPTS + [
        Opt("mode", _str, None, "image_only, zsl or multimodal", required=True),
        Opt("way", _int, 5, "classes per episode"),
        Opt("shot", _int, 1, "support samples per class"),
        Opt("episodes", _int, 600, "number of episodes"),
        Opt("texts_cap", _cap, None, "texts per support image, int or 'all'"),
        Opt("query_per_class", _cap, 15, "queries per class, int or 'all'"),
        Opt("metrics", _intlist, (1, 3, 5), "top-k accuracies to report"),
        Opt("seed", _int, 0, "episode sampling seed"),
        Opt("threads", _int, 1, "parallel episode workers (results identical)"),
        Opt("out", _str, None, "report CSV path", required=True),
    ],
    "ablate-texts": DATASET_OPTS + [MODEL_OPT] + GAN_HYPER_OPTS + REFINE_OPTS + [
        Opt("text_counts", _intlist, (1, 2, 5, 10), "text budgets to evaluate"),
        Opt("shots", _intlist, (1, 2, 5), "shot counts to evaluate"),
        Opt("way", _cap, None, "classes per episode, int or 'all'"),
        Opt("episodes", _int, 100, "episodes per shot setting"),
        Opt("query_per_class", _cap, 15, "queries per class, int or 'all'"),
        Opt("metric_k", _int, 5, "top-k used for the gains"),
        Opt("seed", _int, 0, "episode sampling seed"),
        Opt("threads", _int, 1, "parallel episode workers"),
        Opt("out", _str, None, "ablation CSV path", required=True),
    ],
    "rank-shift": DATASET_OPTS + [MODEL_OPT] + GAN_HYPER_OPTS + REFINE_OPTS + [
        Opt("episodes", _int, 100, "number of episodes"),
        Opt("way", _cap, None, "classes per episode, int or 'all'"),
        Opt("shot", _int, 1, "support samples per class"),
        Opt("query_per_class", _cap, 15, "queries per class, int or 'all'"),
        Opt("metric_k", _int, 5, "top-k used for the gains"),
        Opt("texts_cap", _cap, None, "texts per support image, int or 'all'"),
        Opt("seed", _int, 0, "episode sampling seed"),
        Opt("threads", _int, 1, "parallel episode workers"),
        Opt("out", _str, None, "ranking CSV path", required=True),
    ],
    "retrieve": DATASET_OPTS + [MODEL_OPT] + GAN_HYPER_OPTS + REFINE_OPTS + [
        Opt("class_id", _str, None, "novel class to build the prototype for",
            flag="--class", required=True),
        Opt("mode", _str, "image_only", "image_only, zsl or multimodal"),
        Opt("shot", _int, 1, "support samples used for the prototype"),
        Opt("m", _int, 5, "number of nearest samples to return"),
        Opt("texts_cap", _cap, None, "texts per support image, int or 'all'"),
        Opt("seed", _int, 0, "support sampling seed"),
        Opt("out", _str, None, "retrieval CSV path", required=True),
    ],
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="protofusion",
        description="Few-shot prototype classification with text-conditioned "
                    "feature generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in COMMANDS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None,
                       help="key = value file; flags override it")
        for opt in opts:
            p.add_argument(opt.flag, dest=opt.name, default=None,
                           help=f"{opt.help} (default: {_show(opt.default)})")
    return parser


def _show(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _read_config_file(path, known):
    values = {}
    try:
        fh = open(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path} line {lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in known:
                raise UsageError(f"{path} line {lineno}: unknown option {key!r}")
            values[key] = raw.strip()
    return values


def _resolve(args, opts):
    known = {o.name: o for o in opts}
    file_values = {}
    if args.config is not None:
        file_values = _read_config_file(args.config, known)
    resolved = {}
    for opt in opts:
        raw = getattr(args, opt.name)
        if raw is None:
            raw = file_values.get(opt.name)
        if raw is None:
            resolved[opt.name] = opt.default
        else:
            try:
                resolved[opt.name] = opt.parse(raw)
            except ValueError:
                raise UsageError(f"invalid value for {opt.flag}: {raw!r}") from None
        if opt.required and resolved[opt.name] is None:
            raise UsageError(f"{opt.flag} is required")
    return resolved


def _comment_lines(command, resolved):
    # destination and worker count do not affect file content, so leaving
    # them out keeps outputs byte-comparable across runs
    skip = {"out", "threads"}
    lines = [f"command = {command}"]
    for key in sorted(resolved):
        if key not in skip:
            lines.append(f"{key} = {_show(resolved[key])}")
    return lines


# ---------------------------------------------------------------------------
# output helpers


def _atomic_write_text(path, write_fn):
    dirn = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirn, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save_state(path, state):
    dirn = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirn, suffix=".tmp")
    os.close(fd)
    try:
        gan.save_gan_state(state, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_finite_state(state):
    for name, arr in gan._array_items(state):
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in trained parameters ({name})")


def _check_finite(values, what):
    if not np.all(np.isfinite(np.asarray(list(values), dtype=np.float64))):
        raise NumericalError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# subcommands


def _gan_config(cfg, dataset):
    return gan.GanConfig(
        text_dim=dataset.text_dim, visual_dim=dataset.visual_dim,
        cond_dim=cfg["cond_dim"], gen_hidden=cfg["gen_hidden"],
        disc_hidden=cfg["disc_hidden"], lr=cfg["lr"],
        iterations=cfg["iterations"], batch_size=cfg["batch_size"],
        kl_weight=cfg["kl_weight"], aux_weight=cfg["aux_weight"],
        uncond_weight=cfg["uncond_weight"], cond_weight=cfg["cond_weight"],
        mismatch_weight=cfg["mismatch_weight"], seed=cfg["gan_seed"],
    )


def _gan_model(cfg, dataset):
    if cfg.get("model"):
        state = gan.load_gan_state(cfg["model"])
        if (state.config.text_dim != dataset.text_dim
                or state.config.visual_dim != dataset.visual_dim):
            raise DataValidationError(
                "model dims do not match the dataset embedding dims"
            )
        return state
    return _gan_config(cfg, dataset)


def _load(cfg):
    return load_dataset(cfg["visual"], cfg["texts"], cfg["splits"])


def _cmd_gen_synth(cfg):
    config = synth.SynthConfig(
        n_base_classes=cfg["n_base_classes"], n_novel_classes=cfg["n_novel_classes"],
        samples_per_class=cfg["samples_per_class"], texts_per_image=cfg["texts_per_image"],
        visual_dim=cfg["visual_dim"], text_dim=cfg["text_dim"],
        between_class_std=cfg["between_class_std"],
        within_class_std=cfg["within_class_std"],
        text_map_noise_std=cfg["text_map_noise_std"],
        class_noise_spread=cfg["class_noise_spread"], seed=cfg["seed"],
    )
    dataset = synth.generate_synthetic(config)
    os.makedirs(cfg["out"], exist_ok=True)
    comments = _comment_lines("gen-synth", cfg)
    visual_path = os.path.join(cfg["out"], "visual.csv")
    text_path = os.path.join(cfg["out"], "texts.csv")
    tmp_v, tmp_t = visual_path + ".tmp", text_path + ".tmp"
    try:
        write_dataset(dataset, tmp_v, tmp_t, comments)
        os.replace(tmp_v, visual_path)
        os.replace(tmp_t, text_path)
    except BaseException:
        for tmp in (tmp_v, tmp_t):
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    return 0


def _cmd_train_gan(cfg):
    dataset = _load(cfg)
    state = gan.train_tcgan(dataset, _gan_config(cfg, dataset))
    _check_finite_state(state)
    _atomic_save_state(cfg["out"], state)
    return 0


def _cmd_eval(cfg):
    dataset = _load(cfg)
    model = None if cfg["mode"] == "image_only" else _gan_model(cfg, dataset)
    report = evaluate(
        dataset, cfg["mode"], cfg["way"], cfg["shot"], episodes=cfg["episodes"],
        gan_model=model, lam=cfg["lam"], rounds=cfg["rounds"],
        extra_steps_per_round=cfg["extra_steps_per_round"],
        texts_cap=cfg["texts_cap"], query_per_class=cfg["query_per_class"],
        metrics=cfg["metrics"], seed=cfg["seed"], threads=cfg["threads"],
    )
    for summary in report.metrics.values():
        _check_finite(summary.values, "evaluation report")
    comments = _comment_lines("eval", cfg)
    _atomic_write_text(cfg["out"], lambda fh: write_report_csv(report, fh, comments))
    return 0


def _cmd_ablate(cfg):
    dataset = _load(cfg)
    rows = analysis.reduced_text_ablation(
        dataset, _gan_model(cfg, dataset), text_counts=cfg["text_counts"],
        shots=cfg["shots"], way=cfg["way"], episodes=cfg["episodes"],
        query_per_class=cfg["query_per_class"], metric_k=cfg["metric_k"],
        lam=cfg["lam"], rounds=cfg["rounds"],
        extra_steps_per_round=cfg["extra_steps_per_round"], seed=cfg["seed"],
        threads=cfg["threads"],
    )
    _check_finite((g for row in rows for g in row.gains.values()), "ablation gains")
    comments = _comment_lines("ablate-texts", cfg)
    _atomic_write_text(
        cfg["out"],
        lambda fh: analysis.write_ablation_csv(rows, cfg["shots"], fh, comments),
    )
    return 0


def _cmd_rank_shift(cfg):
    dataset = _load(cfg)
    rows = analysis.prototype_shift_ranking(
        dataset, _gan_model(cfg, dataset), episodes=cfg["episodes"],
        way=cfg["way"], shot=cfg["shot"], query_per_class=cfg["query_per_class"],
        metric_k=cfg["metric_k"], lam=cfg["lam"], rounds=cfg["rounds"],
        extra_steps_per_round=cfg["extra_steps_per_round"],
        texts_cap=cfg["texts_cap"], seed=cfg["seed"], threads=cfg["threads"],
    )
    _check_finite((v for row in rows for v in (row.shift, row.gain)), "shift ranking")
    comments = _comment_lines("rank-shift", cfg)
    _atomic_write_text(
        cfg["out"], lambda fh: analysis.write_shift_csv(rows, fh, comments)
    )
    return 0


def _cmd_retrieve(cfg):
    from . import prototypes

    dataset = _load(cfg)
    cid = cfg["class_id"]
    pool = dataset.samples_of(cid)
    if not pool:
        raise DataValidationError(f"class {cid!r} has no samples")
    if len(pool) <= cfg["shot"]:
        raise UsageError(f"class {cid!r} has too few samples for shot={cfg['shot']}")
    rng = np.random.default_rng(cfg["seed"])
    perm = rng.permutation(len(pool))
    support = [pool[i] for i in perm[:cfg["shot"]]]
    support_ids = {s.id for s in support}

    mode = cfg["mode"]
    if mode == "image_only":
        proto = prototypes.visual_prototype([s.visual for s in support], cid)
    elif mode in ("zsl", "multimodal"):
        model = _gan_model(cfg, dataset)
        state = model if isinstance(model, gan.GanState) else gan.train_tcgan(dataset, model)
        texts = [dataset.texts_for(s.id, cap=cfg["texts_cap"]) for s in support]
        if mode == "zsl":
            proto = prototypes.text_prototype(state, texts, cid, rng=rng)
        else:
            support_items = {cid: [(s.visual, t) for s, t in zip(support, texts)]}
            protoset, _ = prototypes.refine_multimodal_prototypes(
                state.snapshot(), support_items, dataset, rounds=cfg["rounds"],
                lam=cfg["lam"], extra_steps_per_round=cfg["extra_steps_per_round"],
                rng=rng,
            )
            proto = protoset[cid]
    else:
        raise UsageError(f"unknown mode {mode!r}")

    candidates = [
        s for s in dataset.samples
        if s.split == "novel" and s.id not in support_ids
    ]
    comments = _comment_lines("retrieve", cfg)
    _atomic_write_text(
        cfg["out"],
        lambda fh: analysis.write_retrieval_csv(proto, candidates, cfg["m"], fh, comments),
    )
    return 0


DISPATCH = {
    "gen-synth": _cmd_gen_synth,
    "train-gan": _cmd_train_gan,
    "eval": _cmd_eval,
    "ablate-texts": _cmd_ablate,
    "rank-shift": _cmd_rank_shift,
    "retrieve": _cmd_retrieve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = _resolve(args, COMMANDS[args.command])
        return DISPATCH[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())
