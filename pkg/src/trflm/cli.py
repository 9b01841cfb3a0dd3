"""Command-line surface: cluster, train, ppl, rescore, sample, oracle-check.

Configs are flat key=value files; any key can be overridden with
``--set key=value`` on the command line. Exit codes: 0 ok, 1 runtime
error, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from . import features as feats
from . import neural
from . import noise as noise_mod
from . import oracle as oracle_mod
from .model import TrfModel, load_noise_model, save_noise_model, zeta_init
from .trainer import DnceConfig, train


class ConfigError(ValueError):
    pass


CONFIG_DEFAULTS = {
    "train_corpus": None,
    "dev_corpus": None,
    "class_map": None,
    "model_out": None,
    "noise_out": None,
    "log_out": None,
    "checkpoint": None,
    "mode": "mixed",  # discrete | neural | mixed
    "templates": "w:3",
    "cutoffs": "000",
    "vocab_size": 10000,
    "max_train_length": 60,
    "hidden_dim": 200,
    "n_layers": 1,
    "noise_dim": 200,
    "alpha": 0.2,
    "nu": 1.0,
    "batch_size": 100,
    "lr_lambda": 0.003,
    "lr_theta": 0.003,
    "lr_zeta": 0.01,
    "lr_noise": 1.0,
    "halving_threshold": 0.001,
    "stop_ratio": 0.1,
    "max_epochs": 100,
    "seed": 0,
    "schedule": "dev-halving",
    "resume": 0,
}

_INT_KEYS = {
    "vocab_size", "max_train_length", "hidden_dim", "n_layers", "noise_dim",
    "batch_size", "max_epochs", "seed", "resume",
}
_FLOAT_KEYS = {
    "alpha", "nu", "lr_lambda", "lr_theta", "lr_zeta", "lr_noise",
    "halving_threshold", "stop_ratio",
}


def load_config(path=None, overrides=()):
    cfg = dict(CONFIG_DEFAULTS)
    pairs = []
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError("%s:%d: expected key=value" % (path, lineno))
                k, v = line.split("=", 1)
                pairs.append((k.strip(), v.strip()))
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override %r is not key=value" % item)
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    problems = []
    for k, v in pairs:
        if k not in cfg:
            problems.append("unknown config key %r" % k)
            continue
        try:
            if k in _INT_KEYS:
                cfg[k] = int(v)
            elif k in _FLOAT_KEYS:
                cfg[k] = float(v)
            else:
                cfg[k] = v or None
        except ValueError:
            problems.append("bad value for %r: %r" % (k, v))
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line for line in fh if line.split()]


def cmd_cluster(args):
    lines = _read_lines(args.corpus)
    vocab = corpus_mod.build_vocab(lines, args.vocab_size)
    if args.n_classes > vocab.size:
        raise ConfigError(
            "n_classes (%d) exceeds vocabulary size (%d)" % (args.n_classes, vocab.size)
        )
    sentences = [corpus_mod.encode(line, vocab) for line in lines]
    cmap = corpus_mod.cluster_words(
        sentences, vocab, args.n_classes, max_iters=args.max_iters, seed=args.seed
    )
    cmap.save(args.out, vocab)
    print("clustered\t%d words\t%d classes\t%s" % (vocab.size, cmap.n_classes, args.out))
    return 0


def _validate_train_config(cfg):
    problems = []
    for key in ("train_corpus", "dev_corpus", "model_out"):
        if not cfg.get(key):
            problems.append("missing required config key %r" % key)
    if cfg["mode"] not in ("discrete", "neural", "mixed"):
        problems.append("mode must be discrete, neural, or mixed")
    if cfg["mode"] in ("discrete", "mixed"):
        spec = cfg["templates"].split(":", 1)[0]
        order = feats.compile_templates(cfg["templates"], class_map_present=True).max_order
        if len(cfg["cutoffs"]) != order:
            problems.append(
                "cutoff string %r length != max order %d" % (cfg["cutoffs"], order)
            )
        if any(p in ("c", "cs") for p in spec.split("+")) and not cfg.get("class_map"):
            problems.append("class features requested but no class_map configured")
    if problems:
        raise ConfigError("; ".join(problems))


def cmd_train(args):
    cfg = load_config(args.config, args.set or [])
    _validate_train_config(cfg)
    lines = _read_lines(cfg["train_corpus"])
    vocab = corpus_mod.build_vocab(lines, cfg["vocab_size"])
    train_sents = corpus_mod.read_corpus(
        cfg["train_corpus"], vocab, max_length=cfg["max_train_length"]
    )
    L = max(len(s) for s in train_sents)
    prior = corpus_mod.length_prior(train_sents, L)
    dev_sents = [
        s
        for s in corpus_mod.read_corpus(cfg["dev_corpus"], vocab, max_length=L)
        if prior.prob(len(s)) > 0
    ]

    class_map = None
    if cfg.get("class_map"):
        class_map = corpus_mod.ClassMap.load(cfg["class_map"], vocab)

    feature_index = None
    lam = None
    if cfg["mode"] in ("discrete", "mixed"):
        tset = feats.compile_templates(
            cfg["templates"], class_map_present=class_map is not None
        )
        feature_index = feats.build_feature_index(
            train_sents, tset, cfg["cutoffs"], class_map=class_map
        )
        lam = np.zeros(feature_index.n_features)
    phi_params = None
    if cfg["mode"] in ("neural", "mixed"):
        phi_params = neural.init_phi_params(
            vocab.size, cfg["hidden_dim"], n_layers=cfg["n_layers"], seed=cfg["seed"]
        )
    model = TrfModel(
        vocab,
        prior,
        zeta_init(vocab.size, L),
        feature_index=feature_index,
        lam=lam,
        phi_params=phi_params,
        class_map=class_map,
        template_spec=cfg["templates"] if cfg["mode"] != "neural" else "",
    )
    noise = noise_mod.init_noise_model(vocab.size, cfg["noise_dim"], prior, seed=cfg["seed"])

    dcfg = DnceConfig(
        alpha=cfg["alpha"],
        nu=cfg["nu"],
        batch_size=cfg["batch_size"],
        lr_lambda=cfg["lr_lambda"],
        lr_theta=cfg["lr_theta"],
        lr_zeta=cfg["lr_zeta"],
        lr_noise=cfg["lr_noise"],
        halving_threshold=cfg["halving_threshold"],
        stop_ratio=cfg["stop_ratio"],
        max_epochs=cfg["max_epochs"],
        seed=cfg["seed"],
        schedule=cfg["schedule"],
    )
    log_sink = open(cfg["log_out"], "a") if cfg.get("log_out") else sys.stderr
    try:
        train(
            dcfg,
            train_sents,
            dev_sents,
            model,
            noise,
            log_sink=log_sink,
            checkpoint_path=cfg.get("checkpoint"),
            resume=bool(cfg["resume"]),
        )
    finally:
        if cfg.get("log_out"):
            log_sink.close()
    model.save(cfg["model_out"])
    if cfg.get("noise_out"):
        save_noise_model(noise, vocab, cfg["noise_out"])
    print("trained\t%s" % cfg["model_out"])
    return 0


def cmd_ppl(args):
    model = TrfModel.load(args.model)
    sents = corpus_mod.read_corpus(args.corpus, model.vocab)
    ppl = eval_mod.perplexity(model, sents)
    print("# joint-probability perplexity; not comparable to conditional-LM PPL")
    print("ppl\t%.6f\t%d sentences" % (ppl, len(sents)))
    return 0


def cmd_rescore(args):
    models = [TrfModel.load(p) for p in args.models]
    scorers = eval_mod.ScorerSet.equal_weights([eval_mod.model_scorer(m) for m in models])
    nbest = eval_mod.read_nbest(args.nbest)
    refs = eval_mod.read_refs(args.refs) if args.refs else None
    selections, report = eval_mod.rescore_corpus(
        nbest, scorers, lm_weight=args.lm_weight, refs=refs
    )
    for utt, idx, score, _tokens in selections:
        print("%s\t%d\t%.6f" % (utt, idx, score))
    if report is not None:
        err, ref_len, rate = report
        print("wer\t%d\t%d\t%.6f" % (err, ref_len, rate))
    return 0


def cmd_sample(args):
    noise, vocab = load_noise_model(args.noise)
    rng = np.random.default_rng(args.seed)
    for s in noise_mod.sample(noise, args.count, rng):
        print(" ".join(vocab.words[i] for i in s))
    return 0


def cmd_oracle_check(args):
    V, L, d = args.vocab, args.max_length, args.dim
    if V**L > oracle_mod.ENUM_GUARD:
        print("refused: V^L = %d exceeds enumeration guard" % V**L, file=sys.stderr)
        return 2
    space = oracle_mod.EnumSpace(V, L)
    rng = np.random.default_rng(args.seed)
    failures = 0

    def report(name, ok, detail):
        nonlocal failures
        print("%s\t%s\t%s" % ("PASS" if ok else "FAIL", name, detail))
        if not ok:
            failures += 1

    model, noise = _random_tiny_model(V, L, d, rng)
    zeta_star = oracle_mod.exact_log_z(model, space)
    model.zeta = zeta_star
    total = sum(oracle_mod.exact_sentence_probs(model, space, zeta_star).values())
    report("normalization", abs(total - 1.0) < 1e-9, "sum=%.12f" % total)

    vec, shapes = neural.pack_params(model.phi_params)
    s = tuple(rng.integers(0, V, size=L))

    def phi_of(v):
        return neural.phi_forward(s, neural.unpack_params(v, shapes))[0]

    g_num = oracle_mod.finite_diff(phi_of, vec)
    _, cache = neural.phi_forward_batch([s], model.phi_params)
    g_ana, _ = neural.pack_params(neural.phi_backward_batch(cache, np.ones(1)))
    rel = np.max(np.abs(g_ana - g_num) / np.maximum(1e-6, np.abs(g_ana) + np.abs(g_num)))
    report("phi-gradient", rel < 1e-4, "max rel err=%.2e" % rel)

    data = [tuple(rng.integers(0, V, size=rng.integers(1, L + 1))) for _ in range(20)]
    from collections import Counter

    counts = Counter(data)
    data_probs = {k: c / len(data) for k, c in counts.items()}
    from .trainer import posterior_c0  # noqa: F401  (fixed-point check below)

    g_lam, g_theta, g_zeta = oracle_mod.exact_dnce_gradient(
        model, noise, data_probs, 0.5, 1.0, space
    )
    vecJ, shapesJ = neural.pack_params(
        {"lam": model.lam, "zeta": model.zeta, **{"phi." + k: v for k, v in model.phi_params.items()}}
    )

    def j_of(v):
        p = neural.unpack_params(v, shapesJ)
        m2 = _clone_with(model, p)
        return oracle_mod.exact_dnce_objective(m2, noise, data_probs, 0.5, 1.0, space)

    gJ_num = oracle_mod.finite_diff(j_of, vecJ, epsilon=1e-5)
    gJ_ana, _ = neural.pack_params(
        {"lam": g_lam, "zeta": g_zeta, **{"phi." + k: v for k, v in g_theta.items()}}
    )
    relJ = np.max(np.abs(gJ_ana - gJ_num) / np.maximum(1e-5, np.abs(gJ_ana) + np.abs(gJ_num)))
    report("dnce-gradient", relJ < 1e-4, "max rel err=%.2e" % relJ)

    return 0 if failures == 0 else 1


def _random_tiny_model(V, L, d, rng):
    from .corpus import LengthPrior, Vocabulary

    words = ["<unk>"] + ["w%d" % i for i in range(1, V)]
    vocab = Vocabulary(words)
    pi = rng.random(L) + 0.1
    prior = LengthPrior(pi / pi.sum())
    tset = feats.compile_templates("w:2")
    corpus = [tuple(rng.integers(0, V, size=rng.integers(1, L + 1))) for _ in range(30)]
    index = feats.build_feature_index(corpus, tset, "00")
    lam = rng.uniform(-0.3, 0.3, index.n_features)
    phi_params = neural.init_phi_params(V, d, seed=int(rng.integers(1 << 31)))
    model = TrfModel(vocab, prior, zeta_init(V, L), feature_index=index, lam=lam, phi_params=phi_params)
    noise = noise_mod.init_noise_model(V, d, prior, seed=int(rng.integers(1 << 31)))
    return model, noise


def _clone_with(model, packed):
    phi = {k[len("phi."):]: v for k, v in packed.items() if k.startswith("phi.")}
    return TrfModel(
        model.vocab,
        model.prior,
        packed["zeta"],
        feature_index=model.feature_index,
        lam=packed["lam"],
        phi_params=phi,
        class_map=model.class_map,
        template_spec=model.template_spec,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="trflm")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="exchange-cluster the vocabulary into classes")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--n-classes", type=int, required=True)
    p.add_argument("--vocab-size", type=int, default=10000)
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train a TRF model with DNCE")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ppl", help="perplexity of a corpus under a model")
    p.add_argument("model")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("rescore", help="rescore an N-best list")
    p.add_argument("nbest")
    p.add_argument("models", nargs="+")
    p.add_argument("--refs")
    p.add_argument("--lm-weight", type=float, default=1.0)
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("sample", help="sample sentences from a noise model")
    p.add_argument("noise")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("oracle-check", help="run exact-enumeration property checks")
    p.add_argument("--vocab", type=int, default=3)
    p.add_argument("--max-length", type=int, default=3)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError,) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures surface as exit code 1
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
