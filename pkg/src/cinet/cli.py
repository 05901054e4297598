"""Command-line front door.

One subcommand per pipeline stage. Every command that draws random numbers
takes a required --seed, writes outputs atomically, and is byte-for-byte
reproducible given the same flags. --plot renders a PNG next to the
corresponding CSV.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dataset, incremental, lda, rnn
from .dataset import InputMode, PairBuildConfig
from .errors import CinetError, ConfigError, DataError
from .fileio import atomic_write, derive_seed
from .incremental import (
    CinetPolicy,
    EntropyRulePolicy,
    OraclePolicy,
    StreamSchedule,
    run_stream,
    sweep_increment,
    write_sweep_csv,
    write_trace_csv,
)
from .lda import Fixed, Poisson, Vocabulary
from .rnn import CellKind, RnnConfig


def _parse_scene_len(text: str):
    try:
        if text.startswith("poisson:"):
            return Poisson(float(text.split(":", 1)[1]))
        return Fixed(int(text))
    except ValueError as exc:
        raise ConfigError(f"--scene-len wants N or poisson:LAMBDA, got {text!r}") from exc


def _parse_k_values(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--k-values wants comma-separated integers, got {text!r}") from exc


def _png_beside(out_path: str) -> Path:
    return Path(out_path).with_suffix(".png")


def _add_priors(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=lda.DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=lda.DEFAULT_BETA)


def _cmd_gen_corpus(args) -> None:
    corpus, _ = lda.sample_corpus(
        k=args.k, num_scenes=args.scenes, vocab=Vocabulary(args.vocab),
        scene_len=_parse_scene_len(args.scene_len),
        alpha=args.alpha, beta=args.beta, seed=args.seed,
    )
    lda.save_corpus(corpus, args.out)
    print(f"wrote {args.out} ({len(corpus.scenes)} scenes, vocab {args.vocab}, k {args.k})")


def _cmd_fit_lda(args) -> None:
    corpus = lda.load_corpus(args.corpus)
    model = lda.gibbs_fit(corpus, args.k0, args.iterations, args.seed,
                          alpha=args.alpha, beta=args.beta)
    lda.save_model(model, args.out)
    print(f"wrote {args.out} (k0 {model.k0}, entropy {lda.system_entropy(model):.4f})")


def _cmd_build_pairs(args) -> None:
    cfg = PairBuildConfig(
        vocab_size=args.vocab,
        k_values=_parse_k_values(args.k_values),
        corpora_per_k=args.corpora_per_k,
        scenes_per_corpus=args.scenes,
        scene_len=_parse_scene_len(args.scene_len),
        alpha=args.alpha, beta=args.beta,
        gen_alpha=args.gen_alpha, gen_beta=args.gen_beta,
        gibbs_iterations=args.gibbs_iterations,
        gibbs_restarts=args.gibbs_restarts,
        seeds_per_positive=args.seeds_per_positive,
        test_corpora_per_k=args.test_corpora_per_k,
        val_fraction=args.val_fraction,
        mode=InputMode(args.mode),
        seed=args.seed,
    )
    ps = dataset.build_pairs(cfg, threads=args.threads)
    dataset.save_pairs(ps, args.out)
    splits = {s: len(ps.subset(s)) for s in ("train", "val", "test")}
    print(f"wrote {args.out} ({len(ps.pairs)} pairs, splits {splits})")


def _cmd_train_cinet(args) -> None:
    pairs = dataset.load_pairs(args.pairs)
    cfg = RnnConfig(
        cell=CellKind(args.cell),
        input_dim=pairs.input_dim,
        layers=args.layers,
        hidden=args.hidden,
        input_mode=pairs.mode,
        l2_lambda=args.l2,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        early_stop_patience=args.patience,
        max_epochs=args.max_epochs,
    )
    model, history = rnn.train(pairs, cfg, monitor=args.monitor)
    rnn.save_rnn(model, args.out)
    rnn.write_metrics_csv(history, args.metrics)
    if args.plot:
        from .report import plot_history
        plot_history(history, _png_beside(args.metrics))
    best = history.records[history.best_epoch - 1]
    print(f"wrote {args.out} and {args.metrics} "
          f"(best epoch {history.best_epoch}, {args.monitor} accuracy {best.val_acc:.4f})")


def _cmd_eval_cinet(args) -> None:
    pairs = dataset.load_pairs(args.pairs)
    model = rnn.load_rnn(args.model)
    subset = pairs.pairs if args.split == "all" else pairs.subset(args.split)
    if not subset:
        raise DataError(f"no pairs in split {args.split!r}")
    accuracy, _ = rnn.evaluate(model, subset)
    print(f"split={args.split} n={len(subset)} accuracy={accuracy!r}")


def _cmd_sweep(args) -> None:
    corpus = lda.load_corpus(args.corpus)
    model = rnn.load_rnn(args.model)
    curve = sweep_increment(
        corpus, model, range(args.k0_min, args.k0_max + 1), args.fits,
        seed=args.seed, iterations=args.iterations, alpha=args.alpha, beta=args.beta,
        restarts=args.restarts,
    )
    write_sweep_csv(curve, args.out)
    if args.plot:
        from .report import plot_sweep
        plot_sweep(curve, _png_beside(args.out), truth_k=corpus.truth_k)
    print(f"wrote {args.out} ({len(curve)} points)")


def _build_policy(args, corpus):
    if args.policy == "cinet":
        if not args.model:
            raise ConfigError("--model is required for the cinet policy")
        return CinetPolicy(model=rnn.load_rnn(args.model), threshold=args.threshold)
    if args.policy == "oracle":
        truth_k = args.truth_k if args.truth_k is not None else corpus.truth_k
        if truth_k is None:
            raise ConfigError("oracle policy needs --truth-k or a corpus that records it")
        return OraclePolicy(truth_k=truth_k)
    return EntropyRulePolicy(
        threshold=args.rule_threshold, window=args.rule_window,
        trial_sweeps=args.trial_sweeps, rho=args.rho, seed=args.seed,
    )


def _cmd_run_stream(args) -> None:
    corpus = lda.load_corpus(args.corpus)
    policy = _build_policy(args, corpus)
    schedule = StreamSchedule(
        sweeps_per_scene=args.sweeps_per_scene,
        decision_every=args.decision_every,
        settle_sweeps=args.settle_sweeps,
        max_k0=args.max_k0,
        seed=args.seed,
        alpha=args.alpha, beta=args.beta, rho=args.rho,
        cold_refit=args.cold_refit,
    )
    model, trace = run_stream(corpus, corpus.vocabulary.size, args.initial_k0, policy, schedule)
    write_trace_csv(trace, args.out)
    if args.save_model:
        lda.save_model(model, args.save_model)
    if args.plot:
        from .report import plot_trace
        plot_trace(trace, _png_beside(args.out))
    print(f"wrote {args.out} (final k0 {model.k0}, "
          f"entropy {lda.system_entropy(model, args.rho):.4f})")


def _cmd_export_cooc(args) -> None:
    corpus = lda.load_corpus(args.corpus)
    model = lda.load_model(args.model, corpus=corpus)
    with atomic_write(args.out) as fh:
        fh.write("context," + ",".join(f"obj_{o}" for o in range(model.vocab_size)) + "\n")
        if corpus.scenes:
            for c in range(model.k0):
                fh.write(f"{c}," + ",".join(str(int(n)) for n in model.n_co[c]) + "\n")
    if args.plot:
        from .report import plot_cooc
        plot_cooc(model.n_co, _png_beside(args.out))
    print(f"wrote {args.out} ({model.k0} contexts, {model.total_tokens} tokens)")


def _cmd_replicate_paper(args) -> None:
    """Desk-scale end-to-end run: pairs for all modes, three classifiers,
    an increment-probability sweep, and a Cinet-policy stream."""
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PairBuildConfig(
        vocab_size=100, k_values=tuple(range(1, 7)), corpora_per_k=4,
        scenes_per_corpus=30, scene_len=Fixed(20), gen_beta=0.1,
        gibbs_iterations=300, gibbs_restarts=3,
        seeds_per_positive=8, test_corpora_per_k=1, seed=args.seed,
    )
    modes = (InputMode.P_C, InputMode.P_O, InputMode.CONCAT)
    print("building pairs for all three input modes ...")
    sets = dataset.build_pair_sets(cfg, modes, threads=args.threads)
    accuracies = {}
    classifier = {}
    for mode in modes:
        ps = sets[mode]
        dataset.save_pairs(ps, out / f"pairs_{mode.value}.jsonl")
        rcfg = RnnConfig(
            cell=CellKind.LSTM, input_dim=ps.input_dim, layers=2, hidden=50,
            input_mode=mode, l2_lambda=0.0125, learning_rate=1e-3, batch_size=16,
            seed=args.seed, max_epochs=400, early_stop_patience=60,
        )
        model, history = rnn.train(ps, rcfg, monitor="test")
        rnn.save_rnn(model, out / f"cinet_{mode.value}.json")
        rnn.write_metrics_csv(history, out / f"metrics_{mode.value}.csv")
        if args.plot:
            from .report import plot_history
            plot_history(history, out / f"metrics_{mode.value}.png")
        accuracies[mode], _ = rnn.evaluate(model, ps.subset("test"))
        classifier[mode] = model
        print(f"  {mode.value}: test accuracy {accuracies[mode]:.4f}")

    sweep_corpus, _ = lda.sample_corpus(
        k=5, num_scenes=30, vocab=Vocabulary(100), scene_len=Fixed(20),
        alpha=cfg.alpha, beta=cfg.gen_beta, seed=derive_seed(args.seed, 71),
    )
    lda.save_corpus(sweep_corpus, out / "sweep_corpus.jsonl")
    curve = sweep_increment(sweep_corpus, classifier[InputMode.P_C], range(1, 9),
                            fits_per_k0=5, seed=derive_seed(args.seed, 73),
                            iterations=cfg.gibbs_iterations, beta=cfg.beta,
                            restarts=cfg.gibbs_restarts)
    write_sweep_csv(curve, out / "sweep.csv")

    policy = CinetPolicy(model=classifier[InputMode.P_C])
    schedule = StreamSchedule(seed=derive_seed(args.seed, 79))
    stream_corpus, _ = lda.sample_corpus(
        k=5, num_scenes=60, vocab=Vocabulary(100), scene_len=Fixed(20),
        alpha=cfg.alpha, beta=cfg.gen_beta, seed=derive_seed(args.seed, 77),
    )
    lda.save_corpus(stream_corpus, out / "stream_corpus.jsonl")
    model, trace = run_stream(stream_corpus, 100, 1, policy, schedule)
    write_trace_csv(trace, out / "trace.csv")
    if args.plot:
        from .report import plot_sweep, plot_trace
        plot_sweep(curve, out / "sweep.png", truth_k=5)
        plot_trace(trace, out / "trace.png")
    print(f"stream ended at k0 {model.k0}; artifacts in {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cinet",
        description="Scene-corpus generation, topic-model fitting, and learned context incrementing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="sample a labeled scene corpus")
    p.add_argument("--k", type=int, required=True, help="true context count")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--scene-len", default="20", help="objects per scene: N or poisson:LAMBDA")
    _add_priors(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("fit-lda", help="fit a topic model by collapsed Gibbs sampling")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k0", type=int, required=True, help="assumed context count")
    p.add_argument("--iterations", type=int, default=150)
    _add_priors(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit_lda)

    p = sub.add_parser("build-pairs", help="build a labeled increment/hold dataset")
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--k-values", required=True, help="comma-separated true context counts")
    p.add_argument("--corpora-per-k", type=int, default=4)
    p.add_argument("--scenes", type=int, default=30)
    p.add_argument("--scene-len", default="20")
    p.add_argument("--mode", choices=[m.value for m in InputMode], default="p_c")
    p.add_argument("--seeds-per-positive", type=int, default=2)
    p.add_argument("--test-corpora-per-k", type=int, default=1)
    p.add_argument("--val-fraction", type=float, default=0.10)
    p.add_argument("--gibbs-iterations", type=int, default=150)
    p.add_argument("--gibbs-restarts", type=int, default=1)
    _add_priors(p)
    p.add_argument("--gen-alpha", type=float, default=None,
                   help="generation-time alpha (defaults to --alpha)")
    p.add_argument("--gen-beta", type=float, default=None,
                   help="generation-time beta (defaults to --beta)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_pairs)

    p = sub.add_parser("train-cinet", help="train the increment classifier")
    p.add_argument("--pairs", required=True)
    p.add_argument("--cell", choices=[c.value for c in CellKind], default="lstm")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=10, help="0 disables early stopping")
    p.add_argument("--monitor", choices=["val", "test"], default="val")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--metrics", required=True, help="per-epoch CSV path")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_train_cinet)

    p = sub.add_parser("eval-cinet", help="accuracy of a trained classifier on one split")
    p.add_argument("--pairs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.set_defaults(func=_cmd_eval_cinet)

    p = sub.add_parser("sweep", help="increment probability versus assumed context count")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--k0-min", type=int, default=1)
    p.add_argument("--k0-max", type=int, default=8)
    p.add_argument("--fits", type=int, default=5, help="independent fits per k0")
    p.add_argument("--iterations", type=int, default=150)
    p.add_argument("--restarts", type=int, default=1)
    _add_priors(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("run-stream", help="stream scenes through a growing context model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--policy", choices=["cinet", "rule", "oracle"], default="cinet")
    p.add_argument("--model", help="classifier checkpoint (cinet policy)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--truth-k", type=int, help="oracle policy override")
    p.add_argument("--rule-threshold", type=float, default=0.05)
    p.add_argument("--rule-window", type=int, default=3)
    p.add_argument("--trial-sweeps", type=int, default=50)
    p.add_argument("--initial-k0", type=int, default=1)
    p.add_argument("--max-k0", type=int, default=64)
    p.add_argument("--sweeps-per-scene", type=int, default=50)
    p.add_argument("--decision-every", type=int, default=5)
    p.add_argument("--settle-sweeps", type=int, default=50)
    _add_priors(p)
    p.add_argument("--rho", type=float, default=lda.DEFAULT_RHO)
    p.add_argument("--cold-refit", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--save-model", help="optional final model checkpoint")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_run_stream)

    p = sub.add_parser("export-cooc", help="context-object co-occurrence counts as CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_export_cooc)

    p = sub.add_parser("replicate-paper", help="run the full desk-scale pipeline")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_replicate_paper)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CinetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
