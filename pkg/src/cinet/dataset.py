"""Supervised pair construction: model snapshots in, increment labels out.

Each pair encodes one fitted model as a sequence of per-context probability
vectors, labeled 1 when the fit used fewer contexts than the corpus was
generated with. Negatives only exist at k0 == truth_k and get extra sampler
seeds so the two classes stay balanced.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .fileio import atomic_write, derive_seed
from .lda import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    Fixed,
    ProbView,
    SceneLength,
    Vocabulary,
    gibbs_fit,
    prob_view,
    sample_corpus,
)

PAIR_FORMAT_VERSION = 1


class InputMode(Enum):
    """Which probability matrix feeds the classifier at each context step."""

    P_C = "p_c"          # p(context | object), one length-V vector per context
    P_O = "p_o"          # p(object | context), one length-V vector per context
    CONCAT = "concat"    # P_O step followed by P_C step, length 2V

    def dim(self, vocab_size: int) -> int:
        return 2 * vocab_size if self is InputMode.CONCAT else vocab_size


@dataclass(frozen=True)
class PairMeta:
    truth_k: int
    k0: int
    corpus_seed: int
    gibbs_seed: int

    def sort_key(self):
        return (self.truth_k, self.corpus_seed, self.k0, self.gibbs_seed)


@dataclass
class TrainingPair:
    x: np.ndarray  # (k0, dim) rows in [0, 1]
    y: int
    meta: PairMeta
    split: str = "train"  # train | val | test


@dataclass
class PairSet:
    mode: InputMode
    vocab_size: int
    pairs: list[TrainingPair] = field(default_factory=list)

    def subset(self, split: str) -> list[TrainingPair]:
        return [p for p in self.pairs if p.split == split]

    @property
    def input_dim(self) -> int:
        return self.mode.dim(self.vocab_size)


def encode_input(view: ProbView, mode: InputMode) -> np.ndarray:
    """Turn one model snapshot into its (k0, dim) step matrix.

    Step t carries context t's vector: its p(c_t | o_j) column for P_C, its
    emission row for P_O, and emission ++ inversion for CONCAT.
    """
    p_c_steps = view.c_given_o.T  # (k0, V)
    p_o_steps = view.phi          # (k0, V)
    if mode is InputMode.P_C:
        return p_c_steps.copy()
    if mode is InputMode.P_O:
        return p_o_steps.copy()
    if mode is InputMode.CONCAT:
        return np.hstack([p_o_steps, p_c_steps])
    raise ConfigError(f"unknown input mode: {mode!r}")


@dataclass(frozen=True)
class PairBuildConfig:
    """Generation recipe for one labeled dataset."""

    vocab_size: int
    k_values: tuple[int, ...]
    corpora_per_k: int
    scenes_per_corpus: int
    scene_len: SceneLength = Fixed(20)
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    # generation priors may differ from the fit priors above; None reuses them
    gen_alpha: float | None = None
    gen_beta: float | None = None
    gibbs_iterations: int = 150
    gibbs_restarts: int = 1
    seeds_per_positive: int = 2
    test_corpora_per_k: int = 1
    val_fraction: float = 0.10
    mode: InputMode = InputMode.P_C
    seed: int = 0

    def validate(self) -> None:
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ConfigError(f"k values must all be >= 1, got {self.k_values}")
        if self.corpora_per_k < 1:
            raise ConfigError("need at least one corpus per k")
        for name in ("gen_alpha", "gen_beta"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.gibbs_restarts < 1:
            raise ConfigError("gibbs_restarts must be >= 1")
        if not 0 <= self.test_corpora_per_k < self.corpora_per_k:
            raise ConfigError(
                f"test_corpora_per_k must lie in [0, corpora_per_k), got "
                f"{self.test_corpora_per_k} of {self.corpora_per_k}"
            )
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.seeds_per_positive < 1:
            raise ConfigError("seeds_per_positive must be >= 1")


def _corpus_pairs(cfg: PairBuildConfig, modes: tuple[InputMode, ...], k: int, rep: int):
    """All pairs derived from one generated corpus, for every requested mode."""
    corpus_seed = derive_seed(cfg.seed, 101, k, rep)
    gen_alpha = cfg.alpha if cfg.gen_alpha is None else cfg.gen_alpha
    gen_beta = cfg.beta if cfg.gen_beta is None else cfg.gen_beta
    corpus, _ = sample_corpus(
        k=k, num_scenes=cfg.scenes_per_corpus, vocab=Vocabulary(cfg.vocab_size),
        scene_len=cfg.scene_len, alpha=gen_alpha, beta=gen_beta, seed=corpus_seed,
    )
    split = "test" if rep >= cfg.corpora_per_k - cfg.test_corpora_per_k else "train"
    out: dict[InputMode, list[TrainingPair]] = {m: [] for m in modes}
    for k0 in range(1, k + 1):
        n_seeds = cfg.seeds_per_positive if k0 < k else (k - 1) * cfg.seeds_per_positive
        y = 1 if k0 < k else 0
        for j in range(n_seeds):
            gibbs_seed = derive_seed(cfg.seed, 202, k, rep, k0, j)
            model = gibbs_fit(corpus, k0, cfg.gibbs_iterations, gibbs_seed,
                              alpha=cfg.alpha, beta=cfg.beta,
                              restarts=cfg.gibbs_restarts)
            view = prob_view(model)
            meta = PairMeta(truth_k=k, k0=k0, corpus_seed=corpus_seed, gibbs_seed=gibbs_seed)
            for mode in modes:
                out[mode].append(TrainingPair(x=encode_input(view, mode), y=y, meta=meta, split=split))
    return out


def build_pair_sets(
    cfg: PairBuildConfig,
    modes: tuple[InputMode, ...],
    threads: int = 1,
) -> dict[InputMode, PairSet]:
    """Build one PairSet per mode from a single shared round of LDA fits.

    Output ordering is canonical (sorted by meta), so serial and parallel
    builds produce identical files.
    """
    cfg.validate()
    tasks = [(k, rep) for k in sorted(set(cfg.k_values)) for rep in range(cfg.corpora_per_k)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_corpus_pairs, *zip(*[(cfg, modes, k, rep) for k, rep in tasks])))
    else:
        results = [_corpus_pairs(cfg, modes, k, rep) for k, rep in tasks]

    sets = {mode: PairSet(mode=mode, vocab_size=cfg.vocab_size) for mode in modes}
    for chunk in results:
        for mode in modes:
            sets[mode].pairs.extend(chunk[mode])
    for mode in modes:
        sets[mode].pairs.sort(key=lambda p: p.meta.sort_key())
    _assign_validation(sets, cfg)
    return sets


def _assign_validation(sets: dict[InputMode, PairSet], cfg: PairBuildConfig) -> None:
    # same held-out indices in every mode, so mode comparisons see one split
    any_set = next(iter(sets.values()))
    train_idx = [i for i, p in enumerate(any_set.pairs) if p.split == "train"]
    n_val = math.ceil(cfg.val_fraction * len(train_idx))
    if n_val == 0:
        return
    rng = np.random.default_rng(derive_seed(cfg.seed, 303))
    chosen = rng.permutation(len(train_idx))[:n_val]
    for c in chosen:
        for ps in sets.values():
            ps.pairs[train_idx[c]].split = "val"


def build_pairs(cfg: PairBuildConfig, threads: int = 1) -> PairSet:
    return build_pair_sets(cfg, (cfg.mode,), threads=threads)[cfg.mode]


def check_pairset(ps: PairSet) -> None:
    """Audit invariants: label rule, dims, value range, train/test leakage."""
    dim = ps.input_dim
    test_keys = {(p.meta.truth_k, p.meta.corpus_seed) for p in ps.pairs if p.split == "test"}
    for p in ps.pairs:
        if p.y != (1 if p.meta.k0 < p.meta.truth_k else 0):
            raise ConfigError(f"label {p.y} contradicts meta {p.meta}")
        if p.x.ndim != 2 or p.x.shape != (p.meta.k0, dim):
            raise ConfigError(f"pair shape {p.x.shape}, expected ({p.meta.k0}, {dim})")
        if p.x.min() < 0.0 or p.x.max() > 1.0:
            raise ConfigError("pair entries must lie in [0, 1]")
        if p.split in ("train", "val") and (p.meta.truth_k, p.meta.corpus_seed) in test_keys:
            raise ConfigError(f"corpus {p.meta.corpus_seed} leaks between train and test")


def save_pairs(ps: PairSet, path: str | Path) -> None:
    """JSON-lines with a header line; floats keep full round-trip precision."""
    with atomic_write(path) as fh:
        header = {"mode": ps.mode.value, "vocab_size": ps.vocab_size,
                  "format_version": PAIR_FORMAT_VERSION}
        fh.write(json.dumps(header) + "\n")
        for p in ps.pairs:
            rec = {
                "x": [[float(v) for v in row] for row in p.x],
                "y": int(p.y),
                "meta": {
                    "truth_k": p.meta.truth_k, "k0": p.meta.k0,
                    "corpus_seed": p.meta.corpus_seed, "gibbs_seed": p.meta.gibbs_seed,
                },
                "split": p.split,
            }
            fh.write(json.dumps(rec) + "\n")


def load_pairs(path: str | Path) -> PairSet:
    with open(path) as fh:
        first = fh.readline()
        if not first.strip():
            raise FormatError(f"{path}: missing header line")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line 1: {exc}") from exc
        version = header.get("format_version")
        if version != PAIR_FORMAT_VERSION:
            raise FormatError(f"{path}: format_version {version!r}, expected {PAIR_FORMAT_VERSION}")
        try:
            mode = InputMode(header["mode"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: line 1: bad or missing mode") from exc
        ps = PairSet(mode=mode, vocab_size=int(header["vocab_size"]))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                meta = PairMeta(
                    truth_k=int(rec["meta"]["truth_k"]), k0=int(rec["meta"]["k0"]),
                    corpus_seed=int(rec["meta"]["corpus_seed"]),
                    gibbs_seed=int(rec["meta"]["gibbs_seed"]),
                )
                pair = TrainingPair(
                    x=np.asarray(rec["x"], dtype=np.float64),
                    y=int(rec["y"]),
                    meta=meta,
                    split=str(rec.get("split", "train")),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if pair.y not in (0, 1):
                raise FormatError(f"{path}: line {lineno}: label must be 0 or 1")
            ps.pairs.append(pair)
    return ps
