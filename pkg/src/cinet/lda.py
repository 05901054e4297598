"""Scene corpora, collapsed-Gibbs topic fitting, and the blended entropy score.

Scenes are bags of integer object ids. A fitted model carries the usual
count tables (context-object, scene-context) plus per-token context
assignments, from which the smoothed probability matrices and the
rho-weighted system entropy are derived.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _gibbs
from .errors import ConfigError, DataError, FormatError
from .fileio import atomic_write, derive_seed

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    """Object ids run 0..size-1."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"vocabulary size must be >= 1, got {self.size}")


@dataclass
class Scene:
    id: int
    objects: list[int]


@dataclass
class Corpus:
    vocabulary: Vocabulary
    scenes: list[Scene]
    truth_k: int | None = None

    @property
    def total_tokens(self) -> int:
        return sum(len(s.objects) for s in self.scenes)


@dataclass
class GroundTruth:
    """Every latent draw made while generating a corpus."""

    k: int
    phi_true: np.ndarray          # (k, V) emission rows
    theta_true: np.ndarray        # (S, k) per-scene mixtures
    assignments: list[np.ndarray]  # per-scene token context indices

    def context_marginal(self) -> np.ndarray:
        """Empirical fraction of tokens drawn from each context."""
        flat = np.concatenate(self.assignments) if self.assignments else np.empty(0, dtype=np.int64)
        if flat.size == 0:
            return np.full(self.k, 1.0 / self.k)
        return np.bincount(flat, minlength=self.k) / flat.size


@dataclass(frozen=True)
class Fixed:
    """Every scene gets exactly n tokens."""

    n: int


@dataclass(frozen=True)
class Poisson:
    """Scene length ~ Poisson(lam), redrawn until >= 1."""

    lam: float


SceneLength = Fixed | Poisson


@dataclass
class LdaModel:
    """Count-table state of a collapsed-Gibbs fit.

    `docs` holds the token arrays the model was fitted on; checkpoints do not
    persist them, so a loaded model needs its corpus re-attached before any
    further sweeps.
    """

    k0: int
    alpha: float
    beta: float
    vocab_size: int
    n_co: np.ndarray               # (k0, V) int64
    n_sc: np.ndarray               # (S, k0) int64
    n_c: np.ndarray                # (k0,) int64
    docs: list[np.ndarray]         # per-scene token arrays
    assignments: list[np.ndarray]  # per-scene context indices
    rng_seed: int = 0

    @property
    def n_scenes(self) -> int:
        return len(self.docs)

    @property
    def total_tokens(self) -> int:
        return int(self.n_c.sum())

    def copy(self) -> "LdaModel":
        return LdaModel(
            k0=self.k0,
            alpha=self.alpha,
            beta=self.beta,
            vocab_size=self.vocab_size,
            n_co=self.n_co.copy(),
            n_sc=self.n_sc.copy(),
            n_c=self.n_c.copy(),
            docs=list(self.docs),
            assignments=[a.copy() for a in self.assignments],
            rng_seed=self.rng_seed,
        )


@dataclass
class ProbView:
    """Smoothed probability matrices extracted from one model state."""

    phi: np.ndarray               # (k0, V) p(object | context)
    theta: np.ndarray             # (S, k0) p(context | scene)
    context_marginal: np.ndarray  # (k0,)   p(context)
    c_given_o: np.ndarray         # (V, k0) p(context | object); all-zero row for unused objects


def _check_priors(alpha: float, beta: float) -> None:
    if not (alpha > 0 and beta > 0):
        raise ConfigError(f"dirichlet priors must be positive, got alpha={alpha} beta={beta}")


def _draw_length(spec: SceneLength, rng: np.random.Generator) -> int:
    if isinstance(spec, Fixed):
        if spec.n < 1:
            raise ConfigError(f"fixed scene length must be >= 1, got {spec.n}")
        return spec.n
    if isinstance(spec, Poisson):
        if spec.lam <= 0:
            raise ConfigError(f"poisson rate must be positive, got {spec.lam}")
        n = int(rng.poisson(spec.lam))
        while n == 0:  # never emit an empty scene
            n = int(rng.poisson(spec.lam))
        return n
    raise ConfigError(f"unknown scene length spec: {spec!r}")


def sample_corpus(
    k: int,
    num_scenes: int,
    vocab: Vocabulary,
    scene_len: SceneLength,
    alpha: float,
    beta: float,
    seed: int,
) -> tuple[Corpus, GroundTruth]:
    """Generate a corpus with a known context count.

    Emission rows are drawn once per context from Dir(beta); each scene draws
    its own mixture from Dir(alpha), then per token a context from the mixture
    and an object from that context's emission row.
    """
    if k < 1:
        raise ConfigError(f"context count must be >= 1, got {k}")
    if num_scenes < 1:
        raise ConfigError(f"scene count must be >= 1, got {num_scenes}")
    _check_priors(alpha, beta)

    rng = np.random.default_rng(seed)
    v = vocab.size
    phi_true = rng.dirichlet(np.full(v, beta), size=k)
    theta_rows = []
    scenes: list[Scene] = []
    assignments: list[np.ndarray] = []
    for sid in range(num_scenes):
        theta = rng.dirichlet(np.full(k, alpha))
        n = _draw_length(scene_len, rng)
        contexts = rng.choice(k, size=n, p=theta)
        objects = np.empty(n, dtype=np.int64)
        for c in np.unique(contexts):
            mask = contexts == c
            objects[mask] = rng.choice(v, size=int(mask.sum()), p=phi_true[c])
        theta_rows.append(theta)
        assignments.append(contexts.astype(np.int64))
        scenes.append(Scene(id=sid, objects=objects.tolist()))
    truth = GroundTruth(k=k, phi_true=phi_true, theta_true=np.array(theta_rows), assignments=assignments)
    return Corpus(vocabulary=vocab, scenes=scenes, truth_k=k), truth


def _validate_tokens(corpus: Corpus) -> None:
    v = corpus.vocabulary.size
    for scene in corpus.scenes:
        for o in scene.objects:
            if not 0 <= o < v:
                raise DataError(f"scene {scene.id}: object id {o} outside vocabulary of size {v}")


def _flatten(model: LdaModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    token_obj = np.concatenate(model.docs) if model.docs else np.empty(0, dtype=np.int64)
    token_scene = np.concatenate(
        [np.full(len(d), s, dtype=np.int64) for s, d in enumerate(model.docs)]
    ) if model.docs else np.empty(0, dtype=np.int64)
    z = np.concatenate(model.assignments) if model.assignments else np.empty(0, dtype=np.int64)
    return token_obj, token_scene, z


def _unflatten(model: LdaModel, z: np.ndarray) -> None:
    pos = 0
    out = []
    for d in model.docs:
        out.append(z[pos:pos + len(d)].copy())
        pos += len(d)
    model.assignments = out


def _count_tables(k0, vocab_size, docs, assignments):
    n_co = np.zeros((k0, vocab_size), dtype=np.int64)
    n_sc = np.zeros((len(docs), k0), dtype=np.int64)
    for s, (doc, z) in enumerate(zip(docs, assignments)):
        np.add.at(n_co, (z, doc), 1)
        np.add.at(n_sc[s], z, 1)
    return n_co, n_sc, n_co.sum(axis=1)


def recount(model: LdaModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recompute all count tables from scratch; used to audit consistency."""
    return _count_tables(model.k0, model.vocab_size, model.docs, model.assignments)


def _sweep_inplace(model: LdaModel, sweeps: int, seed: int) -> None:
    if sweeps <= 0 or model.total_tokens == 0:
        return
    token_obj, token_scene, z = _flatten(model)
    _gibbs.run_sweeps(
        token_obj, token_scene, z,
        model.n_co, model.n_sc, model.n_c,
        float(model.alpha), float(model.beta),
        int(sweeps), int(seed) & 0xFFFFFFFF,
    )
    _unflatten(model, z)


# Prior defaults shared by fitting and streaming.
DEFAULT_ALPHA = 0.9
DEFAULT_BETA = 0.01
DEFAULT_RHO = 0.9


def joint_log_likelihood(model: LdaModel) -> float:
    """Collapsed joint log p(objects, assignments | alpha, beta).

    Comparable across fits of the same corpus at the same k0; used to pick
    the best of several restarts.
    """
    scene_lens = model.n_sc.sum(axis=1).astype(np.float64)
    return float(_gibbs.joint_loglik(
        model.n_co.astype(np.float64), model.n_sc.astype(np.float64),
        model.n_c.astype(np.float64), scene_lens, model.alpha, model.beta,
    ))


def _fit_once(corpus: Corpus, k0: int, iterations: int, seed: int,
              alpha: float, beta: float) -> LdaModel:
    init_rng = np.random.default_rng(derive_seed(seed, 0))
    docs = [np.asarray(s.objects, dtype=np.int64) for s in corpus.scenes]
    assignments = [init_rng.integers(0, k0, size=len(d), dtype=np.int64) for d in docs]
    n_co, n_sc, n_c = _count_tables(k0, corpus.vocabulary.size, docs, assignments)
    model = LdaModel(
        k0=k0, alpha=alpha, beta=beta,
        vocab_size=corpus.vocabulary.size,
        n_co=n_co, n_sc=n_sc, n_c=n_c,
        docs=docs, assignments=assignments, rng_seed=seed,
    )
    _sweep_inplace(model, iterations, derive_seed(seed, 1))
    return model


def gibbs_fit(
    corpus: Corpus,
    k0: int,
    iterations: int,
    seed: int,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    restarts: int = 1,
) -> LdaModel:
    """Fit a model by collapsed Gibbs sampling from a uniform random start.

    With restarts > 1, runs that many independent chains (seeds derived from
    `seed`) and keeps the one with the highest joint log-likelihood; ties go
    to the earliest chain, so the result is deterministic.
    """
    if k0 < 1:
        raise ConfigError(f"k0 must be >= 1, got {k0}")
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")
    _check_priors(alpha, beta)
    if corpus.total_tokens == 0:
        raise DataError("cannot fit an empty corpus")
    _validate_tokens(corpus)

    best: LdaModel | None = None
    best_ll = -np.inf
    for j in range(restarts):
        chain_seed = seed if j == 0 else derive_seed(seed, 509, j)
        model = _fit_once(corpus, k0, iterations, chain_seed, alpha, beta)
        if restarts == 1:
            return model
        ll = joint_log_likelihood(model)
        if ll > best_ll:
            best, best_ll = model, ll
    assert best is not None
    return best


def resample(model: LdaModel, sweeps: int, seed: int) -> LdaModel:
    """Extra Gibbs sweeps on an existing model (warm start)."""
    out = model.copy()
    _sweep_inplace(out, sweeps, seed)
    return out


def update_with_scene(model: LdaModel, scene: Scene, sweeps: int, seed: int | None = None) -> LdaModel:
    """Append one scene and re-sweep all tokens, warm-starting from the current state."""
    if len(scene.objects) == 0:
        return model
    for o in scene.objects:
        if not 0 <= o < model.vocab_size:
            raise DataError(f"scene {scene.id}: object id {o} outside vocabulary of size {model.vocab_size}")
    out = model.copy()
    doc = np.asarray(scene.objects, dtype=np.int64)
    if seed is None:
        seed = derive_seed(model.rng_seed, out.n_scenes + 1, out.total_tokens + len(doc))
    init_rng = np.random.default_rng(derive_seed(seed, 2))
    z_new = init_rng.integers(0, out.k0, size=len(doc), dtype=np.int64)
    row = np.zeros(out.k0, dtype=np.int64)
    np.add.at(row, z_new, 1)
    np.add.at(out.n_co, (z_new, doc), 1)
    out.n_c += row
    out.n_sc = np.vstack([out.n_sc, row])
    out.docs.append(doc)
    out.assignments.append(z_new)
    _sweep_inplace(out, sweeps, derive_seed(seed, 3))
    return out


def add_context(model: LdaModel) -> LdaModel:
    """Grow the model by one empty context; existing assignments stay put."""
    out = model.copy()
    out.k0 += 1
    out.n_co = np.vstack([out.n_co, np.zeros((1, out.vocab_size), dtype=np.int64)])
    out.n_sc = np.hstack([out.n_sc, np.zeros((out.n_sc.shape[0], 1), dtype=np.int64)])
    out.n_c = np.append(out.n_c, 0)
    return out


def empty_model(k0: int, vocab_size: int, alpha: float, beta: float, seed: int = 0) -> LdaModel:
    """A model over zero scenes; the starting point of a stream."""
    if k0 < 1:
        raise ConfigError(f"k0 must be >= 1, got {k0}")
    _check_priors(alpha, beta)
    return LdaModel(
        k0=k0, alpha=alpha, beta=beta, vocab_size=vocab_size,
        n_co=np.zeros((k0, vocab_size), dtype=np.int64),
        n_sc=np.zeros((0, k0), dtype=np.int64),
        n_c=np.zeros(k0, dtype=np.int64),
        docs=[], assignments=[], rng_seed=seed,
    )


def prob_view(model: LdaModel) -> ProbView:
    """Smoothed phi/theta point estimates plus the Bayes-inverted p(context | object).

    Objects that never occur in the fitted corpus get an all-zero
    p(context | object) row rather than the prior's smoothing mass.
    """
    k0, v = model.n_co.shape
    phi = (model.n_co + model.beta) / (model.n_c[:, None] + v * model.beta)
    lengths = model.n_sc.sum(axis=1)
    theta = (model.n_sc + model.alpha) / (lengths[:, None] + k0 * model.alpha)
    total = model.n_c.sum()
    if total > 0:
        p_c = model.n_c / total
    else:
        p_c = np.full(k0, 1.0 / k0)
    joint = phi.T * p_c[None, :]                  # (V, k0)
    denom = joint.sum(axis=1, keepdims=True)
    used = model.n_co.sum(axis=0) > 0
    c_given_o = np.zeros((v, k0))
    if used.any():
        c_given_o[used] = joint[used] / denom[used]
    return ProbView(phi=phi, theta=theta, context_marginal=p_c, c_given_o=c_given_o)


def _plogp(p: np.ndarray) -> np.ndarray:
    # 0 * log 0 == 0 by convention
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def entropy_of_view(view: ProbView, rho: float) -> float:
    """rho * H(object|context) + (1 - rho) * H(context|scene), natural log."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    h_oc = float(-(view.context_marginal * _plogp(view.phi).sum(axis=1)).sum())
    if view.theta.shape[0] == 0:
        h_cs = 0.0
    else:
        h_cs = float(-_plogp(view.theta).sum(axis=1).mean())
    return rho * h_oc + (1.0 - rho) * h_cs


def system_entropy(model: LdaModel, rho: float = DEFAULT_RHO) -> float:
    return entropy_of_view(prob_view(model), rho)


# ---------------------------------------------------------------------------
# Corpus JSONL and model checkpoint files
# ---------------------------------------------------------------------------

def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """One scene per line, preceded by a header with vocab size and truth k."""
    with atomic_write(path) as fh:
        header = {"vocab_size": corpus.vocabulary.size, "truth_k": corpus.truth_k}
        fh.write(json.dumps(header) + "\n")
        for scene in corpus.scenes:
            fh.write(json.dumps({"id": scene.id, "objects": list(scene.objects)}) + "\n")


def load_corpus(path: str | Path) -> Corpus:
    scenes: list[Scene] = []
    vocab_size = None
    truth_k = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if lineno == 1 and "vocab_size" in rec:
                vocab_size = int(rec["vocab_size"])
                truth_k = rec.get("truth_k")
                truth_k = int(truth_k) if truth_k is not None else None
                continue
            if "id" not in rec or "objects" not in rec:
                raise FormatError(f"{path}: line {lineno}: scene record needs 'id' and 'objects'")
            scenes.append(Scene(id=int(rec["id"]), objects=[int(o) for o in rec["objects"]]))
    if vocab_size is None:
        vocab_size = 1 + max((max(s.objects) for s in scenes if s.objects), default=0)
    return Corpus(vocabulary=Vocabulary(vocab_size), scenes=scenes, truth_k=truth_k)


def save_model(model: LdaModel, path: str | Path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "k0": model.k0,
        "alpha": model.alpha,
        "beta": model.beta,
        "vocab_size": model.vocab_size,
        "n_co": model.n_co.tolist(),
        "n_sc": model.n_sc.tolist(),
        "assignments": [a.tolist() for a in model.assignments],
    }
    with atomic_write(path) as fh:
        json.dump(doc, fh)


def load_model(path: str | Path, corpus: Corpus | None = None) -> LdaModel:
    """Load a checkpoint; pass the matching corpus to re-enable sweeps."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(f"{path}: format_version {version!r}, expected {MODEL_FORMAT_VERSION}")
    n_co = np.asarray(doc["n_co"], dtype=np.int64)
    n_sc = np.asarray(doc["n_sc"], dtype=np.int64)
    if n_sc.size == 0:  # JSON loses the (0, k0) shape of a scene-less model
        n_sc = n_sc.reshape(0, int(doc["k0"]))
    assignments = [np.asarray(a, dtype=np.int64) for a in doc["assignments"]]
    model = LdaModel(
        k0=int(doc["k0"]), alpha=float(doc["alpha"]), beta=float(doc["beta"]),
        vocab_size=int(doc["vocab_size"]),
        n_co=n_co, n_sc=n_sc, n_c=n_co.sum(axis=1),
        docs=[], assignments=assignments, rng_seed=0,
    )
    if corpus is not None:
        if len(corpus.scenes) != len(assignments):
            raise DataError(
                f"corpus has {len(corpus.scenes)} scenes but checkpoint covers {len(assignments)}"
            )
        docs = [np.asarray(s.objects, dtype=np.int64) for s in corpus.scenes]
        for s, (d, a) in enumerate(zip(docs, assignments)):
            if len(d) != len(a):
                raise DataError(f"scene {corpus.scenes[s].id}: {len(d)} tokens vs {len(a)} assignments")
        model.docs = docs
        check_co, check_sc, _ = _count_tables(model.k0, model.vocab_size, docs, assignments)
        if not (np.array_equal(check_co, n_co) and np.array_equal(check_sc, n_sc)):
            raise DataError("checkpoint count tables do not match the supplied corpus")
    return model
