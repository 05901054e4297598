"""Streaming context-model maintenance with learned or rule-based growth.

Scenes arrive one at a time. Each is folded into a warm-started topic
model; every few scenes a policy looks at the current model and decides
whether to add a context. Three policies: a trained classifier reading a
probability encoding of the model, an entropy-plateau rule, and an oracle
that knows the true context count.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .dataset import InputMode, encode_input
from .errors import ConfigError, DataError
from .fileio import atomic_write, derive_seed
from .lda import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_RHO,
    Corpus,
    LdaModel,
    Scene,
    Vocabulary,
    add_context,
    empty_model,
    gibbs_fit,
    prob_view,
    resample,
    system_entropy,
    update_with_scene,
)
from .rnn import RnnModel, forward


class IncrementPolicy(Protocol):
    def decide(self, model: LdaModel, entropy_history: list[float]) -> tuple[float, bool]:
        """Return (probability of incrementing, fire flag) for the current model."""
        ...


@dataclass
class CinetPolicy:
    """Ask a trained classifier; fire when its probability clears the threshold."""

    model: RnnModel
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")

    def decide(self, model: LdaModel, entropy_history: list[float]) -> tuple[float, bool]:
        mode = self.model.config.input_mode
        expected = mode.dim(model.vocab_size)
        if expected != self.model.config.input_dim:
            raise ConfigError(
                f"classifier expects input_dim {self.model.config.input_dim} but a "
                f"{mode.value} encoding of a vocabulary of {model.vocab_size} has {expected}"
            )
        prob = forward(self.model, encode_input(prob_view(model), mode))
        return prob, prob >= self.threshold


@dataclass
class EntropyRulePolicy:
    """Fire when entropy has plateaued yet an extra context would still lower it.

    Both conditions compare relative changes against the same threshold:
    the drop across the last `window` recorded entropies must fall below
    it, and a trial model with one more context (settled for
    `trial_sweeps`) must beat the current entropy by more than it.
    """

    threshold: float = 0.05
    window: int = 3
    trial_sweeps: int = 50
    rho: float = DEFAULT_RHO
    seed: int = 0

    def __post_init__(self) -> None:
        if self.threshold <= 0 or self.window < 2 or self.trial_sweeps < 1:
            raise ConfigError("need threshold > 0, window >= 2, trial_sweeps >= 1")

    def decide(self, model: LdaModel, entropy_history: list[float]) -> tuple[float, bool]:
        if len(entropy_history) < self.window:
            return 0.0, False
        current = entropy_history[-1]
        ref = entropy_history[-self.window]
        scale = max(abs(ref), 1e-12)
        if (ref - current) / scale >= self.threshold:
            return 0.0, False  # still improving on its own
        trial = resample(add_context(model), self.trial_sweeps,
                         derive_seed(self.seed, 17, len(entropy_history)))
        gain = (current - system_entropy(trial, self.rho)) / max(abs(current), 1e-12)
        fire = gain > self.threshold
        return (1.0 if fire else 0.0), fire


@dataclass
class OraclePolicy:
    """Fire whenever the model has fewer contexts than the generator used."""

    truth_k: int

    def decide(self, model: LdaModel, entropy_history: list[float]) -> tuple[float, bool]:
        fire = model.k0 < self.truth_k
        return (1.0 if fire else 0.0), fire


@dataclass(frozen=True)
class StreamSchedule:
    sweeps_per_scene: int = 50
    decision_every: int = 5
    settle_sweeps: int = 50
    max_k0: int = 64
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    rho: float = DEFAULT_RHO
    cold_refit: bool = False

    def validate(self) -> None:
        if self.sweeps_per_scene < 1 or self.settle_sweeps < 1:
            raise ConfigError("sweep counts must be >= 1")
        if self.decision_every < 1 or self.max_k0 < 1:
            raise ConfigError("decision_every and max_k0 must be >= 1")


@dataclass
class TraceRow:
    scenes_seen: int
    k0: int
    increment_prob: float
    entropy: float
    decision: str  # hold | increment | capped


def run_stream(
    scenes: Iterable[Scene] | Corpus,
    vocab_size: int,
    initial_k0: int,
    policy: IncrementPolicy,
    schedule: StreamSchedule,
) -> tuple[LdaModel, list[TraceRow]]:
    """Feed scenes through a growing model; one trace row per decision point.

    Rows record the policy's probability just before the decision and the
    context count and system entropy just after it.
    """
    schedule.validate()
    if isinstance(scenes, Corpus):
        if scenes.vocabulary.size != vocab_size:
            raise ConfigError(
                f"corpus vocabulary has size {scenes.vocabulary.size}, caller said {vocab_size}"
            )
        scenes = scenes.scenes
    model = empty_model(initial_k0, vocab_size, schedule.alpha, schedule.beta, seed=schedule.seed)
    trace: list[TraceRow] = []
    entropy_history: list[float] = []
    seen: list[Scene] = []

    for idx, scene in enumerate(scenes, start=1):
        seen.append(scene)
        model = update_with_scene(model, scene, schedule.sweeps_per_scene,
                                  seed=derive_seed(schedule.seed, 41, idx))
        if idx % schedule.decision_every != 0:
            continue
        if schedule.cold_refit:
            corpus = Corpus(vocabulary=Vocabulary(vocab_size), scenes=list(seen))
            model = gibbs_fit(corpus, model.k0, schedule.settle_sweeps,
                              derive_seed(schedule.seed, 43, idx),
                              alpha=schedule.alpha, beta=schedule.beta)
        entropy_history.append(system_entropy(model, schedule.rho))
        prob, fire = policy.decide(model, entropy_history)
        if fire and model.k0 < schedule.max_k0:
            model = add_context(model)
            model = resample(model, schedule.settle_sweeps, derive_seed(schedule.seed, 47, idx))
            decision = "increment"
        elif fire:
            decision = "capped"
        else:
            decision = "hold"
        trace.append(TraceRow(
            scenes_seen=idx,
            k0=model.k0,
            increment_prob=float(prob),
            entropy=system_entropy(model, schedule.rho),
            decision=decision,
        ))
    return model, trace


@dataclass
class SweepPoint:
    k0: int
    mean_prob: float
    std_prob: float


def sweep_increment(
    corpus: Corpus,
    cinet: RnnModel,
    k0_range: Iterable[int],
    fits_per_k0: int,
    seed: int,
    iterations: int = 150,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    restarts: int = 1,
) -> list[SweepPoint]:
    """Classifier probability as a function of assumed context count.

    Each k0 gets `fits_per_k0` independent Gibbs fits of the same corpus;
    the curve reports the mean and population std of the probabilities.
    `restarts` should match the value the classifier was trained with so
    the fits it reads come from the same distribution.
    """
    if fits_per_k0 < 1:
        raise ConfigError(f"fits_per_k0 must be >= 1, got {fits_per_k0}")
    mode = cinet.config.input_mode
    curve = []
    for k0 in k0_range:
        probs = np.empty(fits_per_k0)
        for j in range(fits_per_k0):
            fit = gibbs_fit(corpus, k0, iterations, derive_seed(seed, 53, k0, j),
                            alpha=alpha, beta=beta, restarts=restarts)
            probs[j] = forward(cinet, encode_input(prob_view(fit), mode))
        curve.append(SweepPoint(k0=k0, mean_prob=float(probs.mean()),
                                std_prob=float(probs.std(ddof=0))))
    return curve


def write_trace_csv(trace: list[TraceRow], path: str | Path) -> None:
    with atomic_write(path) as fh:
        fh.write("scenes_seen,k0,increment_prob,entropy,decision\n")
        for row in trace:
            fh.write(f"{row.scenes_seen},{row.k0},{row.increment_prob!r},"
                     f"{row.entropy!r},{row.decision}\n")


def write_sweep_csv(curve: list[SweepPoint], path: str | Path) -> None:
    with atomic_write(path) as fh:
        fh.write("k0,mean_prob,std_prob\n")
        for pt in curve:
            fh.write(f"{pt.k0},{pt.mean_prob!r},{pt.std_prob!r}\n")
