"""Shared test helpers plus the acceptance-criteria summary hook."""

import numpy as np

from cinet.dataset import InputMode, PairMeta, PairSet, TrainingPair
from cinet.rnn import RnnConfig, forward, gradients, init_model, loss

# ---------------------------------------------------------------------------
# Finite-difference gradient oracle
# ---------------------------------------------------------------------------


def make_training_pairs(dim: int, lengths=(1, 2, 3, 3), seed: int = 0) -> list[TrainingPair]:
    """Small mixed-length batch with fixed pseudo-random inputs."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i, t in enumerate(lengths):
        y = i % 2
        pairs.append(TrainingPair(
            x=rng.uniform(size=(t, dim)),
            y=y,
            meta=PairMeta(truth_k=t + y, k0=t, corpus_seed=1000 + i, gibbs_seed=i),
        ))
    return pairs


def fd_worst_error(cell, layers: int, hidden: int = 5, dim: int = 3, eps: float = 1e-6) -> float:
    """Worst relative disagreement between BPTT and central differences.

    Per-tensor relative error is ||fd - bp|| / (||fd|| + ||bp||); the return
    value is the max over all parameter tensors.
    """
    pairs = make_training_pairs(dim)
    cfg = RnnConfig(cell=cell, input_dim=dim, layers=layers, hidden=hidden,
                    l2_lambda=0.01, seed=0)
    model = init_model(cfg)
    bp = gradients(model, pairs)
    ys = [p.y for p in pairs]

    def batch_loss() -> float:
        preds = [forward(model, p.x) for p in pairs]
        return loss(preds, ys, model, cfg.l2_lambda)

    worst = 0.0
    for name, w in model.params.items():
        flat = w.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = batch_loss()
            flat[i] = orig - eps
            down = batch_loss()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * eps)
        num = np.linalg.norm(fd - bp[name].reshape(-1))
        den = np.linalg.norm(fd) + np.linalg.norm(bp[name]) + 1e-12
        worst = max(worst, num / den)
    return worst


def make_pairset(n=16, dim=6, n_val=2, seed=0, mode=InputMode.P_C) -> PairSet:
    """Linearly separable synthetic pairs: class means 0.1 vs 0.9."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        t = 1 + i % 3
        y = i % 2
        x = np.clip(rng.normal(0.9 if y else 0.1, 0.03, size=(t, dim)), 0.0, 1.0)
        pairs.append(TrainingPair(
            x=x, y=y,
            meta=PairMeta(truth_k=t + y, k0=t, corpus_seed=2000 + i, gibbs_seed=i),
        ))
    for p in pairs[:n_val]:
        p.split = "val"
    return PairSet(mode=mode, vocab_size=dim, pairs=pairs)


# ---------------------------------------------------------------------------
# Acceptance reporting: one PASS/FAIL line per criterion at the end of the run
# ---------------------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(criterion: int, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[n]
        line = f"ACCEPTANCE {n} {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
