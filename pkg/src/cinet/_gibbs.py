"""Collapsed-Gibbs inner loop, jitted for speed.

The kernel mutates the count tables and assignment vector in place; callers
own the copies. Randomness comes from numba's internal MT19937 stream, seeded
once per call, so a given (state, seed) always reproduces the same sweeps.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def run_sweeps(token_obj, token_scene, z, n_co, n_sc, n_c, alpha, beta, sweeps, seed):
    """Run full collapsed-Gibbs sweeps over every token.

    p(z_i = c | rest) is proportional to
        (n_co[c, o] + beta) / (n_c[c] + V*beta) * (n_sc[s, c] + alpha)
    with the current token excluded from all counts.
    """
    np.random.seed(seed)
    k0, vocab = n_co.shape
    vbeta = vocab * beta
    probs = np.empty(k0)
    n_tokens = token_obj.shape[0]
    for _ in range(sweeps):
        for i in range(n_tokens):
            o = token_obj[i]
            s = token_scene[i]
            c = z[i]
            n_co[c, o] -= 1
            n_sc[s, c] -= 1
            n_c[c] -= 1
            total = 0.0
            for cc in range(k0):
                p = (n_co[cc, o] + beta) / (n_c[cc] + vbeta) * (n_sc[s, cc] + alpha)
                probs[cc] = p
                total += p
            r = np.random.random() * total
            acc = 0.0
            new_c = k0 - 1
            for cc in range(k0):
                acc += probs[cc]
                if r < acc:
                    new_c = cc
                    break
            z[i] = new_c
            n_co[new_c, o] += 1
            n_sc[s, new_c] += 1
            n_c[new_c] += 1


@njit(cache=True)
def joint_loglik(n_co, n_sc, n_c, scene_lens, alpha, beta):
    """Collapsed joint log p(objects, assignments | alpha, beta)."""
    k0, vocab = n_co.shape
    total = 0.0
    for c in range(k0):
        total += math.lgamma(vocab * beta) - vocab * math.lgamma(beta)
        for o in range(vocab):
            total += math.lgamma(n_co[c, o] + beta)
        total -= math.lgamma(n_c[c] + vocab * beta)
    n_scenes = n_sc.shape[0]
    for s in range(n_scenes):
        total += math.lgamma(k0 * alpha) - k0 * math.lgamma(alpha)
        for c in range(k0):
            total += math.lgamma(n_sc[s, c] + alpha)
        total -= math.lgamma(scene_lens[s] + k0 * alpha)
    return total
