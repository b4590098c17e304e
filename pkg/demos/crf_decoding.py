"""
Linear-chain CRF: partition function and Viterbi
================================================

The slot decoder scores a label path as emissions plus pairwise transitions
plus a start score.  Here the dynamic programs are compared with explicit
enumeration of every path on a tiny problem.
"""
import itertools

import numpy as np

from han.decoder import crf_log_partition, crf_marginals, path_score, viterbi

rng = np.random.default_rng(1)
n, L = 4, 3
O = rng.normal(size=(n, L))      # emissions
T = rng.normal(size=(L, L))      # transitions, T[prev, next]
start = rng.normal(size=L)

paths = list(itertools.product(range(L), repeat=n))
scores = np.array([path_score(O, T, list(p), start) for p in paths])

# %%
# The forward algorithm agrees with log-sum-exp over all 3**4 paths.
print("forward log Z:   ", crf_log_partition(O, T, start))
print("enumerated log Z:", np.log(np.exp(scores).sum()))

# %%
# Viterbi returns the best path without enumerating.
best, best_score = viterbi(O, T, start)
print("viterbi path:", best, "score", round(best_score, 6))
print("argmax path: ", list(paths[int(scores.argmax())]), "score", round(scores.max(), 6))

# %%
# Unary marginals are the per-position label probabilities; each row sums to
# one.  Pairwise marginals cover adjacent positions.
unary, pair = crf_marginals(O, T, start)
print("unary marginals:\n", np.round(unary, 4))
print("pairwise marginal totals:", pair.sum(axis=(1, 2)))
