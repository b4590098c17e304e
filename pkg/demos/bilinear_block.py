"""
The bilinear attention block on a toy input
===========================================

One block turns every (query, key) pair into a low-rank bilinear feature,
then derives two attention maps from those features: a softmax over key
positions and a sigmoid gate over channels.
"""
import numpy as np

from han import numerics as nx
from han.bilinear import BlockParams, bilinear_pool, f_bilinear

rng = np.random.default_rng(0)
d, n = 4, 3
tape = nx.Tape(grad=False)

# seven weight matrices; W_b maps a pooled key to a scalar logit
W = [tape.constant(rng.uniform(-0.5, 0.5, (1 if k == 3 else d, d))) for k in range(7)]
params = BlockParams(*W, act="elu")

K = rng.normal(size=(n, d))
V = rng.normal(size=(n, d))
Q = rng.normal(size=(n, d))
out, trace = f_bilinear(tape.constant(K), tape.constant(V), tape.constant(Q), params)

print("output V_hat:\n", np.round(out.value, 4))

# %%
# Contextual attention is a distribution over keys for every query.
print("contextual attention (rows sum to 1):\n", np.round(trace.contextual, 4))
print("row sums:", trace.contextual.sum(axis=1))

# %%
# Channel attention is a per-query gate in (0, 1) for each of the d channels.
print("channel gate:\n", np.round(trace.channel, 4))

# %%
# Shuffling the keys and values together leaves the output unchanged.
perm = rng.permutation(n)
out_p, _ = f_bilinear(tape.constant(K[perm]), tape.constant(V[perm]), tape.constant(Q), params)
print("max change after permuting keys:", np.abs(out.value - out_p.value).max())

# %%
# With the exp activation, pooling two vectors is exactly the exponential of
# their summed projections.  Expanding that exponential as a power series is
# what gives the block interactions of every order.
x, y = rng.normal(size=d), rng.normal(size=d)
Wx, Wy = rng.normal(size=(d, d)) / 2, rng.normal(size=(d, d)) / 2
pooled = bilinear_pool(tape.constant(x), tape.constant(y), tape.constant(Wx), tape.constant(Wy), "exp")
print("exp pooling:         ", pooled.value[0])
print("exp(Wx x + Wy y):    ", np.exp(Wx @ x + Wy @ y))
