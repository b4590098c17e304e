"""
Checking every gradient of the full model
=========================================

All parameters are trained through a hand-written reverse-mode tape.  This
script compares the tape's gradients with central finite differences for a
tiny two-layer model on a single utterance.
"""
from han import HANModel, ModelConfig, Utterance
from han.embedder import Vocab
from han.gradcheck import check_gradients

utt = Utterance(["play", "hey", "jude"], ["O", "B-SONG", "I-SONG"], "PLAY")
model = HANModel(ModelConfig(d=4, n_layers=2, activation="elu"), Vocab(utt.tokens),
                 ["PLAY", "STOP", "ASK"], ["O", "B-SONG", "I-SONG", "B-ART"], seed=0)

# %%
# The contextual-attention weight ``W_b`` gets the smallest gradients in the
# model, so it is usually the worst entry: its relative error is mostly the
# roundoff of the difference quotient, which grows as the step shrinks.
errs = check_gradients(lambda tape: model.loss(tape, utt), model.store, step=1e-5)
print(f"{len(errs)} parameter matrices checked")
for name, err in sorted(errs.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {err:.2e}  {name}")
print("max relative error:", max(errs.values()))
