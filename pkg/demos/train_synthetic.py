"""
Training on a synthetic corpus
==============================

The synthetic generator builds utterances whose intent is fixed by a trigger
word and whose slots come from small per-type lexicons.  A small model should
fit it completely.
"""
from han import Config, gen_synthetic, train
from han.train import evaluate_model

data = gen_synthetic(seed=0, n_utts=64, n_intents=4, n_slot_types=3)
for u in data.utterances[:3]:
    print(u.intent, list(zip(u.tokens, u.slots)))
print("intents:", data.intent_labels)
print("slot labels:", data.slot_labels)

# %%
# Train and evaluate on the same data.  The log has one entry per epoch,
# starting with the untrained model at epoch 0.
config = Config(d=32, n_layers=2, lr=1e-3, epochs=200, seed=0, stop_at_overall=1.0)
result = train(config, data)
for entry in result.log[::20]:
    dev = entry["dev"]
    loss = "-" if entry["train_loss"] is None else f"{entry['train_loss']:.4f}"
    print(f"epoch {entry['epoch']:3d}  loss {loss:>8}  "
          f"slot F1 {dev['slot_f1']:.3f}  intent {dev['intent_acc']:.3f}  "
          f"overall {dev['overall_acc']:.3f}")
print("best epoch", result.best_epoch, result.best_report)

# %%
# Fitting 64 utterances is memorisation.  A fresh sample from the same
# generator shows how much of it transfers.
held_out = gen_synthetic(seed=1, n_utts=64, n_intents=4, n_slot_types=3)
print("held-out", evaluate_model(result.model, held_out))
pred = result.model.predict_utterance(held_out[0].tokens)
print("gold", held_out[0].intent, held_out[0].slots)
print("pred", pred.intent, pred.slots)
