"""
Learning-rate sweep
===================

``lr_sweep`` trains one model per (learning rate, activation) pair and
returns one row per run.  A run that diverges is recorded as failed rather
than stopping the sweep.
"""
from han import Config, lr_sweep

base = Config(d=16, n_layers=2, epochs=10, batch_size=8, seed=0, synth_utts=32)
rows = lr_sweep(base, [1e-4, 1e-3, 1e-2, 1e-1])
for r in rows:
    if r["status"] == "ok":
        print(f"lr {r['lr']:<7g} {r['activation']:<5} overall {r['overall_acc']:.3f} "
              f"slot F1 {r['slot_f1']:.3f} intent {r['intent_acc']:.3f}")
    else:
        print(f"lr {r['lr']:<7g} {r['activation']:<5} failed: {r['error']}")
