"""
Inspecting attention maps
=========================

Every encoder layer has an intent stream and a slot stream, each with its
own contextual and channel attention.  ``attention_dump`` exports them as
plain lists, ready for JSON or a heatmap.
"""
import numpy as np

from han import Config, attention_dump, gen_synthetic, train

data = gen_synthetic(seed=0, n_utts=32, n_intents=2, n_slot_types=2)
result = train(Config(d=16, n_layers=2, epochs=10, lr=1e-2, seed=0), data)

tokens = "please act0a with val1a val1b".split()
doc = attention_dump(result.model, tokens)

# %%
# After this short run the maps are still close to uniform; longer training
# sharpens them.
for layer in doc["layers"]:
    for stream in ("intent", "slot"):
        ctx = np.array(layer[stream]["contextual"])
        print(f"layer {layer['layer']} {stream} stream, query rows x key columns")
        print("        " + " ".join(f"{t[:6]:>6}" for t in tokens))
        for tok, row in zip(tokens, ctx):
            print(f"{tok[:6]:>6}  " + " ".join(f"{v:6.2f}" for v in row))
