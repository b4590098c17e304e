"""Higher-order attention network for joint intent detection and slot filling."""
from .corpus import Dataset, EvalReport, Utterance, evaluate, gen_synthetic, load_conll, write_conll
from .model import HANModel, ModelConfig
from .numerics import ParamStore, Tape, backward
from .train import Config, attention_dump, load_config, lr_sweep, train

__version__ = "0.1.0"
