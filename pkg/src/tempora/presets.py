"""The three named training regimes reproduced by this engine.

Presets are read-only constants; CLI flags or a config file may override
individual fields, and every override is recorded in the run manifest.
"""

from .data import FEATURES
from .training import ExperimentConfig, L2Coefficients

_NO_WINDDIR = tuple(f for f in FEATURES if f != "winddir")

PRESETS = {
    "run1-7day": ExperimentConfig(
        name="run1-7day",
        features=FEATURES,
        history=168,
        horizon=168,
        units=(32, 16),
        cell_activations=("tanh", "relu"),
        batch_size=256,
        epochs=10,
        evaluation_interval=200,
    ),
    "run2-1day": ExperimentConfig(
        name="run2-1day",
        features=_NO_WINDDIR,
        history=168,
        horizon=24,
        units=(32, 16),
        cell_activations=("tanh", "relu"),
        batch_size=512,
        epochs=20,
        evaluation_interval=100,
    ),
    "run3-12hour": ExperimentConfig(
        name="run3-12hour",
        features=_NO_WINDDIR,
        history=48,
        horizon=12,
        units=(32, 16),
        cell_activations=("tanh", "relu"),
        batch_size=512,
        epochs=30,
        evaluation_interval=150,
        l2=L2Coefficients(kernel=0.005, recurrent=0.005, bias=0.005),
    ),
}


def get_preset(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]
