"""tempora: a from-scratch multivariate time-series forecasting engine.

Dense, simple-recurrent, and LSTM layers with hand-derived backpropagation
through time, Adam optimization, L2 regularization, a weather-CSV pipeline,
and a multi-step temperature forecaster. The hot sequence kernels run as a
compiled Cython extension with a pure-numpy fallback (see tempora.backend).
"""

from . import backend
from .numerics import Activation, ShapeError
from .layers import (
    DenseLayer,
    LstmCellState,
    LstmLayer,
    SequentialModel,
    SimpleRnnLayer,
    forward_sequence,
    backward_sequence,
    load_checkpoint,
    save_checkpoint,
)
from .training import ExperimentConfig, L2Coefficients, LossHistory, train
from .presets import PRESETS, get_preset

__version__ = "0.1.0"


def backend_name():
    """'ext' when the compiled kernels are active, 'ref' on the numpy fallback."""
    return backend.NAME
