"""
Frequency dynamic convolution on plain numpy.
"""
__author__ = "fdconv developers"
__version__ = "0.1.0"

from . import autodiff
from . import fbm
from . import fdw
from . import ksm
from .config import FDConvConfig, TrainConfig, load_config
from .layer import LayerState, fdconv_forward, init_state, param_count
