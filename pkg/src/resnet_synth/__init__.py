"""Compile piecewise-constant functions into ResNets with one neuron per block.

Modules:

* :mod:`.core`: residual blocks, networks, evaluation and the text format.
* :mod:`.blockops`: single-block max/min/shift/add-relu operations.
* :mod:`.compiler1d`: the 1-D increasing-trapezoid compiler with its stage trace.
* :mod:`.compilernd`: grid indicators and compilation in d dimensions.
* :mod:`.verify`: exact and Monte-Carlo L1 errors and stage checks.
* :mod:`.experiment`: unit-ball training study, clamp, boundary export.
* :mod:`.cli`: ``python3 -m resnet_synth``.
"""
from .compiler1d import ConstructionTrace, DeltaError, PiecewiseConstant1D, compile_1d
from .compilernd import PiecewiseConstantND, compile_grid_indicator, compile_nd, discretize
from .core import ResidualBlock, ResNet, deserialize, eval_network, load, save, serialize
from .verify import (
    VerificationReport,
    check_conditions_1d,
    exact_l1_error_1d,
    lipschitz_bound,
    mc_l1_error,
    verify_exact_1d,
)

__all__ = [
    "ConstructionTrace", "DeltaError", "PiecewiseConstant1D", "compile_1d",
    "PiecewiseConstantND", "compile_grid_indicator", "compile_nd", "discretize",
    "ResidualBlock", "ResNet", "deserialize", "eval_network", "load", "save", "serialize",
    "VerificationReport", "check_conditions_1d", "exact_l1_error_1d", "lipschitz_bound",
    "mc_l1_error", "verify_exact_1d",
]
