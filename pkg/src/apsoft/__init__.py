"""Integer softmax on a simulated 2D associative processor, with a cost model."""

from .ap import ApState, ColumnField, new_ap
from .cost_model import (
    ApCostParams,
    CostReport,
    ModelSpec,
    Workload,
    aggregate,
    calibrate_energy,
    cycles_add,
    cycles_matmul,
    cycles_mul,
    cycles_reduce,
    edp_ratio,
    instance_cycles,
    instance_energy,
)
from .errors import (
    ApSoftError,
    DegenerateDistributionError,
    DegenerateScaleError,
    InvalidArgument,
    LayoutConflictError,
    PrecisionOverflowError,
    PrecisionWarning,
    UnknownPresetError,
)
from .intsoftmax import error_metrics, float_softmax, int_softmax
from .pipeline import run_softmax_instance, verify_against_ref
from .quant import (
    PrecisionConfig,
    QuantizedVector,
    QuantScheme,
    all_presets,
    dequantize_output,
    derive_constants,
    make_scheme,
    preset,
    quantize,
)
from .schedule import plan_layout

__version__ = "0.1.0"

__all__ = [
    "ApCostParams",
    "ApSoftError",
    "ApState",
    "ColumnField",
    "CostReport",
    "DegenerateDistributionError",
    "DegenerateScaleError",
    "InvalidArgument",
    "LayoutConflictError",
    "ModelSpec",
    "PrecisionConfig",
    "PrecisionOverflowError",
    "PrecisionWarning",
    "QuantScheme",
    "QuantizedVector",
    "UnknownPresetError",
    "Workload",
    "aggregate",
    "all_presets",
    "calibrate_energy",
    "cycles_add",
    "cycles_matmul",
    "cycles_mul",
    "cycles_reduce",
    "dequantize_output",
    "derive_constants",
    "edp_ratio",
    "error_metrics",
    "float_softmax",
    "instance_cycles",
    "instance_energy",
    "int_softmax",
    "make_scheme",
    "new_ap",
    "plan_layout",
    "preset",
    "quantize",
    "run_softmax_instance",
    "verify_against_ref",
]
