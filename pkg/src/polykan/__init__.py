"""polykan: portable data-parallel operators for polynomial KAN layers.

Fused tiled forward/backward kernels over Chebyshev / Legendre / Hermite /
Fourier bases with lookup-table interpolation, a two-stage deterministic
reduction, coefficient layout reordering, exact-recurrence oracles, a
roofline analyzer, a benchmark harness, and a small deterministic trainer.
"""
from .basis import (
    BasisKind,
    RecurrenceCoeffs,
    eval_basis,
    eval_basis_derivative,
    eval_basis_trig,
    feature_count,
)
from .kernels import (
    AtomicCounts,
    BasisPath,
    EXACT_MODE,
    KernelCounters,
    KernelMode,
    LUT_MODE,
    NonFiniteInputError,
    PartialBuffer,
    TileSchedule,
    backward_fused,
    combine,
    count_atomics,
    forward_partial,
    fused_forward,
    reference_forward,
)
from .lut import (
    DEFAULT_LUT_SIZE,
    LutTable,
    load_lut,
    lut_build,
    lut_interp,
    lut_interp_with_slope,
    lut_max_error_bound,
    save_lut,
)
from .model import (
    AdamHParams,
    AdamState,
    Dataset,
    Layer,
    LayerSpec,
    Loss,
    Network,
    NetworkSpec,
    init_params,
    layer_forward,
    load_checkpoint,
    load_csv,
    make_synthetic,
    network_train,
    save_checkpoint,
)
from .perf import (
    BenchResult,
    CostModel,
    LayerConfig,
    Regime,
    RooflineReport,
    TwoStageReport,
    paper_configs,
    roofline,
    run_bench,
    two_stage_benefit,
)
from .tensor import (
    CoeffTensor,
    Layout,
    doj_index,
    jod_index,
    load_coeff,
    reorder_to_doj,
    reorder_to_jod,
    save_coeff,
)

__version__ = "0.1.0"
