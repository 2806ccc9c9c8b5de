from aimc_bench.analog_sim.crossbar import (
    ProgrammedLayer,
    analog_matvec,
    compensation_factor,
    ideal_readout,
    quantize_symmetric,
    reference_readout,
)
from aimc_bench.analog_sim.devices import (
    apply_drift,
    map_to_conductances,
    program_conductances,
    program_weights,
    reconstruct_weights,
    sample_drift_exponents,
)
from aimc_bench.analog_sim.hwt import HwtHooks, hwt_train
from aimc_bench.analog_sim.models import (
    DRIFT_LABELS,
    DRIFT_TIMES,
    AnalogAccuracy,
    AnalogStats,
    DriftTimes,
    HardwareConfig,
    HwtConfig,
)
from aimc_bench.analog_sim.programming import (
    ProgrammedNetwork,
    analog_evaluate,
    fold_unit,
    program_network,
)
