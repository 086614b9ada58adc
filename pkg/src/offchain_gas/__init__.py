"""Gas cost models, a block-level simulator and upload policies for
institutional token transfers executed directly (M1), through a batching
dispatcher (M2), or against an off-chain authenticated state (M3)."""

from .auth_state import (
    AccountId,
    AuthenticatedState,
    BlockCommit,
    DeltaEntry,
    GasMeter,
    KeyedSigner,
    OnChainVerifier,
    SettlementProof,
    SparseMerkleTree,
    init_state,
)
from .chain_sim import SimulationReport, TransferRequest, every_k, oracle_compare, run
from .gas_model import (
    PRESETS,
    CostReport,
    GasSchedule,
    WorkloadShape,
    WriteIntensiveCondition,
    cost,
    cost_m1,
    cost_m2,
    cost_m3,
    derive_write_intensive,
    evaluate_condition,
    get_preset,
    load_schedule,
)
from .policy import (
    Policy,
    PolicyOutcome,
    decide_upload,
    evaluate_policy,
    every,
    max_delay,
    optimize_cost,
    parse_policy,
    select_write_intensive,
)
from .workload import (
    RawTransfer,
    Trace,
    W1Workload,
    classify_w1,
    discover_institutional,
    ingest_trace,
    synth_w1,
    window_stats,
)

__version__ = "0.1.0"
