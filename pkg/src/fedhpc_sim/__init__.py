"""Desk-scale simulator for federated learning across heterogeneous HPC facilities."""

from .algorithms import (
    AlgorithmConfig,
    ClientUpdate,
    CompassGroup,
    GlobalModel,
    ServerState,
    SpeedEstimate,
    compass_assign,
    compass_ingest,
    fedasync_apply,
    fedavg_aggregate,
    fedbuff_ingest,
    select_steps_proportional,
    staleness_factor,
    update_speed,
)
from .calibration import calibrate_check
from .config import ScenarioConfig, load, loads, shipped
from .hpcsim import (
    FacilityProfile,
    QueueModel,
    SimClock,
    SimEvent,
    model_size_mb,
    sample_queue_wait,
    throughput,
    training_duration,
    transfer_duration,
)
from .orchestrator import MetricsLog, RoundRecord, run_scenario, stop_check, summarize
from .params import (
    ClientDataset,
    SyntheticTask,
    TrainerConfig,
    evaluate,
    generate_task,
    gradient,
    local_train,
    partition_noniid,
)

__version__ = "0.1.0"
