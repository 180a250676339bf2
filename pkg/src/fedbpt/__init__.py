"""Federated black-box prompt tuning.

Clients tune a low-dimensional vector z with CMA-ES through model inference
only; a frozen random projection maps z to the prompt fed to the model. The
server aggregates the uploaded client means by running its own CMA-ES
generation over them with a reconstructed ("corrected") step length.
"""

from . import errors
from .client import ClientResult, ClientRoundConfig, perturb_batch, ratio_objective, run_local_round
from .cmaes import (
    CmaParams,
    RankedSample,
    SearchDistribution,
    init_distribution,
    inverse_sqrt_cov,
    minimize,
    sample_population,
    update,
)
from .data import (
    PartitionMode,
    PartitionSpec,
    Shard,
    dirichlet_partition,
    few_shot_select,
    load_jsonl,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    RoundMetrics,
    comm_accounting,
    confusion_matrix,
    run_experiment,
)
from .oracle import (
    CountingOracle,
    LossReport,
    RemoteOracle,
    Sample,
    SyntheticPLM,
    SyntheticTask,
    SyntheticTaskConfig,
    TestFunctionOracle,
    generate_task,
)
from .server import Broadcast, aggregate_fedavg_bbt, aggregate_fedbpt, corrected_sigma
from .subspace import ProjectionSpec, generate_projection, project

__version__ = "0.1.0"
