"""Decentralized learning over communication graphs.

Simulates synchronous multi-agent training where each agent holds a
private data shard and a full model copy.  Implements cross-gradient
aggregation (with and without error-feedback sign compression) and a
momentum DPSGD baseline, with deterministic seeding throughout.
"""

__version__ = "0.1.0"

from .data import (DataError, Dataset, IdxCountMismatchError, IdxFormatError,
                   IdxMagicError, IdxTruncatedError, Partition, PartitionError,
                   batch_of, load_csv, load_idx, minibatches, partition,
                   synth_blobs)
from .estimator import CrossGradientClassifier
from .neural import (Batch, ModelSpec, init_params, load_params, loss_and_grad,
                     param_count, predict_accuracy, predict_logits, save_params,
                     unflatten)
from .optim import (ALGORITHMS, AgentState, Hyper, RoundStats, cga_round,
                    comm_cost, compcga_round, compress_sign, dpmsgd_round,
                    init_states, step_size)
from .qp import (DualSolution, GradientStack, KktReport,
                 brute_force_projection, project_gradient, recover_projection,
                 solve_dual)
from .simulate import (ConfigError, ExperimentConfig, MetricsRecord,
                       config_from_dict, consensus_error, evaluate_consensus,
                       format_metrics_csv, load_config, run_experiment,
                       run_training, write_metrics_csv)
from .topology import (MixingMatrix, SpectralReport, TopologyError,
                       build_topology, n_links, neighbors, spectral_report)
