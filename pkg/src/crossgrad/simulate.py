"""Experiment driver: configs, the round loop, metrics, evaluation.

A single JSON config describes an experiment end to end.  The driver
builds the topology, loads and partitions data, initializes every agent
from one shared parameter vector, then plays synchronous rounds of the
selected algorithm while appending one metrics record per round.  All
randomness derives from master_seed, so logs are byte-reproducible.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import data as datamod
from .neural import (ModelSpec, init_params, loss_and_grad, param_count,
                     predict_accuracy)
from .optim import (ALGORITHMS, ROUND_FUNCTIONS, Hyper, comm_cost, init_states,
                    step_size)
from .seeding import subseed
from .topology import TOPOLOGIES, build_topology, n_links

# Purpose tags for deriving independent seed streams from master_seed.
_TAG_INIT = 1
_TAG_TRAIN_DATA = 2
_TAG_TEST_DATA = 3
_TAG_PARTITION = 4
_TAG_BATCHES = 5

METRICS_HEADER = "round,epoch,mean_train_loss,consensus_error,test_accuracy,qp_eps_sq,cumulative_bytes"


class ConfigError(ValueError):
    """Invalid experiment config; key names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    topology: str
    n_agents: int
    dataset: dict
    partition_mode: str
    hidden_layers: tuple
    hyper: Hyper
    epochs: int
    master_seed: int
    eval_every: int | None = None   # None: evaluate at each epoch end


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    epoch: int
    mean_train_loss: float
    consensus_error: float
    test_accuracy: float | None
    qp_eps_sq: float
    cumulative_bytes: float


def _require(raw: dict, key: str, kinds, what: str):
    if key not in raw:
        raise ConfigError(key, "missing")
    val = raw[key]
    if kinds is not None and (not isinstance(val, kinds) or isinstance(val, bool)):
        raise ConfigError(key, f"expected {what}, got {val!r}")
    return val


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed JSON document into an ExperimentConfig.

    Raises ConfigError naming the offending key on any problem.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", f"expected a JSON object, got {type(raw).__name__}")
    known = {"algorithm", "topology", "n_agents", "dataset", "partition_mode",
             "model", "hyper", "epochs", "master_seed", "eval_every"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown key")

    algorithm = _require(raw, "algorithm", str, "a string")
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"must be one of {ALGORITHMS}, got {algorithm!r}")
    topology = _require(raw, "topology", str, "a string")
    if topology not in TOPOLOGIES:
        raise ConfigError("topology", f"must be one of {TOPOLOGIES}, got {topology!r}")
    n_agents = _require(raw, "n_agents", int, "an integer")
    if n_agents < 1:
        raise ConfigError("n_agents", f"must be positive, got {n_agents}")
    mode = _require(raw, "partition_mode", str, "a string")
    if mode not in datamod.PARTITION_MODES:
        raise ConfigError("partition_mode",
                          f"must be one of {datamod.PARTITION_MODES}, got {mode!r}")
    epochs = _require(raw, "epochs", int, "an integer")
    if epochs < 0:
        raise ConfigError("epochs", f"must be nonnegative, got {epochs}")
    master_seed = _require(raw, "master_seed", int, "an integer")

    eval_every = raw.get("eval_every")
    if eval_every is not None:
        if not isinstance(eval_every, int) or isinstance(eval_every, bool) or eval_every < 1:
            raise ConfigError("eval_every", f"must be a positive integer or null, got {eval_every!r}")

    dataset = _require(raw, "dataset", dict, "an object")
    source = dataset.get("source")
    if source not in ("blobs", "idx", "csv"):
        raise ConfigError("dataset.source",
                          f"must be one of ('blobs', 'idx', 'csv'), got {source!r}")

    model = _require(raw, "model", dict, "an object")
    hidden = model.get("hidden_layers")
    if (not isinstance(hidden, list) or
            any(not isinstance(h, int) or isinstance(h, bool) or h < 1 for h in hidden)):
        raise ConfigError("model.hidden_layers",
                          f"must be a list of positive integers, got {hidden!r}")

    hyper_raw = _require(raw, "hyper", dict, "an object")
    hyper_known = {"alpha0", "beta", "decay", "batch_size", "qp_tol", "qp_max_iter"}
    for key in hyper_raw:
        if key not in hyper_known:
            raise ConfigError(f"hyper.{key}", "unknown key")
    try:
        hyper = Hyper(
            alpha0=float(_require(hyper_raw, "alpha0", (int, float), "a number")),
            beta=float(_require(hyper_raw, "beta", (int, float), "a number")),
            decay=float(_require(hyper_raw, "decay", (int, float), "a number")),
            batch_size=_require(hyper_raw, "batch_size", int, "an integer"),
            qp_tol=float(hyper_raw.get("qp_tol", 1e-8)),
            qp_max_iter=int(hyper_raw.get("qp_max_iter", 100_000)),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError("hyper", str(err)) from err

    return ExperimentConfig(
        algorithm=algorithm, topology=topology, n_agents=n_agents,
        dataset=dict(dataset), partition_mode=mode, hidden_layers=tuple(hidden),
        hyper=hyper, epochs=epochs, master_seed=master_seed, eval_every=eval_every,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError("<file>", f"cannot read {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError("<file>", f"{path} is not valid JSON: {err}") from err
    return config_from_dict(raw)


def _dataset_field(ds: dict, key: str, default=None, required=False):
    if key not in ds:
        if required:
            raise ConfigError(f"dataset.{key}", "missing")
        return default
    return ds[key]


def load_experiment_data(cfg: ExperimentConfig) -> tuple:
    """Materialize (train, test) datasets named by cfg.dataset.

    blobs: synthesized here, seeds derived from master_seed unless given.
    idx / csv: read from the configured paths; test files optional for
    csv (falls back to evaluating on the training set).
    """
    ds = cfg.dataset
    source = ds["source"]
    try:
        if source == "blobs":
            n_classes = _dataset_field(ds, "n_classes", required=True)
            dim = _dataset_field(ds, "dim", required=True)
            per_class = _dataset_field(ds, "per_class", required=True)
            test_per_class = _dataset_field(ds, "test_per_class", default=per_class)
            spread = _dataset_field(ds, "spread", default=0.1)
            train_seed = _dataset_field(
                ds, "seed", default=subseed(cfg.master_seed, _TAG_TRAIN_DATA))
            test_seed = _dataset_field(
                ds, "test_seed", default=subseed(cfg.master_seed, _TAG_TEST_DATA))
            train = datamod.synth_blobs(n_classes, dim, per_class, spread, train_seed)
            test = datamod.synth_blobs(n_classes, dim, test_per_class, spread, test_seed)
        elif source == "idx":
            train = datamod.load_idx(_dataset_field(ds, "train_images", required=True),
                                     _dataset_field(ds, "train_labels", required=True))
            test = datamod.load_idx(_dataset_field(ds, "test_images", required=True),
                                    _dataset_field(ds, "test_labels", required=True),
                                    n_classes=train.n_classes)
        else:
            train = datamod.load_csv(_dataset_field(ds, "train_path", required=True))
            test_path = _dataset_field(ds, "test_path")
            test = (datamod.load_csv(test_path, n_classes=train.n_classes)
                    if test_path else train)
    except datamod.DataError as err:
        raise ConfigError("dataset", str(err)) from err
    return train, test


def rounds_per_epoch(part: datamod.Partition, batch_size: int) -> int:
    """ceil(smallest agent subset / batch_size); every agent has that many."""
    return math.ceil(min(part.sizes()) / batch_size)


def consensus_error(states) -> float:
    """(1/N) * sum_i ||xbar - x_i||^2 with xbar the coordinatewise mean."""
    if len(states) == 0:
        raise ValueError("need at least one agent")
    stack = np.stack([st.x for st in states])
    if (stack == stack[0]).all():
        return 0.0  # the float mean of identical rows is not bit-exact
    centered = stack - stack.mean(axis=0)
    return float(np.mean(np.sum(centered ** 2, axis=1)))


def evaluate_consensus(model: ModelSpec, states, test: datamod.Dataset,
                       test_part: datamod.Partition) -> float:
    """Accuracy of the agent-mean model, averaged over local test sets.

    Every agent's test subset gets equal weight regardless of size.
    """
    if len(states) != test_part.n_agents:
        raise ValueError(f"{len(states)} agents but {test_part.n_agents} test subsets")
    xbar = np.mean(np.stack([st.x for st in states]), axis=0)
    accs = [predict_accuracy(model, xbar, datamod.batch_of(test, idx))
            for idx in test_part.assignments]
    return float(np.mean(accs))


def _mean_full_loss(model, states, train, train_part) -> float:
    losses = []
    for st, idx in zip(states, train_part.assignments):
        loss, _ = loss_and_grad(model, st.x, datamod.batch_of(train, idx))
        losses.append(loss)
    return float(np.mean(losses))


def run_training(model: ModelSpec, algorithm: str, mixing, train, train_part,
                 hyper: Hyper, epochs: int, master_seed: int,
                 test=None, test_part=None, eval_every: int | None = None,
                 n_threads: int = 1) -> tuple:
    """Core loop shared by run_experiment and the estimator.

    Returns (records, final_states).  test/test_part of None disables
    accuracy evaluation (test_accuracy left empty in the records).
    """
    if algorithm not in ROUND_FUNCTIONS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if n_threads < 1:
        raise ValueError(f"n_threads must be positive, got {n_threads}")
    round_fn = ROUND_FUNCTIONS[algorithm]
    d = param_count(model)
    x0 = init_params(model, subseed(master_seed, _TAG_INIT))
    states = init_states(mixing, d, algorithm, x0)
    n = mixing.n_agents
    batch_seeds = [subseed(master_seed, _TAG_BATCHES, j) for j in range(n)]
    rpe = rounds_per_epoch(train_part, hyper.batch_size)
    per_round_bytes = comm_cost(algorithm, d, n_links(mixing))

    can_eval = test is not None and test_part is not None
    records = []
    if epochs == 0:
        acc = evaluate_consensus(model, states, test, test_part) if can_eval else None
        records.append(MetricsRecord(
            round=0, epoch=0,
            mean_train_loss=_mean_full_loss(model, states, train, train_part),
            consensus_error=consensus_error(states),
            test_accuracy=acc, qp_eps_sq=0.0, cumulative_bytes=0))
        return records, states

    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    mapper = pool.map if pool else map
    cumulative = 0
    try:
        for epoch in range(epochs):
            alpha = step_size(hyper, epoch)
            epoch_batches = [
                datamod.minibatches(train, train_part.assignments[j],
                                    hyper.batch_size, epoch, batch_seeds[j])
                for j in range(n)
            ]
            for r in range(rpe):
                k = epoch * rpe + r + 1
                batches = [epoch_batches[j][r] for j in range(n)]
                try:
                    states, stats = round_fn(model, states, mixing, batches,
                                             hyper, alpha, mapper=mapper)
                except Exception as err:
                    raise RuntimeError(f"round {k} failed: {err}") from err
                cumulative = cumulative + stats.bytes_sent
                is_last = k == epochs * rpe
                if eval_every is None:
                    do_eval = r == rpe - 1
                else:
                    do_eval = k % eval_every == 0 or is_last
                acc = (evaluate_consensus(model, states, test, test_part)
                       if can_eval and do_eval else None)
                records.append(MetricsRecord(
                    round=k, epoch=epoch, mean_train_loss=stats.mean_loss,
                    consensus_error=consensus_error(states), test_accuracy=acc,
                    qp_eps_sq=stats.qp_eps_sq, cumulative_bytes=cumulative))
    finally:
        if pool:
            pool.shutdown()
    assert cumulative == epochs * rpe * per_round_bytes
    return records, states


def run_experiment(cfg: ExperimentConfig, n_threads: int = 1) -> list:
    """Run a configured experiment and return its metrics records."""
    records, _ = run_experiment_full(cfg, n_threads)
    return records


def run_experiment_full(cfg: ExperimentConfig, n_threads: int = 1) -> tuple:
    """run_experiment, but also returns the final agent states."""
    mixing = build_topology(cfg.topology, cfg.n_agents)
    train, test = load_experiment_data(cfg)
    part_seed = subseed(cfg.master_seed, _TAG_PARTITION)
    try:
        train_part = datamod.partition(train, cfg.n_agents, cfg.partition_mode, part_seed)
        test_part = datamod.partition(test, cfg.n_agents, cfg.partition_mode, part_seed)
    except datamod.PartitionError as err:
        raise ConfigError("partition_mode", str(err)) from err
    layer_sizes = (train.n_features,) + cfg.hidden_layers + (train.n_classes,)
    model = ModelSpec(layer_sizes=layer_sizes)
    records, states = run_training(
        model, cfg.algorithm, mixing, train, train_part, cfg.hyper, cfg.epochs,
        cfg.master_seed, test=test, test_part=test_part,
        eval_every=cfg.eval_every, n_threads=n_threads)
    return records, states


def _format_value(val) -> str:
    if val is None:
        return ""
    if isinstance(val, float):
        return repr(int(val)) if val.is_integer() and abs(val) < 2 ** 53 else repr(val)
    return repr(val)


def format_metrics_csv(records) -> str:
    """Render records as the canonical CSV document (byte-stable)."""
    lines = [METRICS_HEADER]
    for rec in records:
        lines.append(",".join(_format_value(v) for v in (
            rec.round, rec.epoch, rec.mean_train_loss, rec.consensus_error,
            rec.test_accuracy, rec.qp_eps_sq, rec.cumulative_bytes)))
    return "\n".join(lines) + "\n"


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_metrics_csv(records))
