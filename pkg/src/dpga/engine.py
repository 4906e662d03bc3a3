"""Experiment driver: four algorithms under one deterministic clock.

Algorithms
    fedavg          dense exchange every round, size-weighted averaging,
                    synchronous (delay 0), sequential clock.
    dga             dense exchange, aggregate applied D rounds late with
                    the correction term, parallel clock.
    dpga            random-walk update rate, Top-K partial exchange,
                    delayed aggregation with correction, parallel clock.
    static-partial  fixed tail mask, synchronous, sequential clock.

Clock model: every round costs t_compute. A sequential round additionally
blocks on its exchange (latency + bytes / bandwidth); a parallel run hides
communication behind compute and only pays the final exchange once at the
end, when the still-in-flight aggregates drain. Dense exchanges are
accounted as value-only payloads; partial exchanges pay 4 extra bytes per
entry for the coordinate index.

Determinism: every random stream is derived from (seed, purpose tag), the
per-(round, client) batch streams included, and all reductions run in a
fixed order, so a config reproduces its metrics byte for byte regardless
of the worker-thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from collections import deque

import numpy as np

from .data import Dataset, PartitionConfig, gen_synthetic, partition
from .errors import ConfigurationError, ProtocolError
from .masking import ENTRY_BYTES, HEADER_BYTES, snap_rate
from .models import ModelSpec, evaluate, init_params
from .protocol import (AGGREGATION_MODES, CORRECTION_SCOPES, ClientState,
                       apply_correction, build_upload, local_round,
                       pairwise_mean, server_aggregate, static_partial_mask)
from .ratewalk import RateState, state_index

ALGORITHMS = ("fedavg", "dga", "dpga", "static-partial")
TIMINGS = ("sequential", "parallel")

# Purpose tags for derived random streams.
_SEED_DATA, _SEED_PART, _SEED_INIT, _SEED_WALK, _SEED_BATCH = range(1, 6)


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a run. Same config, same output bytes."""

    algorithm: str = "dpga"
    n_clients: int = 8
    rounds: int = 50
    local_epochs: int = 2
    eta: float = 0.1
    batch_size: int | None = None        # None = full shard
    timing: str | None = None            # None = pick from delay
    delay: int | None = None             # None = derive from the network
    bandwidth: float = 1e6               # bytes per time unit
    latency: float = 0.0
    t_compute: float = 1.0
    walk_m: int = 2
    walk_p0: float = 0.5
    per_client_walk: bool = False
    aggregation: str = "per-component"
    correction_scope: str = "own-shared"
    static_fraction: float = 0.5
    eval_every: int = 1
    seed: int = 0
    model_kind: str = "logistic-regression"
    hidden_dims: tuple[int, ...] = ()
    activation: str = "relu"
    num_classes: int = 3
    dim: int = 6
    per_class: int = 40
    test_per_class: int = 20
    spread: float = 1.0
    alpha: float = 1.0
    rho: float = 1.0

    def model_spec(self) -> ModelSpec:
        return ModelSpec(kind=self.model_kind, input_dim=self.dim,
                         num_classes=self.num_classes,
                         hidden_dims=tuple(self.hidden_dims),
                         activation=self.activation)


@dataclass(frozen=True)
class MetricsRecord:
    """One row of run output. Byte totals are cumulative."""

    round: int
    sim_time: float
    up_bytes: int
    down_bytes: int
    p: float
    train_loss: float
    eval_acc: float
    eval_acc_client_mean: float


def comm_time(nbytes: float, bandwidth: float, latency: float) -> float:
    """Transfer time for one exchange: latency plus payload over bandwidth."""
    if not bandwidth > 0.0:
        raise ConfigurationError("bandwidth must be positive")
    if latency < 0.0:
        raise ConfigurationError("latency must be >= 0")
    if nbytes < 0:
        raise ConfigurationError("byte count must be >= 0")
    return latency + nbytes / bandwidth


def _dense_payload(count: int) -> int:
    # A dense vector needs no index list: header plus 8 bytes per value.
    return HEADER_BYTES + 8 * count


def _sparse_payload(count: int) -> int:
    return HEADER_BYTES + ENTRY_BYTES * count


def _worst_roundtrip_bytes(cfg: SimConfig) -> int:
    """Per-client up+down bytes of the largest possible exchange (p = 1)."""
    d = cfg.model_spec().dim
    if cfg.algorithm in ("fedavg", "dga"):
        return 2 * _dense_payload(d)
    return 2 * _sparse_payload(d)


def derive_D(cfg: SimConfig) -> int:
    """Smallest whole number of compute rounds that covers one round trip."""
    rt = comm_time(_worst_roundtrip_bytes(cfg), cfg.bandwidth, cfg.latency)
    return int(math.ceil(rt / cfg.t_compute))


def resolve_delay(cfg: SimConfig) -> int:
    if cfg.algorithm in ("fedavg", "static-partial"):
        if cfg.delay not in (None, 0):
            raise ConfigurationError(
                f"{cfg.algorithm} is synchronous; delay must be 0 or omitted")
        return 0
    return derive_D(cfg) if cfg.delay is None else cfg.delay


def resolve_timing(cfg: SimConfig, delay: int) -> str:
    timing = cfg.timing or ("parallel" if delay > 0 else "sequential")
    if timing not in TIMINGS:
        raise ConfigurationError(f"unknown timing {cfg.timing!r}")
    if timing == "sequential" and delay > 0:
        raise ConfigurationError(
            "sequential timing blocks on every exchange, so delay must be 0")
    if timing == "parallel":
        rt = comm_time(_worst_roundtrip_bytes(cfg), cfg.bandwidth, cfg.latency)
        if rt > delay * cfg.t_compute:
            raise ConfigurationError(
                f"delay {delay} hides only {delay * cfg.t_compute:g} time units "
                f"but a full exchange takes {rt:g}; corrections would arrive "
                "before their uploads finish")
    return timing


def validate_config(cfg: SimConfig) -> tuple[int, str]:
    """Check every field; returns the resolved (delay, timing)."""
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {cfg.algorithm!r}")
    if cfg.n_clients < 1:
        raise ConfigurationError("n_clients must be >= 1")
    if cfg.rounds < 1:
        raise ConfigurationError("rounds must be >= 1")
    if cfg.local_epochs < 1:
        raise ConfigurationError("local_epochs must be >= 1")
    if not cfg.eta > 0.0:
        raise ConfigurationError("eta must be positive")
    if cfg.batch_size is not None and cfg.batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1 or full")
    if cfg.delay is not None and cfg.delay < 0:
        raise ConfigurationError("delay must be >= 0")
    if not cfg.t_compute > 0.0:
        raise ConfigurationError("t_compute must be positive")
    if cfg.eval_every < 1:
        raise ConfigurationError("eval_every must be >= 1")
    if cfg.per_class < 1:
        raise ConfigurationError("per_class must be >= 1")
    if cfg.test_per_class < 1:
        raise ConfigurationError("test_per_class must be >= 1")
    if cfg.walk_m < 0:
        raise ConfigurationError("walk m must be >= 0")
    state_index(cfg.walk_p0)
    if cfg.aggregation not in AGGREGATION_MODES:
        raise ConfigurationError(f"unknown aggregation mode {cfg.aggregation!r}")
    if cfg.correction_scope not in CORRECTION_SCOPES:
        raise ConfigurationError(f"unknown correction scope {cfg.correction_scope!r}")
    if not 0.0 < cfg.static_fraction <= 1.0:
        raise ConfigurationError("static_fraction must be in (0, 1]")
    if cfg.algorithm == "fedavg" and cfg.aggregation != "per-component":
        raise ConfigurationError("fedavg uses size-weighted per-component averaging")
    cfg.model_spec()  # validates the model fields
    comm_time(0, cfg.bandwidth, cfg.latency)
    delay = resolve_delay(cfg)
    timing = resolve_timing(cfg, delay)
    return delay, timing


def objective(clients: list[ClientState]) -> float:
    """Global training objective: size-weighted mean of the local losses,
    all evaluated at the mean of the client weight vectors."""
    if not clients:
        raise ConfigurationError("objective needs at least one client")
    wbar = pairwise_mean(np.stack([c.weights for c in clients]))
    total = sum(c.n_i for c in clients)
    value = 0.0
    for c in clients:
        loss, _ = evaluate(wbar, c.shard, c.spec)
        value += (c.n_i / total) * loss
    return float(value)


class Simulation:
    """A fully built experiment; run() yields one MetricsRecord per round."""

    def __init__(self, cfg: SimConfig, workers: int = 1):
        self.cfg = cfg
        self.delay, self.timing = validate_config(cfg)
        if workers < 1:
            raise ConfigurationError("workers must be >= 1")
        self.workers = workers

        self.spec = cfg.model_spec()
        # One draw covers train and eval so both see the same class means;
        # the last test_per_class samples of every class are held out.
        full = gen_synthetic(cfg.num_classes, cfg.dim,
                             cfg.per_class + cfg.test_per_class, cfg.spread,
                             _derived_seed(cfg.seed, _SEED_DATA))
        rows = np.arange(full.n).reshape(cfg.num_classes, -1)
        train = Dataset(features=full.features[rows[:, :cfg.per_class].ravel()],
                        labels=full.labels[rows[:, :cfg.per_class].ravel()],
                        num_classes=cfg.num_classes)
        test = Dataset(features=full.features[rows[:, cfg.per_class:].ravel()],
                       labels=full.labels[rows[:, cfg.per_class:].ravel()],
                       num_classes=cfg.num_classes)
        shards = partition(train, PartitionConfig(
            alpha=cfg.alpha, rho=cfg.rho, n_clients=cfg.n_clients,
            seed=_derived_seed(cfg.seed, _SEED_PART)))
        for i, idx in enumerate(shards):
            if idx.size == 0:
                raise ConfigurationError(
                    f"partition left client {i} without data; grow the dataset "
                    "or raise alpha/rho")
        w0 = init_params(self.spec, _derived_seed(cfg.seed, _SEED_INIT))
        self.clients = [
            ClientState(id=i, weights=w0.copy(), shard=train.batch(idx),
                        spec=self.spec, max_pending=self.delay + 1)
            for i, idx in enumerate(shards)
        ]
        sizes = np.array([c.n_i for c in self.clients], dtype=np.float64)
        self._beta = sizes / sizes.sum()
        self._test_batch = test.batch()
        self.train, self.test = train, test

        if cfg.algorithm == "dpga":
            if cfg.per_client_walk:
                self._walks = [RateState.from_seed(cfg.walk_p0, cfg.walk_m,
                                                   [cfg.seed, _SEED_WALK, i])
                               for i in range(cfg.n_clients)]
            else:
                self._walks = [RateState.from_seed(cfg.walk_p0, cfg.walk_m,
                                                   [cfg.seed, _SEED_WALK])]
        else:
            self._walks = []
        self._static_set = (static_partial_mask(self.spec, cfg.static_fraction)
                            if cfg.algorithm == "static-partial" else None)
        self._sparse_wire = cfg.algorithm in ("dpga", "static-partial")

        self.records: list[MetricsRecord] = []
        self.correction_log: list[tuple[int, float]] = []  # (round, max |g - z|)

    # ---- helpers ---- #

    def _payload(self, count: int) -> int:
        return _sparse_payload(count) if self._sparse_wire else _dense_payload(count)

    def _rates(self, round_: int) -> list[float]:
        cfg = self.cfg
        if cfg.algorithm == "dpga":
            if round_ == 1:  # the first round runs at the configured p0
                return [w.p for w in self._walks] * (
                    1 if cfg.per_client_walk else cfg.n_clients)
            if cfg.per_client_walk:
                return [w.sample() for w in self._walks]
            p = self._walks[0].sample()
            return [p] * cfg.n_clients
        if cfg.algorithm == "static-partial":
            return [snap_rate(cfg.static_fraction)] * cfg.n_clients
        return [1.0] * cfg.n_clients

    def _local_all(self, round_: int) -> list[np.ndarray]:
        cfg = self.cfg
        rngs = [np.random.default_rng([cfg.seed, _SEED_BATCH, round_, c.id])
                for c in self.clients]
        work = [(c, cfg.local_epochs, cfg.eta, cfg.batch_size, r)
                for c, r in zip(self.clients, rngs)]
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as ex:
                futures = [ex.submit(local_round, *args) for args in work]
                return [f.result() for f in futures]
        return [local_round(*args) for args in work]

    def _deliver(self, agg, down_sizes: list[int]) -> int:
        worst = 0.0
        for client, nbytes in zip(self.clients, down_sizes):
            delta = apply_correction(client, agg, self.cfg.eta,
                                     scope=self.cfg.correction_scope)
            worst = max(worst, delta)
        self.correction_log.append((agg.round, worst))
        return sum(down_sizes)

    def _evaluate(self):
        wbar = pairwise_mean(np.stack([c.weights for c in self.clients]))
        train_loss = objective(self.clients)
        _, acc = evaluate(wbar, self._test_batch, self.spec)
        per_client = [evaluate(c.weights, self._test_batch, self.spec)[1]
                      for c in self.clients]
        return train_loss, acc, float(np.mean(per_client))

    # ---- main loop ---- #

    def run(self) -> list[MetricsRecord]:
        cfg = self.cfg
        d = self.spec.dim
        dense_all = np.arange(d, dtype=np.int64)
        inflight: deque = deque()
        up_total = 0
        down_total = 0
        clock = 0.0

        for t in range(1, cfg.rounds + 1):
            rates = self._rates(t)
            zs = self._local_all(t)

            msgs = []
            for client, z, p in zip(self.clients, zs, rates):
                if cfg.algorithm in ("fedavg", "dga"):
                    msgs.append(build_upload(client, z, p, t, shared=dense_all))
                elif cfg.algorithm == "static-partial":
                    msgs.append(build_upload(client, z, p, t, shared=self._static_set))
                else:
                    msgs.append(build_upload(client, z, p, t))
            up_sizes = [self._payload(m.count) for m in msgs]
            up_total += sum(up_sizes)

            weights = self._beta if cfg.algorithm == "fedavg" else None
            agg = server_aggregate(msgs, cfg.aggregation, weights)
            if cfg.correction_scope == "own-shared":
                down_sizes = [self._payload(m.count) for m in msgs]
            else:
                down_sizes = [self._payload(int(agg.indices.shape[0]))] * len(msgs)
            inflight.append((t + self.delay, agg, down_sizes))
            exchange = max(u + dn for u, dn in zip(up_sizes, down_sizes))

            while inflight and inflight[0][0] <= t:
                _, due, sizes = inflight.popleft()
                down_total += self._deliver(due, sizes)
            if t == cfg.rounds:
                while inflight:
                    _, due, sizes = inflight.popleft()
                    down_total += self._deliver(due, sizes)

            clock += cfg.t_compute
            if self.timing == "sequential":
                clock += comm_time(exchange, cfg.bandwidth, cfg.latency)
            elif t == cfg.rounds:
                # Parallel runs only wait once, for the final exchange to drain.
                clock += comm_time(exchange, cfg.bandwidth, cfg.latency)

            if t % cfg.eval_every == 0 or t == cfg.rounds:
                train_loss, acc, acc_clients = self._evaluate()
            else:
                train_loss = acc = acc_clients = float("nan")
            if cfg.algorithm == "static-partial":
                p_used = cfg.static_fraction  # nominal; the wire rate is snapped
            elif cfg.per_client_walk:
                p_used = float(np.mean(rates))
            else:
                p_used = rates[0]
            self.records.append(MetricsRecord(
                round=t, sim_time=clock, up_bytes=up_total, down_bytes=down_total,
                p=p_used, train_loss=train_loss, eval_acc=acc,
                eval_acc_client_mean=acc_clients))

        if any(c.pending for c in self.clients):
            raise ProtocolError("run ended with undelivered aggregates")
        return self.records


def run_experiment(cfg: SimConfig, workers: int = 1) -> list[MetricsRecord]:
    """Build and run a simulation; returns one MetricsRecord per round."""
    return Simulation(cfg, workers=workers).run()
