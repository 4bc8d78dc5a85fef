"""FedAvg engine: client sampling, local training dispatch and aggregation.

The server side only ever sees ``ClientUpdate`` objects (parameters plus a
sample count); raw frames stay inside ``Client``.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from fedprint.errors import ConfigError, FedPrintError, ProtocolError, ShapeError
from fedprint.nn import ParamSet, TrainConfig, init_params, train_local
from fedprint.seeding import derive_seed

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (64, 64, 64, 64, 64, 64)


@dataclass(frozen=True)
class FederationConfig:
    total_clients: int
    clients_per_round: int = 20
    rounds: int = 30
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.total_clients < 1:
            raise ConfigError("total_clients must be >= 1")
        if not 1 <= self.clients_per_round <= self.total_clients:
            raise ConfigError(
                f"clients_per_round must lie in [1, {self.total_clients}], got {self.clients_per_round}"
            )
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not self.hidden_dims or any(d < 1 for d in self.hidden_dims):
            raise ConfigError("hidden_dims must be a nonempty list of positive widths")


@dataclass
class RoundLog:
    round: int
    participant_ids: list[int]
    client_sizes: list[int]
    global_snapshot_ref: str | None = None
    metrics: dict[str, float] = field(default_factory=dict)

    @property
    def n_total(self) -> int:
        return sum(self.client_sizes)


@dataclass
class FederationState:
    global_model: ParamSet
    history: list[RoundLog]
    rng: np.random.Generator

    @property
    def round(self) -> int:
        return self.history[-1].round if self.history else 0


@dataclass(frozen=True)
class ClientUpdate:
    speaker_id: int
    params: ParamSet
    num_samples: int


@dataclass
class RoundResult:
    """Everything a hook may inspect after a round."""

    round: int
    broadcast_model: ParamSet
    state: FederationState
    log: RoundLog
    updates: list[ClientUpdate]


class Client:
    """One speaker's device. Keeps its data private; returns trained parameters."""

    def __init__(self, dataset):
        self._data = dataset

    @property
    def speaker_id(self) -> int:
        return self._data.speaker_id

    def local_update(self, global_model: ParamSet, cfg: TrainConfig) -> ClientUpdate:
        params = train_local(global_model, self._data, cfg)
        return ClientUpdate(self.speaker_id, params, self._data.num_train)


def sample_clients(K: int, m: int, rng: np.random.Generator) -> list[int]:
    """``m`` distinct client indices from ``range(K)``, uniform, ascending."""
    if K < 1 or not 1 <= m <= K:
        raise ConfigError(f"cannot sample m={m} clients out of K={K}")
    return sorted(int(i) for i in rng.choice(K, size=m, replace=False))


def fedavg(updates) -> ParamSet:
    """Weighted mean of parameter sets, weight ``n_k / n`` per client.

    ``updates`` is a sequence of ``(ParamSet, n_k)`` pairs or ``ClientUpdate``s;
    accumulation follows the input order.
    """
    pairs = [(u.params, u.num_samples) if isinstance(u, ClientUpdate) else tuple(u) for u in updates]
    if not pairs:
        raise ProtocolError("fedavg needs at least one update")
    dims = pairs[0][0].layer_dims
    for p, n_k in pairs:
        if p.layer_dims != dims:
            raise ShapeError(f"cannot aggregate layer_dims {p.layer_dims} with {dims}")
        if not n_k > 0:
            raise ProtocolError(f"client sample count must be > 0, got {n_k}")
    n = sum(n_k for _, n_k in pairs)
    weights = [n_k / n for _, n_k in pairs]
    out_w, out_b = [], []
    for l in range(len(dims) - 1):
        acc_w = weights[0] * pairs[0][0].weights[l]
        acc_b = weights[0] * pairs[0][0].biases[l]
        for c, (p, _) in zip(weights[1:], pairs[1:]):
            acc_w += c * p.weights[l]
            acc_b += c * p.biases[l]
        out_w.append(acc_w)
        out_b.append(acc_b)
    return ParamSet(out_w, out_b)


def make_clients(corpus) -> list[Client]:
    return [Client(ds) for ds in corpus.clients]


def init_state(cfg: FederationConfig, feature_dim: int, num_classes: int) -> FederationState:
    dims = [feature_dim, *cfg.hidden_dims, num_classes]
    model = init_params(dims, derive_seed(cfg.seed, "server-init"))
    return FederationState(model, [], np.random.default_rng(derive_seed(cfg.seed, "client-sampling")))


def _client_cfg(cfg: FederationConfig, r: int, speaker_id: int) -> TrainConfig:
    return replace(cfg.train_cfg, seed=derive_seed(cfg.seed, "local-train", r, speaker_id))


def execute_round(state: FederationState, clients: list[Client], cfg: FederationConfig,
                  executor: ThreadPoolExecutor | None = None) -> RoundResult:
    """One round on a copy of ``state``; the input state is never mutated."""
    if len(clients) < cfg.clients_per_round:
        raise ProtocolError(f"only {len(clients)} clients available, need {cfg.clients_per_round}")
    rng = copy.deepcopy(state.rng)
    r = state.round + 1
    chosen = [clients[i] for i in sample_clients(len(clients), cfg.clients_per_round, rng)]
    broadcast = state.global_model

    def work(client):
        return client.local_update(broadcast, _client_cfg(cfg, r, client.speaker_id))

    try:
        if executor is None:
            updates = [work(c) for c in chosen]
        else:
            updates = list(executor.map(work, chosen))
        new_global = fedavg(updates)
    except FedPrintError as exc:
        raise ProtocolError(f"round {r} aborted: {exc}") from exc
    if not new_global.is_finite():
        raise ProtocolError(f"round {r} produced a non-finite global model")

    entry = RoundLog(r, [u.speaker_id for u in updates], [u.num_samples for u in updates])
    new_state = FederationState(new_global, [*state.history, entry], rng)
    return RoundResult(r, broadcast, new_state, entry, updates)


def run_round(state: FederationState, corpus, cfg: FederationConfig, threads: int = 1) -> FederationState:
    clients = make_clients(corpus)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return execute_round(state, clients, cfg, pool).state
    return execute_round(state, clients, cfg).state


def run_federation(cfg: FederationConfig, corpus, hooks=(), threads: int = 1,
                   state: FederationState | None = None) -> FederationState:
    """Run ``cfg.rounds`` rounds, calling every hook with the ``RoundResult``."""
    if cfg.total_clients != len(corpus.clients):
        raise ConfigError(
            f"config expects {cfg.total_clients} clients, corpus has {len(corpus.clients)}"
        )
    if state is None:
        state = init_state(cfg, corpus.feature_dim, corpus.num_classes)
    clients = make_clients(corpus)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for _ in range(cfg.rounds):
            result = execute_round(state, clients, cfg, pool)
            state = result.state
            for hook in hooks:
                hook(result)
            log.info("round %d: %d clients, n=%d %s", result.round, len(result.updates),
                     result.log.n_total, result.log.metrics)
    finally:
        if pool is not None:
            pool.shutdown()
    return state


def participants(history) -> set[int]:
    return {sid for entry in history for sid in entry.participant_ids}


def participation_summary(history, total_clients: int) -> dict:
    seen = participants(history)
    return {
        "rounds": len(history),
        "distinct_participants": len(seen),
        "total_clients": total_clients,
        "fraction": len(seen) / total_clients if total_clients else 0.0,
    }
