"""Speaker-identity attack on exchanged models.

For a round ``r`` the attacker holds the broadcast global model G_r, the
personalised models uploaded by that round's clients, and enrollment speech of
known speakers. Each model is summarised by its footprint: the mean, over all
indicator frames, of its hidden-layer activations minus those of G_r. Trials
are scored by the cosine of two footprints.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from fedprint.data import SpeakerDataset
from fedprint.errors import ConfigError, DataError, ProtocolError, ShapeError, UndefinedSimilarityError
from fedprint.metrics import ScoreSet, compute_eer
from fedprint.nn import ParamSet, TrainConfig, forward, train_local
from fedprint.seeding import derive_seed

ZERO_NORM = 1e-12


@dataclass(frozen=True)
class Footprint:
    layer: int
    mu: np.ndarray


@dataclass(frozen=True)
class TrialRecord:
    round: int
    layer: int
    enrollment_speaker_id: int
    test_model_speaker_id: int
    score: float
    is_target: bool


@dataclass(frozen=True)
class AttackConfig:
    enrollment_speakers: int = 20
    enrollment_frames: int = 250
    finetune_cfg: TrainConfig = field(default_factory=TrainConfig)
    layers: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    rounds: tuple[int, ...] = (3, 5, 10, 20, 30)
    seed: int = 0

    def __post_init__(self):
        if self.enrollment_speakers < 1 or self.enrollment_frames < 1:
            raise ConfigError("enrollment_speakers and enrollment_frames must be >= 1")
        if not self.layers or not self.rounds:
            raise ConfigError("attack needs at least one layer and one round")
        if min(self.layers) < 1 or min(self.rounds) < 1:
            raise ConfigError("layers and rounds are 1-based")


@dataclass
class RoundModels:
    """What the attacker captured in one round: G_r and the uploaded models."""

    global_model: ParamSet
    client_models: dict[int, ParamSet]


def make_enrollment_model(G_r: ParamSet, enrollment_data, cfg: TrainConfig) -> ParamSet:
    if enrollment_data.train_x.shape[0] == 0:
        raise DataError("enrollment data is empty")
    return train_local(G_r, enrollment_data, cfg)


def _indicator_frames(indicator) -> np.ndarray:
    frames = indicator.frames() if hasattr(indicator, "frames") else np.concatenate(list(indicator))
    if frames.shape[0] == 0:
        raise DataError("indicator set has no frames")
    return frames


def _check_layer(params: ParamSet, h: int) -> None:
    if not 1 <= h <= params.num_hidden:
        raise ConfigError(f"layer {h} outside [1, {params.num_hidden}]")


def footprint(G_r: ParamSet, M: ParamSet, indicator, h: int) -> Footprint:
    if G_r.layer_dims != M.layer_dims:
        raise ShapeError(f"models differ in shape: {G_r.layer_dims} vs {M.layer_dims}")
    _check_layer(G_r, h)
    frames = _indicator_frames(indicator)
    _, trace_g = forward(G_r, frames)
    _, trace_m = forward(M, frames)
    return Footprint(h, (trace_m.layer(h) - trace_g.layer(h)).mean(axis=0))


class FootprintExtractor:
    """Footprints of many models against one G_r, one forward pass per model."""

    def __init__(self, G_r: ParamSet, indicator, layers):
        for h in layers:
            _check_layer(G_r, h)
        self.G_r = G_r
        self.layers = tuple(layers)
        self.frames = _indicator_frames(indicator)
        _, self._base = forward(G_r, self.frames)

    def __call__(self, M: ParamSet) -> dict[int, Footprint]:
        if M.layer_dims != self.G_r.layer_dims:
            raise ShapeError(f"models differ in shape: {self.G_r.layer_dims} vs {M.layer_dims}")
        _, trace = forward(M, self.frames)
        return {
            h: Footprint(h, (trace.layer(h) - self._base.layer(h)).mean(axis=0))
            for h in self.layers
        }


def similarity(a: Footprint, b: Footprint) -> float:
    if a.layer != b.layer or a.mu.shape != b.mu.shape:
        raise ShapeError("footprints come from different layers")
    na = float(np.linalg.norm(a.mu))
    nb = float(np.linalg.norm(b.mu))
    if na < ZERO_NORM or nb < ZERO_NORM:
        raise UndefinedSimilarityError("cosine similarity of a zero footprint")
    cos = float(np.dot(a.mu, b.mu)) / (na * nb)
    return min(1.0, max(-1.0, cos))


def score_trial(a: Footprint, b: Footprint) -> float:
    """Cosine score; a zero footprint scores 0 (no identity evidence)."""
    try:
        return similarity(a, b)
    except UndefinedSimilarityError:
        return 0.0


def choose_enrollment_speakers(participant_ids, client_ids, count: int, rng) -> list[int]:
    """All participants (so target trials exist) topped up with other clients.

    With fewer slots than participants, a random subset of participants is taken.
    """
    part = sorted(participant_ids)
    if count <= len(part):
        return sorted(int(i) for i in rng.choice(part, size=count, replace=False))
    others = sorted(set(client_ids) - set(part))
    extra = rng.choice(others, size=min(count - len(part), len(others)), replace=False)
    return sorted(part + [int(i) for i in extra])


def enrollment_dataset(ds: SpeakerDataset, frames: int) -> SpeakerDataset:
    if ds.enroll_x.shape[0] < frames:
        raise ConfigError(
            f"speaker {ds.speaker_id} has {ds.enroll_x.shape[0]} enrollment frames, {frames} requested"
        )
    empty_x, empty_y = ds.enroll_x[:0], ds.enroll_y[:0]
    return SpeakerDataset(ds.speaker_id, ds.enroll_x[:frames], ds.enroll_y[:frames], empty_x, empty_y)


def attack_round(r: int, models: RoundModels, corpus, cfg: AttackConfig,
                 executor: ThreadPoolExecutor | None = None) -> list[TrialRecord]:
    G_r = models.global_model
    test_ids = sorted(models.client_models)
    if not test_ids:
        raise ProtocolError(f"no client models stored for round {r}")
    rng = np.random.default_rng(derive_seed(cfg.seed, "enroll-select", r))
    enroll_ids = choose_enrollment_speakers(
        test_ids, [d.speaker_id for d in corpus.clients], cfg.enrollment_speakers, rng
    )
    extract = FootprintExtractor(G_r, corpus.indicator, cfg.layers)

    def enroll(sid):
        data = enrollment_dataset(corpus.client(sid), cfg.enrollment_frames)
        ft = replace(cfg.finetune_cfg, seed=derive_seed(cfg.seed, "enroll-train", r, sid))
        return extract(make_enrollment_model(G_r, data, ft))

    mapper = executor.map if executor is not None else map
    enrolled = dict(zip(enroll_ids, mapper(enroll, enroll_ids)))
    tested = dict(zip(test_ids, mapper(lambda sid: extract(models.client_models[sid]), test_ids)))

    trials = []
    for h in sorted(cfg.layers):
        for e in enroll_ids:
            for t in test_ids:
                trials.append(TrialRecord(r, h, e, t, score_trial(enrolled[e][h], tested[t][h]), e == t))
    return trials


def run_attack(history, corpus, client_models: dict[int, RoundModels], cfg: AttackConfig,
               threads: int = 1) -> list[TrialRecord]:
    """Trials for every requested (round, layer), ordered by round, layer, enroll id, test id.

    ``history`` is the federation state (or its RoundLog list); each requested
    round must appear there and in ``client_models``.
    """
    logs = getattr(history, "history", history)
    known = {e.round: e for e in logs}
    trials = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for r in sorted(cfg.rounds):
            if r not in known:
                raise ProtocolError(f"round {r} is not in the federation history")
            if r not in client_models:
                raise ProtocolError(f"models for round {r} were not stored")
            models = client_models[r]
            missing = set(known[r].participant_ids) - set(models.client_models)
            if missing:
                raise ProtocolError(f"round {r}: missing uploaded models for {sorted(missing)}")
            trials.extend(attack_round(r, models, corpus, cfg, pool))
    finally:
        if pool is not None:
            pool.shutdown()
    return trials


def capture_hook(rounds, store: dict[int, RoundModels]):
    """Federation hook that keeps G_r and uploads for the listed rounds."""
    wanted = set(rounds)

    def hook(result):
        if result.round in wanted:
            store[result.round] = RoundModels(
                result.broadcast_model, {u.speaker_id: u.params for u in result.updates}
            )

    return hook


@dataclass
class EERRow:
    round: int
    layer: int
    eer: float
    num_target: int
    num_nontarget: int


def eer_table(trials) -> list[EERRow]:
    groups: dict[tuple[int, int], list[TrialRecord]] = {}
    for t in trials:
        groups.setdefault((t.round, t.layer), []).append(t)
    rows = []
    for (r, h), group in sorted(groups.items()):
        scores = ScoreSet.from_trials(group)
        if scores.target_scores and scores.nontarget_scores:
            eer = compute_eer(scores)
        else:
            eer = float("nan")
        rows.append(EERRow(r, h, eer, len(scores.target_scores), len(scores.nontarget_scores)))
    return rows


def layer_average(rows) -> dict[int, float]:
    """EER per layer averaged over rounds."""
    by_layer: dict[int, list[float]] = {}
    for row in rows:
        by_layer.setdefault(row.layer, []).append(row.eer)
    return {h: float(np.mean(v)) for h, v in sorted(by_layer.items())}


def round_average(rows) -> dict[int, float]:
    """EER per round averaged over layers."""
    by_round: dict[int, list[float]] = {}
    for row in rows:
        by_round.setdefault(row.round, []).append(row.eer)
    return {r: float(np.mean(v)) for r, v in sorted(by_round.items())}
