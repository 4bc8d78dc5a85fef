"""Utility and privacy metrics: frame error rate, EER, per-speaker tracking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from fedprint.errors import DataError
from fedprint.nn import ParamSet, TrainConfig, forward, train_local
from fedprint.seeding import derive_seed


@dataclass
class ScoreSet:
    target_scores: list[float]
    nontarget_scores: list[float]

    @classmethod
    def from_trials(cls, trials) -> ScoreSet:
        tgt = [t.score for t in trials if t.is_target]
        non = [t.score for t in trials if not t.is_target]
        return cls(tgt, non)


def error_rate(model: ParamSet, frames, labels) -> float:
    """Fraction of frames whose argmax logit differs from the label.

    Ties go to the lowest class index.
    """
    labels = np.asarray(labels)
    if labels.shape[0] == 0:
        raise DataError("error_rate needs at least one frame")
    logits, _ = forward(model, frames)
    return float(np.mean(np.argmax(logits, axis=1) != labels))


def sweep_thresholds(scores: np.ndarray) -> np.ndarray:
    """Distinct scores, their midpoints and the two infinite sentinels, ascending."""
    uniq = np.unique(scores)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate([[-np.inf], np.sort(np.concatenate([uniq, mids])), [np.inf]])


def detection_rates(s: ScoreSet, thresholds: np.ndarray):
    """(P_miss, P_fa) per threshold: targets below it, non-targets at or above it."""
    tgt = np.sort(np.asarray(s.target_scores, dtype=np.float64))
    non = np.sort(np.asarray(s.nontarget_scores, dtype=np.float64))
    p_miss = np.searchsorted(tgt, thresholds, side="left") / tgt.size
    p_fa = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    return p_miss, p_fa


def compute_eer(s: ScoreSet) -> float:
    """Equal error rate with linear interpolation at the first P_miss = P_fa crossing."""
    if len(s.target_scores) == 0 or len(s.nontarget_scores) == 0:
        raise DataError("EER needs at least one target and one non-target score")
    scores = np.concatenate([np.asarray(s.target_scores, float), np.asarray(s.nontarget_scores, float)])
    if not np.isfinite(scores).all():
        raise DataError("scores must be finite")
    thr = sweep_thresholds(scores)
    p_miss, p_fa = detection_rates(s, thr)
    diff = p_miss - p_fa  # nondecreasing from -1 to +1
    i = int(np.argmax(diff >= 0.0))
    if diff[i] == 0.0:
        return float(p_miss[i])
    frac = -diff[i - 1] / (diff[i] - diff[i - 1])
    return float(p_miss[i - 1] + frac * (p_miss[i] - p_miss[i - 1]))


@dataclass
class LongitudinalSeries:
    speaker_id: int
    points: list[tuple[int, float, bool]] = field(default_factory=list)


def participation_flags(history, speaker_id: int, rounds) -> list[bool]:
    """Whether ``speaker_id`` took part in a round in (previous point, this point]."""
    joined = {entry.round for entry in history if speaker_id in entry.participant_ids}
    flags, prev = [], 0
    for r in rounds:
        flags.append(any(prev < j <= r for j in joined))
        prev = r
    return flags


def longitudinal_eval(snapshots: dict[int, ParamSet], speakers, corpus, history) -> list[LongitudinalSeries]:
    rounds = sorted(snapshots)
    out = []
    for sid in speakers:
        ds = corpus.client(sid)
        if not ds.has_analysis:
            raise DataError(f"speaker {sid} has no analysis data")
        flags = participation_flags(history, sid, rounds)
        series = LongitudinalSeries(sid)
        for r, flag in zip(rounds, flags):
            series.points.append((r, error_rate(snapshots[r], ds.analysis_x, ds.analysis_y), flag))
        out.append(series)
    return out


def select_tracked_speakers(history, corpus, at_round: int = 5, count: int = 5) -> list[int]:
    """Participants of ``at_round`` (or the last round) that own analysis data."""
    if not history:
        return []
    entry = next((e for e in history if e.round == at_round), history[-1])
    with_analysis = {d.speaker_id for d in corpus.clients if d.has_analysis}
    return [sid for sid in sorted(entry.participant_ids) if sid in with_analysis][:count]


def best_round(history, key: str = "dev_error") -> int:
    scored = [(e.metrics[key], e.round) for e in history if key in e.metrics]
    if not scored:
        raise DataError(f"no round carries metric {key!r}")
    return min(scored)[1]


@dataclass
class LocalGlobalRow:
    speaker_id: int
    global_error_analysis: float
    local_error_analysis: float
    local_error_test: float


@dataclass
class LocalGlobalTable:
    rows: list[LocalGlobalRow]
    global_error_test: float

    @property
    def mean_local_error_test(self) -> float:
        return float(np.mean([r.local_error_test for r in self.rows]))

    @property
    def personalization_rate(self) -> float:
        wins = [r.local_error_analysis <= r.global_error_analysis for r in self.rows]
        return float(np.mean(wins)) if wins else 0.0


def local_vs_global(G_best: ParamSet, corpus, speakers, cfg: TrainConfig, seed: int = 0) -> LocalGlobalTable:
    """Fine-tune ``G_best`` per speaker; compare on own analysis and on test speakers."""
    test_x, test_y = corpus.test_data()
    rows = []
    for sid in speakers:
        ds = corpus.client(sid)
        if not ds.has_analysis:
            raise DataError(f"speaker {sid} has no analysis data")
        local = train_local(G_best, ds, replace(cfg, seed=derive_seed(seed, "local-vs-global", sid)))
        rows.append(LocalGlobalRow(
            sid,
            error_rate(G_best, ds.analysis_x, ds.analysis_y),
            error_rate(local, ds.analysis_x, ds.analysis_y),
            error_rate(local, test_x, test_y),
        ))
    return LocalGlobalTable(rows, error_rate(G_best, test_x, test_y))


def eval_hook(corpus):
    """Federation hook recording dev/test error of each new global model."""
    dev_x, dev_y = corpus.dev_data()
    test_x, test_y = corpus.test_data()

    def hook(result):
        model = result.state.global_model
        result.log.metrics["dev_error"] = error_rate(model, dev_x, dev_y)
        result.log.metrics["test_error"] = error_rate(model, test_x, test_y)

    return hook
