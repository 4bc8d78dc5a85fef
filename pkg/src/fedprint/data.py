"""Synthetic speaker-partitioned corpus.

Every frame of speaker ``s`` with class ``y`` is

    x = prototype[y] + speaker_strength * voice[s] + noise,   noise ~ N(0, sigma^2 I)

Clients are speakers; large clients lose a fixed-size analysis slice that is
never trained on. Dev, test and indicator speakers are disjoint from clients.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from fedprint.errors import ConfigError, DataError

CORPUS_MAGIC = b"FPCORP1\n"


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    voice_vector: np.ndarray
    num_frames: int


def _empty(dim: int):
    return np.zeros((0, dim)), np.zeros(0, dtype=np.int64)


@dataclass
class SpeakerDataset:
    """Frames of one speaker. Dev/test speakers keep everything in ``train_*``."""

    speaker_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    analysis_x: np.ndarray
    analysis_y: np.ndarray
    enroll_x: np.ndarray = None
    enroll_y: np.ndarray = None

    def __post_init__(self):
        if self.enroll_x is None:
            self.enroll_x, self.enroll_y = _empty(self.train_x.shape[1])

    @property
    def num_train(self) -> int:
        return int(self.train_x.shape[0])

    @property
    def num_analysis(self) -> int:
        return int(self.analysis_x.shape[0])

    @property
    def has_analysis(self) -> bool:
        return self.num_analysis > 0


@dataclass
class IndicatorSet:
    utterances: list[np.ndarray]
    speaker_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.utterances:
            raise DataError("indicator set must contain at least one utterance")

    def frames(self) -> np.ndarray:
        return np.concatenate(self.utterances, axis=0)


@dataclass(frozen=True)
class CorpusParams:
    num_clients: int = 60
    feature_dim: int = 32
    num_classes: int = 10
    speaker_strength: float = 0.5
    noise_sigma: float = 1.0
    frames_min: int = 200
    frames_max: int = 800
    analysis_threshold: int = 500
    analysis_size: int = 150
    enroll_frames: int = 250
    dev_speakers: int = 8
    test_speakers: int = 8
    eval_frames: int = 300
    indicator_utterances: int = 10
    indicator_frames: int = 20

    def validate(self) -> None:
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ConfigError("feature_dim must be >= 1 and num_classes >= 2")
        if not self.speaker_strength >= 0:
            raise ConfigError("speaker_strength must be >= 0")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be > 0")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ConfigError(f"bad frames_range ({self.frames_min}, {self.frames_max})")
        if self.frames_min < self.num_classes:
            raise ConfigError("frames_min must be >= num_classes so every speaker covers all labels")
        if self.analysis_size >= self.analysis_threshold or self.analysis_size < 1:
            raise ConfigError("need 1 <= analysis_size < analysis_threshold")
        for name in ("enroll_frames", "eval_frames", "indicator_utterances", "indicator_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.dev_speakers < 1 or self.test_speakers < 1:
            raise ConfigError("need at least one dev and one test speaker")

    @property
    def frames_range(self) -> tuple[int, int]:
        return (self.frames_min, self.frames_max)


@dataclass
class CorpusSplit:
    clients: list[SpeakerDataset]
    dev: list[SpeakerDataset]
    test: list[SpeakerDataset]
    indicator: IndicatorSet
    prototypes: np.ndarray
    params: CorpusParams
    seed: int

    @property
    def feature_dim(self) -> int:
        return int(self.prototypes.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.prototypes.shape[0])

    def client(self, speaker_id: int) -> SpeakerDataset:
        for ds in self.clients:
            if ds.speaker_id == speaker_id:
                return ds
        raise DataError(f"speaker {speaker_id} is not a client")

    @staticmethod
    def _pooled(datasets):
        return (
            np.concatenate([d.train_x for d in datasets]),
            np.concatenate([d.train_y for d in datasets]),
        )

    def test_data(self):
        return self._pooled(self.test)

    def dev_data(self):
        return self._pooled(self.dev)

    def speaker_sets(self) -> dict[str, set[int]]:
        return {
            "clients": {d.speaker_id for d in self.clients},
            "dev": {d.speaker_id for d in self.dev},
            "test": {d.speaker_id for d in self.test},
            "indicator": set(self.indicator.speaker_ids),
        }


def split_analysis(frames, labels, threshold: int, analysis_size: int):
    """Hold out the last ``analysis_size`` frames when there are more than ``threshold``.

    Returns ``((train_x, train_y), (analysis_x, analysis_y))``.
    """
    if analysis_size >= threshold:
        raise ConfigError(f"analysis_size {analysis_size} must be < threshold {threshold}")
    frames = np.asarray(frames)
    labels = np.asarray(labels)
    n = frames.shape[0]
    if n > threshold:
        cut = n - analysis_size
        return (frames[:cut], labels[:cut]), (frames[cut:], labels[cut:])
    return (frames, labels), (frames[:0], labels[:0])


class _Generator:
    def __init__(self, params: CorpusParams, seed: int):
        self.p = params
        self.rng = np.random.default_rng(seed)
        self.prototypes = self.rng.standard_normal((params.num_classes, params.feature_dim))

    def speaker(self, speaker_id: int, num_frames: int) -> SpeakerProfile:
        voice = self.rng.standard_normal(self.p.feature_dim)
        return SpeakerProfile(speaker_id, voice, int(num_frames))

    def frames(self, profile: SpeakerProfile, n: int):
        # balanced labels: every class appears once n >= num_classes
        labels = self.rng.permutation(np.arange(n) % self.p.num_classes).astype(np.int64)
        noise = self.rng.normal(0.0, self.p.noise_sigma, size=(n, self.p.feature_dim))
        x = self.prototypes[labels] + self.p.speaker_strength * profile.voice_vector + noise
        return x, labels


def generate(params: CorpusParams, seed: int) -> CorpusSplit:
    params.validate()
    gen = _Generator(params, seed)
    next_id = 0

    clients = []
    for _ in range(params.num_clients):
        count = int(gen.rng.integers(params.frames_min, params.frames_max + 1))
        prof = gen.speaker(next_id, count)
        x, y = gen.frames(prof, count)
        (tx, ty), (ax, ay) = split_analysis(x, y, params.analysis_threshold, params.analysis_size)
        ex, ey = gen.frames(prof, params.enroll_frames)
        clients.append(SpeakerDataset(prof.speaker_id, tx, ty, ax, ay, ex, ey))
        next_id += 1

    def eval_speakers(count):
        nonlocal next_id
        out = []
        for _ in range(count):
            prof = gen.speaker(next_id, params.eval_frames)
            x, y = gen.frames(prof, params.eval_frames)
            out.append(SpeakerDataset(prof.speaker_id, x, y, *_empty(params.feature_dim)))
            next_id += 1
        return out

    dev = eval_speakers(params.dev_speakers)
    test = eval_speakers(params.test_speakers)

    utterances, ind_ids = [], []
    for _ in range(params.indicator_utterances):
        prof = gen.speaker(next_id, params.indicator_frames)
        x, _ = gen.frames(prof, params.indicator_frames)
        utterances.append(x)
        ind_ids.append(prof.speaker_id)
        next_id += 1

    return CorpusSplit(clients, dev, test, IndicatorSet(utterances, ind_ids), gen.prototypes, params, seed)


def generate_corpus(num_clients: int, feature_dim: int, num_classes: int, speaker_strength: float,
                    noise_sigma: float, frames_range: tuple[int, int], seed: int, **extra) -> CorpusSplit:
    params = CorpusParams(
        num_clients=num_clients,
        feature_dim=feature_dim,
        num_classes=num_classes,
        speaker_strength=speaker_strength,
        noise_sigma=noise_sigma,
        frames_min=frames_range[0],
        frames_max=frames_range[1],
        **extra,
    )
    return generate(params, seed)


# -- serialization ----------------------------------------------------------

def _arrays(corpus: CorpusSplit):
    yield "prototypes", corpus.prototypes
    for role, group in (("client", corpus.clients), ("dev", corpus.dev), ("test", corpus.test)):
        for ds in group:
            base = f"{role}/{ds.speaker_id}"
            yield f"{base}/train_x", ds.train_x
            yield f"{base}/train_y", ds.train_y
            if role == "client":
                yield f"{base}/analysis_x", ds.analysis_x
                yield f"{base}/analysis_y", ds.analysis_y
                yield f"{base}/enroll_x", ds.enroll_x
                yield f"{base}/enroll_y", ds.enroll_y
    for sid, utt in zip(corpus.indicator.speaker_ids, corpus.indicator.utterances):
        yield f"indicator/{sid}/x", utt


def dumps_corpus(corpus: CorpusSplit) -> bytes:
    items = list(_arrays(corpus))
    buf = io.BytesIO()
    buf.write(CORPUS_MAGIC)
    buf.write(f"{len(items)}\n".encode())
    for name, arr in items:
        arr = np.asarray(arr)
        kind = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        rows = arr.shape[0]
        cols = arr.shape[1] if arr.ndim == 2 else 0
        buf.write(f"{name} {kind} {rows} {cols}\n".encode())
        buf.write(arr.astype("<" + kind).tobytes())
    return buf.getvalue()


def manifest(corpus: CorpusSplit) -> dict:
    speakers = []
    for role, group in (("client", corpus.clients), ("dev", corpus.dev), ("test", corpus.test)):
        for ds in group:
            speakers.append({
                "speaker_id": ds.speaker_id,
                "split": role,
                "num_frames": ds.num_train + ds.num_analysis,
                "train_frames": ds.num_train,
                "analysis_frames": ds.num_analysis,
                "enroll_frames": int(ds.enroll_x.shape[0]),
            })
    for sid, utt in zip(corpus.indicator.speaker_ids, corpus.indicator.utterances):
        speakers.append({"speaker_id": sid, "split": "indicator", "num_frames": int(utt.shape[0])})
    return {
        "format": "fedprint-corpus-1",
        "seed": corpus.seed,
        "params": asdict(corpus.params),
        "num_clients": len(corpus.clients),
        "speakers": speakers,
    }


def save_corpus(corpus: CorpusSplit, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path = directory / "corpus.bin"
    man_path = directory / "manifest.json"
    bin_path.write_bytes(dumps_corpus(corpus))
    man_path.write_text(json.dumps(manifest(corpus), indent=2, sort_keys=True) + "\n")
    return bin_path, man_path


def _parse_arrays(blob: bytes) -> dict[str, np.ndarray]:
    stream = io.BytesIO(blob)
    if stream.read(len(CORPUS_MAGIC)) != CORPUS_MAGIC:
        raise DataError("not a corpus file (bad magic)")
    out = {}
    try:
        count = int(stream.readline())
        for _ in range(count):
            name, kind, rows, cols = stream.readline().decode().split()
            rows, cols = int(rows), int(cols)
            size = rows * max(cols, 1)
            raw = stream.read(size * 8)
            if len(raw) != size * 8 or kind not in ("i8", "f8"):
                raise DataError(f"truncated or malformed array {name}")
            arr = np.frombuffer(raw, dtype="<" + kind).astype(np.int64 if kind == "i8" else np.float64)
            out[name] = arr.reshape(rows, cols) if cols else arr
    except (ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"malformed corpus file: {exc}") from exc
    return out


def load_corpus(directory) -> CorpusSplit:
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text())
    arrays = _parse_arrays((directory / "corpus.bin").read_bytes())
    params = CorpusParams(**meta["params"])
    dim = params.feature_dim
    clients, dev, test, utts, ind_ids = [], [], [], [], []
    try:
        for sp in meta["speakers"]:
            sid, role = sp["speaker_id"], sp["split"]
            base = f"{role}/{sid}"
            if role == "client":
                clients.append(SpeakerDataset(
                    sid, arrays[f"{base}/train_x"], arrays[f"{base}/train_y"],
                    arrays[f"{base}/analysis_x"], arrays[f"{base}/analysis_y"],
                    arrays[f"{base}/enroll_x"], arrays[f"{base}/enroll_y"],
                ))
            elif role in ("dev", "test"):
                ds = SpeakerDataset(sid, arrays[f"{base}/train_x"], arrays[f"{base}/train_y"], *_empty(dim))
                (dev if role == "dev" else test).append(ds)
            elif role == "indicator":
                utts.append(arrays[f"indicator/{sid}/x"])
                ind_ids.append(sid)
    except KeyError as exc:
        raise DataError(f"corpus file lacks array {exc}") from exc
    return CorpusSplit(clients, dev, test, IndicatorSet(utts, ind_ids), arrays["prototypes"], params, meta["seed"])
