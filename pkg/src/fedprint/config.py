"""Experiment configuration: one INI file with one section per component.

Every stochastic component gets its seed from ``[experiment] seed`` through
:func:`fedprint.seeding.derive_seed` with the component name ("corpus",
"federation", "attack", "report").
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from fedprint.attack import AttackConfig
from fedprint.data import CorpusParams
from fedprint.errors import ConfigError
from fedprint.federation import DEFAULT_HIDDEN, FederationConfig
from fedprint.nn import TrainConfig
from fedprint.seeding import derive_seed

DEFAULT_SEED = 1234


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(";", ",").split(",") if tok.strip())


def _join(values) -> str:
    return ", ".join(str(v) for v in values)


@dataclass
class ExperimentConfig:
    corpus: CorpusParams = field(default_factory=CorpusParams)
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN
    clients_per_round: int = 10
    rounds: int = 30
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, learning_rate=0.1, batch_size=32))
    enrollment_speakers: int = 20
    enrollment_frames: int = 250
    attack_rounds: tuple[int, ...] = (3, 5, 10, 20, 30)
    attack_layers: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    tracked_round: int = 5
    tracked_speakers: int = 5
    seed: int = DEFAULT_SEED
    threads: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.corpus.validate()
        if self.enrollment_frames > self.corpus.enroll_frames:
            raise ConfigError(
                f"attack.enrollment_frames={self.enrollment_frames} exceeds corpus.enroll_frames="
                f"{self.corpus.enroll_frames}"
            )
        if max(self.attack_layers) > len(self.hidden_dims):
            raise ConfigError(f"attack layers must lie in [1, {len(self.hidden_dims)}]")
        # surface sub-config errors at parse time
        self.federation_config()
        self.attack_config()

    def component_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    def federation_config(self) -> FederationConfig:
        return FederationConfig(
            total_clients=self.corpus.num_clients,
            clients_per_round=self.clients_per_round,
            rounds=self.rounds,
            train_cfg=self.train,
            seed=self.component_seed("federation"),
            hidden_dims=tuple(self.hidden_dims),
        )

    def attack_config(self) -> AttackConfig:
        return AttackConfig(
            enrollment_speakers=self.enrollment_speakers,
            enrollment_frames=self.enrollment_frames,
            finetune_cfg=self.train,
            layers=tuple(self.attack_layers),
            rounds=tuple(self.attack_rounds),
            seed=self.component_seed("attack"),
        )

    # -- INI round trip ------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {"seed": str(self.seed), "threads": str(self.threads)}
        if self.out_dir is not None:
            cp["experiment"]["out_dir"] = str(self.out_dir)
        cp["corpus"] = {f.name: repr(getattr(self.corpus, f.name)) for f in fields(CorpusParams)}
        cp["model"] = {"hidden_dims": _join(self.hidden_dims)}
        cp["federation"] = {"clients_per_round": str(self.clients_per_round), "rounds": str(self.rounds)}
        cp["train"] = {
            "epochs": str(self.train.epochs),
            "learning_rate": repr(self.train.learning_rate),
            "batch_size": str(self.train.batch_size),
        }
        cp["attack"] = {
            "enrollment_speakers": str(self.enrollment_speakers),
            "enrollment_frames": str(self.enrollment_frames),
            "rounds": _join(self.attack_rounds),
            "layers": _join(self.attack_layers),
        }
        cp["report"] = {
            "tracked_round": str(self.tracked_round),
            "tracked_speakers": str(self.tracked_speakers),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> ExperimentConfig:
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        known = {"experiment", "corpus", "model", "federation", "train", "attack", "report"}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        def section(name, allowed):
            sec = cp[name] if cp.has_section(name) else {}
            extra = set(sec) - set(allowed)
            if extra:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
            return sec

        kw = {}
        try:
            exp = section("experiment", {"seed", "threads", "out_dir"})
            if "seed" in exp:
                kw["seed"] = int(exp["seed"])
            if "threads" in exp:
                kw["threads"] = int(exp["threads"])
            if "out_dir" in exp:
                kw["out_dir"] = exp["out_dir"]

            corpus_types = {f.name: f.type for f in fields(CorpusParams)}
            sec = section("corpus", corpus_types)
            defaults = CorpusParams()
            corpus_kw = {}
            for key, value in sec.items():
                caster = float if isinstance(getattr(defaults, key), float) else int
                corpus_kw[key] = caster(value)
            kw["corpus"] = CorpusParams(**corpus_kw)

            sec = section("model", {"hidden_dims"})
            if "hidden_dims" in sec:
                kw["hidden_dims"] = _ints(sec["hidden_dims"])

            sec = section("federation", {"clients_per_round", "rounds"})
            for key in sec:
                kw[key] = int(sec[key])

            sec = section("train", {"epochs", "learning_rate", "batch_size"})
            base = cls().train
            kw["train"] = TrainConfig(
                epochs=int(sec.get("epochs", base.epochs)),
                learning_rate=float(sec.get("learning_rate", base.learning_rate)),
                batch_size=int(sec.get("batch_size", base.batch_size)),
            )

            sec = section("attack", {"enrollment_speakers", "enrollment_frames", "rounds", "layers"})
            if "enrollment_speakers" in sec:
                kw["enrollment_speakers"] = int(sec["enrollment_speakers"])
            if "enrollment_frames" in sec:
                kw["enrollment_frames"] = int(sec["enrollment_frames"])
            if "rounds" in sec:
                kw["attack_rounds"] = _ints(sec["rounds"])
            if "layers" in sec:
                kw["attack_layers"] = _ints(sec["layers"])

            sec = section("report", {"tracked_round", "tracked_speakers"})
            for key in sec:
                kw[key] = int(sec[key])
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_ini(path.read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())
