"""End-to-end pipeline steps behind the CLI subcommands.

Output directory layout::

    config.ini                     effective configuration
    corpus.bin, manifest.json      generated corpus
    rounds.csv                     per-round participants and errors
    snapshots/round_{r}.bin        global model after round r
    clients/round_{r}/global.bin   model broadcast in round r (attack rounds only)
    clients/round_{r}/client_{id}.bin
    trials.csv, eer.csv, eer_by_layer.csv
    longitudinal.csv, local_vs_global.csv, summary.txt
"""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from fedprint import attack, data, federation, metrics
from fedprint.config import ExperimentConfig
from fedprint.errors import ArtifactError, ConfigError, OutputExistsError, ProtocolError
from fedprint.nn import load_params, save_params

log = logging.getLogger(__name__)

EER_CONVENTION = "# P_miss(t) = share of target scores < t; P_fa(t) = share of non-target scores >= t"


def fmt(x) -> str:
    """Nine significant digits, '.' decimal separator."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def write_csv(path: Path, header, rows, preamble: str | None = None) -> None:
    buf = io.StringIO()
    if preamble:
        buf.write(preamble + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -- config / corpus ------------------------------------------------------------

def resolve_config(config_path, out_dir, seed=None, threads=None) -> tuple[ExperimentConfig, Path]:
    """Load the config (explicit path, else ``out/config.ini``, else defaults) and apply overrides."""
    if config_path is not None:
        cfg = ExperimentConfig.load(config_path)
    elif out_dir is not None and (Path(out_dir) / "config.ini").is_file():
        cfg = ExperimentConfig.load(Path(out_dir) / "config.ini")
    else:
        cfg = ExperimentConfig()
    if seed is not None:
        cfg.seed = int(seed)
    if threads is not None:
        cfg.threads = int(threads)
    cfg.__post_init__()
    out = out_dir if out_dir is not None else cfg.out_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set [experiment] out_dir")
    return cfg, Path(out)


def _save_config(cfg: ExperimentConfig, out: Path) -> None:
    text = cfg.to_ini()
    path = out / "config.ini"
    if not path.exists() or path.read_text() != text:
        path.write_text(text)


def cmd_generate(cfg: ExperimentConfig, out: Path, corpus_dir: Path | None = None) -> data.CorpusSplit:
    """Write corpus and manifest to ``corpus_dir`` (default ``out``) and the config to ``out``."""
    target = Path(corpus_dir) if corpus_dir is not None else out
    out.mkdir(parents=True, exist_ok=True)
    corpus = data.generate(cfg.corpus, cfg.component_seed("corpus"))
    data.save_corpus(corpus, target)
    _save_config(cfg, out)
    log.info("corpus with %d clients written to %s", len(corpus.clients), target)
    return corpus


def load_matching_corpus(cfg: ExperimentConfig, directory: Path) -> data.CorpusSplit:
    directory = Path(directory)
    if not (directory / "corpus.bin").is_file() or not (directory / "manifest.json").is_file():
        raise ArtifactError(f"no corpus in {directory}; run 'generate' first")
    corpus = data.load_corpus(directory)
    if corpus.params != cfg.corpus or corpus.seed != cfg.component_seed("corpus"):
        raise ConfigError(f"corpus in {directory} was generated with a different configuration")
    return corpus


# -- train ---------------------------------------------------------------------

def _history_from_csv(out: Path, corpus) -> list[federation.RoundLog]:
    sizes = {d.speaker_id: d.num_train for d in corpus.clients}
    history = []
    for row in read_csv(out / "rounds.csv"):
        ids = [int(t) for t in row["participant_ids"].split(";") if t]
        metrics_ = {k: float(row[k]) / 100.0 for k in ("test_error", "dev_error")}
        history.append(federation.RoundLog(int(row["round"]), ids, [sizes[i] for i in ids],
                                           f"snapshots/round_{row['round']}.bin", metrics_))
    return history


def cmd_train(cfg: ExperimentConfig, out: Path, force: bool = False,
              corpus_dir: Path | None = None) -> federation.FederationState:
    corpus = load_matching_corpus(cfg, corpus_dir if corpus_dir is not None else out)
    produced = [out / "rounds.csv", out / "snapshots", out / "clients"]
    if any(p.exists() for p in produced) and not force:
        raise OutputExistsError(f"{out} already holds training output; pass --force to overwrite")
    for sub in ("snapshots", "clients"):
        target = out / sub
        if target.exists():
            for f in sorted(target.rglob("*.bin")):
                f.unlink()
    (out / "rounds.csv").unlink(missing_ok=True)
    for name in ("trials.csv", "eer.csv", "eer_by_layer.csv"):
        (out / name).unlink(missing_ok=True)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    _save_config(cfg, out)

    attack_rounds = set(cfg.attack_rounds)

    def persist(result: federation.RoundResult):
        ref = f"snapshots/round_{result.round}.bin"
        save_params(result.state.global_model, out / ref)
        result.log.global_snapshot_ref = ref
        if result.round in attack_rounds:
            rdir = out / "clients" / f"round_{result.round}"
            rdir.mkdir(parents=True, exist_ok=True)
            save_params(result.broadcast_model, rdir / "global.bin")
            for u in result.updates:
                save_params(u.params, rdir / f"client_{u.speaker_id}.bin")

    state = federation.run_federation(
        cfg.federation_config(), corpus, [metrics.eval_hook(corpus), persist], threads=cfg.threads
    )
    write_csv(
        out / "rounds.csv",
        ["round", "participant_ids", "n_total", "test_error", "dev_error"],
        (
            [e.round, ";".join(str(i) for i in e.participant_ids), e.n_total,
             100.0 * e.metrics["test_error"], 100.0 * e.metrics["dev_error"]]
            for e in state.history
        ),
    )
    return state


# -- attack --------------------------------------------------------------------

def load_round_models(out: Path, history, rounds) -> dict[int, attack.RoundModels]:
    by_round = {e.round: e for e in history}
    found = {}
    for r in rounds:
        rdir = out / "clients" / f"round_{r}"
        if r not in by_round or not (rdir / "global.bin").is_file():
            continue
        clients = {}
        for sid in by_round[r].participant_ids:
            path = rdir / f"client_{sid}.bin"
            if not path.is_file():
                raise ProtocolError(f"round {r}: stored model for client {sid} is missing")
            clients[sid] = load_params(path)
        found[r] = attack.RoundModels(load_params(rdir / "global.bin"), clients)
    return found


def cmd_attack(cfg: ExperimentConfig, out: Path, corpus_dir: Path | None = None) -> list[attack.TrialRecord]:
    corpus = load_matching_corpus(cfg, corpus_dir if corpus_dir is not None else out)
    if not (out / "rounds.csv").is_file():
        raise ArtifactError(f"no training output in {out}; run 'train' first")
    history = _history_from_csv(out, corpus)
    models = load_round_models(out, history, cfg.attack_rounds)
    if not models:
        raise ProtocolError(f"none of the attacked rounds {list(cfg.attack_rounds)} has stored models")
    missing = [r for r in cfg.attack_rounds if r not in models]
    if missing:
        raise ProtocolError(f"no stored models for round(s) {missing}")
    trials = attack.run_attack(history, corpus, models, cfg.attack_config(), threads=cfg.threads)
    write_csv(
        out / "trials.csv",
        ["round", "layer", "enroll_id", "test_id", "score", "is_target"],
        ([t.round, t.layer, t.enrollment_speaker_id, t.test_model_speaker_id, t.score, t.is_target]
         for t in trials),
    )
    rows = attack.eer_table(trials)
    write_csv(
        out / "eer.csv",
        ["round", "layer", "eer", "num_target", "num_nontarget"],
        ([r.round, r.layer, r.eer, r.num_target, r.num_nontarget] for r in rows),
        preamble=EER_CONVENTION,
    )
    write_csv(out / "eer_by_layer.csv", ["layer", "mean_eer"], attack.layer_average(rows).items())
    return trials


# -- report --------------------------------------------------------------------

REQUIRED = ("config.ini", "rounds.csv", "eer.csv")
CORPUS_FILES = ("manifest.json", "corpus.bin")


def trend_direction(xs, ys) -> tuple[str, float]:
    if len(xs) < 2 or len(set(ys)) < 2:
        return "flat", 0.0
    rho = float(spearmanr(xs, ys)[0])
    if rho == 0.0:
        return "flat", 0.0
    return ("increasing" if rho > 0 else "decreasing"), rho


def cmd_report(out: Path, corpus_dir: Path | None = None) -> str:
    out = Path(out)
    source = Path(corpus_dir) if corpus_dir is not None else out
    missing = [str(out / name) for name in REQUIRED if not (out / name).exists()]
    missing += [str(source / name) for name in CORPUS_FILES if not (source / name).exists()]
    if missing:
        raise ArtifactError(f"missing artifacts: {', '.join(missing)}")
    cfg = ExperimentConfig.load(out / "config.ini")
    corpus = load_matching_corpus(cfg, source)
    history = _history_from_csv(out, corpus)
    snapshots = {}
    for e in history:
        path = out / f"snapshots/round_{e.round}.bin"
        if not path.is_file():
            raise ArtifactError(f"missing snapshot {path}")
        snapshots[e.round] = load_params(path)

    best = metrics.best_round(history)
    best_entry = next(e for e in history if e.round == best)
    coverage = federation.participation_summary(history, len(corpus.clients))

    tracked = metrics.select_tracked_speakers(history, corpus, cfg.tracked_round, cfg.tracked_speakers)
    series = metrics.longitudinal_eval(snapshots, tracked, corpus, history)
    write_csv(
        out / "longitudinal.csv",
        ["speaker", "round", "error", "participated"],
        ([s.speaker_id, r, 100.0 * err, flag] for s in series for r, err, flag in s.points),
    )
    table = metrics.local_vs_global(snapshots[best], corpus, tracked, cfg.train, cfg.component_seed("report"))
    write_csv(
        out / "local_vs_global.csv",
        ["speaker", "global_error_analysis", "local_error_analysis", "local_error_test"],
        ([r.speaker_id, 100.0 * r.global_error_analysis, 100.0 * r.local_error_analysis,
          100.0 * r.local_error_test] for r in table.rows),
    )

    eer_rows = [attack.EERRow(int(r["round"]), int(r["layer"]), float(r["eer"]),
                              int(r["num_target"]), int(r["num_nontarget"]))
                for r in read_csv(out / "eer.csv")]
    by_layer = attack.layer_average(eer_rows)
    by_round = attack.round_average(eer_rows)
    layer_dir, layer_rho = trend_direction(list(by_layer), list(by_layer.values()))
    round_dir, round_rho = trend_direction(list(by_round), list(by_round.values()))

    lines = [
        f"rounds run: {len(history)}",
        f"best round (lowest dev error): {best}",
        f"  test error at best round: {100.0 * best_entry.metrics['test_error']:.2f}%",
        f"  test error round 1 -> last: {100.0 * history[0].metrics['test_error']:.2f}% -> "
        f"{100.0 * history[-1].metrics['test_error']:.2f}%",
        f"participation: {coverage['distinct_participants']} of {coverage['total_clients']} clients "
        f"({100.0 * coverage['fraction']:.1f}%)",
        f"tracked speakers: {', '.join(str(s) for s in tracked) or 'none'}",
        f"  local beats-or-ties global on own analysis: {100.0 * table.personalization_rate:.0f}%"
        if table.rows else "  local vs global: no tracked speakers",
        f"  test error, global {100.0 * table.global_error_test:.2f}% vs mean local "
        f"{100.0 * table.mean_local_error_test:.2f}%" if table.rows else "",
        "EER by layer (mean over rounds): "
        + ", ".join(f"L{h}={100.0 * v:.1f}%" for h, v in by_layer.items()),
        f"EER trend over layers: {layer_dir} (spearman {layer_rho:+.2f})",
        "EER by round (mean over layers): "
        + ", ".join(f"r{r}={100.0 * v:.1f}%" for r, v in by_round.items()),
        f"EER trend over rounds: {round_dir} (spearman {round_rho:+.2f})",
        EER_CONVENTION.lstrip("# "),
    ]
    text = "\n".join(line for line in lines if line) + "\n"
    (out / "summary.txt").write_text(text)
    return text
