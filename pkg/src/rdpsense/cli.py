"""Command-line entry point: ``rdpsense <command> [options]``.

Every command writes its artifacts plus a ``<artifact>.manifest.json``
sidecar holding the run configuration, its SHA-256 and the seeds. Exit
status is 0 on success, 1 for invalid input or configuration and 2 when
processing fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .capture import Endpoint, Transport, assemble_conversations, read_pcap
from .errors import ConfigError, EmptyData, MissingLabel, ProcessingError, ValidationError
from .ensemble import ensemble_score
from .flowstats import features_matrix
from .learners import KINDS, ModelSpec, confusion
from .pipeline import Evaluation, PipelineConfig, evaluate, fit_pipeline, rank_class
from .schema import BASE_ATTRIBUTES, FeatureMatrix, matrix_to_csv, read_features
from .selection import select_attributes
from .sidechannel import analyze_window, report_json
from .synthgen import ActivityProfile, generate_corpus, mixture_profiles
from .transforms import DerivedAttributes
from .windowing import CLASSES, attach_labels, segment_windows

log = logging.getLogger("rdpsense")

COMMANDS = ("extract", "transform", "rank", "train", "evaluate", "detect", "synth")


@dataclass
class RunConfig:
    command: str
    input: Path
    out: Path
    labels: Path | None = None
    local_ip: str | None = None
    transport: str = "tcp"
    window_sec: int = 30
    folds: int = 5
    inner_folds: int = 10
    seed: int = 0
    dct_index: int = 1
    components: int = 20
    select_mass: float = 0.90
    select_cap: int = 20
    model: str = "RandomForest"

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.input.exists():
            raise ConfigError(f"input path does not exist: {self.input}")
        if self.labels is not None and not self.labels.exists():
            raise MissingLabel(f"label file does not exist: {self.labels}")
        if self.window_sec <= 0:
            raise ConfigError("--window-sec must be positive")
        if self.folds < 2 or self.inner_folds < 2:
            raise ConfigError("--folds and --inner-folds must be at least 2")
        if not 0 < self.select_mass <= 1:
            raise ConfigError("--select-mass must lie in (0, 1]")
        if self.select_cap < 1 or self.components < 1 or self.dct_index < 0:
            raise ConfigError("--select-cap and --components must be >= 1, --dct-index >= 0")
        if self.model not in KINDS:
            raise ConfigError(f"--model must be one of {KINDS}")
        if self.command in ("extract", "detect"):
            if not self.local_ip:
                raise ConfigError(f"{self.command} needs --local-ip")
            self.endpoint  # noqa: B018  (parse check)

    @property
    def endpoint(self) -> Endpoint:
        try:
            return Endpoint.parse(self.local_ip or "")
        except ValueError as exc:
            raise ConfigError(f"--local-ip: {exc}") from None

    def to_dict(self) -> dict:
        return {k: str(v) if isinstance(v, Path) else v for k, v in vars(self).items()}

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            folds=self.folds, inner_folds=self.inner_folds, seed=self.seed,
            components=self.components, dct_index=self.dct_index,
            select_mass=self.select_mass, select_cap=self.select_cap,
            transport=self.transport.upper(),
        )


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _manifest(cfg: RunConfig, artifact: Path, **extra) -> None:
    body = {
        "version": __version__,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest,
        "seeds": {"seed": cfg.seed},
        "artifact": artifact.name,
        "artifact_sha256": hashlib.sha256(artifact.read_bytes()).hexdigest(),
        **extra,
    }
    _write(artifact.with_name(artifact.name + ".manifest.json"), json.dumps(body, indent=1, sort_keys=True) + "\n")


def _load_features(cfg: RunConfig, need_labels: bool = True) -> tuple[FeatureMatrix, np.ndarray | None]:
    matrix, labels = read_features(cfg.input.read_text(), str(cfg.input))
    if need_labels and labels is None:
        raise MissingLabel(f"{cfg.input}: feature file carries no labels")
    if len(matrix) == 0:
        raise EmptyData(f"{cfg.input}: no rows")
    return matrix, labels


def _windows(cfg: RunConfig, pcap: Path, labels: Path | None):
    parsed = read_pcap(pcap, cfg.endpoint)
    records = parsed.records
    if cfg.transport == "tcp":
        records = [r for r in records if r.transport is Transport.TCP]
    windows = segment_windows(assemble_conversations(records), cfg.window_sec * 1_000_000)
    if labels is not None:
        try:
            windows = attach_labels(windows, labels.read_text())
        except MissingLabel as exc:
            raise MissingLabel(f"{labels}: {exc}") from None
    return windows, parsed.skipped


def _corpus_pairs(cfg: RunConfig) -> list[tuple[Path, Path | None]]:
    if cfg.input.is_dir():
        index = cfg.input / "traces.csv"
        if not index.exists():
            raise ConfigError(f"{cfg.input}: directory input needs a traces.csv index")
        rows = list(csv.DictReader(io.StringIO(index.read_text())))
        return [(cfg.input / r["trace"], cfg.input / r["labels"]) for r in rows]
    if cfg.labels is None:
        raise MissingLabel(f"extract needs --labels for {cfg.input}")
    return [(cfg.input, cfg.labels)]


def cmd_extract(cfg: RunConfig) -> list[Path]:
    windows, skipped = [], 0
    for pcap, labels in _corpus_pairs(cfg):
        if labels is not None and not labels.exists():
            raise MissingLabel(f"label file does not exist: {labels}")
        w, s = _windows(cfg, pcap, labels)
        windows += w
        skipped += s
    if not windows:
        raise EmptyData(f"{cfg.input}: no packets from the local endpoint")
    matrix, labels = features_matrix(windows)
    out = _write(cfg.out, matrix_to_csv(matrix, labels))
    _manifest(cfg, out, windows=len(windows), skipped_packets=skipped)
    return [out]


def cmd_transform(cfg: RunConfig) -> list[Path]:
    matrix, labels = _load_features(cfg, need_labels=False)
    derived = DerivedAttributes(cfg.components, cfg.dct_index, cfg.seed).fit(matrix.select(BASE_ATTRIBUTES))
    full = derived.transform(matrix.select(BASE_ATTRIBUTES))
    out = _write(cfg.out, matrix_to_csv(full, labels))
    proj = _write(cfg.out.with_name(cfg.out.stem + ".projections.json"),
                  json.dumps(derived.to_dict(), indent=1, sort_keys=True) + "\n")
    _manifest(cfg, out, svd_converged=True, ica_converged=derived.ica.converged, ica_iterations=derived.ica.n_iter)
    _manifest(cfg, proj)
    return [out, proj]


def cmd_rank(cfg: RunConfig) -> list[Path]:
    matrix, labels = _load_features(cfg)
    pcfg = cfg.pipeline()
    if cfg.model != pcfg.rank_spec.kind:
        pcfg = replace(pcfg, rank_spec=ModelSpec(cfg.model, name=f"rank-{cfg.model}"))
    outs = []
    for j, cls in enumerate(CLASSES):
        report = rank_class(matrix, labels[:, j], cls, pcfg, cfg.seed + j)
        sel = select_attributes(report, cfg.select_mass, cfg.select_cap)
        out = _write(cfg.out / f"rank_{cls}.csv", report.to_csv())
        _manifest(cfg, out, rank_model=pcfg.rank_spec.to_dict(), selected=list(sel.names), degenerate=sel.degenerate)
        outs.append(out)
    return outs


def cmd_train(cfg: RunConfig) -> list[Path]:
    matrix, labels = _load_features(cfg)
    fitted = fit_pipeline(matrix.select(BASE_ATTRIBUTES), labels, cfg.pipeline())
    model = _write(cfg.out / "ensemble.json", json.dumps(fitted.to_dict(), sort_keys=True) + "\n")
    _manifest(cfg, model)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "spec", "mean_accuracy", "std_accuracy", "precision", "recall", "f1", "committee"])
    for cls, fit in fitted.classes.items():
        members = {m.spec.name for m in fitted.ensemble.committees[cls].members}
        for name, res in fit.cv.items():
            s = res.summary()
            w.writerow([cls, name, *(format(s[k], ".17g") for k in ("mean_accuracy", "std_accuracy", "precision", "recall", "f1")), int(name in members)])
    cv = _write(cfg.out / "cross_validation.csv", buf.getvalue())
    _manifest(cfg, cv)
    outs = [model, cv]
    pred = fitted.predict(matrix.select(BASE_ATTRIBUTES))
    ev = Evaluation({c: confusion(pred[:, j], labels[:, j]) for j, c in enumerate(CLASSES)},
                    [ensemble_score(pred, labels)], pred)
    report = _write(cfg.out / "training_report.csv", ev.report_csv(cfg.transport.upper()))
    _manifest(cfg, report, note="resubstitution on the training rows")
    return outs + [report]


def cmd_evaluate(cfg: RunConfig) -> list[Path]:
    matrix, labels = _load_features(cfg)
    ev = evaluate(matrix.select(BASE_ATTRIBUTES), labels, cfg.pipeline())
    report = _write(cfg.out / "report.csv", ev.report_csv(cfg.transport.upper()))
    scores = _write(cfg.out / "fold_scores.csv", ev.scores_csv())
    detail = _write(cfg.out / "evaluation.json", json.dumps({
        "committees": ev.committees,
        "selections": [{c: list(v) for c, v in s.items()} for s in ev.selections],
        "fold_scores": ev.fold_scores,
        "mean_score": ev.mean_score,
    }, indent=1, sort_keys=True) + "\n")
    for p in (report, scores, detail):
        _manifest(cfg, p)
    return [report, scores, detail]


def cmd_detect(cfg: RunConfig) -> list[Path]:
    windows, _ = _windows(cfg, cfg.input, cfg.labels)
    if not windows:
        raise EmptyData(f"{cfg.input}: no packets from the local endpoint")
    out = _write(cfg.out, report_json([analyze_window(w) for w in windows]) + "\n")
    _manifest(cfg, out)
    return [out]


def _profiles(cfg: RunConfig) -> list[ActivityProfile]:
    try:
        spec = json.loads(cfg.input.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{cfg.input}:{exc.lineno}: {exc.msg}") from None
    if isinstance(spec, dict) and "mixture" in spec:
        m = spec["mixture"]
        return mixture_profiles(int(m.get("total", 600)), int(m.get("seed", cfg.seed)),
                                str(m.get("transport", cfg.transport)).upper(), float(m.get("duration", 30.0)))
    if isinstance(spec, dict):
        spec = spec.get("profiles", [])
    if not isinstance(spec, list):
        raise ConfigError(f"{cfg.input}: expected a list of profiles or a mixture object")
    return [ActivityProfile.from_dict(p) for p in spec]


def cmd_synth(cfg: RunConfig) -> list[Path]:
    out = generate_corpus(_profiles(cfg), cfg.out)
    _manifest(cfg, out / "manifest.csv")
    _manifest(cfg, out / "traces.csv")
    return [out / "manifest.csv", out / "traces.csv"]


HANDLERS = {
    "extract": cmd_extract, "transform": cmd_transform, "rank": cmd_rank, "train": cmd_train,
    "evaluate": cmd_evaluate, "detect": cmd_detect, "synth": cmd_synth,
}

HELP = {
    "extract": "pcap + labels (or a synth corpus directory) -> feature CSV",
    "transform": "feature CSV -> CSV with dct_col, svd*, ica* + projections JSON",
    "rank": "augmented feature CSV -> per-class Shapley ranking CSVs",
    "train": "feature CSV -> ensemble manifest and cross-validation table",
    "evaluate": "feature CSV -> cross-validated per-class report and fold scores",
    "detect": "pcap -> keystroke/mouse side-channel JSON",
    "synth": "profile JSON -> synthetic corpus directory",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdpsense", description="RDP activity detection from encrypted traffic statistics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--input", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--labels", type=Path)
        p.add_argument("--local-ip", help="local endpoint as IP or IP:port")
        p.add_argument("--transport", choices=("tcp", "udp"), default="tcp",
                       help="tcp keeps TCP conversations only; udp keeps TCP and UDP")
        p.add_argument("--window-sec", type=int, default=30)
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--inner-folds", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dct-index", type=int, default=1)
        p.add_argument("--components", type=int, default=20)
        p.add_argument("--select-mass", type=float, default=0.90)
        p.add_argument("--select-cap", type=int, default=20)
        p.add_argument("--model", default="RandomForest", help="learner explained by `rank`")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(cfg: RunConfig) -> int:
    try:
        cfg.validate()
        for path in HANDLERS[cfg.command](cfg):
            log.info("wrote %s", path)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ProcessingError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    verbose = args.pop("verbose")
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run(RunConfig(**args))


if __name__ == "__main__":
    sys.exit(main())
