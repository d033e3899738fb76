"""Command line front end: features, augment, train, eval, quantize, audit.

Commands talk to each other only through files: TSV manifests, FEAT feature
files with an ``index.tsv``, LASC model files and CSV reports.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import augment, corpus, features, params, quantize, train
from .evaluate import accuracy, per_scene_report, predict_labels
from .nn.network import PRESETS, check_params, predict_proba

log = logging.getLogger("liteasc")

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2


class CommandError(Exception):
    """A validation problem reported to the user with exit status 1."""


# -- pipeline config --------------------------------------------------------------

def _floats(text: str):
    return tuple(float(v) for v in _split_list(text))


def _ints(text: str):
    return tuple(int(v) for v in _split_list(text))


def _strs(text: str):
    return tuple(_split_list(text))


def _split_list(text: str) -> List[str]:
    return [v.strip() for v in text.replace(";", ",").split(",") if v.strip()]


def _flag(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass
class PipelineConfig:
    network: str = "paper"
    tiny_channels: int = 4
    n_mels: int = features.N_MELS
    target_width: int = features.TARGET_WIDTH
    batch_size: int = 16
    epochs: int = 100
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    seeds: Optional[tuple] = None
    mixup: bool = False
    alpha: float = 0.4
    n_pairs: int = 150
    pitch_factors: tuple = (0.90, 0.95, 1.05, 1.10)
    audiomix_low: float = 0.4
    audiomix_high: float = 0.6
    reference_devices: Optional[tuple] = None
    train_manifest: Optional[Path] = None
    val_manifest: Optional[Path] = None
    feature_dir: Optional[Path] = None
    model_dir: Optional[Path] = None
    report_dir: Optional[Path] = None

    PARSERS = {
        "network": str, "tiny_channels": int, "n_mels": int, "target_width": int,
        "batch_size": int, "epochs": int, "lr_max": float, "lr_min": float,
        "seeds": _ints, "mixup": _flag, "alpha": float, "n_pairs": int,
        "pitch_factors": _floats, "audiomix_low": float, "audiomix_high": float,
        "reference_devices": _strs,
    }
    PATHS = ("train_manifest", "val_manifest", "feature_dir", "model_dir", "report_dir")

    @classmethod
    def from_text(cls, text: str, base: Path = Path(".")) -> "PipelineConfig":
        """Parse ``key = value`` lines (``#`` comments); relative paths hang off ``base``."""
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CommandError(f"config line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in cls.PATHS:
                path = Path(value)
                setattr(cfg, key, (path if path.is_absolute() else base / path).resolve())
            elif key in cls.PARSERS:
                try:
                    setattr(cfg, key, cls.PARSERS[key](value))
                except ValueError as exc:
                    raise CommandError(f"config line {lineno}: bad value for {key}: {exc}") from None
            else:
                raise CommandError(f"config line {lineno}: unknown key {key!r}")
        if cfg.network not in PRESETS:
            raise CommandError(f"unknown network preset {cfg.network!r} (choose from {sorted(PRESETS)})")
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), path.parent.resolve())

    def network_config(self, input_shape):
        if self.network == "tiny":
            return PRESETS["tiny"](input_shape, channels=self.tiny_channels)
        return PRESETS[self.network](input_shape)

    def augment_config(self) -> augment.AugmentConfig:
        return augment.AugmentConfig(self.alpha, self.n_pairs, tuple(self.pitch_factors),
                                     (self.audiomix_low, self.audiomix_high),
                                     self.reference_devices)


# -- feature index ------------------------------------------------------------------

INDEX_NAME = "index.tsv"


def _feature_name(record_path: str, suffix: str = ".feat") -> str:
    stem = Path(record_path).with_suffix("")
    return "__".join(p for p in stem.parts if p not in ("/", "..", ".")) + suffix


def _read_index(feature_dir: Path) -> Dict[str, Path]:
    index_path = feature_dir / INDEX_NAME
    if not index_path.exists():
        raise CommandError(f"{feature_dir}: no {INDEX_NAME}; run the features command first")
    out = {}
    for lineno, line in enumerate(index_path.read_text(encoding="utf-8").splitlines(), start=1):
        if lineno == 1 and line.startswith("clip\t"):
            continue
        if not line.strip():
            continue
        clip, feat = line.split("\t")[:2]
        out[str((feature_dir / clip).resolve())] = (feature_dir / feat).resolve()
    return out


def load_dataset(manifest: corpus.CorpusManifest, cfg: PipelineConfig,
                 feature_dir: Optional[Path] = None) -> train.Dataset:
    """Features for every record: from a feature index when given, else extracted on the spot."""
    index = _read_index(feature_dir) if feature_dir is not None else None
    feats, labels = [], []
    for rec in manifest:
        source = manifest.resolve(rec).resolve()
        if index is not None:
            if str(source) not in index:
                raise CommandError(f"{rec.path}: not in the feature index of {feature_dir}")
            feats.append(features.read_feature(index[str(source)]))
        elif source.suffix == ".feat":
            feats.append(features.read_feature(source))
        else:
            clip = corpus.read_wav(source)
            feats.append(features.extract_feature(clip, cfg.n_mels, cfg.target_width))
        labels.append(rec.label)
    if not feats:
        raise CommandError("manifest has no records")
    shapes = {f.shape for f in feats}
    if len(shapes) > 1:
        raise CommandError(f"feature shapes differ across the manifest: {sorted(shapes)}")
    return train.Dataset(np.stack(feats), np.array(labels))


# -- commands -----------------------------------------------------------------------

def cmd_features(manifest_path, out_dir, cfg: PipelineConfig) -> int:
    manifest = corpus.load_manifest(manifest_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index_path = out / INDEX_NAME
    rows: Dict[str, tuple] = {}
    if index_path.exists():
        for line in index_path.read_text(encoding="utf-8").splitlines()[1:]:
            if line.strip():
                cols = tuple(line.split("\t"))
                rows[cols[0]] = cols
    written, failed = 0, 0
    for rec in manifest:
        source = manifest.resolve(rec).resolve()
        clip_key = corpus.relpath(source, out.resolve())
        target = out / _feature_name(clip_key)
        try:
            if source.suffix == ".feat":
                feat = features.read_feature(source)
            else:
                feat = features.extract_feature(corpus.read_wav(source), cfg.n_mels, cfg.target_width)
        except (OSError, ValueError) as exc:
            log.error("%s: %s", rec.path, exc)
            failed += 1
            continue
        features.write_feature(target, feat)
        rows[clip_key] = (clip_key, target.name, rec.scene, rec.device, rec.city)
        written += 1
    lines = ["clip\tfeature\tscene\tdevice\tcity"] + ["\t".join(r) for r in rows.values()]
    index_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote %d feature files to %s (%d failed)", written, out, failed)
    return EXIT_PARTIAL if failed else EXIT_OK


def _param(step: augment.PlanStep, key: str, default, parse=float):
    if key not in step.params:
        return default
    try:
        return parse(step.params[key])
    except ValueError as exc:
        raise CommandError(f"{step.technique}: bad value for {key}: {exc}") from None


def _augment_pitch(step, manifest, out, cfg, records_out):
    if "factor" in step.params:
        factors = (_param(step, "factor", 1.0),)
    else:
        factors = _param(step, "factors", cfg.pitch_factors, _floats)
    for rec in manifest:
        source = manifest.resolve(rec)
        for factor in factors:
            name = f"{_feature_name(rec.path, '')}.pitch{factor:g}.wav"
            if factor == 1.0:
                shutil.copyfile(source, out / name)
            else:
                shifted = augment.pitch_shift(corpus.read_wav(source), factor)
                corpus.write_wav(out / name, shifted)
            records_out.append(corpus.Record(name, rec.scene, rec.device, rec.city, "pitch"))


def _augment_audiomix(step, manifest, out, cfg, rng, records_out):
    low = _param(step, "low", cfg.audiomix_low)
    high = _param(step, "high", cfg.audiomix_high)
    count = _param(step, "count", 1, int)
    by_scene: Dict[str, List[corpus.Record]] = {}
    for rec in manifest:
        by_scene.setdefault(rec.scene, []).append(rec)
    for rec in manifest:
        peers = [r for r in by_scene[rec.scene] if r is not rec] or [rec]
        a = corpus.read_wav(manifest.resolve(rec))
        for k in range(count):
            other = peers[int(rng.integers(len(peers)))]
            b = corpus.read_wav(manifest.resolve(other))
            if len(b) != len(a):
                raise CommandError(f"audiomix: {rec.path} and {other.path} differ in length")
            mixed = augment.audio_mix(a, b, rec.scene, other.scene, rng, (low, high))
            name = f"{_feature_name(rec.path, '')}.audiomix{k}.wav"
            corpus.write_wav(out / name, mixed)
            device = rec.device if other.device == rec.device else f"{rec.device}+{other.device}"
            records_out.append(corpus.Record(name, rec.scene, device, rec.city, "audiomix"))


def _augment_speccorr(step, manifest, out, cfg, records_out):
    n_pairs = _param(step, "n_pairs", cfg.n_pairs, int)
    reference = _param(step, "reference", cfg.reference_devices, _strs)
    by_device: Dict[str, List[corpus.Record]] = {}
    for rec in manifest:
        by_device.setdefault(rec.device, []).append(rec)
    short = {d: len(rs) for d, rs in by_device.items() if len(rs) < n_pairs}
    if short:
        raise CommandError(f"speccorr needs {n_pairs} clips per device; too few for {short}")
    spectra = {d: [features.spectrogram(corpus.read_wav(manifest.resolve(r))) for r in rs[:n_pairs]]
               for d, rs in by_device.items()}
    try:
        coeffs = augment.device_corrections(spectra, n_pairs, reference)
    except ValueError as exc:
        raise CommandError(f"speccorr: {exc}") from None
    for rec in manifest:
        clip = corpus.read_wav(manifest.resolve(rec))
        feat = features.extract_feature(clip, cfg.n_mels, cfg.target_width, correction=coeffs[rec.device])
        name = f"{_feature_name(rec.path, '')}.speccorr.feat"
        features.write_feature(out / name, feat)
        records_out.append(corpus.Record(name, rec.scene, rec.device, rec.city, "speccorr"))


def cmd_augment(manifest_path, plan_path, out_dir, cfg: PipelineConfig, seed: int) -> int:
    manifest = corpus.load_manifest(manifest_path)
    try:
        steps = augment.expand_plan(augment.parse_plan(Path(plan_path).read_text(encoding="utf-8")))
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = [corpus.Record(corpus.relpath(manifest.resolve(r).resolve(), out.resolve()),
                             r.scene, r.device, r.city, r.source) for r in manifest]
    train_plan = []
    for step in steps:
        log.info("augment: %s %s", step.technique, step.params)
        if step.technique == "pitch":
            _augment_pitch(step, manifest, out, cfg, records)
        elif step.technique == "audiomix":
            _augment_audiomix(step, manifest, out, cfg, rng, records)
        elif step.technique == "speccorr":
            _augment_speccorr(step, manifest, out, cfg, records)
        elif step.technique == "mixup":
            alpha = _param(step, "alpha", cfg.alpha)
            train_plan.append(f"mixup\talpha={alpha:g}")
    corpus.save_manifest(out / "manifest.tsv", corpus.CorpusManifest(records))
    if train_plan:
        (out / "train_plan.tsv").write_text("\n".join(train_plan) + "\n", encoding="utf-8")
    return EXIT_OK


def _apply_train_plan(plan_path, cfg: PipelineConfig) -> None:
    for step in augment.expand_plan(augment.parse_plan(Path(plan_path).read_text(encoding="utf-8"))):
        if step.technique == "mixup":
            cfg.mixup = True
            cfg.alpha = _param(step, "alpha", cfg.alpha)
        else:
            log.warning("train plan: %s is an offline technique; run the augment command for it", step.technique)


def _require(value, what):
    if value is None:
        raise CommandError(f"missing {what} (pass it as an option or set it in --config)")
    return value


def cmd_train(cfg: PipelineConfig, seed: int, plan=None) -> int:
    train_manifest = corpus.load_manifest(_require(cfg.train_manifest, "train manifest"))
    val_manifest = corpus.load_manifest(_require(cfg.val_manifest, "validation manifest"))
    model_dir = _require(cfg.model_dir, "model directory")
    if plan is not None:
        _apply_train_plan(plan, cfg)
    train_set = load_dataset(train_manifest, cfg, cfg.feature_dir)
    val_set = load_dataset(val_manifest, cfg, cfg.feature_dir)
    net = cfg.network_config(train_set.features.shape[1:])
    seeds = cfg.seeds or (seed, seed + 1, seed + 2)
    tcfg = train.TrainConfig(batch_size=cfg.batch_size, epochs=cfg.epochs, lr_max=cfg.lr_max,
                             lr_min=cfg.lr_min, seeds=seeds, mixup=cfg.mixup, alpha=cfg.alpha)
    report = train.train_run(tcfg, train_set, val_set, net, model_dir)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, manifest_path, model_paths: Sequence[Path], report_dir) -> int:
    manifest = corpus.load_manifest(manifest_path)
    data = load_dataset(manifest, cfg, cfg.feature_dir)
    net = cfg.network_config(data.features.shape[1:])
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    devices = [r.device for r in manifest]
    summary, accs = [], []
    for path in model_paths:
        model = params.load_model(path)
        try:
            check_params(model, net)
        except ValueError as exc:
            raise CommandError(f"{path}: {exc}") from None
        probs = predict_proba(data.features, model, net)
        report = per_scene_report(probs, data.labels, devices=devices)
        stem = Path(path).stem
        (out / f"{stem}_scenes.csv").write_text(report.to_csv())
        (out / f"{stem}_confusion.csv").write_text(report.confusion_csv())
        acc = accuracy(predict_labels(probs), data.labels)
        accs.append(acc)
        summary.append(f"model={Path(path).name} accuracy={acc:.6f} logloss={report.overall_logloss:.6f} "
                       f"macro_accuracy={report.average_accuracy:.6f}")
    summary.append(f"mean_accuracy={float(np.mean(accs)):.6f}")
    text = "\n".join(summary) + "\n"
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_quantize(model_path, out_path, limit_kb: float) -> int:
    model = params.load_model(model_path)
    try:
        q = quantize.quantize_model(model)
    except ValueError as exc:
        raise CommandError(f"{model_path}: {exc}") from None
    params.save_model(out_path, q)
    print(quantize.audit_budget(q, limit_kb).summary())
    return EXIT_OK


def cmd_audit(model_path, limit_kb: float) -> int:
    model = params.load_model(model_path)
    try:
        report = quantize.audit_budget(model, limit_kb)
    except ValueError as exc:
        raise CommandError(f"{model_path}: {exc}") from None
    print(report.table())
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_INVALID


# -- argument parsing ----------------------------------------------------------------

def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global options; SUPPRESS keeps their defaults from
    # overwriting values given before the subcommand name.
    default = {"default": argparse.SUPPRESS} if suppress else {}
    opts = argparse.ArgumentParser(add_help=False)
    opts.add_argument("--config", type=Path, help="key = value pipeline config file", **default)
    opts.add_argument("--seed", type=int, help="base seed for every random choice (default 1)", **default)
    opts.add_argument("--verbose", "-v", action="store_true", **default)
    return opts


def build_parser() -> argparse.ArgumentParser:
    common = _global_options(suppress=True)
    parser = argparse.ArgumentParser(prog="liteasc", parents=[_global_options(suppress=False)],
                                     description="Low-complexity acoustic scene classification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", parents=[common], help="extract FEAT files for a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path)

    p = sub.add_parser("augment", parents=[common], help="apply an augmentation plan to a corpus")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("train", parents=[common], help="train one model per seed")
    p.add_argument("--train-manifest", type=Path)
    p.add_argument("--val-manifest", type=Path)
    p.add_argument("--feature-dir", type=Path)
    p.add_argument("--model-dir", type=Path)
    p.add_argument("--plan", type=Path, help="train-time plan written by the augment command")
    p.add_argument("--network", choices=sorted(PRESETS))
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", parents=[common], help="per-scene report for one or more models")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--feature-dir", type=Path)
    p.add_argument("--model", type=Path, action="append", required=True)
    p.add_argument("--report-dir", type=Path)
    p.add_argument("--network", choices=sorted(PRESETS))

    p = sub.add_parser("quantize", parents=[common], help="truncate a model to 16-bit words")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--limit-kb", type=float, default=quantize.DEFAULT_LIMIT_KB)

    p = sub.add_parser("audit", parents=[common], help="check the non-zero parameter budget")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--limit-kb", type=float, default=quantize.DEFAULT_LIMIT_KB)
    return parser


def _override(cfg: PipelineConfig, args, names):
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value.resolve() if isinstance(value, Path) else value)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    seed = 1 if args.seed is None else args.seed
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        if args.command == "features":
            out_dir = args.out_dir or cfg.feature_dir
            return cmd_features(args.manifest, _require(out_dir, "--out-dir"), cfg)
        if args.command == "augment":
            return cmd_augment(args.manifest, args.plan, args.out_dir, cfg, seed)
        if args.command == "train":
            _override(cfg, args, ("train_manifest", "val_manifest", "feature_dir", "model_dir",
                                  "network", "epochs"))
            return cmd_train(cfg, seed, args.plan)
        if args.command == "eval":
            _override(cfg, args, ("feature_dir", "report_dir", "network"))
            return cmd_eval(cfg, args.manifest, args.model, _require(cfg.report_dir, "--report-dir"))
        if args.command == "quantize":
            return cmd_quantize(args.model, args.out, args.limit_kb)
        if args.command == "audit":
            return cmd_audit(args.model, args.limit_kb)
    except CommandError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (corpus.ManifestError, corpus.WavError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    return EXIT_INVALID


def main() -> None:
    sys.exit(run())
