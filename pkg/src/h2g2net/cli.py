"""Command-line entry point: ``h2g2net {synth,train,loso,explain}``.

The JSON config file is the source of truth; flags override individual fields.
Config errors exit with status 2, failed runs with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .data import (RecordingManifest, SynthConfig, export_manifest, filter_modalities,
                   generate_synthetic, load_recordings, normalize_dataset)
from .graph import EYE_TRACKING, DatasetSchema, default_schema
from .interpret import export_json, extract_adjacency_sequence, write_heatmaps
from .layers import ModelConfig, load_checkpoint, save_checkpoint
from .numerics import ContractError
from .training import TrainConfig, TrainingAborted, loso_evaluate, train

log = logging.getLogger("h2g2net")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    schema: DatasetSchema
    model: ModelConfig
    train: TrainConfig
    manifest: Path | None = None
    synth: SynthConfig | None = None
    normalize: bool = True
    keep_modalities: list[str] | None = None
    jobs: int = 1
    raw: dict = field(default_factory=dict)

    def echo(self, schema: DatasetSchema | None = None) -> dict:
        schema = schema or self.schema
        return {
            "schema": schema.to_dict(),
            "modalities": schema.names,
            "model": asdict(self.model),
            "train": asdict(self.train),
            "data": ({"manifest": str(self.manifest)} if self.manifest is not None
                     else {"synth": self.synth.to_dict()}),
            "normalize": self.normalize,
            "keep_modalities": self.keep_modalities,
        }


def _build(cls, section: dict, where: str):
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ContractError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(path, require_data: bool = True) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        schema = DatasetSchema.from_dict(doc["schema"]) if "schema" in doc else default_schema()
    except (KeyError, TypeError, ContractError) as exc:
        raise ConfigError(f"{path}: bad schema ({exc})") from None
    model = _build(ModelConfig, doc.get("model", {}), "model")
    train_cfg = _build(TrainConfig, doc.get("train", {}), "train")
    data = doc.get("data", {})
    manifest = synth = None
    if "manifest" in data and "synth" in data:
        raise ConfigError("data: give exactly one of 'manifest' or 'synth'")
    if "manifest" in data:
        manifest = Path(data["manifest"])
        if not manifest.is_absolute():
            manifest = path.parent / manifest
        if not manifest.is_file():
            raise ConfigError(f"data.manifest: no such file {manifest}")
    elif "synth" in data:
        section = dict(data["synth"])
        section.setdefault("schema", schema.to_dict())
        try:
            synth = SynthConfig.from_dict(section)
            synth.validate()
        except (TypeError, KeyError, ContractError) as exc:
            raise ConfigError(f"data.synth: {exc}") from None
        schema = synth.schema
    elif require_data:
        raise ConfigError("data: need a 'manifest' path or a 'synth' section")
    keep = doc.get("keep_modalities")
    # synthetic data is z-scored like loaded data unless the config says otherwise
    return RunConfig(schema, model, train_cfg, manifest, synth, bool(doc.get("normalize", True)),
                     keep, int(doc.get("jobs", 1)), doc)


def load_dataset(cfg: RunConfig):
    if cfg.manifest is not None:
        result = load_recordings(RecordingManifest.from_file(cfg.manifest), cfg.schema,
                                 normalize=cfg.normalize)
        dataset = result.samples
        for subject, reasons in sorted(result.excluded.items()):
            log.warning("excluded subject %s: %s", subject, "; ".join(reasons))
    else:
        dataset = generate_synthetic(cfg.synth)
        if cfg.normalize:
            dataset = normalize_dataset(dataset)
    schema = cfg.schema
    if cfg.keep_modalities:
        try:
            dataset, schema = filter_modalities(dataset, schema, cfg.keep_modalities)
        except ContractError as exc:
            raise ConfigError(f"keep_modalities: {exc}") from None
    return dataset, schema


def write_loss_csv(path, history) -> None:
    lines = ["epoch,mean_loss"] + [f"{i},{loss!r}" for i, loss in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")


def _keep_from_flags(args, schema: DatasetSchema) -> list[str] | None:
    if getattr(args, "ablation", None) == "noetk":
        return [n for n in schema.names if n not in EYE_TRACKING]
    if getattr(args, "ablation", None) == "etk":
        return [n for n in schema.names if n in EYE_TRACKING]
    if getattr(args, "keep_modalities", None):
        return [s.strip() for s in args.keep_modalities.split(",") if s.strip()]
    return None


def cmd_synth(args) -> int:
    cfg = parse_config(args.config, require_data=False)
    if cfg.synth is None:
        raise ConfigError("synth: config needs a data.synth section")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(cfg.synth)
    manifest = export_manifest(dataset, cfg.synth.schema, out)
    provenance = {"seed": cfg.synth.seed, "synth": cfg.synth.to_dict(),
                  "samples": len(dataset), "version": __version__}
    (out / "provenance.json").write_text(json.dumps(provenance, indent=1) + "\n")
    print(f"wrote {len(dataset)} samples to {manifest}")
    return 0


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    keep = _keep_from_flags(args, cfg.schema)
    if keep is not None:
        cfg.keep_modalities = keep
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    dataset, schema = load_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, history = train(dataset, schema, cfg.model, cfg.train)
    echo = cfg.echo(schema)
    save_checkpoint(out / "checkpoint.json", params, schema, extra={"config_echo": echo})
    write_loss_csv(out / "loss.csv", history)
    print(f"trained on {len(dataset)} samples, final loss {history[-1]:.6f}")
    return 0


def cmd_loso(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    dataset, schema = load_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo(schema)
    report = loso_evaluate(dataset, schema, cfg.model, cfg.train, jobs=cfg.jobs, config_echo=echo)
    for fold in report.folds:
        fold_dir = out / f"fold_{fold.held_out_subject}"
        fold_dir.mkdir(exist_ok=True)
        save_checkpoint(fold_dir / "checkpoint.json", fold.params, schema,
                        extra={"config_echo": echo, "held_out_subject": fold.held_out_subject})
        write_loss_csv(fold_dir / "loss.csv", fold.loss_history)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    print(f"LOSO over {len(report.folds)} subjects ({len(schema)} modalities): "
          f"mean accuracy {report.mean_accuracy:.3f} +/- {report.std_accuracy:.3f}")
    return 0


def cmd_explain(args) -> int:
    try:
        params, schema = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq = extract_adjacency_sequence(params, schema)
    export_json(seq, out / "explain.json", k=args.top_k,
                extra={"checkpoint": str(args.checkpoint), "schema_hash": params.schema_hash})
    if not args.no_plots:
        write_heatmaps(seq, out)
    print(f"wrote interpretation of {len(seq)} layers to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="h2g2net", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic planted-flow dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for name, func, help_ in (("train", cmd_train, "train one model on the whole dataset"),
                              ("loso", cmd_loso, "leave-one-subject-out evaluation")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        group = p.add_mutually_exclusive_group()
        group.add_argument("--keep-modalities", help="comma-separated modality names")
        group.add_argument("--ablation", choices=("noetk", "etk"),
                           help="drop (noetk) or keep only (etk) PD, EO and GD")
        if name == "loso":
            p.add_argument("--jobs", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("explain", help="export learned adjacency, flows and meta-paths")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"h2g2net {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, TrainingAborted, OSError, ValueError) as exc:
        print(f"h2g2net {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
