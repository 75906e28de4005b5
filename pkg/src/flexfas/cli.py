"""flexfas command line: synth / train / eval / cost.

Anything structured lives in a YAML config validated against CONFIG_SCHEMA;
flags cover only paths, seed override, and verbosity. Outputs are written
atomically (temp file + rename) and stamped with the sha256 of the resolved
config, so every command is rerunnable.

Exit codes: 0 ok, 1 usage/config error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

import jsonschema
import yaml

from .backbones import ModelConfig
from .augment import DropModalConfig
from .core import FlexFasError
from .efficiency import cost_report
from .metrics import write_score_file
from .protocols import (
    RunMode,
    RunPlan,
    SampleSet,
    Split,
    evaluate_protocols,
    load_manifest,
    load_samples,
    standard_protocols,
    train_separate,
    train_unified,
)
from .synthgen import SynthConfig, generate, write_dataset
from .trainer import OptimizerKind, TrainConfig, load_checkpoint, save_checkpoint

from .core import Modality

SEED_ENV_VAR = "FLEXFAS_SEED"

_INT_PAIR = {
    "type": "array",
    "items": {"type": "integer", "minimum": 1},
    "minItems": 2,
    "maxItems": 2,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["output_dir"],
    "properties": {
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_subjects": {"type": "integer", "minimum": 1},
                "frames_per_subject": {"type": "integer", "minimum": 1},
                "image_size": _INT_PAIR,
                "separability": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "rgb": {"type": "number", "minimum": 0},
                        "depth": {"type": "number", "minimum": 0},
                        "ir": {"type": "number", "minimum": 0},
                    },
                },
                "noise_sigma": {"type": "number", "exclusiveMinimum": 0},
                "attack_ratio": {
                    "type": "number",
                    "exclusiveMinimum": 0,
                    "exclusiveMaximum": 1,
                },
                "pai_types": {"type": "array", "items": {"type": "string"}},
                "seed": {"type": "integer"},
                "out_dir": {"type": "string"},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "arch": {"enum": ["toy_cnn", "toy_resnet", "toy_vit"]},
                "shared": {"type": "boolean"},
                "fusion": {"enum": ["concat", "se", "cross_attention"]},
                "head": {"enum": ["binary_logit", "binary_map"]},
                "feature_channels": {"type": "integer", "minimum": 1},
                "se_reduction": {"type": "integer", "minimum": 1},
                "image_size": _INT_PAIR,
                "vit_patch_size": {"type": "integer", "minimum": 1},
            },
        },
        "trainer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "optimizer": {"enum": ["adam", "adamw"]},
                "learning_rate": {"type": "number", "minimum": 0},
                "epochs": {"type": "integer", "minimum": 1},
                "lr_halving_epoch": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "grad_clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "dropmodal": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "p_depth": {"type": "number", "minimum": 0, "maximum": 1},
                "p_ir": {"type": "number", "minimum": 0, "maximum": 1},
                "seed": {"type": "integer"},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["unified", "separate"]},
                "protocols": {
                    "type": "array",
                    "items": {"enum": ["P1", "P2", "P3", "P4"]},
                    "minItems": 1,
                },
                "manifest": {"type": "string"},
                "cross_manifest": {"type": ["string", "null"]},
            },
        },
    },
}


def _fail(code: str, message: str) -> FlexFasError:
    return FlexFasError(code, message)


def load_config(path, seed_override: int | None = None) -> dict:
    """Read, schema-validate, and seed-resolve a YAML config."""
    if not os.path.exists(path):
        raise _fail("FILE_NOT_FOUND", f"config {path} does not exist")
    try:
        with open(path, encoding="utf-8") as f:
            cfg = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise _fail("PARSE_ERROR", f"config {path}: {e}") from None
    if not isinstance(cfg, dict):
        raise _fail("SCHEMA_ERROR", f"config {path}: top level must be a mapping")
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        key = "/".join(str(p) for p in e.absolute_path) or "(top level)"
        raise _fail("SCHEMA_ERROR", f"config key {key}: {e.message}") from None

    seed = seed_override if seed_override is not None else cfg.get("seed")
    if seed is not None:
        cfg["seed"] = seed
        cfg.setdefault("synth", {})
        cfg.setdefault("trainer", {})
        force = seed_override is not None
        for section, value in (("synth", seed), ("trainer", seed)):
            if force or "seed" not in cfg[section]:
                cfg[section]["seed"] = value
        if cfg.get("dropmodal") is not None and (force or "seed" not in cfg["dropmodal"]):
            cfg["dropmodal"]["seed"] = seed + 1
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _require(cfg: dict, sections: list[str]) -> None:
    for name in sections:
        if name not in cfg or cfg[name] is None:
            raise _fail("SCHEMA_ERROR", f"config key {name}: section is required")


# --- config -> domain objects --------------------------------------------------


def _synth_config(cfg: dict) -> SynthConfig:
    s = cfg.get("synth", {})
    sep = {
        Modality(k): float(v)
        for k, v in s.get(
            "separability", {"rgb": 1.5, "depth": 3.0, "ir": 0.5}
        ).items()
    }
    return SynthConfig(
        n_subjects=s.get("n_subjects", 200),
        frames_per_subject=s.get("frames_per_subject", 4),
        image_size=tuple(s.get("image_size", (32, 32))),
        separability=sep,
        noise_sigma=s.get("noise_sigma", 1.0),
        attack_ratio=s.get("attack_ratio", 0.5),
        pai_types=tuple(s.get("pai_types", ("print", "replay"))),
        seed=s.get("seed", 0),
    )


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig.from_dict(cfg.get("model", {}))


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg.get("trainer", {})
    dm = cfg.get("dropmodal")
    dropmodal = (
        DropModalConfig(
            p_depth=dm.get("p_depth", 0.3),
            p_ir=dm.get("p_ir", 0.3),
            seed=dm.get("seed", 0),
        )
        if dm is not None
        else None
    )
    return TrainConfig(
        optimizer=OptimizerKind(t.get("optimizer", "adam")),
        learning_rate=t.get("learning_rate", 1e-3),
        epochs=t.get("epochs", 25),
        lr_halving_epoch=t.get("lr_halving_epoch", 17),
        batch_size=t.get("batch_size", 32),
        seed=t.get("seed", 0),
        dropmodal=dropmodal,
        grad_clip_norm=t.get("grad_clip_norm"),
    )


def _run_plan(cfg: dict) -> RunPlan:
    r = cfg.get("run", {})
    return RunPlan(
        mode=RunMode(r.get("mode", "unified")),
        protocols=tuple(standard_protocols(r.get("protocols"))),
        model=_model_config(cfg),
        trainer=_train_config(cfg),
    )


def _dataset_dir(cfg: dict) -> str:
    return cfg.get("synth", {}).get("out_dir") or os.path.join(
        cfg["output_dir"], "dataset"
    )


def _manifest_path(cfg: dict) -> str:
    return cfg.get("run", {}).get("manifest") or os.path.join(
        _dataset_dir(cfg), "manifest.csv"
    )


def _load_sample_set(cfg: dict) -> SampleSet:
    manifest_path = _manifest_path(cfg)
    manifest = load_manifest(manifest_path)
    by_split = load_samples(manifest, os.path.dirname(manifest_path))
    cross_path = cfg.get("run", {}).get("cross_manifest")
    cross_test = []
    if cross_path:
        cross_manifest = load_manifest(cross_path)
        cross_by_split = load_samples(cross_manifest, os.path.dirname(cross_path))
        cross_test = cross_by_split[Split.TEST]
    return SampleSet(by_split=by_split, cross_test=cross_test)


def _checkpoint_dir(cfg: dict) -> str:
    return os.path.join(cfg["output_dir"], "checkpoints")


# --- subcommands ----------------------------------------------------------------


def cmd_synth(cfg: dict, verbose: bool = False) -> int:
    _require(cfg, ["synth"])
    scfg = _synth_config(cfg)
    out_dir = _dataset_dir(cfg)
    samples, manifest = generate(scfg)
    manifest_path = write_dataset(samples, manifest, out_dir)
    _write_json(
        os.path.join(out_dir, "dataset_meta.json"),
        {
            "config_sha256": config_hash(cfg),
            "dataset_id": scfg.dataset_id,
            "n_samples": len(samples),
            "manifest": "manifest.csv",
        },
    )
    print(f"synth: wrote {len(samples)} samples to {out_dir} (manifest {manifest_path})")
    return 0


def _loss_log_text(cfg_hash: str, loss_trace, lr_trace) -> str:
    lines = [f"# config_sha256 {cfg_hash}", "epoch\tloss\tlr"]
    for i, (loss, lr) in enumerate(zip(loss_trace, lr_trace), start=1):
        lines.append(f"{i}\t{loss!r}\t{lr!r}")
    return "\n".join(lines) + "\n"


def cmd_train(cfg: dict, verbose: bool = False) -> int:
    _require(cfg, ["model", "trainer", "run"])
    plan = _run_plan(cfg)
    data = _load_sample_set(cfg)
    ckpt_dir = _checkpoint_dir(cfg)
    h = config_hash(cfg)
    echo = {"config": cfg, "config_sha256": h}
    if plan.mode is RunMode.UNIFIED:
        model, tr = train_unified(plan, data)
        path = os.path.join(ckpt_dir, "unified.ckpt")
        save_checkpoint(path, model, echo)
        _atomic_write_text(
            os.path.join(cfg["output_dir"], "logs", "unified_loss.log"),
            _loss_log_text(h, tr.loss_trace, tr.lr_trace),
        )
        print(f"train: unified checkpoint at {path} (final loss {tr.loss_trace[-1]:.4f})")
    else:
        trained = train_separate(plan, data)
        for pid, (model, tr) in trained.items():
            path = os.path.join(ckpt_dir, f"{pid}.ckpt")
            save_checkpoint(path, model, echo)
            _atomic_write_text(
                os.path.join(cfg["output_dir"], "logs", f"{pid}_loss.log"),
                _loss_log_text(h, tr.loss_trace, tr.lr_trace),
            )
            print(f"train: {pid} checkpoint at {path} (final loss {tr.loss_trace[-1]:.4f})")
    return 0


def _check_model_compat(cfg: dict, payload: dict, path: str) -> None:
    if "model" not in cfg:
        return
    expected = _model_config(cfg).to_dict()
    if payload["model_config"] != expected:
        raise _fail(
            "CHECKPOINT_INCOMPATIBLE",
            f"{path} was trained with model {payload['model_config']}, config says {expected}",
        )


def _emit_reports(cfg: dict, pid: str, result, out_reports: str, out_scores: str) -> dict:
    report = {
        "protocol": pid,
        "config_sha256": config_hash(cfg),
        "intra": result.reports[pid].to_json_dict(),
        "cross": result.cross_reports[pid].to_json_dict()
        if pid in result.cross_reports
        else None,
    }
    _write_json(os.path.join(out_reports, f"{pid}.json"), report)
    for key, records in result.scores.items():
        if key.startswith(f"{pid}_"):
            write_score_file(os.path.join(out_scores, f"{key}.csv"), records)
    return report


def cmd_eval(cfg: dict, checkpoint: str | None, verbose: bool = False) -> int:
    _require(cfg, ["run"])
    plan = _run_plan(cfg)
    data = _load_sample_set(cfg)
    out_reports = os.path.join(cfg["output_dir"], "reports")
    out_scores = os.path.join(cfg["output_dir"], "scores")
    os.makedirs(out_scores, exist_ok=True)
    summary = {"config_sha256": config_hash(cfg), "mode": plan.mode.value, "protocols": {}}
    if plan.mode is RunMode.UNIFIED:
        path = checkpoint or os.path.join(_checkpoint_dir(cfg), "unified.ckpt")
        model, payload = load_checkpoint(path)
        _check_model_compat(cfg, payload, path)
        result = evaluate_protocols(model, list(plan.protocols), data)
        for p in plan.protocols:
            summary["protocols"][p.id] = _emit_reports(
                cfg, p.id, result, out_reports, out_scores
            )
    else:
        ckpt_dir = checkpoint or _checkpoint_dir(cfg)
        for p in plan.protocols:
            path = os.path.join(ckpt_dir, f"{p.id}.ckpt")
            model, payload = load_checkpoint(path)
            _check_model_compat(cfg, payload, path)
            result = evaluate_protocols(model, [p], data)
            summary["protocols"][p.id] = _emit_reports(
                cfg, p.id, result, out_reports, out_scores
            )
    _write_json(os.path.join(out_reports, "summary.json"), summary)
    for pid, rep in summary["protocols"].items():
        print(f"eval: {pid} acer={rep['intra']['acer']:.4f} eer={rep['intra']['eer']:.4f}")
    print(f"eval: reports in {out_reports}, scores in {out_scores}")
    return 0


def cmd_cost(cfg: dict, verbose: bool = False) -> int:
    _require(cfg, ["model"])
    model = ModelConfig.from_dict(cfg.get("model", {}))
    from .backbones import build_model  # structure only; seed irrelevant but pinned

    report = cost_report(build_model(model, seed=0))
    payload = report.to_json_dict()
    payload["config_sha256"] = config_hash(cfg)
    _write_json(os.path.join(cfg["output_dir"], "cost.json"), payload)
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


# --- entry point ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _seed_override(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise _fail("SCHEMA_ERROR", f"{SEED_ENV_VAR}={env!r} is not an integer") from None


def main(argv=None) -> int:
    parser = _Parser(prog="flexfas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("synth", "generate a synthetic multi-modal dataset"),
        ("train", "train per the run plan (unified or separate)"),
        ("eval", "evaluate checkpoints under the protocols"),
        ("cost", "parameter / FLOPs report for the model config"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override every config seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument(
                "--checkpoint",
                default=None,
                help="checkpoint file (unified) or directory (separate)",
            )
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, _seed_override(args))
        if args.command == "synth":
            return cmd_synth(cfg, args.verbose)
        if args.command == "train":
            return cmd_train(cfg, args.verbose)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.verbose)
        return cmd_cost(cfg, args.verbose)
    except FlexFasError as e:
        print(f"flexfas: {e}", file=sys.stderr)
        usage_codes = {"SCHEMA_ERROR", "PARSE_ERROR", "FILE_NOT_FOUND", "VALUE_RANGE"}
        return 1 if e.code in usage_codes else 2


if __name__ == "__main__":
    sys.exit(main())
