"""Command-line front end.

Subcommands: train, eval, ablate, synth. Experiments are described by a flat
`key = value` config file (`#` starts a comment, lists are comma-separated).
Unknown keys are rejected. Every run prints the fully resolved config first;
feeding those lines back as a config file reproduces the run exactly.

Exit codes: 0 ok, 2 config/parse error, 3 non-finite loss, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .data import (
    DomainPair,
    load_idx,
    load_sparse,
    resize_bilinear,
    save_sparse,
    standardize,
    subsample,
    synth_gauss_shift,
    synth_two_moons,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    CtdrError,
    NonFiniteLossError,
    ParseError,
)
from .evaluation import evaluate, export_embeddings
from .fake import FakeSourceConfig
from .model import load_checkpoint, save_checkpoint
from .train import TERMS, LossCombo, TrainConfig, fit


# --- config schema -------------------------------------------------------------


def _parse_bool(s):
    if s in ("true", "false"):
        return s == "true"
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_int_list(s):
    return tuple(int(tok) for tok in s.split(",") if tok.strip()) if s else ()


def _parse_float_list(s):
    return tuple(float(tok) for tok in s.split(",") if tok.strip()) if s else ()


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s

    return parse


# key -> (parser, default). Insertion order is the printing order.
SCHEMA: dict = {
    # data
    "data": (_choice("two_moons", "gauss_shift", "idx", "sparse"), "two_moons"),
    "n": (int, 500),
    "rotation": (float, 35.0),
    "noise": (float, 0.12),
    "skew": (_parse_float_list, ()),
    "gauss_classes": (int, 3),
    "gauss_dim": (int, 8),
    "gauss_mean_shift": (float, 1.0),
    "gauss_cov_scale": (float, 1.5),
    "classes": (int, 10),
    "source_images": (str, ""),
    "source_labels": (str, ""),
    "target_images": (str, ""),
    "target_labels": (str, ""),
    "target_test_images": (str, ""),
    "target_test_labels": (str, ""),
    "source_sparse": (str, ""),
    "target_sparse": (str, ""),
    "target_test_sparse": (str, ""),
    "resize": (str, ""),
    "n_source": (int, 0),
    "n_target": (int, 0),
    "n_target_test": (int, 0),
    "standardize": (_parse_bool, True),
    # training
    "combo": (str, "ss,tu"),
    "hidden": (_parse_int_list, (128, 128)),
    "epochs": (int, 100),
    "batch": (int, 128),
    "lr": (float, 0.001),
    "lr_decay": (float, 0.6),
    "lr_decay_every": (int, 30),
    "seed": (int, 0),
    "prior": (str, "assume_source"),
    "oracle": (_parse_bool, False),
    "w_ss": (float, 1.0),
    "w_tu": (float, 1.0),
    "w_su": (float, 1.0),
    "w_ta": (float, 1.0),
    "w_sa": (float, 1.0),
    "w_ts": (float, 1.0),
    # fake samples
    "fake_mode": (_choice("gaussian", "generator"), "gaussian"),
    "fake_n": (int, 0),
    "noise_dim": (int, 32),
    "gen_hidden": (_parse_int_list, (64, 64)),
    "mmd_gamma": (str, "median"),
    # output
    "out_dir": (str, "ctdr_out"),
    "export_embeddings": (_parse_bool, False),
    "timing": (_parse_bool, True),
}


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Flat `key = value` lines -> raw string values. Rejects unknown keys."""
    raw: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{line_no}: expected `key = value`, got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{line_no}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{origin}:{line_no}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve_config(raw: dict) -> dict:
    """Apply defaults and parse values into their runtime types."""
    cfg = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = parser(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        else:
            cfg[key] = default
    return cfg


def format_config(cfg: dict) -> str:
    return "\n".join(f"{key} = {_fmt(cfg[key])}" for key in SCHEMA) + "\n"


def load_config(args) -> dict:
    raw = {}
    if args.config:
        raw = parse_config_text(Path(args.config).read_text(encoding="utf-8"), origin=str(args.config))
    if getattr(args, "seed", None) is not None:
        raw["seed"] = str(args.seed)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"--set: unknown key {key!r}")
        raw[key] = value
    return resolve_config(raw)


# --- config -> runtime objects ---------------------------------------------------


def build_pair(cfg: dict) -> DomainPair:
    kind = cfg["data"]
    skew = cfg["skew"] or None
    if kind == "two_moons":
        return synth_two_moons(cfg["n"], cfg["rotation"], cfg["noise"], skew, seed=cfg["seed"])
    if kind == "gauss_shift":
        return synth_gauss_shift(
            cfg["n"],
            num_classes=cfg["gauss_classes"],
            dim=cfg["gauss_dim"],
            mean_shift=cfg["gauss_mean_shift"],
            cov_scale=cfg["gauss_cov_scale"],
            label_skew=skew,
            seed=cfg["seed"],
        )
    if kind == "idx":
        needed = ["source_images", "source_labels", "target_images", "target_labels", "target_test_images", "target_test_labels"]
        missing = [k for k in needed if not cfg[k]]
        if missing:
            raise ConfigError(f"data=idx needs paths for {', '.join(missing)}")
        k = cfg["classes"]
        source = load_idx(cfg["source_images"], cfg["source_labels"], k, name="source")
        target_train = load_idx(cfg["target_images"], cfg["target_labels"], k, name="target_train")
        target_test = load_idx(cfg["target_test_images"], cfg["target_test_labels"], k, name="target_test")
        if cfg["resize"]:
            try:
                oh, ow = (int(tok) for tok in cfg["resize"].lower().split("x"))
            except ValueError as exc:
                raise ConfigError(f"resize must look like 28x28, got {cfg['resize']!r}") from exc
            source, target_train, target_test = (
                ds if ds.image_hw == (oh, ow) else resize_bilinear(ds, (oh, ow))
                for ds in (source, target_train, target_test)
            )
        if cfg["n_source"]:
            source = subsample(source, cfg["n_source"], cfg["seed"], variant=0)
        if cfg["n_target"]:
            target_train = subsample(target_train, cfg["n_target"], cfg["seed"], variant=1)
        if cfg["n_target_test"]:
            target_test = subsample(target_test, cfg["n_target_test"], cfg["seed"], variant=2)
        return DomainPair(source, target_train, target_test)
    # sparse
    needed = ["source_sparse", "target_sparse", "target_test_sparse"]
    missing = [k for k in needed if not cfg[k]]
    if missing:
        raise ConfigError(f"data=sparse needs paths for {', '.join(missing)}")
    return DomainPair(
        load_sparse(cfg["source_sparse"], name="source"),
        load_sparse(cfg["target_sparse"], name="target_train"),
        load_sparse(cfg["target_test_sparse"], name="target_test"),
    )


def build_train_config(cfg: dict) -> TrainConfig:
    prior = None
    if cfg["prior"] != "assume_source":
        try:
            prior = tuple(float(tok) for tok in cfg["prior"].split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"prior must be `assume_source` or comma-separated floats: {exc}") from exc
    gamma = None
    if cfg["mmd_gamma"] != "median":
        try:
            gamma = float(cfg["mmd_gamma"])
        except ValueError as exc:
            raise ConfigError(f"mmd_gamma must be `median` or a float: {exc}") from exc
    fake = FakeSourceConfig(
        mode=cfg["fake_mode"],
        n_f=cfg["fake_n"] or None,
        noise_dim=cfg["noise_dim"],
        gen_hidden=cfg["gen_hidden"],
        gamma=gamma,
    )
    return TrainConfig(
        combo=LossCombo.parse(cfg["combo"]),
        epochs=cfg["epochs"],
        batch_size=cfg["batch"],
        lr=cfg["lr"],
        lr_decay=cfg["lr_decay"],
        lr_decay_every=cfg["lr_decay_every"],
        seed=cfg["seed"],
        prior=prior,
        hidden=cfg["hidden"],
        weights={t: cfg[f"w_{t}"] for t in TERMS},
        fake=fake,
        timing=cfg["timing"],
        oracle=cfg["oracle"],
    )


def _prepare(cfg: dict):
    pair = build_pair(cfg)
    transform = None
    if cfg["standardize"]:
        pair, transform = standardize(pair)
    return pair, transform


def _announce(cfg: dict) -> Path:
    text = format_config(cfg)
    sys.stdout.write(text)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.txt").write_text(text, encoding="utf-8")
    return out_dir


# --- subcommands -----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args)
    out_dir = _announce(cfg)
    pair, transform = _prepare(cfg)
    train_cfg = build_train_config(cfg)
    if transform is not None:
        transform.save(out_dir / "transform.json")

    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        try:
            params, _ = fit(train_cfg, pair, on_epoch=lambda rec: fh.write(json.dumps(rec) + "\n"))
        except NonFiniteLossError as exc:
            fh.write(json.dumps({"abort": {"term": exc.term, "epoch": exc.epoch, "step": exc.step}}) + "\n")
            raise
    save_checkpoint(params, out_dir / "model.ctdr")
    report = evaluate(params, pair.target_test)
    (out_dir / "eval.json").write_text(json.dumps(report.to_json()) + "\n", encoding="utf-8")
    if cfg["export_embeddings"]:
        named = [("source", pair.source), ("target_train", pair.target_train), ("target_test", pair.target_test)]
        export_embeddings(params, named, out_dir / "embeddings.csv")
    print(f"[train] combo={train_cfg.combo} target_test_acc={report.accuracy:.4f} -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args)
    sys.stdout.write(format_config(cfg))
    params = load_checkpoint(args.checkpoint)
    if getattr(args, "transform", None):
        from .data import FeatureTransform

        tr = FeatureTransform.load(args.transform)
        pair = build_pair(cfg).map_features(tr.apply)
    else:
        pair, _ = _prepare(cfg)
    report = evaluate(params, pair.target_test)
    blob = json.dumps(report.to_json(), indent=2) + "\n"
    sys.stdout.write(blob)
    if getattr(args, "out", None):
        Path(args.out).write_text(blob, encoding="utf-8")
    return 0


ABLATION_LADDER = ("ss", "ss,tu", "ss,tu,su", "ss,tu,su,ta", "ss,tu,su,sa", "ss,tu,su,sa,ta", "ts")


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    out_dir = _announce(cfg)
    pair, _ = _prepare(cfg)
    base = build_train_config(cfg)
    from dataclasses import replace as _replace

    rows = []
    for combo_text in ABLATION_LADDER:
        combo = LossCombo.parse(combo_text)
        run_cfg = _replace(base, combo=combo, oracle=combo.ts or base.oracle)
        params, _ = fit(run_cfg, pair)
        rep_target = evaluate(params, pair.target_test)
        rep_source = evaluate(params, pair.source)
        rows.append((str(combo), rep_target.accuracy, rep_source.accuracy))
        print(f"[ablate] {combo!s:<16} target_test={rep_target.accuracy:.4f} source_train={rep_source.accuracy:.4f}")
    with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["combo", "acc_target_test", "acc_source_train"])
        for combo_text, acc_t, acc_s in rows:
            writer.writerow([combo_text, repr(float(acc_t)), repr(float(acc_s))])
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args)
    out_dir = _announce(cfg)
    if cfg["data"] not in ("two_moons", "gauss_shift"):
        raise ConfigError("synth writes synthetic data; set data = two_moons or gauss_shift")
    pair = build_pair(cfg)
    save_sparse(pair.source, out_dir / "source.txt")
    save_sparse(pair.target_train_labeled(oracle=True), out_dir / "target_train.txt")
    save_sparse(pair.target_test, out_dir / "target_test.txt")
    print(f"[synth] wrote source.txt target_train.txt target_test.txt -> {out_dir}")
    return 0


# --- entry point -------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctdr", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a `key = value` config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")

    p_train = sub.add_parser("train", help="train a model and write metrics/checkpoint")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the configured target test set")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--transform", help="apply a saved feature transform instead of refitting")
    p_eval.add_argument("--out", help="also write the report JSON here")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the loss-combo ladder and write summary.csv")
    common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_synth = sub.add_parser("synth", help="write the configured synthetic domain pair as sparse text files")
    common(p_synth)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ParseError, ContractViolation, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CtdrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
