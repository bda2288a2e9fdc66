"""``sst`` command-line entry point.

Every subcommand accepts ``--config FILE``: a JSON object whose keys are the
subcommand's option names (underscored). Values resolve as
preset < config file < flags. Errors go to stderr as one JSON line; exit codes
are 0 (success), 1 (runtime failure) and 2 (usage or configuration error).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from sst import evalkit, netpbm, synthgen, trainer
from sst.checkpoint import Checkpoint
from sst.domains import DomainError, default_registry
from sst.trainer import ConfigError, RegistryMismatch, TrainConfig

log = logging.getLogger("sst")

PRESETS = {"full": trainer.FULL, "desk": trainer.DESK}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")
    return text == "on"


def canvas_arg(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"canvas must look like 48x48, got {text!r}") from None
    return [h, w]


def domain_list(text):
    return [d for d in text.split(",") if d]


# (flag, TrainConfig field, argparse type, help)
TRAIN_FLAGS = (
    ("--alpha", "alpha", float, "segmentation loss weight"),
    ("--beta", "beta", float, "auxiliary loss weight"),
    ("--lambda", "lam", float, "consistency loss weight"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--base-lr", "base_lr", float, "initial learning rate"),
    ("--lr-drop-epoch", "lr_drop_epoch", int, "epoch at which the learning rate drops"),
    ("--lr-drop-factor", "lr_drop_factor", float, "learning rate multiplier after the drop"),
    ("--batch-per-domain", "batch_per_domain", int, "images per domain per step"),
    ("--seed", "seed", int, "random seed"),
    ("--strategy", "strategy", str, "pairing strategy: full or progressive"),
    ("--domains", "domains", domain_list, "comma-separated domain ids, coarse to fine"),
    ("--aux-loss", "aux_loss", str, "auxiliary loss: off, unmasked or masked"),
    ("--scr-dataset", "scr_dataset", on_off, "dataset-level consistency: on or off"),
    ("--scr-image", "scr_image", on_off, "image-level consistency: on or off"),
    ("--dim", "dim", int, "feature width"),
    ("--augment", "augment", on_off, "resize/crop/flip augmentation: on or off"),
)
TRAIN_FIELDS = {field for _, field, _, _ in TRAIN_FLAGS}


def _opt(p, flag, dest=None, help="", **kw):
    dest = dest or flag.lstrip("-").replace("-", "_")
    p.add_argument(flag, dest=dest, default=argparse.SUPPRESS, help=f"{help} [config: {dest}]", **kw)


def _train_opts(p, sst_flag=True):
    _opt(p, "--preset", help="base hyper-parameters: full (150 epochs) or desk (60 epochs, default)",
         choices=sorted(PRESETS))
    for flag, field, typ, text in TRAIN_FLAGS:
        _opt(p, flag, dest=field, help=text, type=typ, metavar=field.upper())
    if sst_flag:
        _opt(p, "--sst", help="on: masked aux + both consistency terms; off: all three disabled "
                              "(sets aux_loss, scr_dataset, scr_image)", type=on_off, metavar="on|off")


def build_parser():
    parser = _Parser(prog="sst", description="Multi-label-domain human parsing with semantic transfer.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, text):
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", default=None, help="JSON file of option values (flags override it)")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                       help="log progress to stderr")
        return p

    p = cmd("gen-data", "generate a synthetic multi-domain dataset")
    _opt(p, "--out", help="output directory", metavar="DIR")
    _opt(p, "--count", help="number of samples", type=int, metavar="N")
    _opt(p, "--seed", help="generator seed", type=int, metavar="S")
    _opt(p, "--canvas", help="image size HxW, multiples of 16", type=canvas_arg, metavar="HxW")
    _opt(p, "--split", help="train fraction", type=float, metavar="P")
    _opt(p, "--domains", help="comma-separated domains to store", type=domain_list, metavar="IDS")

    p = cmd("train-universal", "train one network over several label domains")
    _opt(p, "--data", help="dataset(s): DIR or ID=DIR", nargs="+", metavar="SPEC")
    _opt(p, "--out", help="run directory for checkpoint, log and metrics", metavar="DIR")
    _train_opts(p)

    p = cmd("pretrain", "dedicated step 1: seg + aux training on the source domain(s)")
    _opt(p, "--data", help="dataset(s): DIR or ID=DIR", nargs="+", metavar="SPEC")
    _opt(p, "--out", help="run directory", metavar="DIR")
    _train_opts(p, sst_flag=False)

    p = cmd("train-dedicated", "dedicated step 2: distil a frozen pretrained pipeline into a target domain")
    _opt(p, "--pretrain-ckpt", help="pretrained checkpoint directory", metavar="DIR")
    _opt(p, "--target", help="target dataset: DIR or ID=DIR", metavar="SPEC")
    _opt(p, "--target-domain", help="target domain id when --target is a bare DIR", metavar="ID")
    _opt(p, "--source", help="source dataset DIR (default: the target DIR)", metavar="DIR")
    _opt(p, "--retain-frac", help="fraction of target training data used", type=float, metavar="P")
    _opt(p, "--out", help="run directory", metavar="DIR")
    _train_opts(p, sst_flag=False)

    p = cmd("eval", "evaluate a checkpoint head on a dataset split")
    _opt(p, "--ckpt", help="checkpoint directory", metavar="DIR")
    _opt(p, "--data", help="dataset directory", metavar="DIR")
    _opt(p, "--domain", help="domain id", metavar="ID")
    _opt(p, "--split", help="train, test or all", metavar="NAME")
    _opt(p, "--out", help="report path (default stdout)", metavar="FILE")

    p = cmd("export", "strip auxiliary modules and unrequested heads")
    _opt(p, "--ckpt", help="checkpoint directory", metavar="DIR")
    _opt(p, "--domains", help="comma-separated heads to keep", type=domain_list, metavar="IDS")
    _opt(p, "--out", help="output checkpoint directory", metavar="DIR")

    p = cmd("ablate", "run the six-configuration component ablation")
    _opt(p, "--data", help="dataset directory", metavar="DIR")
    _opt(p, "--eval-domain", help="domain reported in the table (default first domain)", metavar="ID")
    _opt(p, "--out", help="output directory for ablation.json and ablation.txt", metavar="DIR")
    _train_opts(p, sst_flag=False)

    p = cmd("render", "colour a checkpoint's prediction for one image")
    _opt(p, "--ckpt", help="checkpoint directory", metavar="DIR")
    _opt(p, "--image", help="input PPM image", metavar="FILE")
    _opt(p, "--domain", help="head to use", metavar="ID")
    _opt(p, "--out", help="output PPM path", metavar="FILE")
    return parser


DEFAULTS = {
    "gen-data": dict(count=100, seed=0, canvas=[48, 48], split=0.8, domains=["fine", "mid", "coarse"]),
    "eval": dict(split="test"),
    "train-dedicated": dict(retain_frac=1.0, target_domain=None, source=None),
    "ablate": dict(eval_domain=None),
}
REQUIRED = {
    "gen-data": ("out",),
    "train-universal": ("data", "out"),
    "pretrain": ("data", "out"),
    "train-dedicated": ("pretrain_ckpt", "target", "out"),
    "eval": ("ckpt", "data", "domain"),
    "export": ("ckpt", "domains", "out"),
    "ablate": ("data", "out"),
    "render": ("ckpt", "image", "domain", "out"),
}


def resolve(parser, argv):
    """Parse ``argv`` and merge defaults, config file and flags into one dict."""
    args = parser.parse_args(argv)
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    file_values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            file_values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(file_values, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[command]
        known = {a.dest for a in sub._actions} - {"help", "config"}
        unknown = sorted(set(file_values) - known)
        if unknown:
            raise UsageError(f"config file {path}: unknown keys {unknown} for {command}")
    values = dict(DEFAULTS.get(command, {}))
    values.update(file_values)
    values.update(flags)
    missing = [k for k in REQUIRED[command] if values.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s) " +
                         ", ".join("--" + k.replace("_", "-") for k in missing))
    return command, values, args.verbose


def train_config(values, base=None) -> TrainConfig:
    fields = dict(PRESETS[values.get("preset", "desk")])
    fields.update(base or {})
    if "sst" in values:
        fields.update(aux_loss="masked" if values["sst"] else "off",
                      scr_dataset=values["sst"], scr_image=values["sst"])
    fields.update({k: v for k, v in values.items() if k in TRAIN_FIELDS})
    if "lr_drop_epoch" not in values:
        fields.pop("lr_drop_epoch", None)  # follow the resolved epoch count
    return TrainConfig(**fields)


def _existing_dir(path, what):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _dataset(path):
    root = _existing_dir(path, "dataset")
    if not (root / "manifest.json").is_file():
        raise UsageError(f"{root} has no manifest.json")
    return root


def data_specs(specs, domains):
    """``DIR`` or ``ID=DIR`` strings -> [(domain, dir)] covering ``domains``."""
    out = {}
    for spec in specs:
        if "=" in spec:
            d, path = spec.split("=", 1)
            out[d] = _dataset(path)
        else:
            root = _dataset(spec)
            have = synthgen.load_manifest(root)["domains"]
            for d in domains:
                if d in have:
                    out.setdefault(d, root)
    missing = [d for d in domains if d not in out]
    if missing:
        raise UsageError(f"no dataset provides domain(s) {missing}")
    return [(d, out[d]) for d in domains]


def _load_ckpt(path):
    root = _existing_dir(path, "checkpoint")
    if not (root / "manifest.json").is_file():
        raise UsageError(f"{root} is not a checkpoint directory")
    return Checkpoint.load(root)


def _jsonable(values):
    return json.loads(json.dumps(values, default=str))


def _evaluate_all(model, specs, registry, config):
    reports = {}
    for d, root in specs:
        images, labels, _ = synthgen.load_split(root, d, "test")
        reports[d] = evalkit.evaluate(model, images, labels, d, registry, config).to_json()
    return reports


def _finish_training(out, model, ckpt, history, specs, registry, resolved, extra=None):
    ckpt.save(out / "checkpoint")
    reports = _evaluate_all(model, specs, registry, resolved)
    summary = {"config": resolved, "final_losses": history[-1]["losses"],
               "metrics": {d: {"miou": r["miou"], "mean_acc": r["mean_acc"]} for d, r in reports.items()}}
    summary.update(extra or {})
    trainer.write_json(out / "metrics.json", reports)
    trainer.write_json(out / "run.json", summary)
    return {"checkpoint": str(out / "checkpoint"), "log": str(out / "train_log.jsonl"), "resolved": resolved,
            "metrics": summary["metrics"]}


def cmd_gen_data(values, registry):
    cfg = synthgen.GenConfig(values["out"], values["count"], values["seed"], tuple(values["canvas"]),
                             values["split"], tuple(values["domains"]))
    if any(c % 16 for c in cfg.canvas):
        raise UsageError(f"canvas {cfg.canvas} must be a multiple of 16 in both dimensions")
    for d in cfg.domains:
        if d not in registry:
            raise UsageError(f"unknown domain {d!r}")
    manifest = synthgen.generate_dataset(cfg, registry)
    return {"out": values["out"], "samples": len(manifest["samples"])}


def _prepare_run(values):
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train_universal(values, registry, pretrain=False):
    base = {"scr_dataset": False, "scr_image": False} if pretrain else {}
    if all("=" in spec for spec in values["data"]):
        base["domains"] = [spec.split("=", 1)[0] for spec in values["data"]]
    cfg = train_config(values, base)
    specs = data_specs(values["data"], cfg.domains)
    resolved = _jsonable({**values, "train": cfg.to_json()})
    data = trainer.load_training_data(specs, "train", seed=cfg.seed)
    canvas = list(data[cfg.domains[0]][0].shape[1:3])
    out = _prepare_run(values)
    run = trainer.dedicated_pretrain if pretrain else trainer.train_universal
    model, ckpt, history = run(data, cfg, registry, out / "train_log.jsonl",
                               {"canvas": canvas, "run": resolved})
    return _finish_training(out, model, ckpt, history, specs, registry, resolved)


def cmd_train_dedicated(values, registry):
    pretrained = _load_ckpt(values["pretrain_ckpt"])
    spec = values["target"]
    if "=" in spec:
        target, target_dir = spec.split("=", 1)
    else:
        target, target_dir = values.get("target_domain"), spec
        if not target:
            raise UsageError("train-dedicated: give --target ID=DIR or --target-domain")
    if target not in registry:
        raise UsageError(f"unknown target domain {target!r}")
    sources = [d for d in pretrained.metadata["model"]["domains"] if d != target]
    base = dict(pretrained.metadata.get("config", {}))
    base.pop("lr_drop_epoch", None)
    base.update(scr_dataset=True, scr_image=True, domains=[target] + sources)
    cfg = train_config(values, base)
    target_dir = _dataset(target_dir)
    source_dir = _dataset(values["source"] or target_dir)
    frac = values["retain_frac"]
    if not 0 < frac <= 1:
        raise UsageError(f"--retain-frac must lie in (0, 1], got {frac}")
    data = trainer.load_training_data([(target, target_dir)], "train", frac, cfg.seed)
    data.update(trainer.load_training_data([(s, source_dir) for s in sources], "train", seed=cfg.seed))
    resolved = _jsonable({**values, "train": cfg.to_json()})
    out = _prepare_run(values)
    canvas = list(data[target][0].shape[1:3])
    student, ckpt, history, _ = trainer.dedicated_transfer(
        pretrained, target, data, cfg, registry, out / "train_log.jsonl",
        {"canvas": canvas, "run": resolved, "retain_frac": frac})
    return _finish_training(out, student, ckpt, history, [(target, target_dir)], registry, resolved,
                            {"retained_samples": len(data[target][1])})


def cmd_eval(values, registry):
    ckpt = _load_ckpt(values["ckpt"])
    root = _dataset(values["data"])
    domain = values["domain"]
    if f"head:{domain}" not in ckpt.components():
        raise UsageError(f"checkpoint has no head for domain {domain!r}")
    split = None if values["split"] == "all" else values["split"]
    images, labels, _ = synthgen.load_split(root, domain, split)
    model = trainer.model_from_checkpoint(ckpt, registry)
    config = {"train": ckpt.metadata.get("config", {}),
              "eval": {"data": str(values["data"]), "domain": domain, "split": values["split"]}}
    report = evalkit.evaluate(model, images, labels, domain, registry, config)
    text = report.dumps()
    if values.get("out"):
        Path(values["out"]).write_text(text)
        return {"report": values["out"], "miou": report.miou, "mean_acc": report.mean_acc}
    sys.stdout.write(text)
    return None


def cmd_export(values, registry):
    ckpt = _load_ckpt(values["ckpt"])
    try:
        slim = evalkit.export_inference(ckpt, values["domains"], registry)
    except evalkit.ExportError as exc:
        if "no head" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    slim.metadata["export"] = {"domains": list(values["domains"])}
    slim.save(values["out"])
    return {"out": values["out"], "bytes_before": ckpt.size_bytes(), "bytes_after": slim.size_bytes(),
            "components": slim.components()}


def cmd_ablate(values, registry):
    cfg = train_config(values)
    root = _dataset(values["data"])
    specs = [(d, root) for d in cfg.domains]
    train = trainer.load_training_data(specs, "train", seed=cfg.seed)
    test = {d: synthgen.load_split(root, d, "test")[:2] for d in cfg.domains}
    out = _prepare_run(values)
    rows = evalkit.ablate(cfg, train, test, registry, values.get("eval_domain"), out)
    resolved = _jsonable({**values, "train": cfg.to_json()})
    table = evalkit.ablation_table(rows)
    trainer.write_json(out / "ablation.json", {"config": resolved, "rows": rows})
    (out / "ablation.txt").write_text("# config: " + json.dumps(resolved, sort_keys=True) + "\n" + table)
    sys.stderr.write(table)
    return {"json": str(out / "ablation.json"), "table": str(out / "ablation.txt"),
            "miou": {r["row"]: r["miou"] for r in rows}}


def cmd_render(values, registry):
    ckpt = _load_ckpt(values["ckpt"])
    domain = values["domain"]
    if f"head:{domain}" not in ckpt.components():
        raise UsageError(f"checkpoint has no head for domain {domain!r}")
    path = Path(values["image"])
    if not path.is_file():
        raise UsageError(f"image not found: {path}")
    image = netpbm.read(path)
    if image.ndim != 3:
        raise UsageError(f"{path} is not a colour (P6) image")
    model = trainer.model_from_checkpoint(ckpt, registry)
    pred = evalkit.predict_labels(model, image[None], domain)[0]
    config = {"train": ckpt.metadata.get("config", {}), "render": _jsonable(values)}
    netpbm.write_ppm(values["out"], evalkit.render(pred, registry[domain].palette),
                     "sst-config " + json.dumps(config, sort_keys=True))
    counts = np.bincount(pred.ravel(), minlength=registry[domain].Z)
    return {"out": values["out"], "label_counts": counts.tolist()}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-universal": cmd_train_universal,
    "pretrain": lambda v, r: cmd_train_universal(v, r, pretrain=True),
    "train-dedicated": cmd_train_dedicated,
    "eval": cmd_eval,
    "export": cmd_export,
    "ablate": cmd_ablate,
    "render": cmd_render,
}

USAGE_ERRORS = (UsageError, ConfigError, DomainError, RegistryMismatch, FileNotFoundError, synthgen.CanvasError)


def _fail(kind, message, code):
    line = json.dumps({"error": kind, "message": " ".join(str(message).split()), "exit": code})
    sys.stderr.write(line + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        command, values, verbose = resolve(parser, sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    registry = default_registry()
    try:
        result = COMMANDS[command](values, registry)
    except USAGE_ERRORS as exc:
        return _fail("usage", exc, 2)
    except Exception as exc:  # noqa: BLE001 - reported as a single line
        log.debug("failure", exc_info=True)
        return _fail(type(exc).__name__, exc, 1)
    if result is not None:
        sys.stdout.write(json.dumps({"command": command, "config": _jsonable(values), "result": result},
                                    sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
