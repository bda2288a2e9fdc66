"""Metrics, inference export, label rendering and the ablation grid."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from sst import kernels
from sst.checkpoint import Checkpoint
from sst.domains import Registry, default_registry
from sst.trainer import TrainConfig, model_from_checkpoint, to_tensors, train_universal

log = logging.getLogger(__name__)


class ExportError(RuntimeError):
    pass


def confusion(pred, gt, Z: int) -> np.ndarray:
    """Z x Z counts, row = ground truth, column = prediction; gt 255 is skipped."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    cm, bad = kernels.confusion(gt, pred, Z)
    if bad >= 0:
        where = np.unravel_index(bad, gt.shape)
        raise ValueError(f"value out of range at {tuple(int(i) for i in where)}: "
                         f"gt={int(gt[where])} pred={int(pred[where])} (Z={Z})")
    return cm


def per_class_iou(cm) -> list:
    """IoU per class; ``None`` where the class has zero union."""
    cm = np.asarray(cm, dtype=np.float64)
    inter = np.diag(cm)
    union = cm.sum(0) + cm.sum(1) - inter
    return [float(i / u) if u > 0 else None for i, u in zip(inter, union)]


def per_class_acc(cm) -> list:
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(1)
    return [float(cm[z, z] / rows[z]) if rows[z] > 0 else None for z in range(len(cm))]


def _mean(values, what):
    kept = [v for v in values if v is not None]
    if not kept:
        log.warning("%s: confusion matrix is empty, defined as 0", what)
        return 0.0
    return float(sum(kept) / len(kept))


def miou(cm) -> float:
    return _mean(per_class_iou(cm), "mIoU")


def mean_acc(cm) -> float:
    return _mean(per_class_acc(cm), "mean accuracy")


@dataclass
class MetricsReport:
    per_class_iou: list
    miou: float
    per_class_acc: list
    mean_acc: float
    pixels: int
    confusion: list
    config: dict = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, cm, config=None) -> "MetricsReport":
        cm = np.asarray(cm, dtype=np.int64)
        return cls(per_class_iou(cm), miou(cm), per_class_acc(cm), mean_acc(cm),
                   int(cm.sum()), cm.tolist(), dict(config or {}))

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj) -> "MetricsReport":
        return cls(**obj)


@torch.no_grad()
def predict_labels(model, images, domain: str, batch: int = 16) -> np.ndarray:
    """Argmax of the domain head for N x H x W x 3 uint8 images."""
    model.eval()
    out = []
    for i in range(0, len(images), batch):
        x, _ = to_tensors(images[i:i + batch], np.zeros(images[i:i + batch].shape[:3], np.uint8))
        out.append(model.logits(x, domain).argmax(1).to(torch.uint8).numpy())
    return np.concatenate(out)


def evaluate(model, images, labels, domain: str, registry: Registry | None = None, config=None) -> MetricsReport:
    registry = registry or default_registry()
    pred = predict_labels(model, images, domain)
    cm = confusion(pred, labels, registry[domain].Z)
    return MetricsReport.from_confusion(cm, config)


def _verify_inputs(ckpt: Checkpoint, count: int):
    canvas = ckpt.metadata.get("canvas", [48, 48])
    gen = torch.Generator().manual_seed(0)
    return [torch.rand(1, 3, canvas[0], canvas[1], generator=gen) for _ in range(count)]


def export_inference(ckpt: Checkpoint, domains, registry: Registry | None = None, verify: int = 20) -> Checkpoint:
    """Keep only core and requested head parameters, then check per-head logits
    are bit-identical to the full checkpoint on ``verify`` seeded inputs."""
    registry = registry or default_registry()
    domains = list(domains)
    heads = {t.split(":", 1)[1] for t in ckpt.tags.values() if t.startswith("head:")}
    unknown = [d for d in domains if d not in heads]
    if unknown:
        raise ExportError(f"checkpoint has no head for domains {unknown}; available {sorted(heads)}")
    keep = {"core"} | {f"head:{d}" for d in domains}
    out = ckpt.subset(lambda tag: tag in keep)
    out.metadata["model"]["domains"] = [d for d in out.metadata["model"]["domains"] if d in domains]
    out.metadata["model"]["pairs"] = []
    out.metadata["model"]["aux"] = False

    full = model_from_checkpoint(ckpt, registry).eval()
    slim = model_from_checkpoint(out, registry).eval()
    with torch.no_grad():
        for i, x in enumerate(_verify_inputs(ckpt, verify)):
            a_pyr, b_pyr = full.net(x), slim.net(x)
            for d in domains:
                a, b = full.heads[d](a_pyr.f), slim.heads[d](b_pyr.f)
                if not torch.equal(a, b):
                    diff = (a != b).nonzero()[0].tolist()
                    raise ExportError(f"export verification failed: input {i}, head {d}, logit index {diff}")
    return out


def render(labels, palette) -> np.ndarray:
    """Colour a label raster; ignore pixels (and unknown labels) are black."""
    labels = np.asarray(labels)
    palette = np.asarray(palette, dtype=np.uint8)
    lut = np.zeros((256, 3), dtype=np.uint8)
    lut[:len(palette)] = palette
    lut[kernels.IGNORE] = 0
    return lut[labels]


def unrender(image, palette) -> np.ndarray:
    """Inverse of :func:`render` for an injective palette."""
    palette = np.asarray(palette, dtype=np.uint8)
    keys = {tuple(int(c) for c in col): i for i, col in enumerate(palette)}
    if len(keys) != len(palette):
        raise ValueError("palette is not injective")
    flat = np.asarray(image).reshape(-1, 3)
    return np.array([keys[tuple(int(c) for c in px)] for px in flat], dtype=np.uint8).reshape(np.asarray(image).shape[:2])


ABLATION_ROWS = (
    ("1", dict(aux_loss="off", scr_dataset=False, scr_image=False)),
    ("2", dict(aux_loss="unmasked", scr_dataset=False, scr_image=False)),
    ("3", dict(aux_loss="masked", scr_dataset=False, scr_image=False)),
    ("4", dict(aux_loss="masked", scr_dataset=True, scr_image=False)),
    ("5", dict(aux_loss="masked", scr_dataset=False, scr_image=True)),
    ("6", dict(aux_loss="masked", scr_dataset=True, scr_image=True)),
)


def ablation_configs(base: TrainConfig):
    return [(name, dataclasses.replace(base, **over)) for name, over in ABLATION_ROWS]


def ablate(base: TrainConfig, train: dict, test: dict, registry: Registry | None = None,
           eval_domain: str | None = None, log_dir=None):
    """Run the six component configurations; returns a list of row dicts.

    Each row holds the toggles, the per-domain MetricsReports and the final
    epoch's loss decomposition.
    """
    registry = registry or default_registry()
    eval_domain = eval_domain or base.domains[0]
    rows = []
    for name, cfg in ablation_configs(base):
        log_path = None if log_dir is None else f"{log_dir}/ablation_row{name}.jsonl"
        model, _, history = train_universal(train, cfg, registry, log_path)
        reports = {d: evaluate(model, *test[d], d, registry, cfg.to_json()) for d in cfg.domains if d in test}
        rows.append({"row": name, "aux_loss": cfg.aux_loss, "scr_dataset": cfg.scr_dataset,
                     "scr_image": cfg.scr_image, "eval_domain": eval_domain,
                     "miou": reports[eval_domain].miou, "mean_acc": reports[eval_domain].mean_acc,
                     "reports": {d: r.to_json() for d, r in reports.items()},
                     "final_losses": history[-1]["losses"]})
    return rows


def ablation_table(rows) -> str:
    head = f"{'No.':<4} {'aux':<9} {'scr_dataset':<12} {'scr_image':<10} {'mIoU':>7} {'meanAcc':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['row']:<4} {r['aux_loss']:<9} {('on' if r['scr_dataset'] else 'off'):<12} "
                     f"{('on' if r['scr_image'] else 'off'):<10} {100 * r['miou']:>7.2f} {100 * r['mean_acc']:>8.2f}")
    return "\n".join(lines) + "\n"
