"""Universal (shared network, many label domains) and two-step dedicated
(pretrain, then distil into a target domain) training."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from sst import synthgen
from sst.checkpoint import Checkpoint
from sst.domains import Registry, default_registry
from sst.msa import MSA
from sst.mse import MSE, aux_logits, aux_loss
from sst.mst import MST
from sst.parsenet import Head, ParseNet, seg_loss

log = logging.getLogger(__name__)

AUX_MODES = ("off", "unmasked", "masked")
STRATEGIES = ("full", "progressive")


class ConfigError(ValueError):
    pass


class RegistryMismatch(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 10.0
    beta: float = 1.0
    lam: float = 5.0
    epochs: int = 150
    base_lr: float = 1e-4
    lr_drop_epoch: int | None = None
    lr_drop_factor: float = 0.1
    batch_per_domain: int = 4
    seed: int = 0
    strategy: str = "full"
    domains: list = field(default_factory=lambda: ["coarse", "mid", "fine"])
    aux_loss: str = "masked"
    scr_dataset: bool = True
    scr_image: bool = True
    dim: int = 64
    optimizer: str = "adam"
    augment: bool = False

    def __post_init__(self):
        if self.lr_drop_epoch is None:
            self.lr_drop_epoch = math.ceil(5 * self.epochs / 6)
        self.domains = list(self.domains)
        self.validate()

    def validate(self):
        for name in ("alpha", "beta", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0 < self.lr_drop_epoch <= self.epochs:
            raise ConfigError(f"lr_drop_epoch {self.lr_drop_epoch} must lie in 1..epochs ({self.epochs})")
        if not 0 < self.lr_drop_factor <= 1:
            raise ConfigError("lr_drop_factor must lie in (0, 1]")
        if self.batch_per_domain <= 0:
            raise ConfigError("batch_per_domain must be positive")
        if not self.domains:
            raise ConfigError("at least one domain is required")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.aux_loss not in AUX_MODES:
            raise ConfigError(f"aux_loss must be one of {AUX_MODES}")
        if self.optimizer != "adam":
            raise ConfigError("only the adam optimizer is implemented")
        if (self.scr_dataset or self.scr_image) and len(self.domains) < 2:
            raise ConfigError("consistency losses need at least two domains")

    @property
    def sst(self) -> bool:
        return self.aux_loss != "off" or self.scr_dataset or self.scr_image

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)


FULL = dict(epochs=150, lr_drop_epoch=125, base_lr=1e-4, batch_per_domain=4,
             alpha=10.0, beta=1.0, lam=5.0)
# desk-scale preset used by the acceptance experiments
DESK = dict(epochs=60, base_lr=2e-3, batch_per_domain=4, dim=32)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    return cfg.base_lr * (cfg.lr_drop_factor if epoch >= cfg.lr_drop_epoch else 1.0)


def build_pairs(domains, strategy: str = "full"):
    domains = list(domains)
    if len(domains) < 2:
        raise ConfigError("pairing needs at least two domains")
    if strategy == "full":
        return [(domains[i], domains[j]) for i in range(len(domains)) for j in range(i + 1, len(domains))]
    if strategy == "progressive":
        return list(zip(domains[:-1], domains[1:]))
    raise ConfigError(f"unknown strategy {strategy!r}")


def pair_key(a: str, b: str) -> str:
    return f"{a}-{b}"


class SSTModel(nn.Module):
    """Parsing network, per-domain heads, and the removable auxiliary modules."""

    def __init__(self, registry: Registry, domains, dim: int = 64, pairs=(), aux: bool = True):
        super().__init__()
        self.domain_ids = list(domains)
        self.pairs = [tuple(p) for p in pairs]
        self.net = ParseNet(dim)
        self.heads = nn.ModuleDict({d: Head(dim, registry[d].Z) for d in self.domain_ids})
        self.has_aux = aux
        if aux:
            self.msa = MSA(dim)
            self.mse = nn.ModuleDict({d: MSE(registry[d].Z, dim, registry[d].intra) for d in self.domain_ids})
            self.mst = nn.ModuleDict({pair_key(a, b): MST(dim, registry.static_matrix(a, b))
                                      for a, b in self.pairs})

    def logits(self, images, domain):
        return self.heads[domain](self.net(images).f)

    def describe(self) -> dict:
        return {"dim": self.net.dim, "domains": self.domain_ids,
                "pairs": [list(p) for p in self.pairs], "aux": self.has_aux}


def model_from_checkpoint(ckpt: Checkpoint, registry: Registry | None = None, strict=True) -> SSTModel:
    registry = registry or default_registry()
    spec = ckpt.metadata["model"]
    aux = any(not t.startswith(("core", "head:")) for t in ckpt.tags.values())
    domains = [t.split(":", 1)[1] for t in ckpt.components() if t.startswith("head:")]
    domains = [d for d in spec["domains"] if d in domains]
    pairs = spec["pairs"] if aux else []
    model = SSTModel(registry, domains, spec["dim"], pairs, aux=aux)
    model.load_state_dict(ckpt.state_dict(), strict=strict)
    return model


def to_tensors(images, labels):
    x = torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2).float() / 255.0
    y = torch.from_numpy(np.ascontiguousarray(labels)).long()
    return x, y


def flip_lut(names):
    """Label permutation that swaps left/right categories under a horizontal flip."""
    lut = np.arange(256, dtype=np.int64)
    for i, n in enumerate(names):
        if n.startswith("left-") and ("right-" + n[5:]) in names:
            j = names.index("right-" + n[5:])
            lut[i], lut[j] = j, i
    return torch.from_numpy(lut)


def augment(x, y, gen: torch.Generator, lut):
    """Random resize in [0.5, 2], crop/pad back to size, horizontal flip."""
    H, W = x.shape[-2:]
    out_x, out_y = torch.zeros_like(x), torch.full_like(y, 255)
    for i in range(x.shape[0]):
        s = 0.5 + 1.5 * float(torch.rand((), generator=gen))
        h, w = max(8, int(H * s)), max(8, int(W * s))
        xi = F.interpolate(x[i:i + 1], size=(h, w), mode="bilinear", align_corners=False)[0]
        yi = F.interpolate(y[i:i + 1, None].float(), size=(h, w), mode="nearest")[0, 0].long()
        top = int(torch.randint(0, max(1, h - H + 1), (), generator=gen))
        left = int(torch.randint(0, max(1, w - W + 1), (), generator=gen))
        xi, yi = xi[:, top:top + H, left:left + W], yi[top:top + H, left:left + W]
        out_x[i, :, :xi.shape[1], :xi.shape[2]] = xi
        out_y[i, :yi.shape[0], :yi.shape[1]] = yi
        if float(torch.rand((), generator=gen)) < 0.5:
            out_x[i] = out_x[i].flip(-1)
            out_y[i] = lut[out_y[i].flip(-1)]
    return out_x, out_y


def domain_forward(model: SSTModel, d: str, pyr, labels, Z: int, cfg: TrainConfig, need_mse: bool):
    """Seg/aux losses for one domain's slice of the batch plus the MSE state for transfer."""
    out = {}
    out_state = None
    logits = model.heads[d](pyr.f)
    out[f"seg/{d}"] = seg_loss(logits, labels)
    if need_mse:
        feats = model.msa(pyr, labels, Z)
        xs = model.mse[d](feats, masked=cfg.aux_loss != "unmasked")
        if cfg.aux_loss != "off":
            out[f"aux/{d}"] = aux_loss(aux_logits(pyr.f, xs[-1]), labels)
        out_state = (model.mse[d].x0, xs, feats)
    return out, out_state


def _slice_pyramid(pyr, start, stop):
    return type(pyr)(*(t[start:stop] for t in pyr))


def _pair_index(na, nb):
    n = max(na, nb)
    return torch.arange(n) % na, torch.arange(n) % nb


def _gather(state, idx):
    x0, xs, feats = state
    from sst.msa import CategoryFeatures
    return (x0, [x[idx] for x in xs],
            [CategoryFeatures(f.s[idx], f.presence[idx], f.scale) for f in feats])


def pair_losses(mst: MST, a_state, b_state, key: str, cfg: TrainConfig):
    out = {}
    if cfg.scr_dataset:
        out[f"scr_dataset/{key}"] = mst.dataset_loss(a_state[0], b_state[0])
    if cfg.scr_image:
        ia, ib = _pair_index(a_state[1][0].shape[0], b_state[1][0].shape[0])
        _, xa, fa = _gather(a_state, ia)
        _, xb, fb = _gather(b_state, ib)
        out[f"scr_image/{key}"] = mst.image_loss(xa, xb, fa, fb)
    return out


def weighted_total(parts: dict, cfg: TrainConfig):
    weights = {"seg": cfg.alpha, "aux": cfg.beta, "scr_dataset": cfg.lam, "scr_image": cfg.lam}
    total = 0.0
    for name, value in parts.items():
        total = total + weights[name.split("/", 1)[0]] * value
    return total


def universal_losses(model: SSTModel, batch: dict, registry: Registry, cfg: TrainConfig):
    """Named, unweighted loss components for one multi-domain batch.

    ``batch`` maps domain id to ``(images, labels)`` tensors. The images are
    stacked through the shared network and split only at domain layers.
    """
    ids = list(batch)
    sizes = [batch[d][0].shape[0] for d in ids]
    pyr = model.net(torch.cat([batch[d][0] for d in ids]))
    use_scr = (cfg.scr_dataset or cfg.scr_image) and model.pairs
    need_mse = model.has_aux and (cfg.aux_loss != "off" or use_scr)
    parts, states, start = {}, {}, 0
    for d, n in zip(ids, sizes):
        sub = _slice_pyramid(pyr, start, start + n)
        start += n
        p, states[d] = domain_forward(model, d, sub, batch[d][1], registry[d].Z, cfg, need_mse)
        parts.update(p)
    if use_scr:
        for a, b in model.pairs:
            if a in states and b in states:
                parts.update(pair_losses(model.mst[pair_key(a, b)], states[a], states[b], pair_key(a, b), cfg))
    return parts


def _check_finite(parts):
    for name, value in parts.items():
        if not torch.isfinite(value).all():
            raise FloatingPointError(f"non-finite loss component {name}")


class Loader:
    """Seed-ordered sub-batches, one per domain per step; shorter datasets cycle."""

    def __init__(self, data: dict, batch: int, seed: int, aug: bool = False, registry=None):
        self.data = {d: to_tensors(*v) for d, v in data.items()}
        self.batch = batch
        self.seed = seed
        self.aug = aug
        self.luts = {d: flip_lut(list(registry[d].names)) for d in data} if aug else {}

    def steps(self):
        return math.ceil(max(len(v[1]) for v in self.data.values()) / self.batch)

    def epoch(self, epoch: int):
        gen = torch.Generator().manual_seed(self.seed * 1000003 + epoch)
        orders = {d: torch.randperm(len(v[1]), generator=gen) for d, v in self.data.items()}
        for step in range(self.steps()):
            batch = {}
            for d, (x, y) in self.data.items():
                idx = orders[d][(torch.arange(self.batch) + step * self.batch) % len(y)]
                xb, yb = x[idx], y[idx]
                if self.aug:
                    xb, yb = augment(xb, yb, gen, self.luts[d])
                batch[d] = (xb, yb)
            yield batch


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _metadata(model, cfg, registry, epoch, extra=None):
    meta = {"config": cfg.to_json(), "epoch": epoch, "seed": cfg.seed,
            "registry": registry.hash(), "model": model.describe(),
            "optimizer": {"name": "adam", "betas": [0.9, 0.999], "eps": 1e-8}}
    meta.update(extra or {})
    return meta


def _run(model, params, loss_fn, loader, cfg, log_path=None, on_epoch=None):
    opt = torch.optim.Adam(params, lr=cfg.base_lr, fused=True)
    history = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            _set_lr(opt, lr)
            sums, count = {}, 0
            for batch in loader.epoch(epoch):
                parts = loss_fn(batch)
                _check_finite(parts)
                total = weighted_total(parts, cfg)
                opt.zero_grad(set_to_none=True)
                total.backward()
                opt.step()
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + float(v.detach())
                sums["total"] = sums.get("total", 0.0) + float(total.detach())
                count += 1
            record = {"epoch": epoch, "lr": lr, "steps": count,
                      "losses": {k: v / count for k, v in sorted(sums.items())}}
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            log.info("epoch %d lr %.2e total %.4f", epoch, lr, record["losses"]["total"])
            if on_epoch:
                on_epoch(epoch, record)
    finally:
        if log_file:
            log_file.close()
    return history


def build_universal(cfg: TrainConfig, registry: Registry, domains=None) -> SSTModel:
    torch.manual_seed(cfg.seed)
    domains = list(domains or cfg.domains)
    pairs = build_pairs(domains, cfg.strategy) if (cfg.scr_dataset or cfg.scr_image) else []
    return SSTModel(registry, domains, cfg.dim, pairs, aux=cfg.sst)


def universal_step(model, opt, batch, registry, cfg):
    """One optimizer update on the universal objective; returns the named components and total."""
    parts = universal_losses(model, batch, registry, cfg)
    _check_finite(parts)
    total = weighted_total(parts, cfg)
    opt.zero_grad(set_to_none=True)
    total.backward()
    opt.step()
    return {k: float(v.detach()) for k, v in parts.items()}, float(total.detach())


def train_universal(data: dict, cfg: TrainConfig, registry: Registry | None = None,
                    log_path=None, extra_meta=None):
    """Train on ``data`` (domain id -> (images, labels) arrays); returns ``(model, checkpoint, history)``."""
    registry = registry or default_registry()
    missing = [d for d in cfg.domains if d not in data]
    if missing:
        raise ConfigError(f"no training data for domains {missing}")
    model = build_universal(cfg, registry)
    model.train()
    loader = Loader({d: data[d] for d in cfg.domains}, cfg.batch_per_domain, cfg.seed, cfg.augment, registry)
    history = _run(model, list(model.parameters()),
                   lambda b: universal_losses(model, b, registry, cfg), loader, cfg, log_path)
    ckpt = Checkpoint.from_module(model, _metadata(model, cfg, registry, cfg.epochs, extra_meta))
    return model, ckpt, history


def dedicated_pretrain(data: dict, cfg: TrainConfig, registry: Registry | None = None,
                       log_path=None, extra_meta=None):
    """First step: seg + aux on the source domain(s), no transfer module."""
    cfg = dataclasses.replace(cfg, scr_dataset=False, scr_image=False)
    return train_universal(data, cfg, registry, log_path, extra_meta)


def dedicated_transfer(pretrained: Checkpoint, target: str, data: dict, cfg: TrainConfig,
                       registry: Registry | None = None, log_path=None, extra_meta=None):
    """Second step: frozen teacher on the source domain(s), student on ``target``.

    ``data`` must contain the source domains' data and the target domain's data.
    The student starts from the teacher's core parameters with a fresh head and
    fresh auxiliary modules. Returns ``(student, checkpoint, history, teacher)``.
    """
    registry = registry or default_registry()
    have = pretrained.metadata.get("registry")
    if have != registry.hash():
        raise RegistryMismatch(f"checkpoint registry {have} != current registry {registry.hash()}")
    teacher = model_from_checkpoint(pretrained, registry)
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    sources = [d for d in teacher.domain_ids if d != target]
    if not sources:
        raise ConfigError(f"the pretrained checkpoint has no source domain other than {target!r}")
    if target not in data:
        raise ConfigError(f"no data for target domain {target!r}")
    use_scr = cfg.lam > 0 and (cfg.scr_dataset or cfg.scr_image)
    for s in sources if use_scr else []:
        if s not in data:
            raise ConfigError(f"no data for source domain {s!r}")
    if use_scr and not teacher.has_aux:
        raise ConfigError("transfer needs a pretrained checkpoint that still has its MSA/MSE modules")
    teacher_masked = pretrained.metadata.get("config", {}).get("aux_loss", "masked") != "unmasked"

    cfg = dataclasses.replace(cfg, domains=[target] + sources)
    torch.manual_seed(cfg.seed)
    pairs = [(s, target) for s in sources] if use_scr else []
    student = SSTModel(registry, [target], teacher.net.dim, pairs=[], aux=cfg.aux_loss != "off" or use_scr)
    student.net.load_state_dict(teacher.net.state_dict())
    mst = nn.ModuleDict({pair_key(s, t): MST(teacher.net.dim, registry.static_matrix(s, t)) for s, t in pairs})
    student.pairs = pairs
    if use_scr:
        student.mst = mst
    student.train()

    loader_data = {target: data[target]}
    if use_scr:
        loader_data.update({s: data[s] for s in sources})
    loader = Loader(loader_data, cfg.batch_per_domain, cfg.seed, cfg.augment, registry)
    need_mse = student.has_aux

    def loss_fn(batch):
        x, y = batch[target]
        pyr = student.net(x)
        parts, state = domain_forward(student, target, pyr, y, registry[target].Z, cfg, need_mse)
        if use_scr:
            for s in sources:
                xs_, ys_ = batch[s]
                with torch.no_grad():
                    tpyr = teacher.net(xs_)
                    feats = teacher.msa(tpyr, ys_, registry[s].Z)
                    txs = teacher.mse[s](feats, masked=teacher_masked)
                    tstate = (teacher.mse[s].x0, txs, feats)
                parts.update(pair_losses(student.mst[pair_key(s, target)], tstate, state,
                                         pair_key(s, target), cfg))
        return parts

    history = _run(student, list(student.parameters()), loss_fn, loader, cfg, log_path)
    meta = _metadata(student, cfg, registry, cfg.epochs, extra_meta)
    meta["pretrained"] = {"registry": have, "epoch": pretrained.metadata.get("epoch")}
    return student, Checkpoint.from_module(student, meta), history, teacher


def load_training_data(specs, split="train", fraction=1.0, seed=0):
    """``specs``: iterable of (domain, directory) pairs -> {domain: (images, labels)}."""
    out = {}
    for domain, path in specs:
        images, labels, _ = synthgen.load_split(path, domain, split, fraction, seed)
        out[domain] = (images, labels)
    return out


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
