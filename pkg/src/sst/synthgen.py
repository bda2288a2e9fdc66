"""Procedural articulated figures with pixel-exact part labels.

Figures are laid out in a 48-unit reference frame and scaled to the canvas
with integer arithmetic, so every raster is bit-reproducible. Labels are
painted at the fine granularity; coarser rasters come from the registry's
coarsening maps.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from sst import kernels, netpbm
from sst.domains import DomainError, Registry, coarsen_labels, default_registry

log = logging.getLogger(__name__)

MIN_CANVAS = 32
MARGIN = 2
NOISE = 16
REF = 48

# fine label indices
BG, HAT, HAIR, FACE, TORSO = 0, 1, 2, 3, 4
L_UPPER, R_UPPER, L_LOWER, R_LOWER = 5, 6, 7, 8
L_LEG, R_LEG, SHOES = 9, 10, 11

JOINTS = (
    "head", "neck", "pelvis",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
)


class CanvasError(ValueError):
    pass


@dataclass(frozen=True)
class FigureSkeleton:
    seed: int
    canvas: tuple
    joints: dict = field(repr=False)
    widths: dict = field(repr=False)
    hat: bool = False
    long_hair: bool = False
    hat_halfwidth: int = 3


@dataclass
class SegSample:
    image: np.ndarray
    labels: dict
    seed: int = 0

    @property
    def domain_ids(self):
        return list(self.labels)


def sample_figure(seed: int, canvas=(REF, REF)) -> FigureSkeleton:
    """Draw a random pose; a pure function of ``(seed, canvas)``."""
    H, W = int(canvas[0]), int(canvas[1])
    if H < MIN_CANVAS or W < MIN_CANVAS:
        raise CanvasError(f"canvas {H}x{W} is smaller than {MIN_CANVAS}x{MIN_CANVAS}")
    rng = np.random.default_rng(int(seed) % 2**64)

    def r(lo, hi):
        return int(rng.integers(lo, hi + 1))

    cx, dy = 24 + r(-3, 3), r(-1, 1)
    tw = r(4, 5)
    j = {
        "head": (cx, 9 + dy),
        "neck": (cx, 15 + dy),
        "pelvis": (cx, 26 + dy),
        "l_shoulder": (cx - tw - 1, 16 + dy),
        "r_shoulder": (cx + tw + 1, 16 + dy),
        "l_hip": (cx - 3, 28 + dy),
        "r_hip": (cx + 3, 28 + dy),
    }
    for side, sign in (("l", -1), ("r", 1)):
        sx, sy = j[f"{side}_shoulder"]
        ex, ey = sx + sign * r(3, 6), sy + r(-2, 6)
        j[f"{side}_elbow"] = (ex, ey)
        j[f"{side}_wrist"] = (ex + sign * r(2, 5), ey + r(-4, 6))
        hx, hy = j[f"{side}_hip"]
        kx, ky = hx + sign * r(0, 2), hy + r(6, 7)
        j[f"{side}_knee"] = (kx, ky)
        j[f"{side}_ankle"] = (kx + sign * r(0, 2), ky + r(6, 7))
    widths = {
        "head": 4, "torso": tw, "leg": 2, "shoe": 1, "hat": 1,
        "l_upper": r(1, 2), "r_upper": r(1, 2), "l_lower": r(1, 2), "r_lower": r(1, 2),
    }
    hat, long_hair, hat_hw = bool(r(0, 1)), bool(r(0, 1)), r(2, 4)

    s = min(H, W)
    ox, oy = (W - s) // 2, (H - s) // 2
    joints = {k: (ox + x * s // REF, oy + y * s // REF) for k, (x, y) in j.items()}
    widths = {k: max(1, v * s // REF) for k, v in widths.items()}
    for name, (x, y) in joints.items():
        if not (MARGIN <= x < W - MARGIN and MARGIN <= y < H - MARGIN):
            raise CanvasError(f"joint {name} at ({x}, {y}) violates the {MARGIN}px margin on {H}x{W}")
    return FigureSkeleton(int(seed), (H, W), joints, widths, hat, long_hair,
                          max(1, hat_hw * s // REF))


def render_fine(fig: FigureSkeleton) -> np.ndarray:
    """Fine label raster, painted back to front."""
    H, W = fig.canvas
    out = np.zeros((H, W), dtype=np.uint8)
    j, w = fig.joints, fig.widths
    cap = kernels.fill_capsule
    s = min(H, W)

    for side, label in (("l", L_LEG), ("r", R_LEG)):
        cap(out, j[f"{side}_hip"], j[f"{side}_knee"], w["leg"], label)
        cap(out, j[f"{side}_knee"], j[f"{side}_ankle"], w["leg"], label)
    for side, sign in (("l", -1), ("r", 1)):
        ax, ay = j[f"{side}_ankle"]
        cap(out, (ax, ay), (ax + sign * max(1, 2 * s // REF), ay), w["shoe"], SHOES)
    cap(out, j["neck"], j["pelvis"], w["torso"], TORSO)
    for side, up, low in (("l", L_UPPER, L_LOWER), ("r", R_UPPER, R_LOWER)):
        cap(out, j[f"{side}_shoulder"], j[f"{side}_elbow"], w[f"{side}_upper"], up)
        cap(out, j[f"{side}_elbow"], j[f"{side}_wrist"], w[f"{side}_lower"], low)
    hx, hy = j["head"]
    hr = w["head"]
    cap(out, (hx, hy), (hx, hy), hr, FACE)
    line = hy if fig.long_hair else hy - max(1, 2 * s // REF)
    cap(out, (hx, hy), (hx, hy), hr, HAIR, row_max=line)
    if fig.hat:
        top = hy - hr
        cap(out, (hx - fig.hat_halfwidth, top), (hx + fig.hat_halfwidth, top), w["hat"], HAT)
    return out


# fine label -> clothing group; parts in one group share a colour within a sample
APPEARANCE_GROUPS = (0, 1, 2, 3, 4, 4, 4, 3, 3, 5, 5, 6)  # bg, hat, hair, skin, shirt, pants, shoes


def appearance_palette(seed: int) -> np.ndarray:
    """Per-sample fine-label colours: torso and upper arms share the shirt
    colour, face and lower arms the skin colour, both legs the trouser colour.
    Parts are therefore told apart by shape and layout, not by colour alone."""
    rng = np.random.default_rng([int(seed) % 2**64, 2])
    groups = rng.integers(0, 256, size=(max(APPEARANCE_GROUPS) + 1, 3), dtype=np.int16)
    return groups[list(APPEARANCE_GROUPS)]


def _chain(registry: Registry, domain_ids):
    root = domain_ids[0]
    maps = {}
    for d in domain_ids[1:]:
        try:
            maps[d] = registry.coarsening(root, d)
        except DomainError as exc:
            raise DomainError(f"domains {list(domain_ids)} do not form a coarsening chain from {root!r}: {exc}") from exc
    return maps


def rasterize(fig: FigureSkeleton, registry: Registry | None = None,
              domain_ids=("fine", "mid", "coarse")) -> SegSample:
    registry = registry or default_registry()
    domain_ids = list(domain_ids)
    if not domain_ids:
        raise DomainError("rasterize needs at least the fine domain")
    maps = _chain(registry, domain_ids)
    fine = render_fine(fig)
    root = registry[domain_ids[0]]
    if int(fine.max()) >= root.Z:
        raise DomainError(f"root domain {root.id!r} has Z={root.Z}; figure uses {int(fine.max()) + 1} labels")
    labels = {domain_ids[0]: fine}
    for d, cmap in maps.items():
        labels[d] = coarsen_labels(fine, cmap)
    rng = np.random.default_rng([int(fig.seed) % 2**64, 1])
    noise = rng.integers(-NOISE, NOISE + 1, size=fine.shape + (3,), dtype=np.int16)
    image = np.clip(appearance_palette(fig.seed)[fine] + noise, 0, 255).astype(np.uint8)
    return SegSample(image, labels, fig.seed)


def make_sample(seed: int, canvas=(REF, REF), registry=None, domain_ids=("fine", "mid", "coarse")):
    return rasterize(sample_figure(seed, canvas), registry, domain_ids)


@dataclass
class GenConfig:
    out: str
    count: int = 100
    seed: int = 0
    canvas: tuple = (REF, REF)
    split: float = 0.8
    domains: tuple = ("fine", "mid", "coarse")


def generate_dataset(cfg: GenConfig, registry: Registry | None = None) -> dict:
    """Write images, per-domain label rasters and ``manifest.json``; returns the manifest."""
    if cfg.count <= 0:
        raise ValueError(f"count must be positive, got {cfg.count}")
    if not 0.0 <= cfg.split <= 1.0:
        raise ValueError(f"split must lie in [0, 1], got {cfg.split}")
    registry = registry or default_registry()
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "images").mkdir(exist_ok=True)
        for d in cfg.domains:
            (out / "labels" / d).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc

    # rasters are produced for the full chain, only the requested domains are stored
    root = _chain_root(registry, cfg.domains)
    chain = [root] + [d for d in cfg.domains if d != root]
    n_train = int(round(cfg.count * cfg.split))
    samples = []
    for i in range(cfg.count):
        seed = int(cfg.seed) ^ i
        sample = make_sample(seed, cfg.canvas, registry, chain)
        name = f"{i:06d}"
        netpbm.write_ppm(out / "images" / f"{name}.ppm", sample.image)
        entry = {"id": name, "seed": seed, "image": f"images/{name}.ppm",
                 "split": "train" if i < n_train else "test", "labels": {}}
        for d in cfg.domains:
            rel = f"labels/{d}/{name}.pgm"
            netpbm.write_pgm(out / rel, sample.labels[d])
            entry["labels"][d] = rel
        samples.append(entry)
    manifest = {
        "config": {"count": cfg.count, "seed": cfg.seed, "canvas": list(cfg.canvas),
                   "split": cfg.split, "domains": list(cfg.domains)},
        "domains": list(cfg.domains),
        "registry": registry.hash(),
        "samples": samples,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("wrote %d samples to %s", cfg.count, out)
    return manifest


def _chain_root(registry: Registry, domain_ids):
    """The finest requested domain: the one every other requested domain coarsens from."""
    for cand in ("fine",) + tuple(domain_ids):
        if cand not in registry:
            continue
        try:
            _chain(registry, [cand] + [d for d in domain_ids if d != cand])
            return cand
        except DomainError:
            continue
    raise DomainError(f"no coarsening chain covers {list(domain_ids)}")


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text())


def load_split(root, domain: str, split: str | None = None, fraction: float = 1.0, seed: int = 0):
    """Load ``(images, labels, ids)`` for one domain; ``fraction`` < 1 keeps a seeded subset."""
    root = Path(root)
    manifest = load_manifest(root)
    entries = [e for e in manifest["samples"] if split is None or e["split"] == split]
    entries = [e for e in entries if domain in e["labels"]]
    if not entries:
        raise ValueError(f"{root}: no samples labelled for domain {domain!r} in split {split!r}")
    if fraction < 1.0:
        keep = max(1, int(round(len(entries) * fraction)))
        pick = np.sort(np.random.default_rng(seed).permutation(len(entries))[:keep])
        entries = [entries[i] for i in pick]
    images = np.stack([netpbm.read(root / e["image"]) for e in entries])
    labels = np.stack([netpbm.read(root / e["labels"][domain]) for e in entries])
    return images, labels, [e["id"] for e in entries]


def validate_dataset(root, registry: Registry | None = None) -> int:
    """Check every stored sample against its invariants; returns the sample count."""
    registry = registry or default_registry()
    root = Path(root)
    manifest = load_manifest(root)
    for e in manifest["samples"]:
        image = netpbm.read(root / e["image"])
        rasters = {d: netpbm.read(root / p) for d, p in e["labels"].items()}
        for d, lab in rasters.items():
            if lab.shape != image.shape[:2]:
                raise ValueError(f"{e['id']}: {d} raster shape {lab.shape} != image {image.shape[:2]}")
            valid = lab[lab != kernels.IGNORE]
            if valid.size and int(valid.max()) >= registry[d].Z:
                raise ValueError(f"{e['id']}: {d} label {int(valid.max())} >= Z={registry[d].Z}")
        for a in rasters:
            for b in rasters:
                if a == b:
                    continue
                try:
                    cmap = registry.coarsening(a, b)
                except DomainError:
                    continue
                if not np.array_equal(coarsen_labels(rasters[a], cmap), rasters[b]):
                    raise ValueError(f"{e['id']}: {b} raster is not the coarsening of {a}")
    return len(manifest["samples"])


def skeleton_dict(fig: FigureSkeleton) -> dict:
    return asdict(fig)
