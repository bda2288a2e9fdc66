"""Named-tensor checkpoints: ``manifest.json`` + ``tensors.bin``.

``tensors.bin`` holds row-major little-endian float32 data concatenated in
manifest order (names sorted). Each manifest entry records shape, byte offset,
byte length and a component tag (core, head:<domain>, msa, mse:<domain>,
mst:<pair>).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "sst-checkpoint/1"
MANIFEST = "manifest.json"
TENSORS = "tensors.bin"


def component_of(name: str) -> str:
    head, _, rest = name.partition(".")
    if head == "net":
        return "core"
    if head in ("heads", "mse", "mst"):
        sub = rest.split(".", 1)[0]
        return f"{'head' if head == 'heads' else head}:{sub}"
    if head == "msa":
        return "msa"
    raise ValueError(f"cannot tag parameter {name!r}")


@dataclass
class Checkpoint:
    tensors: dict  # name -> float32 ndarray
    tags: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tensors = {k: np.ascontiguousarray(v, dtype="<f4") for k, v in self.tensors.items()}
        for k in self.tensors:
            self.tags.setdefault(k, component_of(k))
        missing = set(self.tensors) - set(self.tags)
        if missing:
            raise ValueError(f"untagged parameters: {sorted(missing)}")

    @classmethod
    def from_module(cls, module, metadata=None):
        tensors = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
        return cls(tensors, {}, dict(metadata or {}))

    def components(self):
        return sorted(set(self.tags.values()))

    def subset(self, keep) -> "Checkpoint":
        """Only the entries whose component tag satisfies ``keep(tag)``."""
        names = [k for k in self.tensors if keep(self.tags[k])]
        return Checkpoint({k: self.tensors[k] for k in names},
                          {k: self.tags[k] for k in names}, json.loads(json.dumps(self.metadata)))

    def state_dict(self):
        import torch
        return {k: torch.from_numpy(v.astype(np.float32)) for k, v in self.tensors.items()}

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        entries, chunks, offset = {}, [], 0
        for name in sorted(self.tensors):
            data = self.tensors[name].tobytes()
            entries[name] = {"shape": list(self.tensors[name].shape), "offset": offset,
                             "nbytes": len(data), "component": self.tags[name]}
            chunks.append(data)
            offset += len(data)
        manifest = {"format": FORMAT, "dtype": "float32-le", "tensors": entries, "metadata": self.metadata}
        (path / TENSORS).write_bytes(b"".join(chunks))
        (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        manifest = json.loads((path / MANIFEST).read_text())
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
        blob = (path / TENSORS).read_bytes()
        tensors, tags = {}, {}
        for name, e in manifest["tensors"].items():
            raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
            if len(raw) != e["nbytes"]:
                raise ValueError(f"{path}: tensor {name} is truncated")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).copy()
            tags[name] = e["component"]
        return cls(tensors, tags, manifest.get("metadata", {}))

    def size_bytes(self) -> int:
        return sum(v.nbytes for v in self.tensors.values())
