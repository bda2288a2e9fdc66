"""Label domains, their spatial-adjacency priors, and cross-domain links.

A domain file is JSON::

    {"id": "coarse", "names": [...], "intra_edges": [[i, j], ...],
     "palette": [[r, g, b], ...]}

Symmetry and the diagonal are added at load time, and background (index 0)
is made adjacent to every category. A link file is JSON with ``src``,
``dst`` and either ``coarsening`` (one dst index per src category) or
``matrix`` (row-major Z_dst x Z_src values in [0, 1]).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from sst import kernels


class DomainError(ValueError):
    """Raised when a domain or link definition violates its invariants."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LabelDomain:
    id: str
    names: tuple
    intra: np.ndarray = field(repr=False)
    palette: np.ndarray = field(repr=False)

    @property
    def Z(self) -> int:
        return len(self.names)

    def __post_init__(self):
        Z = len(self.names)
        if Z == 0:
            raise DomainError(f"domain {self.id!r}: names: empty")
        if len(set(self.names)) != Z:
            raise DomainError(f"domain {self.id!r}: names: duplicate category names")
        m = np.asarray(self.intra)
        if m.shape != (Z, Z):
            raise DomainError(f"domain {self.id!r}: intra: shape {m.shape} != ({Z}, {Z})")
        if not np.isin(m, (0, 1)).all():
            raise DomainError(f"domain {self.id!r}: intra: entries must be 0 or 1")
        if not (m == m.T).all():
            i, j = np.argwhere(m != m.T)[0]
            raise DomainError(f"domain {self.id!r}: intra: not symmetric at [{i}][{j}]")
        if not (np.diag(m) == 1).all():
            raise DomainError(f"domain {self.id!r}: intra: diagonal must be 1")
        if not (m[0] == 1).all():
            raise DomainError(f"domain {self.id!r}: intra: background row must be all 1")
        p = np.asarray(self.palette)
        if p.shape != (Z, 3) or p.min(initial=0) < 0 or p.max(initial=0) > 255:
            raise DomainError(f"domain {self.id!r}: palette: expected {Z} [r, g, b] entries in 0..255")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "intra", _frozen(m, np.uint8))
        object.__setattr__(self, "palette", _frozen(p, np.uint8))

    def to_json(self) -> dict:
        iu = np.argwhere(np.triu(self.intra, 1))
        edges = [[int(i), int(j)] for i, j in iu if i != 0]
        return {
            "id": self.id,
            "names": list(self.names),
            "intra_edges": edges,
            "palette": self.palette.tolist(),
        }


def domain_from_json(obj: dict) -> LabelDomain:
    for key in ("id", "names", "intra_edges", "palette"):
        if key not in obj:
            raise DomainError(f"domain: missing field {key!r}")
    names = list(obj["names"])
    Z = len(names)
    if "Z" in obj and int(obj["Z"]) != Z:
        raise DomainError(f"domain {obj['id']!r}: names: declared Z={obj['Z']} but {Z} names given")
    m = np.eye(Z, dtype=np.int64)
    m[0, :] = 1
    m[:, 0] = 1
    for edge in obj["intra_edges"]:
        if len(edge) != 2:
            raise DomainError(f"domain {obj['id']!r}: intra_edges: bad pair {edge!r}")
        i, j = int(edge[0]), int(edge[1])
        if not (0 <= i < Z and 0 <= j < Z):
            raise DomainError(f"domain {obj['id']!r}: intra_edges: index out of range in {edge!r}")
        m[i, j] = m[j, i] = 1
    return LabelDomain(obj["id"], tuple(names), m, obj["palette"])


def load_domain(path) -> LabelDomain:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"{path}: cannot parse domain file: {exc}") from exc
    # a raw matrix may be given instead of an edge list
    if "intra" in obj and "intra_edges" not in obj:
        m = np.asarray(obj["intra"])
        return LabelDomain(obj["id"], tuple(obj["names"]), m, obj["palette"])
    return domain_from_json(obj)


@dataclass(frozen=True)
class CrossLink:
    src: str
    dst: str
    matrix: np.ndarray = field(repr=False)
    coarsening: tuple | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise DomainError(f"link {self.src}->{self.dst}: matrix must be 2-D")
        if not np.isfinite(m).all() or m.min() < 0 or m.max() > 1:
            raise DomainError(f"link {self.src}->{self.dst}: matrix entries must lie in [0, 1]")
        empty = np.flatnonzero(~(m > 0).any(axis=1))
        if len(empty):
            raise DomainError(f"link {self.src}->{self.dst}: matrix rows {empty.tolist()} are all zero")
        if self.coarsening is not None:
            c = tuple(int(v) for v in self.coarsening)
            if len(c) != m.shape[1]:
                raise DomainError(f"link {self.src}->{self.dst}: coarsening length {len(c)} != Z_src {m.shape[1]}")
            if c[0] != 0:
                raise DomainError(f"link {self.src}->{self.dst}: coarsening must send background to background")
            for z, cz in enumerate(c):
                if m[cz, z] != 1:
                    raise DomainError(f"link {self.src}->{self.dst}: matrix[{cz}][{z}] must be 1 under the coarsening")
            object.__setattr__(self, "coarsening", c)
        object.__setattr__(self, "matrix", _frozen(m, np.float64))

    @property
    def shape(self):
        return self.matrix.shape

    def to_json(self) -> dict:
        out = {"src": self.src, "dst": self.dst}
        if self.coarsening is not None:
            out["coarsening"] = list(self.coarsening)
        else:
            out["matrix"] = self.matrix.tolist()
        return out


def derive_static_from_hierarchy(coarsening, z_dst: int) -> np.ndarray:
    """Hard {0, 1} similarity matrix: entry [c][f] is 1 iff f coarsens to c."""
    coarsening = list(coarsening)
    unmapped = [i for i, c in enumerate(coarsening) if c is None or not (0 <= int(c) < z_dst)]
    if unmapped:
        raise DomainError(f"coarsening is not total: unmapped source indices {unmapped}")
    m = np.zeros((z_dst, len(coarsening)), dtype=np.float64)
    m[[int(c) for c in coarsening], np.arange(len(coarsening))] = 1.0
    return m


def link_from_json(obj: dict, domains: dict | None = None) -> CrossLink:
    src, dst = obj.get("src"), obj.get("dst")
    if src is None or dst is None:
        raise DomainError("link: missing 'src' or 'dst'")
    if "coarsening" in obj:
        if domains is None or dst not in domains:
            z_dst = max(obj["coarsening"]) + 1
        else:
            z_dst = domains[dst].Z
        matrix = derive_static_from_hierarchy(obj["coarsening"], z_dst)
        link = CrossLink(src, dst, matrix, tuple(obj["coarsening"]))
    elif "matrix" in obj:
        link = CrossLink(src, dst, np.asarray(obj["matrix"], dtype=np.float64))
    else:
        raise DomainError(f"link {src}->{dst}: needs 'coarsening' or 'matrix'")
    if domains is not None:
        for key in (src, dst):
            if key not in domains:
                raise DomainError(f"link {src}->{dst}: unknown domain {key!r}")
        want = (domains[dst].Z, domains[src].Z)
        if link.shape != want:
            raise DomainError(f"link {src}->{dst}: matrix shape {link.shape} != expected {want}")
    return link


def load_link(path, domains: dict | None = None) -> CrossLink:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"{path}: cannot parse link file: {exc}") from exc
    return link_from_json(obj, domains)


def coarsen_labels(label_map, coarsening) -> np.ndarray:
    """Apply a fine->coarse index map to every pixel; 255 stays ignored."""
    out, bi, bj = kernels.remap(label_map, np.asarray(coarsening, dtype=np.int64))
    if bi >= 0:
        v = int(np.asarray(label_map)[bi, bj])
        raise DomainError(f"label {v} at ({bi}, {bj}) is outside the coarsening map (size {len(coarsening)})")
    return out


def compose(first, second) -> tuple:
    """Coarsening equivalent to applying ``first`` then ``second``."""
    return tuple(int(second[c]) for c in first)


class Registry:
    """Immutable collection of domains and the links between them."""

    def __init__(self, domains, links=()):
        self.domains = {d.id: d for d in domains}
        self.links = {}
        for link in links:
            for key in (link.src, link.dst):
                if key not in self.domains:
                    raise DomainError(f"link {link.src}->{link.dst}: unknown domain {key!r}")
            want = (self.domains[link.dst].Z, self.domains[link.src].Z)
            if link.shape != want:
                raise DomainError(f"link {link.src}->{link.dst}: matrix shape {link.shape} != expected {want}")
            self.links[(link.src, link.dst)] = link

    def __getitem__(self, key) -> LabelDomain:
        return self.domains[key]

    def __contains__(self, key):
        return key in self.domains

    def static_matrix(self, src: str, dst: str) -> np.ndarray:
        """Z_dst x Z_src similarity, transposing a stored dst->src link if needed."""
        if src == dst:
            return np.eye(self.domains[src].Z)
        if (src, dst) in self.links:
            return np.array(self.links[(src, dst)].matrix)
        if (dst, src) in self.links:
            return np.array(self.links[(dst, src)].matrix).T
        raise DomainError(f"no link between {src!r} and {dst!r}")

    def coarsening(self, src: str, dst: str):
        if src == dst:
            return tuple(range(self.domains[src].Z))
        link = self.links.get((src, dst))
        if link is not None and link.coarsening is not None:
            return link.coarsening
        # search a chain of coarsening links
        for (a, b), l in self.links.items():
            if a == src and l.coarsening is not None:
                try:
                    rest = self.coarsening(b, dst)
                except DomainError:
                    continue
                return compose(l.coarsening, rest)
        raise DomainError(f"no coarsening chain from {src!r} to {dst!r}")

    def to_json(self) -> dict:
        return {
            "domains": [self.domains[k].to_json() for k in sorted(self.domains)],
            "links": [self.links[k].to_json() for k in sorted(self.links)],
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dir(cls, path) -> "Registry":
        path = Path(path)
        domains = [load_domain(p) for p in sorted(path.glob("domain_*.json"))]
        by_id = {d.id: d for d in domains}
        links = [load_link(p, by_id) for p in sorted(path.glob("link_*.json"))]
        return cls(domains, links)


def default_registry() -> Registry:
    """The shipped synthetic coarse / mid / fine domains."""
    root = resources.files("sst") / "data"
    with resources.as_file(root) as path:
        return Registry.from_dir(path)


FINE, MID, COARSE = "fine", "mid", "coarse"
