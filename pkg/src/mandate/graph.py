"""Multi-relation attributed graphs: storage, on-disk format, synthetic generation, splits."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised when a dataset directory is missing pieces or is inconsistent."""


class StatisticError(ValueError):
    pass


@dataclass(frozen=True)
class MultiRelGraph:
    features: np.ndarray
    labels: np.ndarray
    adjacencies: tuple
    relation_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "features", np.array(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.array(self.labels, dtype=np.int64))
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise GraphFormatError("features must be a 2-d matrix")
        if self.labels.shape != (n,):
            raise GraphFormatError(f"label count {self.labels.shape[0]} != num_nodes {n}")
        if not np.all(np.isin(self.labels, (-1, 0, 1))):
            raise GraphFormatError("labels must lie in {-1, 0, 1}")
        adjs = tuple(_canonical_adjacency(a, n) for a in self.adjacencies)
        object.__setattr__(self, "adjacencies", adjs)
        if not self.relation_names:
            object.__setattr__(self, "relation_names", tuple(f"rel_{i}" for i in range(len(adjs))))
        elif len(self.relation_names) != len(adjs):
            raise GraphFormatError("relation_names length differs from adjacency count")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_relations(self) -> int:
        return len(self.adjacencies)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edges(self, relation: int) -> np.ndarray:
        """Undirected edge list (u < v) of one relation, sorted."""
        a = sp.triu(self.adjacencies[relation], k=1).tocoo()
        e = np.stack([a.row, a.col], axis=1).astype(np.int64)
        return e[np.lexsort((e[:, 1], e[:, 0]))]

    def degrees(self, relation: int) -> np.ndarray:
        return np.diff(self.adjacencies[relation].indptr)

    def subgraph_relations(self, relations: Sequence[int]) -> "MultiRelGraph":
        return MultiRelGraph(
            np.array(self.features),
            np.array(self.labels),
            tuple(self.adjacencies[r] for r in relations),
            tuple(self.relation_names[r] for r in relations),
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.features.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        for r in range(self.num_relations):
            h.update(b"|rel|")
            h.update(np.ascontiguousarray(self.edges(r), dtype="<i8").tobytes())
        return h.hexdigest()


def _canonical_adjacency(a, n: int) -> sp.csr_matrix:
    a = sp.csr_matrix(a)
    if a.shape != (n, n):
        raise GraphFormatError(f"adjacency shape {a.shape} does not match num_nodes {n}")
    a = a.tocoo()
    mask = a.row != a.col
    rows, cols = a.row[mask], a.col[mask]
    data = np.ones(2 * rows.size)
    sym = sp.csr_matrix(
        (data, (np.concatenate([rows, cols]), np.concatenate([cols, rows]))), shape=(n, n)
    )
    sym.sum_duplicates()
    sym.data[:] = 1.0
    sym.sort_indices()
    return sym


def from_edge_lists(features, labels, edge_lists, relation_names=()) -> MultiRelGraph:
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    adjs = []
    for edges in edge_lists:
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphFormatError("node index out of range in edge list")
        adjs.append(sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)))
    return MultiRelGraph(features, np.asarray(labels, dtype=np.int64), tuple(adjs), tuple(relation_names))


# ---------------------------------------------------------------- disk format


def load_dataset(path) -> MultiRelGraph:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise GraphFormatError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text())
    try:
        n, num_rel, d = int(meta["num_nodes"]), int(meta["num_relations"]), int(meta["feature_dim"])
    except KeyError as exc:
        raise GraphFormatError(f"meta.json lacks key {exc}") from None
    names = tuple(meta.get("relations", [f"rel_{i}" for i in range(num_rel)]))
    if len(names) != num_rel:
        raise GraphFormatError("meta relations list length differs from num_relations")

    feat_path = path / "features.bin"
    if not feat_path.exists():
        raise GraphFormatError(f"missing file: {feat_path}")
    raw = np.fromfile(feat_path, dtype="<f4")
    if raw.size != n * d:
        rows = raw.size / d if d else raw.size
        raise GraphFormatError(
            f"dimension mismatch: features.bin holds {raw.size} values ({rows:g} rows of {d}), meta says n={n}"
        )
    features = raw.reshape(n, d).astype(np.float64)
    if not np.all(np.isfinite(features)):
        raise GraphFormatError("non-finite feature value")

    label_path = path / "labels.txt"
    if not label_path.exists():
        raise GraphFormatError(f"missing file: {label_path}")
    labels = np.array([int(t) for t in label_path.read_text().split()], dtype=np.int64)
    if labels.size != n:
        raise GraphFormatError(f"dimension mismatch: {labels.size} labels, meta says n={n}")

    edge_lists = []
    for i in range(num_rel):
        ep = path / f"rel_{i}.edges"
        if not ep.exists():
            raise GraphFormatError(f"missing file: {ep}")
        text = ep.read_text().split()
        if len(text) % 2:
            raise GraphFormatError(f"{ep.name}: odd number of indices")
        edge_lists.append(np.array([int(t) for t in text], dtype=np.int64).reshape(-1, 2))
    return from_edge_lists(features, labels, edge_lists, names)


def save_dataset(graph: MultiRelGraph, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_nodes": graph.num_nodes,
        "num_relations": graph.num_relations,
        "feature_dim": graph.feature_dim,
        "relations": list(graph.relation_names),
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.ascontiguousarray(graph.features, dtype="<f4").tofile(path / "features.bin")
    (path / "labels.txt").write_text("".join(f"{int(v)}\n" for v in graph.labels))
    for r in range(graph.num_relations):
        lines = "".join(f"{u} {v}\n" for u, v in graph.edges(r))
        (path / f"rel_{r}.edges").write_text(lines)


# ---------------------------------------------------------------- statistics


def homophily_ratio(graph: MultiRelGraph, relation: int) -> float:
    """Fraction of fully-labeled undirected edges whose endpoints share a label."""
    if not 0 <= relation < graph.num_relations:
        raise IndexError(f"relation {relation} out of range")
    e = graph.edges(relation)
    lu, lv = graph.labels[e[:, 0]], graph.labels[e[:, 1]]
    labeled = (lu >= 0) & (lv >= 0)
    if not labeled.any():
        raise StatisticError("homophily undefined: no edge with both endpoints labeled")
    return float(np.mean(lu[labeled] == lv[labeled]))


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def to_json(self) -> str:
        return json.dumps({k: [int(i) for i in self[k]] for k in ("train", "val", "test")})

    @classmethod
    def from_json(cls, text: str) -> "SplitAssignment":
        d = json.loads(text)
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("train", "val", "test")))


def split_nodes(graph: MultiRelGraph, ratios=(0.4, 0.2, 0.4), seed: int = 0) -> SplitAssignment:
    """Stratified split of the labeled nodes; unlabeled nodes are left out."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three nonnegative fractions summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    labels = graph.labels
    if not np.any(labels >= 0):
        raise ValueError("no labeled nodes to split")
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 3:
            raise ValueError(f"class {cls} has {idx.size} labeled nodes, need at least 3")
        idx = rng.permutation(idx)
        n_train = int(round(ratios[0] * idx.size))
        n_val = int(round(ratios[1] * idx.size))
        n_val = min(n_val, idx.size - n_train)
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return SplitAssignment(*(np.sort(np.concatenate(p)) for p in parts))


# ---------------------------------------------------------------- synthetic


@dataclass
class SynthConfig:
    num_nodes: int = 2000
    num_relations: int = 2
    fraud_rate: float = 0.1
    homophily: tuple = (0.9, 0.3)
    mean_degree: tuple = (4.0, 4.0)
    feature_dim: int = 16
    feature_signal: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.homophily = tuple(float(h) for h in np.broadcast_to(self.homophily, (self.num_relations,)))
        self.mean_degree = tuple(float(k) for k in np.broadcast_to(self.mean_degree, (self.num_relations,)))
        if not 0.0 < self.fraud_rate < 1.0:
            raise ValueError("fraud_rate must lie in (0, 1)")
        if any(not 0.0 <= h <= 1.0 for h in self.homophily):
            raise ValueError("homophily entries must lie in [0, 1]")
        if any(k <= 0 for k in self.mean_degree):
            raise ValueError("mean_degree entries must be positive")
        if any(k >= self.num_nodes for k in self.mean_degree):
            raise ValueError("mean_degree must be smaller than num_nodes")
        if self.feature_signal < 0:
            raise ValueError("feature_signal must be nonnegative")


def _weighted_pick(rng, groups, shares, size):
    """Draw `size` nodes: pick a group by `shares`, then a uniform member."""
    shares = np.asarray(shares, dtype=np.float64)
    keep = [i for i, g in enumerate(groups) if g.size and shares[i] > 0]
    if not keep:
        raise ValueError("no node available for edge endpoint")
    p = shares[keep] / shares[keep].sum()
    which = rng.choice(len(keep), size=size, p=p)
    out = np.empty(size, dtype=np.int64)
    for j, gi in enumerate(keep):
        sel = which == j
        out[sel] = groups[gi][rng.integers(0, groups[gi].size, size=int(sel.sum()))]
    return out


def _distinct_pairs(rng, draw, count):
    """`count` endpoint pairs from `draw(size)` with u != v."""
    us, vs, have = [], [], 0
    while have < count:
        u, v = draw(count - have), draw(count - have)
        ok = u != v
        us.append(u[ok])
        vs.append(v[ok])
        have += int(ok.sum())
    return np.concatenate(us)[:count], np.concatenate(vs)[:count]


def synth_generate(cfg: SynthConfig) -> MultiRelGraph:
    """Homophily-controlled multi-relation fraud graph.

    Each fraud node is *exposed* in exactly one relation (round robin over a
    random order) and camouflaged in the others: in a relation where it is
    hidden its expected numbers of benign and fraud neighbours match those of
    a benign node, so that relation alone cannot reveal it. Every edge of
    relation r is intra-class with probability ``homophily[r]`` (exact edge
    counts, so h in {0, 1} is reproduced exactly).
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_nodes
    labels, exposure = _draw_roles(cfg, rng)
    fraud = np.flatnonzero(labels == 1)
    benign = np.flatnonzero(labels == 0)
    n_fraud = fraud.size
    exposure = exposure[fraud]

    direction = rng.standard_normal(cfg.feature_dim)
    direction /= np.linalg.norm(direction)
    features = rng.standard_normal((n, cfg.feature_dim))
    features[fraud] += cfg.feature_signal * direction
    # float32-representable so the on-disk round trip is exact
    features = features.astype(np.float32).astype(np.float64)

    edge_lists = []
    nb = benign.size
    for r in range(cfg.num_relations):
        exposed = fraud[exposure == r]
        hidden = fraud[exposure != r]
        total = int(round(n * cfg.mean_degree[r] / 2))
        n_intra = int(round(cfg.homophily[r] * total))
        n_cross = total - n_intra
        n_ff = int(round(n_intra * n_fraud / n))
        n_bb = n_intra - n_ff
        # per benign node: expected benign neighbours and fraud neighbours
        benign_nbrs = 2.0 * n_bb / nb
        fraud_nbrs = n_cross / nb
        hid_cross = min(1.0, hidden.size * benign_nbrs / n_cross) if n_cross else 0.0
        hid_ff = min(1.0, hidden.size * fraud_nbrs / (2.0 * n_ff)) if n_ff else 0.0
        if exposed.size == 0:
            hid_cross = hid_ff = 1.0

        parts = []
        if n_bb:
            u, v = _distinct_pairs(rng, lambda s: benign[rng.integers(0, nb, size=s)], n_bb)
            parts.append(np.stack([u, v], 1))
        if n_ff:
            draw = lambda s: _weighted_pick(rng, [hidden, exposed], [hid_ff, 1.0 - hid_ff], s)
            if n_fraud >= 2:
                u, v = _distinct_pairs(rng, draw, n_ff)
                parts.append(np.stack([u, v], 1))
        if n_cross:
            u = _weighted_pick(rng, [hidden, exposed], [hid_cross, 1.0 - hid_cross], n_cross)
            v = benign[rng.integers(0, nb, size=n_cross)]
            parts.append(np.stack([u, v], 1))
        edges = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
        edge_lists.append(edges)

    names = tuple(f"rel_{r}" for r in range(cfg.num_relations))
    return from_edge_lists(features, labels, edge_lists, names)


def _draw_roles(cfg: SynthConfig, rng):
    n = cfg.num_nodes
    n_fraud = min(max(int(round(cfg.fraud_rate * n)), 1), n - 1)
    perm = rng.permutation(n)
    labels = np.zeros(n, dtype=np.int64)
    labels[perm[:n_fraud]] = 1
    fraud = np.flatnonzero(labels == 1)
    exposure = np.full(n, -1, dtype=np.int64)
    exposure[fraud[rng.permutation(n_fraud)]] = np.arange(n_fraud) % cfg.num_relations
    return labels, exposure


def synth_exposure(cfg: SynthConfig) -> np.ndarray:
    """Relation in which each fraud node is exposed (-1 for benign nodes); diagnostic only."""
    return _draw_roles(cfg, np.random.default_rng(cfg.seed))[1]


def write_split(split: SplitAssignment, path) -> None:
    Path(path).write_text(split.to_json() + "\n")


def read_split(path) -> SplitAssignment:
    return SplitAssignment.from_json(Path(path).read_text())


__all__ = [
    "GraphFormatError",
    "MultiRelGraph",
    "SplitAssignment",
    "StatisticError",
    "SynthConfig",
    "from_edge_lists",
    "homophily_ratio",
    "load_dataset",
    "read_split",
    "save_dataset",
    "split_nodes",
    "synth_exposure",
    "synth_generate",
    "write_split",
]
