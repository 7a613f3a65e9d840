"""Random-walk operator, multi-scale positional encodings and their brute-force oracles."""
from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DEFAULT_ANCHORS = 512
_CACHE_MAGIC = b"MANDATE-PE\x00\x01"


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class WalkOperator:
    """Row-stochastic D^-1 A; isolated nodes carry a self-loop."""

    matrix: sp.csr_matrix
    self_loop_repaired: frozenset

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def walk_operator(adjacency) -> WalkOperator:
    a = sp.csr_matrix(adjacency, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    a.eliminate_zeros()
    deg = np.asarray(a.sum(axis=1)).ravel()
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        a = a + sp.csr_matrix((np.ones(isolated.size), (isolated, isolated)), shape=a.shape)
        deg[isolated] = 1.0
    w = sp.diags(1.0 / deg) @ a
    w = sp.csr_matrix(w)
    w.sort_indices()
    return WalkOperator(w, frozenset(int(i) for i in isolated))


@dataclass(frozen=True)
class PeTable:
    """rows[k, s, a] = W^(k+1)[sources[s], anchors[a]].

    ``returns[k, s] = W^(k+1)[sources[s], sources[s]]`` keeps each source's own
    column, which the anchor restriction would otherwise drop for non-anchors.
    """

    rows: np.ndarray
    sources: np.ndarray
    anchors: np.ndarray
    returns: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.rows.shape[0]

    def hop(self, k: int) -> np.ndarray:
        """Encoding of hop k, 1-based as in p_k."""
        return self.rows[k - 1]


def choose_anchors(num_nodes: int, count: int = DEFAULT_ANCHORS, seed: int = 0) -> np.ndarray:
    if count >= num_nodes:
        return np.arange(num_nodes)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(num_nodes, size=count, replace=False))


def pe_rows(W: WalkOperator, sources=None, K: int = 2, anchors=None, chunk: int = 256) -> PeTable:
    """Multi-scale random-walk encodings by repeated sparse products from one-hot seeds.

    Sources are processed in independent chunks; each row only ever depends on
    its own seed, so the chunking does not change any value.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    n = W.num_nodes
    sources = np.arange(n) if sources is None else np.asarray(sources, dtype=np.int64)
    anchors = np.arange(n) if anchors is None else np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        raise ValueError("anchor set is empty")
    for name, idx in (("source", sources), ("anchor", anchors)):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"{name} index out of range")
    wt = W.matrix.T.tocsr()
    wt.sort_indices()
    out = np.empty((K, sources.size, anchors.size))
    ret = np.empty((K, sources.size))
    for start in range(0, sources.size, chunk):
        src = sources[start:start + chunk]
        cols = np.arange(src.size)
        x = np.zeros((n, src.size))
        x[src, cols] = 1.0
        for k in range(K):
            x = wt @ x
            out[k, start:start + src.size] = x[anchors].T
            ret[k, start:start + src.size] = x[src, cols]
    return PeTable(out, sources, anchors, ret)


def propagate_features(W: WalkOperator, features: np.ndarray, K: int) -> list:
    """[W^k X for k = 1..K], the full-node-set feature propagation."""
    out, x = [], np.asarray(features, dtype=np.float64)
    for _ in range(K):
        x = W.matrix @ x
        out.append(x)
    return out


@dataclass(frozen=True)
class ScaleWeights:
    theta: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).ravel()
        if not np.all(np.isfinite(theta)):
            raise ValueError("scale weights must be finite")
        object.__setattr__(self, "theta", theta)

    @property
    def K(self) -> int:
        return self.theta.size

    @classmethod
    def ppr(cls, alpha: float, K: int) -> "ScaleWeights":
        """Personalized-PageRank weights alpha (1 - alpha)^k, k = 1..K."""
        _check_alpha(alpha)
        k = np.arange(1, K + 1)
        return cls(alpha * (1.0 - alpha) ** k, frozen=True)


def combine_scales(pe: PeTable, theta) -> np.ndarray:
    theta = theta.theta if isinstance(theta, ScaleWeights) else np.asarray(theta, dtype=np.float64)
    if theta.shape != (pe.K,):
        raise ValueError(f"expected {pe.K} scale weights, got shape {theta.shape}")
    return np.tensordot(theta, pe.rows, axes=(0, 0))


# ---------------------------------------------------------------- oracles

UNREACHABLE = np.inf


def spd_reference(graph, relation: int, max_nodes: int = 1000) -> np.ndarray:
    """All-pairs BFS hop distances; unreachable pairs are inf."""
    adj = graph.adjacencies[relation]
    n = adj.shape[0]
    if n > max_nodes:
        raise ValueError(f"oracle limited to {max_nodes} nodes, got {n}")
    indptr, indices = adj.indptr, adj.indices
    dist = np.full((n, n), UNREACHABLE)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in indices[indptr[u]:indptr[u + 1]]:
                if dist[s, v] == UNREACHABLE:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
    return dist


def ppr_reference(W: WalkOperator, alpha: float, K: int, max_nodes: int = 500) -> np.ndarray:
    """sum_{k=1..K} alpha (1-alpha)^k W^k by dense matrix powers."""
    _check_alpha(alpha)
    if W.num_nodes > max_nodes:
        raise ValueError(f"oracle limited to {max_nodes} nodes, got {W.num_nodes}")
    dense = W.dense()
    acc = np.zeros_like(dense)
    power = np.eye(W.num_nodes)
    for k in range(1, K + 1):
        power = power @ dense
        acc += alpha * (1.0 - alpha) ** k * power
    return acc


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


# ---------------------------------------------------------------- cache file


def save_pe_cache(pe: PeTable, graph_hash: str, path) -> None:
    header = json.dumps(
        {
            "K": pe.K,
            "num_sources": int(pe.sources.size),
            "m": int(pe.anchors.size),
            "graph_hash": graph_hash,
            "returns": pe.returns is not None,
            "sources": [int(i) for i in pe.sources],
            "anchors": [int(i) for i in pe.anchors],
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(pe.rows, dtype="<f8").tobytes())
        if pe.returns is not None:
            fh.write(np.ascontiguousarray(pe.returns, dtype="<f8").tobytes())


def read_pe_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a PE cache file")
    (size,) = struct.unpack("<Q", fh.read(8))
    return json.loads(fh.read(size))


def load_pe_cache(path, graph_hash: str | None = None) -> PeTable:
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        if graph_hash is not None and header["graph_hash"] != graph_hash:
            raise StaleCacheError(
                f"{path}: cache built for graph {header['graph_hash'][:12]}, current graph is {graph_hash[:12]}"
            )
        K, S, m = header["K"], header["num_sources"], header["m"]
        payload = np.frombuffer(fh.read(8 * K * S * m), dtype="<f8")
        returns = None
        if header.get("returns"):
            returns = np.frombuffer(fh.read(8 * K * S), dtype="<f8")
            if returns.size != K * S:
                raise ValueError(f"{path}: truncated payload")
            returns = returns.reshape(K, S).astype(np.float64)
    if payload.size != K * S * m:
        raise ValueError(f"{path}: truncated payload")
    rows = payload.reshape(K, S, m).astype(np.float64)
    return PeTable(
        rows, np.asarray(header["sources"], dtype=np.int64), np.asarray(header["anchors"], dtype=np.int64), returns
    )


def pe_cache_path(directory, relation: int) -> Path:
    return Path(directory) / f"pe_rel_{relation}.bin"
