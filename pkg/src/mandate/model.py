"""The MANDATE network: neighborhood-aware positional embeddings, relation fusion, attention, classifier."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .walk import PeTable, ScaleWeights, choose_anchors, pe_rows, propagate_features, walk_operator

PE_STRATEGIES = ("multiscale", "single_hop", "ppr")


@dataclass
class ModelConfig:
    feature_dim: int
    num_relations: int = 1
    K: int = 2
    hidden: int = 64  # H: heterophilic branch width
    pos_dim: int = 64  # H_P: positional embedding width
    fused_dim: int = 64  # width of F^r / F'
    model_dim: int = 64  # attention width
    heads: int = 4
    layers: int = 2
    lambda_orth: float = 0.1
    orth_mode: str = "cos2"
    num_anchors: int = 512
    pe_strategy: str = "multiscale"
    ppr_alpha: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.orth_mode not in ("cos2", "cos"):
            raise ValueError(f"unknown orth_mode {self.orth_mode!r}")
        if self.pe_strategy not in PE_STRATEGIES:
            raise ValueError(f"unknown pe_strategy {self.pe_strategy!r}")
        if self.pe_strategy == "single_hop" and self.K != 1:
            raise ValueError("single_hop strategy requires K = 1")
        if self.lambda_orth < 0:
            raise ValueError("lambda_orth must be nonnegative")

    @property
    def embed_dim(self) -> int:
        if self.num_relations == 1:
            return self.feature_dim + self.pos_dim
        return self.fused_dim + self.num_relations * self.pos_dim

    def manifest(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- inputs


@dataclass
class RelationInputs:
    pe: PeTable  # sources = all nodes in order
    homo: np.ndarray  # K x n x d, W^k X


@dataclass
class ModelInputs:
    features: np.ndarray
    relations: list = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_anchors(self) -> int:
        return self.relations[0].pe.anchors.size


def build_inputs(graph, K: int, num_anchors: int = 512, seed: int = 0, pe_tables=None) -> ModelInputs:
    """Precompute PE tables and propagated features for every relation of ``graph``."""
    anchors = choose_anchors(graph.num_nodes, num_anchors, seed)
    rels = []
    for r in range(graph.num_relations):
        W = walk_operator(graph.adjacencies[r])
        if pe_tables is not None and pe_tables[r] is not None:
            pe = pe_tables[r]
            if pe.K < K or pe.sources.size != graph.num_nodes:
                raise ValueError(f"PE table for relation {r} does not cover K={K} and all nodes")
            if pe.returns is None:
                raise ValueError(f"PE table for relation {r} lacks return probabilities")
            pe = PeTable(pe.rows[:K], pe.sources, pe.anchors, pe.returns[:K])
        else:
            pe = pe_rows(W, None, K, anchors)
        homo = np.stack(propagate_features(W, graph.features, K))
        rels.append(RelationInputs(pe, homo))
    return ModelInputs(np.asarray(graph.features, dtype=np.float64), rels)


# ---------------------------------------------------------------- parameters


def _mlp_params(rng, prefix: str, n_in: int, n_hidden: int, n_out: int) -> dict:
    return {
        f"{prefix}.w1": ad.glorot(rng, n_in, n_hidden),
        f"{prefix}.b1": ad.zeros(n_hidden),
        f"{prefix}.w2": ad.glorot(rng, n_hidden, n_out),
        f"{prefix}.b2": ad.zeros(n_out),
    }


def init_params(cfg: ModelConfig, num_anchors: int) -> dict:
    """All learnable tensors, keyed by dotted name, in a fixed creation order."""
    rng = np.random.default_rng(cfg.seed)
    d, H, m, K = cfg.feature_dim, cfg.hidden, num_anchors, cfg.K
    p = {}
    for r in range(cfg.num_relations):
        if cfg.pe_strategy == "ppr":
            theta = Tensor(ScaleWeights.ppr(cfg.ppr_alpha, K).theta)
        else:
            theta = Tensor(np.full(K, 1.0 / K), requires_grad=True)
        p[f"rel{r}.theta"] = theta
        for k in range(1, K + 1):
            p.update(_mlp_params(rng, f"rel{r}.hete{k}", m + 1 + d, H, H))
        p.update(_mlp_params(rng, f"rel{r}.pos", K * (d + H) + m + 1, cfg.pos_dim, cfg.pos_dim))
        if cfg.num_relations > 1:
            p.update(_mlp_params(rng, f"rel{r}.feat", d, cfg.fused_dim, cfg.fused_dim))
    if cfg.num_relations > 1:
        p["fusion.logits"] = ad.zeros(cfg.num_relations)
    D = cfg.model_dim
    p["attn.in.w"] = ad.glorot(rng, cfg.embed_dim, D)
    p["attn.in.b"] = ad.zeros(D)
    for layer in range(cfg.layers):
        for proj in ("q", "k", "v", "o"):
            p[f"attn{layer}.{proj}"] = ad.glorot(rng, D, D)
        p.update(_mlp_params(rng, f"attn{layer}.ffn", D, 2 * D, D))
    p["head.w"] = ad.glorot(rng, D, 2)
    p["head.b"] = ad.zeros(2)
    return p


def trainable(params: dict) -> dict:
    return {k: v for k, v in params.items() if v.requires_grad}


def mlp(x, params: dict, prefix: str) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


# ---------------------------------------------------------------- embeddings


def homo_embed(pe_hop: np.ndarray, anchor_features: np.ndarray) -> np.ndarray:
    """PE-weighted feature average: row i is sum_a pe_hop[i, a] * X[anchor a]."""
    pe_hop = np.asarray(pe_hop, dtype=np.float64)
    anchor_features = np.asarray(anchor_features, dtype=np.float64)
    if pe_hop.shape[1] != anchor_features.shape[0]:
        raise ValueError(
            f"anchor/feature misalignment: {pe_hop.shape[1]} anchors vs {anchor_features.shape[0]} feature rows"
        )
    return pe_hop @ anchor_features


def hete_embed(pe_hop, features, params: dict, prefix: str) -> Tensor:
    """Two-layer relu network on CONCAT(p_k(u), X(u))."""
    return mlp(ad.concat([pe_hop, features]), params, prefix)


def positional_embed(hop_embeddings, scale_mix, params: dict, prefix: str) -> Tensor:
    """MLP over CONCAT(p_1', ..., p_K', p')."""
    if not hop_embeddings:
        raise ValueError("need at least one hop embedding")
    return mlp(ad.concat(list(hop_embeddings) + [scale_mix]), params, prefix)


def orth_loss(hop_embeddings, mode: str = "cos2", eps: float = 1e-12) -> Tensor:
    """Node-averaged sum over hop pairs m < n of cos^2 (or raw cosine) between p_m' and p_n'."""
    K = len(hop_embeddings)
    if K < 2:
        return Tensor(0.0)
    units = [ad.row_normalize(h, eps) for h in hop_embeddings]
    terms = []
    for a in range(K):
        for b in range(a + 1, K):
            cos = ad.row_sum(ad.mul(units[a], units[b]))
            terms.append(ad.mean(ad.square(cos) if mode == "cos2" else cos))
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def fuse_relations(per_relation, logits) -> Tensor:
    """Softmax-weighted convex combination of the per-relation node embeddings."""
    per_relation = list(per_relation)
    logits = ad.as_tensor(logits)
    if logits.shape != (len(per_relation),):
        raise ad.ShapeError(f"need {len(per_relation)} fusion logits, got shape {logits.shape}")
    return ad.weighted_sum(ad.softmax(logits), per_relation)


def encoding_rows(pe: PeTable, k: int, batch) -> np.ndarray:
    """Hop-k encodings of ``batch`` over the anchors followed by the node's own column."""
    return np.concatenate([pe.rows[k - 1][batch], pe.returns[k - 1][batch][:, None]], axis=1)


def _relation_positional(cfg, params, rel: RelationInputs, feats: Tensor, batch: np.ndarray, r: int):
    """Hop embeddings p_k' and the positional embedding P^r for the batch rows."""
    hops, encodings = [], []
    for k in range(1, cfg.K + 1):
        pe_k = Tensor(encoding_rows(rel.pe, k, batch))
        encodings.append(pe_k)
        homo = Tensor(rel.homo[k - 1][batch])
        hete = hete_embed(pe_k, feats, params, f"rel{r}.hete{k}")
        hops.append(ad.concat([homo, hete]))
    theta = params[f"rel{r}.theta"]
    mix = ad.weighted_sum(theta, encodings)
    P = positional_embed(hops, mix, params, f"rel{r}.pos")
    return hops, P


def assemble_embedding(cfg: ModelConfig, params: dict, inputs: ModelInputs, batch=None):
    """Final node embeddings E for ``batch`` rows plus the hop embeddings of every relation."""
    if len(inputs.relations) != cfg.num_relations:
        raise ValueError(
            f"model expects {cfg.num_relations} relation(s), inputs provide {len(inputs.relations)}"
        )
    batch = np.arange(inputs.num_nodes) if batch is None else np.asarray(batch)
    feats = Tensor(inputs.features[batch])
    all_hops, positional = [], []
    for r, rel in enumerate(inputs.relations):
        if rel is None:
            raise ValueError(f"missing PE table for relation {r}")
        hops, P = _relation_positional(cfg, params, rel, feats, batch, r)
        all_hops.append(hops)
        positional.append(P)
    if cfg.num_relations == 1:
        E = ad.concat([feats, positional[0]])
    else:
        node_specific = [mlp(feats, params, f"rel{r}.feat") for r in range(cfg.num_relations)]
        fused = fuse_relations(node_specific, params["fusion.logits"])
        E = ad.concat([fused] + positional)
    return E, all_hops


# ---------------------------------------------------------------- attention


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    scale = 1.0 / np.sqrt(q.shape[1])
    return ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), scale))


def multi_head_attention(x: Tensor, params: dict, layer: int, heads: int, record=None) -> Tensor:
    q = ad.matmul(x, params[f"attn{layer}.q"])
    k = ad.matmul(x, params[f"attn{layer}.k"])
    v = ad.matmul(x, params[f"attn{layer}.v"])
    dh = x.shape[1] // heads
    outs = []
    for h in range(heads):
        cols = (slice(None), slice(h * dh, (h + 1) * dh))
        a = attention_weights(q[cols], k[cols])
        if record is not None:
            record.append(a.data)
        outs.append(ad.matmul(a, v[cols]))
    return ad.matmul(ad.concat(outs), params[f"attn{layer}.o"])


def attention_encode(E: Tensor, cfg: ModelConfig, params: dict, record=None) -> Tensor:
    """Input projection, then per layer: self-attention and feed-forward, each residual + layer norm."""
    if E.shape[0] == 0:
        raise ValueError("attention over an empty batch")
    z = ad.add(ad.matmul(E, params["attn.in.w"]), params["attn.in.b"])
    for layer in range(cfg.layers):
        z = ad.layer_norm(ad.add(z, multi_head_attention(z, params, layer, cfg.heads, record)))
        z = ad.layer_norm(ad.add(z, mlp(z, params, f"attn{layer}.ffn")))
    return z


# ---------------------------------------------------------------- head and loss


def class_weights(train_labels) -> np.ndarray:
    """Inverse-frequency weights n / (2 n_c) for classes 0 and 1."""
    train_labels = np.asarray(train_labels)
    train_labels = train_labels[train_labels >= 0]
    counts = np.array([(train_labels == c).sum() for c in (0, 1)], dtype=np.float64)
    if np.any(counts == 0):
        raise ValueError("training split lacks a class")
    return counts.sum() / (2.0 * counts)


def classify_and_loss(Z: Tensor, labels, mask, params: dict, weights, orth=None, lambda_orth: float = 0.0):
    """Class probabilities for all rows and the weighted cross-entropy (+ lambda * orth) loss.

    ``mask`` selects the rows that contribute to the loss; unlabeled rows are
    ignored whatever the mask says.
    """
    labels = np.asarray(labels)
    rows = np.flatnonzero(np.asarray(mask, dtype=bool) & (labels >= 0))
    if rows.size == 0:
        raise ValueError("no labeled node in batch")
    logits = ad.add(ad.matmul(Z, params["head.w"]), params["head.b"])
    logp = ad.log_softmax(logits)
    y = labels[rows]
    w = np.asarray(weights, dtype=np.float64)[y]
    picked = logp[(rows, y)]
    ce = ad.scale(ad.total(ad.mul(picked, Tensor(w))), -1.0 / w.sum())
    loss = ce
    if orth is not None and lambda_orth > 0:
        loss = ad.add(ce, ad.scale(orth, lambda_orth))
    return np.exp(logp.data), loss, ce


# ---------------------------------------------------------------- the model


class MandateModel:
    def __init__(self, cfg: ModelConfig, num_anchors: int | None = None, params: dict | None = None):
        self.cfg = cfg
        self.num_anchors = cfg.num_anchors if num_anchors is None else num_anchors
        self.params = init_params(cfg, self.num_anchors) if params is None else params

    def check_inputs(self, inputs: ModelInputs) -> None:
        if inputs.features.shape[1] != self.cfg.feature_dim:
            raise ValueError(
                f"dimension mismatch: model feature_dim={self.cfg.feature_dim}, dataset feature_dim={inputs.features.shape[1]}"
            )
        if len(inputs.relations) != self.cfg.num_relations:
            raise ValueError(
                f"dimension mismatch: model num_relations={self.cfg.num_relations}, dataset num_relations={len(inputs.relations)}"
            )
        if inputs.num_anchors != self.num_anchors:
            raise ValueError(
                f"dimension mismatch: model anchors={self.num_anchors}, inputs anchors={inputs.num_anchors}"
            )

    def orth_term(self, all_hops) -> Tensor:
        terms = [orth_loss(h, self.cfg.orth_mode) for h in all_hops]
        out = terms[0]
        for t in terms[1:]:
            out = ad.add(out, t)
        return ad.scale(out, 1.0 / len(terms))

    def forward(self, inputs: ModelInputs, batch=None, record=None):
        E, all_hops = assemble_embedding(self.cfg, self.params, inputs, batch)
        Z = attention_encode(E, self.cfg, self.params, record)
        return Z, all_hops

    def loss(self, inputs: ModelInputs, labels, batch, mask, weights):
        """Total loss over ``batch`` rows; ``mask`` flags which batch rows are supervised."""
        Z, hops = self.forward(inputs, batch)
        orth = self.orth_term(hops) if self.cfg.lambda_orth > 0 else None
        probs, total, _ = classify_and_loss(
            Z, np.asarray(labels)[batch], mask, self.params, weights, orth, self.cfg.lambda_orth
        )
        return total, probs

    def predict_proba(self, inputs: ModelInputs, batches) -> np.ndarray:
        """Fraud probability for every node, attending within each batch."""
        out = np.empty(inputs.num_nodes)
        for batch in batches:
            Z, _ = self.forward(inputs, batch)
            logits = Z.data @ self.params["head.w"].data + self.params["head.b"].data
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            out[batch] = e[:, 1] / e.sum(axis=1)
        return out

    # checkpoints

    def save(self, path) -> None:
        manifest = self.cfg.manifest()
        manifest["num_anchors"] = self.num_anchors
        ad.save_params(self.params, path, manifest)

    @classmethod
    def load(cls, path) -> "MandateModel":
        arrays = ad.load_params(path)
        arch = ad.load_manifest(path)["architecture"]
        cfg = ModelConfig(**arch)
        model = cls(cfg, arch["num_anchors"])
        for name, tensor in model.params.items():
            if name not in arrays or arrays[name].shape != tensor.data.shape:
                raise ValueError(f"checkpoint parameter {name!r} missing or mis-shaped")
            tensor.data = arrays[name].copy()
        return model

    def snapshot(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def restore(self, snap: dict) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()


def write_manifest(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.manifest(), indent=2, sort_keys=True) + "\n")
