import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mandate import autodiff as ad
from mandate.autodiff import Tensor
from mandate.model import (
    MandateModel,
    ModelConfig,
    assemble_embedding,
    attention_encode,
    build_inputs,
    class_weights,
    classify_and_loss,
    fuse_relations,
    hete_embed,
    homo_embed,
    init_params,
    mlp,
    orth_loss,
)
from mandate.walk import pe_rows, walk_operator

from conftest import random_graph


def small_setup(R=2, K=2, n=10, d=3, seed=0, **kw):
    g = random_graph(np.random.default_rng(seed), n, 0.3, num_relations=R, d=d)
    cfg = ModelConfig(feature_dim=d, num_relations=R, K=K, hidden=4, pos_dim=5, fused_dim=4,
                      model_dim=8, heads=2, layers=1, num_anchors=n, seed=seed, **kw)
    inputs = build_inputs(g, K, n, 0)
    return g, cfg, inputs, MandateModel(cfg, inputs.num_anchors)


# ---------------------------------------------------------------- homophilic branch


def test_homo_p3_identity(p3):
    pe = pe_rows(walk_operator(p3.adjacencies[0]), None, 1)
    oracle = np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]]) @ np.eye(3)
    assert np.array_equal(homo_embed(pe.hop(1), np.eye(3))[1], oracle[1])
    assert np.allclose(oracle[1], [0.5, 0, 0.5])


def test_homo_preserves_constants():
    g = random_graph(np.random.default_rng(0), 20, 0.2)
    pe = pe_rows(walk_operator(g.adjacencies[0]), None, 3)
    for k in (1, 2, 3):
        assert np.allclose(homo_embed(pe.hop(k), np.ones((20, 1))), 1.0, atol=1e-12)


def test_homo_misaligned():
    with pytest.raises(ValueError, match="misalignment"):
        homo_embed(np.ones((3, 3)), np.ones((2, 1)))


def test_homo_matches_sparse_propagation():
    _, _, inputs, _ = small_setup(R=1, K=2)
    for k in (1, 2):
        full = homo_embed(inputs.relations[0].pe.hop(k), inputs.features)
        assert np.allclose(inputs.relations[0].homo[k - 1], full, atol=1e-13)


# ---------------------------------------------------------------- heterophilic branch


def test_hete_shape_and_zero_weights():
    rng = np.random.default_rng(1)
    params = {"h.w1": Tensor(np.zeros((7, 4))), "h.b1": Tensor(rng.normal(size=4)),
              "h.w2": Tensor(np.zeros((4, 6))), "h.b2": Tensor(np.arange(6.0))}
    out = hete_embed(rng.normal(size=(5, 4)), rng.normal(size=(5, 3)), params, "h")
    assert out.shape == (5, 6)
    assert np.array_equal(out.data, np.tile(np.arange(6.0), (5, 1)))


def test_hete_gradient():
    rng = np.random.default_rng(2)
    params = {"h.w1": ad.glorot(rng, 7, 4), "h.b1": Tensor(rng.normal(size=4) * 0.1, requires_grad=True),
              "h.w2": ad.glorot(rng, 4, 3), "h.b2": ad.zeros(3)}
    pe, X = rng.random((6, 4)), rng.normal(size=(6, 3))
    probe = Tensor(rng.normal(size=(6, 3)))
    err = ad.grad_check(lambda: ad.total(ad.mul(hete_embed(pe, X, params, "h"), probe)), params)
    assert err <= 1e-4


# ---------------------------------------------------------------- hop structure


def test_hop_embedding_slices_back_to_homo():
    _, cfg, inputs, model = small_setup(R=2, K=3)
    _, all_hops = assemble_embedding(cfg, model.params, inputs)
    for r, hops in enumerate(all_hops):
        for k, h in enumerate(hops):
            assert np.array_equal(h.data[:, : cfg.feature_dim], inputs.relations[r].homo[k])
            assert h.shape[1] == cfg.feature_dim + cfg.hidden


def test_homo_is_theta_independent():
    _, cfg, inputs, model = small_setup(R=1, K=2)
    _, before = assemble_embedding(cfg, model.params, inputs)
    model.params["rel0.theta"].data[:] = [3.0, -1.0]
    _, after = assemble_embedding(cfg, model.params, inputs)
    for a, b in zip(before[0], after[0]):
        assert np.array_equal(a.data[:, :3], b.data[:, :3])


# ---------------------------------------------------------------- orthogonality


def test_orth_identical_vectors():
    v = Tensor(np.tile([1.0, 2.0, -1.0], (4, 1)))
    assert math.isclose(orth_loss([v, v, v]).item(), 3.0, rel_tol=1e-12)


def test_orth_orthogonal_vectors():
    e = np.eye(3)
    hops = [Tensor(np.tile(e[i], (5, 1))) for i in range(3)]
    assert orth_loss(hops).item() == 0.0


def test_orth_sign_insensitive():
    v = np.random.default_rng(3).normal(size=(6, 4))
    assert math.isclose(orth_loss([Tensor(v), Tensor(-v)]).item(), 1.0, rel_tol=1e-12)
    assert math.isclose(orth_loss([Tensor(v), Tensor(-v)], mode="cos").item(), -1.0, rel_tol=1e-12)


@given(st.integers(2, 5), st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_orth_bounds(K, n, width, seed):
    rng = np.random.default_rng(seed)
    hops = [Tensor(rng.normal(size=(n, width))) for _ in range(K)]
    value = orth_loss(hops).item()
    assert -1e-12 <= value <= K * (K - 1) / 2 + 1e-12
    base = rng.normal(size=(n, width)) + 0.1
    parallel = [Tensor(base * rng.choice([-2.0, 0.5, 3.0])) for _ in range(K)]
    assert math.isclose(orth_loss(parallel).item(), K * (K - 1) / 2, rel_tol=1e-9)


# ---------------------------------------------------------------- fusion


def test_fusion_single_relation():
    F = Tensor(np.random.default_rng(4).normal(size=(3, 2)))
    assert np.array_equal(fuse_relations([F], Tensor([0.7])).data, F.data)


def test_fusion_equal_logits():
    rng = np.random.default_rng(5)
    a, b = Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(3, 2)))
    assert np.allclose(fuse_relations([a, b], Tensor([0.4, 0.4])).data, (a.data + b.data) / 2, atol=1e-15)


def test_fusion_ln3_weights():
    weights = ad.softmax(Tensor([math.log(3), 0.0])).data
    assert np.allclose(weights, [0.75, 0.25], atol=1e-15)
    a, b = Tensor(np.ones((1, 1))), Tensor(np.zeros((1, 1)))
    assert math.isclose(fuse_relations([a, b], Tensor([math.log(3), 0.0])).data[0, 0], 0.75, rel_tol=1e-15)


def test_fusion_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        fuse_relations([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))], Tensor([0.0, 0.0]))


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_fusion_convex_hull(R, n, seed):
    rng = np.random.default_rng(seed)
    Fs = [Tensor(rng.normal(size=(n, 3))) for _ in range(R)]
    out = fuse_relations(Fs, Tensor(rng.normal(size=R) * 3)).data
    stack = np.stack([F.data for F in Fs])
    assert np.all(out >= stack.min(axis=0) - 1e-12) and np.all(out <= stack.max(axis=0) + 1e-12)


# ---------------------------------------------------------------- assembly


def test_embed_dims_examples():
    assert ModelConfig(feature_dim=10, num_relations=1, pos_dim=16).embed_dim == 26
    assert ModelConfig(feature_dim=10, num_relations=2, pos_dim=16, fused_dim=32).embed_dim == 64


@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 3), st.integers(1, 3), st.integers(0, 1000))
@settings(max_examples=15, deadline=None)
def test_embed_dim_identity(d, pos_dim, R, K, seed):
    g = random_graph(np.random.default_rng(seed), 7, 0.4, num_relations=R, d=d)
    cfg = ModelConfig(feature_dim=d, num_relations=R, K=K, hidden=3, pos_dim=pos_dim, fused_dim=4,
                      model_dim=4, heads=2, layers=1, num_anchors=5, seed=seed)
    inputs = build_inputs(g, K, 5, seed)
    E, _ = assemble_embedding(cfg, init_params(cfg, inputs.num_anchors), inputs)
    expected = d + pos_dim if R == 1 else 4 + R * pos_dim
    assert E.shape == (7, expected) and cfg.embed_dim == expected


def test_relation_permutation_leaves_embedding_unchanged():
    g, cfg, inputs, model = small_setup(R=2, K=2)
    params = model.params
    params["fusion.logits"].data[:] = [0.3, -0.8]
    swapped = {}
    for name, t in params.items():
        if name.startswith("rel0."):
            name = "rel1." + name[5:]
        elif name.startswith("rel1."):
            name = "rel0." + name[5:]
        swapped[name] = t
    swapped["fusion.logits"] = Tensor(params["fusion.logits"].data[::-1].copy())
    E, _ = assemble_embedding(cfg, params, inputs)
    inputs_rev = build_inputs(g.subgraph_relations([1, 0]), 2, 10, 0)
    E2, _ = assemble_embedding(cfg, swapped, inputs_rev)
    f, p = cfg.fused_dim, cfg.pos_dim
    assert np.array_equal(E.data[:, :f], E2.data[:, :f])
    # positional blocks follow the relation order
    assert np.array_equal(E.data[:, f:f + p], E2.data[:, f + p:])
    assert np.array_equal(E.data[:, f + p:], E2.data[:, f:f + p])


def test_missing_relation_inputs():
    _, cfg, inputs, model = small_setup(R=2)
    inputs.relations = inputs.relations[:1]
    with pytest.raises(ValueError):
        assemble_embedding(cfg, model.params, inputs)


# ---------------------------------------------------------------- attention


def test_attention_rows_stochastic():
    _, cfg, inputs, model = small_setup(R=2)
    record = []
    model.forward(inputs, record=record)
    assert len(record) == cfg.heads * cfg.layers
    for a in record:
        assert np.max(np.abs(a.sum(axis=1) - 1.0)) <= 1e-12


def test_single_node_batch():
    _, cfg, inputs, model = small_setup(R=2)
    E, _ = assemble_embedding(cfg, model.params, inputs, np.array([4]))
    record = []
    Z = attention_encode(E, cfg, model.params, record)
    assert all(np.array_equal(a, [[1.0]]) for a in record)
    p = model.params
    z = E.data @ p["attn.in.w"].data + p["attn.in.b"].data
    v = z @ p["attn0.v"].data @ p["attn0.o"].data
    z = ad.layer_norm(Tensor(z + v)).data
    z = ad.layer_norm(Tensor(z + mlp(Tensor(z), p, "attn0.ffn").data)).data
    assert np.allclose(Z.data, z, atol=1e-12)


def test_batch_permutation_equivariance():
    _, cfg, inputs, model = small_setup(R=2)
    perm = np.random.default_rng(7).permutation(10)
    Z, _ = model.forward(inputs)
    Zp, _ = model.forward(inputs, perm)
    assert np.allclose(Zp.data, Z.data[perm], atol=1e-12)


def test_empty_batch():
    _, cfg, _, model = small_setup(R=2)
    with pytest.raises(ValueError):
        attention_encode(Tensor(np.zeros((0, cfg.embed_dim))), cfg, model.params)


# ---------------------------------------------------------------- loss


def test_uniform_logits_ln2():
    Z = Tensor(np.zeros((4, 3)))
    params = {"head.w": Tensor(np.zeros((3, 2))), "head.b": Tensor(np.zeros(2))}
    probs, total, ce = classify_and_loss(Z, [0, 1, 0, 1], np.ones(4, bool), params, [1.0, 1.0])
    assert math.isclose(ce.item(), math.log(2), rel_tol=1e-15)
    assert np.array_equal(probs, np.full((4, 2), 0.5))


def test_lambda_zero_is_pure_ce():
    rng = np.random.default_rng(8)
    params = {"head.w": Tensor(rng.normal(size=(3, 2))), "head.b": Tensor(rng.normal(size=2))}
    _, total, ce = classify_and_loss(Tensor(rng.normal(size=(4, 3))), [0, 1, 0, 1], np.ones(4, bool),
                                     params, [1.0, 2.0], orth=Tensor(5.0), lambda_orth=0.0)
    assert total.item() == ce.item()


def test_class_weight_ratio():
    labels = np.array([1] * 10 + [0] * 90)
    w = class_weights(labels)
    assert math.isclose(w[1] / w[0], 9.0, rel_tol=1e-15)


def test_loss_needs_labeled_node():
    params = {"head.w": Tensor(np.zeros((3, 2))), "head.b": Tensor(np.zeros(2))}
    with pytest.raises(ValueError):
        classify_and_loss(Tensor(np.zeros((2, 3))), [-1, -1], np.ones(2, bool), params, [1.0, 1.0])


def test_unlabeled_rows_ignored():
    rng = np.random.default_rng(9)
    Z = Tensor(rng.normal(size=(3, 3)))
    params = {"head.w": Tensor(rng.normal(size=(3, 2))), "head.b": Tensor(np.zeros(2))}
    _, _, a = classify_and_loss(Z, [0, 1, -1], np.ones(3, bool), params, [1.0, 1.0])
    _, _, b = classify_and_loss(Z, [0, 1, -1], np.array([True, True, False]), params, [1.0, 1.0])
    assert a.item() == b.item()


# ---------------------------------------------------------------- whole model


def test_positional_stack_gradient():
    g, cfg, inputs, model = small_setup(R=1, K=2, n=6)
    params = {k: v for k, v in model.params.items() if k.startswith("rel0.")}
    probe = Tensor(np.random.default_rng(1).normal(size=(6, cfg.embed_dim)))
    f = lambda: ad.total(ad.mul(assemble_embedding(cfg, model.params, inputs)[0], probe))
    assert ad.grad_check(f, params) <= 1e-4


def test_forward_deterministic():
    _, cfg, inputs, model = small_setup(R=2)
    again = MandateModel(cfg, inputs.num_anchors)
    assert model.forward(inputs)[0].data.tobytes() == again.forward(inputs)[0].data.tobytes()


def test_checkpoint_round_trip(tmp_path):
    _, cfg, inputs, model = small_setup(R=2)
    model.params["head.b"].data[:] = [0.1, -0.2]
    model.save(tmp_path / "m.params")
    back = MandateModel.load(tmp_path / "m.params")
    assert back.cfg == cfg
    batches = [np.arange(10)]
    assert np.array_equal(back.predict_proba(inputs, batches), model.predict_proba(inputs, batches))


def test_check_inputs_names_dims():
    _, cfg, inputs, model = small_setup(R=2, d=3)
    inputs.features = np.zeros((10, 5))
    with pytest.raises(ValueError, match="feature_dim=3.*feature_dim=5"):
        model.check_inputs(inputs)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(feature_dim=3, model_dim=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(feature_dim=3, pe_strategy="single_hop", K=2)
    with pytest.raises(ValueError):
        ModelConfig(feature_dim=3, orth_mode="dot")
