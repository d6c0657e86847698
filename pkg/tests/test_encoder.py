import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgkit.encoder import (ATTRIBUTE_EDGE_TEXT, CheckpointError, EncoderParams, HashEmbeddingBackend, LossConfig,
                           NoiseSchedule, ToyLinearDenoiser, assemble, embed_text, gnn_forward, grad_check,
                           grad_check_report, init_params, load_params, loss_and_grad, lower, noisy_latent,
                           permute_nodes, prepare, refine_triples, render_triple, save_params, sg_loss,
                           zero_params)
from sgkit.model import DanglingReferenceError, Item, Relation, SceneGraph
from sgkit.synth import random_graph

D = 8
BACKEND = HashEmbeddingBackend(D, seed=1)


def _path_graph():
    items = (Item(0, "dog", ()), Item(1, "ball", ()), Item(2, "grass", ()))
    return SceneGraph(items, (Relation(0, 0, "near", 1), Relation(1, 1, "on", 2)))


def _toy_graph():
    items = (Item(3, "person", ("young",)), Item(1, "horse", ("brown", "tall")), Item(7, "hat", ()),
             Item(9, "cloud", ("white",)))
    rels = (Relation(0, 3, "riding", 1), Relation(1, 3, "wearing", 7), Relation(2, 1, "standing next to", 7))
    return SceneGraph(items, rels)


# -- embedding -------------------------------------------------------------------

def test_hash_backend_properties():
    b = HashEmbeddingBackend(64, seed=0)
    v = embed_text(b, "a tall tree")
    assert v.shape == (64,)
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-9
    assert np.array_equal(v, HashEmbeddingBackend(64, seed=0).embed("a tall tree"))
    assert not np.array_equal(v, HashEmbeddingBackend(64, seed=1).embed("a tall tree"))
    vecs = {b.embed(f"string {i}").tobytes() for i in range(1000)}
    assert len(vecs) == 1000
    with pytest.raises(ValueError):
        v[0] = 1.0  # cached vectors are read-only


# -- lowering ------------------------------------------------------------------

def test_lower_single_item():
    lw = lower(SceneGraph((Item(0, "sky", ()),)), BACKEND)
    assert (lw.n_nodes, lw.n_edges) == (1, 0)


def test_lower_multiword_relation(rec_483868):
    lw = lower(rec_483868.graph, BACKEND)
    s, o, edges = lw.triple_index[0]
    assert len(edges) == 2
    assert [lw.edge_source[e].index for e in edges] == [0, 1]
    assert all(lw.edge_src[e] == s and lw.edge_dst[e] == o for e in edges)
    assert np.array_equal(lw.edge_features[edges[0]], BACKEND.embed("span"))
    assert np.array_equal(lw.edge_features[edges[1]], BACKEND.embed("over"))


def test_lower_attributes():
    lw = lower(SceneGraph((Item(0, "person", ("young", "female")),)), BACKEND)
    assert lw.node_kind == ["object", "attribute", "attribute"]
    assert lw.n_edges == 2
    assert lw.edge_src.tolist() == [0, 0] and lw.edge_dst.tolist() == [1, 2]
    assert np.array_equal(lw.edge_features[0], BACKEND.embed(ATTRIBUTE_EDGE_TEXT))
    assert np.array_equal(lw.features[2], BACKEND.embed("female"))


def test_lower_dangling():
    with pytest.raises(DanglingReferenceError):
        lower(SceneGraph((Item(0, "a", ()),), (Relation(0, 0, "on", 4),)), BACKEND)


# -- message passing ------------------------------------------------------------

def test_zero_weights_identity():
    lw = lower(_toy_graph(), BACKEND)
    out = gnn_forward(lw, zero_params(D, hidden=5, n_layers=3))
    assert np.array_equal(out.node_states, lw.features)
    assert np.array_equal(out.edge_states, lw.edge_features)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        gnn_forward(lower(_toy_graph(), BACKEND), init_params(D + 1, hidden=4, n_layers=1))


def _naive_layer(h, e, src, dst, layer):
    """Loop-by-loop recomputation of one message-passing round."""
    n = h.shape[0]
    inbox = [[] for _ in range(n)]
    for k in range(len(src)):
        s, d = int(src[k]), int(dst[k])
        inbox[d].append(layer.msg_w @ np.concatenate([h[s], e[k]]) + layer.msg_b)
        inbox[s].append(layer.msg_w @ np.concatenate([h[d], e[k]]) + layer.msg_b)
    new_h = h.copy()
    for v in range(n):
        if inbox[v]:
            agg = sum(inbox[v]) / len(inbox[v])
            new_h[v] = h[v] + np.tanh(layer.upd_w @ agg + layer.upd_b)
    new_e = e.copy()
    for k in range(len(src)):
        new_e[k] = e[k] + np.tanh(layer.edge_w @ np.concatenate([h[src[k]], h[dst[k]]]) + layer.edge_b)
    return new_h, new_e


def test_path_graph_matches_stepwise_oracle():
    lw = lower(_path_graph(), BACKEND)
    assert (lw.n_nodes, lw.n_edges) == (3, 2)
    params = init_params(D, hidden=6, n_layers=3, seed=42)
    for layer in params.layers:
        layer.msg_b[:] = 0.1
        layer.edge_b[:] = -0.05
    h, e = lw.features.copy(), lw.edge_features.copy()
    for layer in params.layers:
        h, e = _naive_layer(h, e, lw.edge_src, lw.edge_dst, layer)
    out = gnn_forward(lw, params)
    np.testing.assert_allclose(out.node_states, h, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.edge_states, e, rtol=0, atol=1e-12)


def test_isolated_node_unchanged():
    g = SceneGraph(_path_graph().items + (Item(5, "moon", ()),), _path_graph().relations)
    lw = lower(g, BACKEND)
    out = gnn_forward(lw, init_params(D, hidden=4, n_layers=2, seed=3))
    k = lw.object_node[5]
    assert np.array_equal(out.node_states[k], lw.features[k])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_permutation_equivariance(seed):
    import random

    g = random_graph(random.Random(seed), max_items=5)
    lw = lower(g, BACKEND)
    perm = np.random.default_rng(seed).permutation(lw.n_nodes)
    params = init_params(D, hidden=4, n_layers=2, seed=seed)
    a = gnn_forward(lw, params)
    b = gnn_forward(permute_nodes(lw, perm), params)
    np.testing.assert_allclose(b.node_states, a.node_states[perm], rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.edge_states, a.edge_states, rtol=0, atol=1e-12)


def test_forward_deterministic():
    lw = lower(_toy_graph(), BACKEND)
    p = init_params(D, hidden=4, n_layers=2, seed=5)
    assert gnn_forward(lw, p).node_states.tobytes() == gnn_forward(lw, p).node_states.tobytes()


# -- refinement and assembly ----------------------------------------------------

def test_refine_zero_weights_is_raw_mean():
    lw = lower(_toy_graph(), BACKEND)
    ref = refine_triples(lw, gnn_forward(lw, zero_params(D, 4, 2)))
    s, o, edges = lw.triple_index[2]
    rows = [lw.features[s], lw.features[o]] + [lw.edge_features[k] for k in edges]
    assert len(rows) == 5  # two objects plus "standing", "next", "to"
    np.testing.assert_allclose(ref[2], sum(rows) / 5, rtol=0, atol=1e-15)


def test_refine_constant_states_and_unknown():
    lw = lower(_toy_graph(), BACKEND)
    v = np.arange(D, dtype=float)
    ref = refine_triples(lw, (np.tile(v, (lw.n_nodes, 1)), np.tile(v, (lw.n_edges, 1))))
    for vec in ref.values():
        np.testing.assert_allclose(vec, v, atol=1e-12)
    from sgkit.encoder.assemble import _constituents

    with pytest.raises(KeyError):
        _constituents(lw, 99)


def test_render_triple():
    s, o = Item(0, "person", ("young", "female")), Item(1, "hat", ("red",))
    assert render_triple(s, "wearing", o) == "young female person wearing red hat"
    assert render_triple(s, "wearing", o, include_attributes=False) == "person wearing hat"


def test_assemble_at_init_is_raw_concat():
    g = _toy_graph()
    emb = assemble(g, BACKEND, init_params(D, hidden=4, n_layers=2, seed=9))
    items = {it.item_id: it for it in g.items}
    expect = [BACKEND.embed(render_triple(items[r.item1], r.relation, items[r.item2])) for r in g.relations]
    expect.append(BACKEND.embed("cloud"))
    assert np.array_equal(emb.vectors, np.array(expect))
    assert emb.tags() == ["t0", "t1", "t2", "s9"]


def test_assemble_two_triples_one_single():
    g = SceneGraph((Item(0, "a", ("x",)), Item(1, "b", ("y",)), Item(2, "c", ("z",))),
                   (Relation(1, 0, "on", 1), Relation(0, 1, "under", 0)))
    emb = assemble(g, BACKEND, zero_params(D, 4, 1))
    assert len(emb) == 3 and emb.tags() == ["t0", "t1", "s2"] and emb.n_triples == 2


def test_assemble_alpha_one_zero_weights():
    g = _toy_graph()
    params = zero_params(D, 4, 2)
    params.alpha = 1.0
    emb = assemble(g, BACKEND, params)
    inputs = prepare(g, BACKEND)
    lw = inputs.lowered
    for row, tid in enumerate(inputs.triple_ids):
        s, o, edges = lw.triple_index[tid]
        raw = np.mean([lw.features[s], lw.features[o]] + [lw.edge_features[k] for k in edges], axis=0)
        np.testing.assert_allclose(emb.vectors[row], inputs.triple_emb[row] + raw, atol=1e-14)


def test_assemble_invariant_to_item_storage_order():
    g = _toy_graph()
    shuffled = SceneGraph(tuple(reversed(g.items)), tuple(reversed(g.relations)))
    p = init_params(D, hidden=4, n_layers=2, seed=1)
    p.alpha = 0.7
    np.testing.assert_allclose(assemble(shuffled, BACKEND, p).vectors, assemble(g, BACKEND, p).vectors,
                               rtol=0, atol=1e-12)


# -- noising and loss -------------------------------------------------------------

def test_noisy_latent_examples():
    sched = NoiseSchedule({0: 1.0, 1: 0.25, 2: 0.0})
    x0, eps = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    assert np.array_equal(noisy_latent(x0, eps, 0, sched), x0)
    assert np.array_equal(noisy_latent(x0, eps, 2, sched), eps)
    np.testing.assert_allclose(noisy_latent(x0, eps, 1, sched), [0.5, np.sqrt(0.75) * 2], rtol=1e-15)
    with pytest.raises(KeyError):
        noisy_latent(x0, eps, 5, sched)
    with pytest.raises(ValueError):
        noisy_latent(x0, eps[:1], 1, sched)


def test_noisy_latent_linear():
    sched = NoiseSchedule.linear(50)
    rng = np.random.default_rng(0)
    a, b, e = rng.standard_normal((3, 6))
    np.testing.assert_allclose(noisy_latent(a + 2 * b, e, 20, sched),
                               noisy_latent(a, e, 20, sched) + 2 * noisy_latent(b, 0 * e, 20, sched), atol=1e-12)


def test_schedule_validation():
    with pytest.raises(ValueError):
        NoiseSchedule({0: 0.5, 1: 0.9})
    with pytest.raises(ValueError):
        NoiseSchedule({0: 1.5})
    s = NoiseSchedule.scaled_linear(10)
    assert len(s) == 10 and 0 in s


def test_sg_loss_oracle_and_zero():
    sched = NoiseSchedule.linear(100)
    rng = np.random.default_rng(1)
    x0, eps = rng.standard_normal((2, 5))
    params = init_params(D, hidden=4, n_layers=2)
    g = _toy_graph()
    assert sg_loss(x0, eps, 10, sched, lambda x, t, c: eps.copy(), g, BACKEND, params) == 0.0
    zero = sg_loss(x0, eps, 10, sched, lambda x, t, c: np.zeros(5), g, BACKEND, params)
    assert zero == pytest.approx(np.mean(eps ** 2), rel=1e-15)
    with pytest.raises(ValueError):
        sg_loss(x0, eps, 10, sched, lambda x, t, c: np.zeros(4), g, BACKEND, params)


def test_sg_loss_toy_denoiser_recompute():
    sched = NoiseSchedule.linear(100)
    rng = np.random.default_rng(2)
    x0, eps = rng.standard_normal((2, 5))
    den = ToyLinearDenoiser.random(5, D, seed=3, n_steps=100)
    params = init_params(D, hidden=4, n_layers=2, seed=8)
    params.alpha = 0.4
    g = _toy_graph()
    got = sg_loss(x0, eps, 30, sched, den, g, BACKEND, params)
    # straight-line recomputation
    ab = sched.alpha_bar(30)
    xt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
    cond = assemble(g, BACKEND, params).vectors
    pred = den.a @ xt + den.b @ cond.mean(axis=0) + 0.3 * den.c
    assert got == pytest.approx(float(np.mean((eps - pred) ** 2)), rel=1e-12)


# -- gradients ---------------------------------------------------------------------

def _cfg(seed=0, latent=4):
    rng = np.random.default_rng(seed)
    x0, eps = rng.standard_normal((2, latent))
    return LossConfig(x0, eps, 40, NoiseSchedule.linear(100), ToyLinearDenoiser.random(latent, D, seed, 100),
                      BACKEND)


def test_grad_check_toy():
    params = init_params(D, hidden=6, n_layers=2, seed=4)
    params.alpha = 0.8
    assert grad_check(_toy_graph(), params, _cfg(), eps_fd=1e-5) < 1e-4


def test_zero_gradient_when_loss_does_not_depend():
    cfg = _cfg()
    no_edges = SceneGraph((Item(0, "sky", ()), Item(1, "sea", ())))
    params = init_params(D, hidden=4, n_layers=2, seed=1)
    params.alpha = 0.5
    _, g_alpha, grads = loss_and_grad(prepare(no_edges, BACKEND), params, cfg)
    assert g_alpha == 0.0
    assert all(not np.any(g) for layer in grads for g in layer.values())
    # at alpha = 0 the refined path is cut off, so layer weights get exactly zero gradient
    params.alpha = 0.0
    _, _, grads = loss_and_grad(prepare(_toy_graph(), BACKEND), params, cfg)
    assert all(not np.any(g) for layer in grads for g in layer.values())


def test_alpha_gradient_closed_form():
    cfg = _cfg(seed=6)
    g = _toy_graph()
    params = zero_params(D, hidden=4, n_layers=2)
    _, g_alpha, _ = loss_and_grad(prepare(g, BACKEND), params, cfg)
    inputs = prepare(g, BACKEND)
    lw = inputs.lowered
    raw = np.array([np.mean([lw.features[s], lw.features[o]] + [lw.edge_features[k] for k in e], axis=0)
                    for s, o, e in (lw.triple_index[t] for t in inputs.triple_ids)])
    n_vec = len(inputs.triple_ids) + len(inputs.single_ids)
    ab = cfg.schedule.alpha_bar(cfg.t)
    xt = np.sqrt(ab) * cfg.x0 + np.sqrt(1 - ab) * cfg.eps
    cond = np.concatenate([inputs.triple_emb, inputs.single_emb])
    den = cfg.denoiser
    pred = den.a @ xt + den.b @ cond.mean(axis=0) + (cfg.t / den.n_steps) * den.c
    # d pred / d alpha = B @ (sum of raw triple means) / n_vec
    expected = float(-2.0 / cfg.eps.size * (cfg.eps - pred) @ (den.b @ raw.sum(axis=0) / n_vec))
    assert g_alpha == pytest.approx(expected, rel=1e-12)


@pytest.mark.slow
def test_grad_check_many_seeds():
    import random

    worst = 0.0
    for seed in range(20):
        g = random_graph(random.Random(seed), max_items=4, max_attributes=1)
        params = init_params(D, hidden=4, n_layers=2, seed=seed)
        params.alpha = 0.3 + 0.05 * seed
        worst = max(worst, grad_check_report(g, params, _cfg(seed)).max_rel_error)
    assert worst < 1e-4


# -- checkpoints -------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    p = init_params(D, hidden=4, n_layers=3, seed=2)
    p.alpha = 0.125
    path = save_params(p, tmp_path / "enc.npz")
    q = load_params(path, expected_dim=D)
    assert q.alpha == 0.125 and len(q.layers) == 3
    for (n1, a1), (n2, a2) in zip(p.named_arrays(), q.named_arrays()):
        assert n1 == n2 and np.array_equal(a1, a2)
    with pytest.raises(CheckpointError):
        load_params(path, expected_dim=D * 2)
    np.savez(tmp_path / "other.npz", x=np.zeros(2))
    with pytest.raises(CheckpointError):
        load_params(tmp_path / "other.npz")


def test_copy_is_deep():
    p = init_params(D, hidden=4, n_layers=1)
    q = p.copy()
    q.layers[0].msg_w[0, 0] += 1.0
    assert p.layers[0].msg_w[0, 0] != q.layers[0].msg_w[0, 0]
    assert isinstance(q, EncoderParams)
