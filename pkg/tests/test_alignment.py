"""Alignment-space tests: losses against hand arithmetic and a straight
numpy re-derivation, store/retrieval contracts, and the training loop's
determinism, divergence guards, and logging."""
import math

import numpy as np
import pytest

from gradcheck import check_loss_gradients
from zooselect.alignment import (EmbeddingStore, TrainConfig, build_store,
                                 load_store, loss_mkc, loss_sal,
                                 loss_sal_contrastive, retrieve, save_store,
                                 total_loss, train_proxy)
from zooselect.encoders import (ModelEncoderParams, QueryEncoderParams,
                                encode_model, encode_model_tensor,
                                encode_query_tensor)
from zooselect.errors import (DegenerateVectorError, GradientFlowError,
                              TrainingDivergedError, UncoveredModelError)
from zooselect.nncore import Tensor, backward, derive_rng, derive_seed
from zooselect.probe import ProbePool, probe_model
from zooselect.zoo import build_zoo, external_pool_samples, sample_task

MARGIN = 0.4


def vectors_with_cosine(c, d=2):
    """A unit pair whose cosine is c up to float rounding."""
    u = np.zeros(d)
    u[0] = 1.0
    v = np.zeros(d)
    v[0] = c
    v[1] = math.sqrt(max(0.0, 1.0 - c * c))
    return Tensor(u), Tensor(v)


def np_cosine(u, v):
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def np_cross_entropy(logits, idx):
    z = logits - logits.max()
    p = np.exp(z) / np.exp(z).sum()
    return float(-np.log(p[idx]))


# ---------------------------------------------------------------------------
# alignment losses


def test_matched_loss_zero_for_positive_scaling():
    u = Tensor(np.array([0.3, -1.2, 0.7]))
    scaled = Tensor(u.data * 2.0)
    assert abs(loss_sal(u, scaled, matched=True, margin=MARGIN).item()) < 1e-12
    assert abs(loss_sal_contrastive(u, scaled, matched=True, margin=MARGIN).item()) < 1e-12


def test_unmatched_loss_inside_margin_is_exactly_zero():
    t, h = vectors_with_cosine(0.2)
    assert loss_sal(t, h, matched=False, margin=MARGIN).item() == 0.0
    assert loss_sal_contrastive(t, h, matched=False, margin=MARGIN).item() == 0.0


def test_unmatched_loss_hand_values():
    t, h = vectors_with_cosine(0.9)
    assert loss_sal(t, h, matched=False, margin=MARGIN).item() == pytest.approx(0.5, abs=1e-9)
    assert loss_sal_contrastive(t, h, matched=False, margin=MARGIN).item() == pytest.approx(
        0.25, abs=1e-9)


def test_unmatched_loss_at_margin_is_zero():
    t, h = vectors_with_cosine(MARGIN)
    assert loss_sal(t, h, matched=False, margin=MARGIN).item() == pytest.approx(0.0, abs=1e-9)
    assert loss_sal_contrastive(t, h, matched=False, margin=MARGIN).item() == pytest.approx(
        0.0, abs=1e-9)


def test_unmatched_branch_zero_over_cosine_grid():
    # The hinge must return a hard 0.0, not a tiny positive number, for
    # every cosine at or below the margin; above it, cos - margin.
    for c in np.linspace(-1.0, 0.39, 1000):
        t, h = vectors_with_cosine(float(c))
        assert loss_sal(t, h, matched=False, margin=MARGIN).item() == 0.0
    for c in np.linspace(0.41, 0.999, 200):
        t, h = vectors_with_cosine(float(c))
        got = loss_sal(t, h, matched=False, margin=MARGIN).item()
        assert got == pytest.approx(float(c) - MARGIN, abs=1e-12)


def test_matched_loss_is_one_minus_cosine():
    for c in np.linspace(-0.95, 0.95, 50):
        t, h = vectors_with_cosine(float(c))
        assert loss_sal(t, h, matched=True, margin=MARGIN).item() == pytest.approx(
            1.0 - float(c), abs=1e-12)


def test_loss_sal_rejects_zero_vector():
    z, h = Tensor(np.zeros(3)), Tensor(np.ones(3))
    with pytest.raises(DegenerateVectorError):
        loss_sal(z, h, matched=True)
    with pytest.raises(DegenerateVectorError):
        loss_sal_contrastive(h, z, matched=False)


def test_loss_mkc_uniform_logits_is_log_m():
    m = 12
    enc = ModelEncoderParams.build(4, 3, 6, m, seed=0)
    enc.params["head.w"].data[:] = 0.0
    enc.params["head.b"].data[:] = 0.0
    h = Tensor(np.random.default_rng(1).normal(size=6))
    assert loss_mkc(h, 5, enc).item() == pytest.approx(math.log(m), abs=1e-12)


def test_loss_mkc_index_out_of_range():
    enc = ModelEncoderParams.build(4, 3, 6, 2, seed=0)
    h = Tensor(np.ones(6))
    with pytest.raises(IndexError):
        loss_mkc(h, 2, enc)


# ---------------------------------------------------------------------------
# total_loss


def tiny_setup(sal_variant="cosine", alpha=1.0, seed=40):
    from test_encoders import make_graph_set, make_task
    cfg = TrainConfig(alpha=alpha, sal_variant=sal_variant, q_n=2, batch_size=4,
                      epochs=1, hidden=2, embedding_dim=4, seed=seed)
    m_enc = ModelEncoderParams.build(3, 2, 4, 2, seed=seed)
    q_enc = QueryEncoderParams.build(3, 2, 4, seed=seed + 1)
    sets = [make_graph_set(seed=seed + i, k=2, d=3, model_id=f"m{i:03d}") for i in range(2)]
    batch = [(make_task(seed=seed + 7, k=2, d=3, per_cat=2), 0),
             (make_task(seed=seed + 8, k=2, d=3, per_cat=2), 1)]
    return cfg, m_enc, q_enc, sets, batch


def test_total_loss_matches_numpy_rederivation():
    for variant in ("cosine", "contrastive"):
        cfg, m_enc, q_enc, sets, batch = tiny_setup(sal_variant=variant)
        loss, parts = total_loss(batch, sets, m_enc, q_enc, cfg)
        h = [encode_model_tensor(gs, m_enc).data for gs in sets]
        w, b = m_enc.params["head.w"].data, m_enc.params["head.b"].data
        expect_items = []
        for task, idx in batch:
            q = encode_query_tensor(task, q_enc).data
            mkc = np_cross_entropy(h[idx] @ w + b, idx)
            pull = 1.0 - np_cosine(q, h[idx])
            pushes = [max(0.0, np_cosine(q, h[j]) - cfg.margin)
                      for j in range(len(h)) if j != idx]
            if variant == "contrastive":
                pull = pull ** 2
                pushes = [p ** 2 for p in pushes]
            expect_items.append(mkc + cfg.alpha * (pull + np.mean(pushes)))
        assert loss.item() == pytest.approx(float(np.mean(expect_items)), abs=1e-9)
        assert parts["loss"] == pytest.approx(
            parts["loss_mkc"] + cfg.alpha * parts["loss_sal"], abs=1e-9)


def test_total_loss_alpha_zero_is_mean_mkc_alone():
    cfg, m_enc, q_enc, sets, batch = tiny_setup(alpha=0.0)
    loss, parts = total_loss(batch, sets, m_enc, q_enc, cfg)
    h = [encode_model_tensor(gs, m_enc).data for gs in sets]
    w, b = m_enc.params["head.w"].data, m_enc.params["head.b"].data
    expected = np.mean([np_cross_entropy(h[idx] @ w + b, idx) for _, idx in batch])
    assert loss.item() == pytest.approx(float(expected), abs=1e-12)
    assert parts["loss_sal"] == 0.0


def test_total_loss_empty_batch_rejected():
    cfg, m_enc, q_enc, sets, _ = tiny_setup()
    with pytest.raises(ValueError, match="empty"):
        total_loss([], sets, m_enc, q_enc, cfg)


@pytest.mark.parametrize("variant", ["cosine", "contrastive"])
def test_total_loss_gradients_match_finite_differences(variant):
    cfg, m_enc, q_enc, sets, batch = tiny_setup(sal_variant=variant)

    def build_loss():
        return total_loss(batch, sets, m_enc, q_enc, cfg)[0]

    check_loss_gradients(build_loss, m_enc.params.tensors() + q_enc.params.tensors())


# ---------------------------------------------------------------------------
# store and retrieval


def random_store(m=5, e=8, seed=2):
    rng = np.random.default_rng(seed)
    return EmbeddingStore(embedding_dim=e, pool_id="p",
                          vectors={f"m{i:03d}": rng.normal(size=e) for i in range(m)})


def test_retrieve_singleton_and_exact_match():
    store = random_store(m=1)
    [(mid, dis)] = retrieve(np.ones(8), store)
    assert mid == "m000" and 0.0 <= dis <= 2.0
    store = random_store(m=4)
    ranked = retrieve(store.vectors["m002"], store, top_k=1)
    assert ranked[0][0] == "m002" and ranked[0][1] < 1e-12


def test_retrieve_ascending_and_range():
    store = random_store()
    ranked = retrieve(np.arange(8.0) - 3.0, store)
    distances = [d for _, d in ranked]
    assert distances == sorted(distances)
    assert all(0.0 <= d <= 2.0 for d in distances)
    assert len(ranked) == len(store)


def test_retrieve_scale_invariant_ranking():
    store = random_store(seed=3)
    q = np.random.default_rng(4).normal(size=8)
    base = retrieve(q, store)
    scaled = retrieve(3.0 * q, store)
    assert [mid for mid, _ in base] == [mid for mid, _ in scaled]
    np.testing.assert_allclose([d for _, d in base], [d for _, d in scaled], atol=1e-12)


def test_retrieve_exact_ties_break_lexically():
    vec = np.array([1.0, 2.0, 3.0])
    store = EmbeddingStore(embedding_dim=3, pool_id="p",
                           vectors={"m_b": vec.copy(), "m_a": vec.copy()})
    ranked = retrieve(vec * 0.5, store)
    assert [mid for mid, _ in ranked] == ["m_a", "m_b"]
    assert ranked[0][1] == ranked[1][1]


def test_retrieve_argmin_distance_equals_argmax_cosine():
    store = random_store(m=6, seed=5)
    q = np.random.default_rng(6).normal(size=8)
    best = retrieve(q, store, top_k=1)[0][0]
    cosines = {mid: np_cosine(q, v) for mid, v in store.vectors.items()}
    assert best == max(sorted(cosines), key=lambda mid: cosines[mid])


def test_retrieve_validation():
    store = random_store(m=3)
    with pytest.raises(ValueError, match="top_k"):
        retrieve(np.ones(8), store, top_k=0)
    with pytest.raises(ValueError, match="top_k"):
        retrieve(np.ones(8), store, top_k=4)
    empty = EmbeddingStore(embedding_dim=8, pool_id="p", vectors={})
    with pytest.raises(ValueError, match="empty"):
        retrieve(np.ones(8), empty)
    with pytest.raises(DegenerateVectorError):
        retrieve(np.zeros(8), store)


def test_build_store_mean_pools_multi_graph_sets():
    from test_encoders import make_graph_set
    enc = ModelEncoderParams.build(4, 3, 5, 2, seed=44)
    gs_a = make_graph_set(seed=45, model_id="m000")
    gs_b = make_graph_set(seed=46, model_id="m000")
    gs_b = type(gs_b)(model_id="m000", pool_id="pool-u", category_count=gs_b.category_count,
                      subgraphs=gs_b.subgraphs)
    single = make_graph_set(seed=47, model_id="m001")
    store = build_store({"m000": [gs_a, gs_b], "m001": single}, enc)
    expected = np.mean([encode_model(gs_a, enc).vector, encode_model(gs_b, enc).vector], axis=0)
    assert store.vectors["m000"].tobytes() == expected.tobytes()
    assert store.pool_id == "pool-t+pool-u"
    assert store.vectors["m001"].shape == (5,)


def test_store_round_trip_and_validation(tmp_path):
    store = random_store(m=3, seed=7)
    save_store(store, tmp_path)
    back = load_store(tmp_path)
    assert back.embedding_dim == store.embedding_dim and back.pool_id == store.pool_id
    for mid, vec in store.vectors.items():
        assert back.vectors[mid].tobytes() == vec.tobytes()
    index_path = tmp_path / "store.json"
    import json
    index = json.loads(index_path.read_text())
    index["format_version"] = 9
    index_path.write_text(json.dumps(index))
    with pytest.raises(ValueError, match="version"):
        load_store(tmp_path)
    index["format_version"] = 1
    index["model_ids"] = index["model_ids"][:-1]
    index_path.write_text(json.dumps(index))
    with pytest.raises(ValueError, match="disagree"):
        load_store(tmp_path)


# ---------------------------------------------------------------------------
# TrainConfig validation


@pytest.mark.parametrize("kwargs", [
    {"alpha": -0.5}, {"margin": 1.0}, {"margin": -0.1}, {"q_n": 1}, {"q_n": 9},
    {"batch_size": 0}, {"epochs": 0}, {"learning_rate": 0.0},
    {"sal_variant": "triplet"}, {"model_variant": "mlp"}, {"tasks_per_model": 0},
])
def test_train_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# training loop


@pytest.fixture(scope="module")
def small_world():
    zoo = build_zoo(size=3, categories=3, hidden_width=16, seed=5)
    pool = ProbePool(external_pool_samples(zoo, per_domain=64, seed=3), "ext-64-3", "external")
    graph_sets = {m.model_id: probe_model(m, pool).graph_set for m in zoo.models}
    return zoo, graph_sets


def small_config(**overrides):
    base = dict(alpha=1.0, margin=0.4, batch_size=4, learning_rate=1e-3, epochs=2,
                seed=9, tasks_per_model=2, q_n=3, val_tasks_per_model=1,
                hidden=8, embedding_dim=16)
    base.update(overrides)
    return TrainConfig(**base)


def test_train_proxy_history_and_store(small_world):
    zoo, graph_sets = small_world
    result = train_proxy(zoo, graph_sets, small_config())
    assert len(result.history) == 2
    for i, record in enumerate(result.history):
        assert record["epoch"] == i
        assert set(record) == {"epoch", "loss", "loss_mkc", "loss_sal", "val_r1"}
        assert all(math.isfinite(record[k]) for k in ("loss", "loss_mkc", "loss_sal"))
        assert 0.0 <= record["val_r1"] <= 1.0
    assert sorted(result.store.vectors) == zoo.model_ids
    assert all(v.shape == (16,) for v in result.store.vectors.values())


def test_train_proxy_deterministic(small_world):
    zoo, graph_sets = small_world
    a = train_proxy(zoo, graph_sets, small_config())
    b = train_proxy(zoo, graph_sets, small_config())
    assert a.history == b.history
    for mid in zoo.model_ids:
        assert a.store.vectors[mid].tobytes() == b.store.vectors[mid].tobytes()


def test_train_proxy_loss_decreases(small_world):
    zoo, graph_sets = small_world
    result = train_proxy(zoo, graph_sets, small_config(epochs=6, learning_rate=3e-3))
    assert result.history[-1]["loss"] < result.history[0]["loss"]


def test_train_proxy_uncovered_model_listed(small_world):
    zoo, graph_sets = small_world
    partial = {mid: gs for mid, gs in graph_sets.items() if mid != "m001"}
    with pytest.raises(UncoveredModelError, match="m001"):
        train_proxy(zoo, partial, small_config())


def test_train_proxy_large_alpha_stays_finite(small_world):
    zoo, graph_sets = small_world
    result = train_proxy(zoo, graph_sets, small_config(alpha=100.0, epochs=1))
    assert all(math.isfinite(r["loss"]) for r in result.history)


def test_train_proxy_alpha_zero_leaves_query_encoder_untrained(small_world):
    zoo, graph_sets = small_world
    cfg = small_config(alpha=0.0)
    result = train_proxy(zoo, graph_sets, cfg)
    fresh = QueryEncoderParams.build(zoo.models[0].feature_dim, cfg.hidden,
                                     cfg.embedding_dim,
                                     seed=derive_seed(cfg.seed, "query-encoder"))
    for name, p in fresh.params.items():
        assert result.query_encoder.params[name].data.tobytes() == p.data.tobytes()
    trained = train_proxy(zoo, graph_sets, small_config(alpha=1.0))
    moved = any(trained.query_encoder.params[name].data.tobytes() != p.data.tobytes()
                for name, p in fresh.params.items())
    assert moved


def test_train_proxy_log_callback_matches_history(small_world):
    zoo, graph_sets = small_world
    seen = []
    result = train_proxy(zoo, graph_sets, small_config(), log=seen.append)
    assert seen == result.history


def test_train_proxy_divergence_abort(small_world, monkeypatch):
    zoo, graph_sets = small_world
    import zooselect.alignment as alignment

    def poisoned(batch, sets, m_enc, q_enc, cfg):
        return Tensor(np.array(math.nan)), {"loss": math.nan, "loss_mkc": math.nan,
                                            "loss_sal": math.nan}

    monkeypatch.setattr(alignment, "total_loss", poisoned)
    with pytest.raises(TrainingDivergedError) as err:
        train_proxy(zoo, graph_sets, small_config())
    assert err.value.diagnostics["epoch"] == 0
    assert "step" in err.value.diagnostics


def test_gradient_flow_guard():
    cfg, m_enc, q_enc, sets, batch = tiny_setup()
    from zooselect.alignment import _check_gradient_flow
    with pytest.raises(GradientFlowError, match="model:proj.w"):
        _check_gradient_flow(m_enc, q_enc, alpha=1.0)
    loss, _ = total_loss(batch, sets, m_enc, q_enc, cfg)
    backward(loss)
    _check_gradient_flow(m_enc, q_enc, alpha=1.0)


def test_validation_tasks_use_eval_half(small_world):
    # Episode sampling and validation draw from disjoint halves of the
    # query split, so training never sees a validation sample.
    zoo, _ = small_world
    cfg = small_config()
    rng = derive_rng(cfg.seed, "check")
    episode = sample_task(zoo.data[0], 10, rng, half="episode")
    evaluation = sample_task(zoo.data[0], 10, rng, half="eval")
    episode_rows = {row.tobytes() for row in episode.samples}
    assert not any(row.tobytes() in episode_rows for row in evaluation.samples)
