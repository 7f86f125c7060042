import json
import struct

import numpy as np
import pytest

from hrgad.augment import AugmentConfig
from hrgad.hetgraph import GraphSchema, HeteroGraph, type_histograms
from hrgad.layers import ModelConfig, init_params, model_forward
from hrgad.numerics import Tape
from hrgad.objective import SvddState
from hrgad.train import (CHECKPOINT_MAGIC, CheckpointError, TrainState, fit,
                         init_state, load_checkpoint, optimizer_step,
                         save_checkpoint, ssl_active, train_epoch, validate)
from oracles import random_graph


SCHEMA = GraphSchema(num_node_types=2, num_edge_types=2, feature_dim=2)


def _graphs(n, seed=0, schema=SCHEMA):
    rng = np.random.default_rng(seed)
    return [random_graph(rng, schema, max_nodes=6, min_nodes=2, min_edges=1,
                         graph_id=f"t{i:03d}") for i in range(n)]


def _config(**kw):
    kw.setdefault("variant", "hetgcn")
    kw.setdefault("hidden_dim", 3)
    kw.setdefault("rep_dim", 2)
    kw.setdefault("batch_size", 4)
    return ModelConfig(**kw)


def _hist(graphs):
    return type_histograms(graphs)


# -- optimizer -------------------------------------------------------------------


def test_adam_first_step_is_learning_rate():
    state = init_state(SCHEMA, _config(learning_rate=0.01))
    before = [p.value.copy() for p in state.params.all_params()]
    for p in state.params.all_params():
        p.grad = np.ones_like(p.value)
    optimizer_step(state, 0.01)
    for p, b in zip(state.params.all_params(), before):
        assert np.allclose(b - p.value, 0.01, atol=1e-9)
        assert not np.any(p.grad)
    assert state.step == 1


def test_adam_zero_gradients_no_movement():
    state = init_state(SCHEMA, _config())
    before = [p.value.copy() for p in state.params.all_params()]
    optimizer_step(state, 0.5)
    for p, b in zip(state.params.all_params(), before):
        assert np.array_equal(p.value, b)


def test_sgd_step_is_exact():
    state = init_state(SCHEMA, _config(optimizer="sgd"))
    p = state.params.all_params()[0]
    before = p.value.copy()
    g = np.full_like(p.value, 2.0)
    p.grad = g.copy()
    optimizer_step(state, 0.1)
    assert np.array_equal(p.value, before - 0.1 * g)
    assert not np.any(p.grad)


def test_optimizer_is_deterministic():
    rng = np.random.default_rng(3)
    states = [init_state(SCHEMA, _config()) for _ in range(2)]
    grads = [rng.standard_normal(p.value.shape)
             for p in states[0].params.all_params()]
    for _ in range(3):
        for state in states:
            for p, g in zip(state.params.all_params(), grads):
                p.grad = g.copy()
            optimizer_step(state, 0.05)
    for pa, pb in zip(states[0].params.all_params(), states[1].params.all_params()):
        assert np.array_equal(pa.value, pb.value)


# -- epoch loop --------------------------------------------------------------------


def test_center_freezes_on_first_batch():
    graphs = _graphs(8)
    config = _config(batch_size=4)
    state = init_state(SCHEMA, config)
    assert not state.svdd.frozen
    train_epoch(state, graphs, _hist(graphs), config)
    assert state.svdd.frozen
    center = state.svdd.center.copy()
    for _ in range(3):
        train_epoch(state, graphs, _hist(graphs), config)
        assert np.array_equal(state.svdd.center, center)


def test_recompute_center_moves_each_epoch():
    graphs = _graphs(8)
    config = _config(batch_size=4, recompute_center=True, learning_rate=0.05)
    state = init_state(SCHEMA, config)
    train_epoch(state, graphs, _hist(graphs), config)
    center = state.svdd.center.copy()
    train_epoch(state, graphs, _hist(graphs), config)
    assert not np.array_equal(state.svdd.center, center)


def test_single_batch_center_is_mean_initial_embedding():
    graphs = _graphs(5)
    config = _config(batch_size=16, seed=2)
    state = init_state(SCHEMA, config)

    tape = Tape()
    embs = {g.graph_id: tape.value(model_forward(g, state.params, config, tape)[0])
            for g in graphs}
    expected = np.mean(np.stack(list(embs.values())), axis=0)

    train_epoch(state, graphs, _hist(graphs), config)
    assert np.allclose(state.svdd.center, expected, atol=1e-12)


def test_ssl_inactive_flag():
    assert not ssl_active(_config(ssl_weight=0.0))
    assert not ssl_active(_config(ssl_weight=0.5))  # augment still disabled
    enabled = AugmentConfig(enabled=True, p_node_swap=0.5)
    assert ssl_active(_config(ssl_weight=0.5, augment=enabled))
    assert not ssl_active(_config(ssl_weight=0.0, augment=enabled))


def test_disabled_branch_matches_pure_one_class_run():
    graphs = _graphs(10)
    hist = _hist(graphs)
    runs = []
    for config in (
        _config(ssl_weight=0.0, seed=5),
        _config(ssl_weight=0.7, seed=5),  # augment disabled: weight is inert
        _config(ssl_weight=0.0, seed=5,
                augment=AugmentConfig(enabled=True, p_node_swap=0.9)),
    ):
        state = init_state(SCHEMA, config)
        losses = [train_epoch(state, graphs, hist, config) for _ in range(3)]
        runs.append((state, losses))
    ref_state, ref_losses = runs[0]
    for state, losses in runs[1:]:
        assert [l["joint"] for l in losses] == [l["joint"] for l in ref_losses]
        for pa, pb in zip(state.params.all_params(), ref_state.params.all_params()):
            assert np.array_equal(pa.value, pb.value)


def test_ssl_branch_engages_and_descends():
    graphs = _graphs(12, seed=4)
    hist = _hist(graphs)
    config = _config(ssl_weight=0.3, learning_rate=0.02, seed=6,
                     augment=AugmentConfig(enabled=True, p_node_swap=0.6,
                                           p_edge_swap=0.5))
    state = init_state(SCHEMA, config)
    first = train_epoch(state, graphs, hist, config)
    assert first["ssl"] > 0.0
    assert first["joint"] == pytest.approx(first["svdd"] + 0.3 * first["ssl"])
    losses = [train_epoch(state, graphs, hist, config) for _ in range(9)]
    assert losses[-1]["joint"] < first["joint"]


def test_same_seed_same_trajectory():
    graphs = _graphs(10)
    hist = _hist(graphs)
    config = _config(seed=8, learning_rate=0.05)
    trajectories = []
    for _ in range(2):
        state = init_state(SCHEMA, config)
        trajectories.append([train_epoch(state, graphs, hist, config)["joint"]
                             for _ in range(4)])
    assert trajectories[0] == trajectories[1]


def test_loss_descends_by_epoch_ten():
    graphs = _graphs(10, seed=1)
    hist = _hist(graphs)
    config = _config(learning_rate=0.02, seed=3)
    state = init_state(SCHEMA, config)
    losses = [train_epoch(state, graphs, hist, config)["joint"] for _ in range(10)]
    assert losses[9] < losses[0]


def test_train_epoch_empty_raises():
    config = _config()
    state = init_state(SCHEMA, config)
    with pytest.raises(ValueError):
        train_epoch(state, [], None, config)


def test_degenerate_width_one_trains(g3, schema2):
    config = ModelConfig(variant="hrgcn_r2", hidden_dim=1, rep_dim=1, batch_size=1)
    state = init_state(schema2, config)
    losses = train_epoch(state, [g3], type_histograms([g3]), config)
    assert np.isfinite(losses["joint"])


# -- validation --------------------------------------------------------------------


def test_validate_untrained_accuracy_half():
    graphs = _graphs(6, seed=9)
    config = _config(ssl_weight=0.4,
                     augment=AugmentConfig(enabled=True, p_node_swap=0.7))
    state = init_state(SCHEMA, config)
    for p in state.params.all_params():
        p.value = np.zeros_like(p.value)
    state.svdd = SvddState(center=np.zeros(config.rep_dim), frozen=True)
    out = validate(state, graphs, _hist(graphs), config)
    assert out["accuracy"] == 0.5
    assert out["mean_distance"] == 0.0
    assert out["metric"] == 0.5


def test_validate_perfect_separation_accuracy_one():
    # Handcrafted hetgcn width-1 model: the type swap flips which mixing row
    # the sole edge's message lands on, pushing phi_2 across 0.5.
    schema = GraphSchema(2, 1, 1)
    config = ModelConfig(variant="hetgcn", hidden_dim=1, rep_dim=1,
                         num_layers=1, ssl_weight=0.5, seed=0,
                         augment=AugmentConfig(enabled=True, p_node_swap=1.0))
    g = HeteroGraph("v", (0, 1), np.array([[1.0], [0.0]]), ((0, 1),), (0,))
    state = init_state(schema, config)
    lp = state.params.layers[0]
    lp.node[0].value = np.array([[1.0]])
    lp.node[1].value = np.array([[1.0]])
    lp.mix.value = np.array([[1.0], [-1.0]])
    lp.self_w.value = np.array([[0.0]])
    lp.bias.value = np.array([0.0])
    state.params.svdd_head.value = np.array([[0.0]])
    state.params.ssl_head_w.value = np.array([[-10.0]])
    state.params.ssl_head_b.value = np.array([2.0])
    state.svdd = SvddState(center=np.zeros(1), frozen=True)
    out = validate(state, [g], type_histograms([g]), config)
    assert out["accuracy"] == 1.0
    assert out["metric"] == pytest.approx(1.0)


def test_validate_ssl_inactive_pins_accuracy():
    graphs = _graphs(4)
    config = _config(ssl_weight=0.0)
    state = init_state(SCHEMA, config)
    train_epoch(state, graphs, _hist(graphs), config)
    out = validate(state, graphs, _hist(graphs), config)
    assert out["accuracy"] == 0.5
    assert out["metric"] == pytest.approx(-out["mean_distance"] + 0.5)


def test_validate_empty_raises():
    config = _config()
    with pytest.raises(ValueError):
        validate(init_state(SCHEMA, config), [], None, config)


# -- fit ---------------------------------------------------------------------------


def test_fit_early_stops_and_restores_best():
    graphs = _graphs(12, seed=7)
    val = _graphs(6, seed=17)
    hist = _hist(graphs)
    config = _config(max_epochs=200, patience=3, learning_rate=0.2, seed=1)
    state, history = fit(graphs, val, hist, config, SCHEMA)
    assert len(history) < 200
    best = max(row["val_metric"] for row in history)
    assert state.best_val_metric == best
    again = validate(state, val, hist, config)
    assert again["metric"] == pytest.approx(best, abs=1e-12)


def test_fit_history_rows_complete():
    graphs = _graphs(8)
    val = _graphs(4, seed=2)
    config = _config(max_epochs=3, patience=5)
    _, history = fit(graphs, val, _hist(graphs), config, SCHEMA)
    assert [row["epoch"] for row in history] == [1, 2, 3]
    for row in history:
        for key in ("svdd", "ssl", "joint", "val_metric", "val_distance",
                    "val_accuracy", "seconds"):
            assert key in row
        assert row["seconds"] >= 0.0


def test_fit_without_validation_uses_loss():
    graphs = _graphs(8)
    config = _config(max_epochs=3, patience=5)
    state, history = fit(graphs, [], _hist(graphs), config, SCHEMA)
    for row in history:
        assert row["val_metric"] == -row["joint"]
        assert "val_distance" not in row
    assert state.svdd.frozen


def test_fit_logs_lines():
    graphs = _graphs(8)
    lines = []
    config = _config(max_epochs=2, patience=5)
    fit(graphs, [], _hist(graphs), config, SCHEMA, log=lines.append)
    assert len(lines) == 2
    assert all("joint" in ln and "val" in ln for ln in lines)


def test_fit_is_reproducible():
    graphs = _graphs(10, seed=3)
    val = _graphs(5, seed=23)
    hist = _hist(graphs)
    config = _config(max_epochs=4, patience=10, seed=12)
    state_a, hist_a = fit(graphs, val, hist, config, SCHEMA)
    state_b, hist_b = fit(graphs, val, hist, config, SCHEMA)
    assert [r["joint"] for r in hist_a] == [r["joint"] for r in hist_b]
    for pa, pb in zip(state_a.params.all_params(), state_b.params.all_params()):
        assert np.array_equal(pa.value, pb.value)
    assert np.array_equal(state_a.svdd.center, state_b.svdd.center)


def test_fit_empty_train_raises():
    with pytest.raises(ValueError):
        fit([], [], None, _config(), SCHEMA)


# -- checkpoints ---------------------------------------------------------------------


def _trained_state(config=None, n=8):
    graphs = _graphs(n)
    config = config or _config(seed=4)
    state = init_state(SCHEMA, config)
    train_epoch(state, graphs, _hist(graphs), config)
    return state, graphs, config


def _read_blob(path):
    blob = open(path, "rb").read()
    (mlen,) = struct.unpack_from("<Q", blob, 8)
    manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    return blob, mlen, manifest


def _write_blob(path, manifest, payload):
    raw = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(payload)


def test_checkpoint_round_trip_bitwise(tmp_path):
    state, graphs, config = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    loaded = load_checkpoint(path)
    assert loaded.epoch == state.epoch
    assert loaded.svdd.frozen
    assert np.array_equal(loaded.svdd.center, state.svdd.center)
    for pa, pb in zip(loaded.params.all_params(), state.params.all_params()):
        assert pa.name == pb.name
        assert np.array_equal(pa.value, pb.value)
    # forward outputs are bitwise identical through the round trip
    for g in graphs[:3]:
        t1, t2 = Tape(), Tape()
        e1, p1 = model_forward(g, state.params, config, t1)
        e2, p2 = model_forward(g, loaded.params, loaded.params.config, t2)
        assert np.array_equal(t1.value(e1), t2.value(e2))
        assert np.array_equal(t1.value(p1), t2.value(p2))


def test_checkpoint_restores_config_and_schema(tmp_path):
    config = _config(variant="hrgcn_r2", ssl_weight=0.25, seed=9,
                     augment=AugmentConfig(enabled=True, p_replace=0.3))
    state, _, _ = _trained_state(config)
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    loaded = load_checkpoint(path)
    assert loaded.params.config == config
    assert loaded.params.schema == SCHEMA


def test_checkpoint_into_existing_params(tmp_path):
    state, _, config = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    fresh = init_params(SCHEMA, config, seed=99)
    loaded = load_checkpoint(path, into=fresh)
    assert loaded.params is fresh
    for pa, pb in zip(fresh.all_params(), state.params.all_params()):
        assert np.array_equal(pa.value, pb.value)


def test_save_requires_frozen_center(tmp_path):
    state = init_state(SCHEMA, _config())
    with pytest.raises(ValueError):
        save_checkpoint(state, str(tmp_path / "m.ckpt"))


def test_load_rejects_non_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"GARBAGE!" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(str(path))


def test_load_rejects_version_tag(tmp_path):
    state, _, _ = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    blob = open(path, "rb").read()
    open(path, "wb").write(b"HRGADCP2" + blob[8:])
    with pytest.raises(CheckpointError, match="version mismatch"):
        load_checkpoint(path)


def test_load_rejects_manifest_version(tmp_path):
    state, _, _ = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    blob, mlen, manifest = _read_blob(path)
    manifest["format_version"] = 2
    _write_blob(path, manifest, blob[16 + mlen:])
    with pytest.raises(CheckpointError, match="version mismatch"):
        load_checkpoint(path)


def test_load_rejects_corrupt_manifest(tmp_path):
    state, _, _ = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    blob = bytearray(open(path, "rb").read())
    blob[16] = ord("X")
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError, match="corrupt manifest"):
        load_checkpoint(path)


def test_load_rejects_truncated_payload(tmp_path):
    state, _, _ = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_load_rejects_trailing_bytes(tmp_path):
    state, _, _ = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    with open(path, "ab") as fh:
        fh.write(b"\x00" * 8)
    with pytest.raises(CheckpointError, match="trailing bytes"):
        load_checkpoint(path)


def test_load_rejects_unknown_parameter(tmp_path):
    state, _, _ = _trained_state(_config(variant="hrgcn_r2"))
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    gcn_params = init_params(SCHEMA, _config(variant="gcn"), seed=0)
    with pytest.raises(CheckpointError, match="unknown parameter"):
        load_checkpoint(path, into=gcn_params)


def test_load_names_shape_mismatch(tmp_path):
    state, _, _ = _trained_state(_config(hidden_dim=3))
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    wider = init_params(SCHEMA, _config(hidden_dim=5), seed=0)
    with pytest.raises(CheckpointError, match=r"shape mismatch.*layer1"):
        load_checkpoint(path, into=wider)


def test_load_rejects_missing_center(tmp_path):
    state, _, _ = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    blob, mlen, manifest = _read_blob(path)
    assert manifest["entries"][-1]["name"] == "svdd.center"
    manifest["entries"] = manifest["entries"][:-1]
    center_bytes = state.svdd.center.size * 8
    _write_blob(path, manifest, blob[16 + mlen:-center_bytes])
    with pytest.raises(CheckpointError, match="missing svdd.center"):
        load_checkpoint(path)


def test_load_rejects_missing_parameters(tmp_path):
    state, _, _ = _trained_state()
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(state, path)
    blob, mlen, manifest = _read_blob(path)
    # drop ssl_head.bias (second-to-last entry, 8 bytes) from manifest+payload
    entry = manifest["entries"][-2]
    assert entry["name"] == "ssl_head.bias" and entry["shape"] == [1]
    manifest["entries"] = manifest["entries"][:-2] + manifest["entries"][-1:]
    payload = blob[16 + mlen:]
    center_bytes = state.svdd.center.size * 8
    payload = payload[:-(center_bytes + 8)] + payload[-center_bytes:]
    _write_blob(path, manifest, payload)
    with pytest.raises(CheckpointError, match="missing parameters.*ssl_head.bias"):
        load_checkpoint(path)
