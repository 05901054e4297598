"""Recurrent classifier: forward arithmetic, gradients, Adam, training loop."""

import json
import logging
import math
from dataclasses import replace

import numpy as np
import pytest
from conftest import fd_worst_error, make_pairset, make_training_pairs

from cinet.dataset import InputMode, PairSet
from cinet.errors import ConfigError, DataError, FormatError, ShapeError, TrainingDiverged
from cinet.rnn import (
    AdamState,
    CellKind,
    RnnConfig,
    RnnModel,
    adam_step,
    evaluate,
    forward,
    gradients,
    init_adam,
    init_model,
    load_rnn,
    loss,
    save_rnn,
    train,
    write_metrics_csv,
)

ALL_CELLS = (CellKind.VANILLA, CellKind.GRU, CellKind.LSTM)


def cfg_for(cell, **overrides) -> RnnConfig:
    base = dict(cell=cell, input_dim=3, layers=1, hidden=4, seed=0)
    base.update(overrides)
    return RnnConfig(**base)


# ------------------------------------------------------------ initialization

def test_init_param_names_shapes_and_bounds():
    cfg = cfg_for(CellKind.LSTM, layers=3, hidden=5, input_dim=7)
    model = init_model(cfg)
    expected = {f"layer{i}.{part}" for i in range(3) for part in ("w_x", "w_h", "b")}
    expected |= {"out.w", "out.b"}
    assert set(model.params) == expected
    assert model.params["layer0.w_x"].shape == (20, 7)
    assert model.params["layer2.w_x"].shape == (20, 5)  # stacked layers feed hidden
    assert model.params["out.b"].shape == (1,)
    for li in range(3):
        d_in = 7 if li == 0 else 5
        assert np.abs(model.params[f"layer{li}.w_x"]).max() <= 1.0 / math.sqrt(d_in)
        assert np.abs(model.params[f"layer{li}.w_h"]).max() <= 1.0 / math.sqrt(5)


def test_init_biases_zero_except_lstm_forget_gate():
    lstm = init_model(cfg_for(CellKind.LSTM, hidden=4))
    b = lstm.params["layer0.b"]
    np.testing.assert_array_equal(b[4:8], 1.0)
    np.testing.assert_array_equal(np.delete(b, np.s_[4:8]), 0.0)
    for cell in (CellKind.VANILLA, CellKind.GRU):
        np.testing.assert_array_equal(init_model(cfg_for(cell)).params["layer0.b"], 0.0)


def test_config_validation():
    bad = [
        dict(layers=4),
        dict(layers=0),
        dict(hidden=0),
        dict(input_dim=0),
        dict(learning_rate=0.0),
        dict(l2_lambda=-0.1),
        dict(batch_size=0),
        dict(max_epochs=0),
        dict(early_stop_patience=-1),
    ]
    for overrides in bad:
        with pytest.raises(ConfigError):
            cfg_for(CellKind.GRU, **overrides).validate()


# ------------------------------------------------------------------- forward

def test_vanilla_forward_matches_hand_arithmetic():
    model = init_model(cfg_for(CellKind.VANILLA, input_dim=1, hidden=1))
    model.params["layer0.w_x"][:] = 2.0
    model.params["layer0.w_h"][:] = 0.5
    model.params["layer0.b"][:] = 0.3
    model.params["out.w"][:] = 1.5
    model.params["out.b"][:] = -0.2

    h1 = math.tanh(2.0 * 0.4 + 0.3)
    h2 = math.tanh(2.0 * 0.1 + 0.5 * h1 + 0.3)
    want = 1.0 / (1.0 + math.exp(-(1.5 * h2 - 0.2)))
    got = forward(model, np.array([[0.4], [0.1]]))
    assert got == pytest.approx(want, abs=1e-14)


def test_gru_forward_matches_hand_arithmetic():
    # gate packing is [z, r] then candidate; reset masks h_prev before w_h
    model = init_model(cfg_for(CellKind.GRU, input_dim=1, hidden=1))
    wz, wr, wn = 0.7, -0.4, 1.1
    uz, ur, un = 0.2, 0.6, -0.8
    bz, br, bn = 0.05, -0.1, 0.3
    model.params["layer0.w_x"][:, 0] = [wz, wr, wn]
    model.params["layer0.w_h"][:, 0] = [uz, ur, un]
    model.params["layer0.b"][:] = [bz, br, bn]
    model.params["out.w"][:] = 2.0
    model.params["out.b"][:] = 0.1

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h = 0.0
    for x in (0.5, -0.3):
        z = sig(wz * x + uz * h + bz)
        r = sig(wr * x + ur * h + br)
        cand = math.tanh(wn * x + un * (r * h) + bn)
        h = (1.0 - z) * h + z * cand
    want = sig(2.0 * h + 0.1)
    got = forward(model, np.array([[0.5], [-0.3]]))
    assert got == pytest.approx(want, abs=1e-14)


def test_lstm_forward_matches_hand_arithmetic():
    # gate packing is [i, f, g, o] on one unit, two steps
    model = init_model(cfg_for(CellKind.LSTM, input_dim=1, hidden=1))
    wx = [0.9, -0.2, 0.6, 0.4]
    wh = [0.3, 0.5, -0.7, 0.8]
    bs = [0.0, 1.0, 0.2, -0.1]
    model.params["layer0.w_x"][:, 0] = wx
    model.params["layer0.w_h"][:, 0] = wh
    model.params["layer0.b"][:] = bs
    model.params["out.w"][:] = -1.3
    model.params["out.b"][:] = 0.25

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h = c = 0.0
    for x in (0.8, 0.2):
        i = sig(wx[0] * x + wh[0] * h + bs[0])
        f = sig(wx[1] * x + wh[1] * h + bs[1])
        g = math.tanh(wx[2] * x + wh[2] * h + bs[2])
        o = sig(wx[3] * x + wh[3] * h + bs[3])
        c = f * c + i * g
        h = o * math.tanh(c)
    want = sig(-1.3 * h + 0.25)
    got = forward(model, np.array([[0.8], [0.2]]))
    assert got == pytest.approx(want, abs=1e-14)


def test_zeroed_network_outputs_exactly_half():
    model = init_model(cfg_for(CellKind.LSTM, layers=2))
    for name in model.params:
        model.params[name][:] = 0.0
    assert forward(model, np.full((3, 3), 0.7)) == 0.5


def test_forward_rejects_bad_shapes():
    model = init_model(cfg_for(CellKind.VANILLA, input_dim=8))
    with pytest.raises(ShapeError, match=r"expected a \(steps, 8\) sequence, got shape \(1, 30\)"):
        forward(model, np.zeros((1, 30)))
    with pytest.raises(ShapeError):
        forward(model, np.zeros((0, 8)))
    with pytest.raises(ShapeError):
        forward(model, np.zeros(8))


def test_evaluate_matches_single_sequence_forward():
    model = init_model(cfg_for(CellKind.GRU, input_dim=4, layers=2, hidden=6))
    pairs = make_training_pairs(dim=4, lengths=(1, 3, 2, 3, 1))
    _, probs = evaluate(model, pairs)
    singles = np.array([forward(model, p.x) for p in pairs])
    np.testing.assert_allclose(probs, singles, rtol=0, atol=1e-12)


def test_evaluate_ties_predict_increment():
    model = init_model(cfg_for(CellKind.VANILLA, input_dim=3))
    for name in model.params:
        model.params[name][:] = 0.0
    pairs = make_training_pairs(dim=3, lengths=(1, 2, 2, 3))
    acc, probs = evaluate(model, pairs)
    np.testing.assert_array_equal(probs, 0.5)
    assert acc == np.mean([p.y == 1 for p in pairs])
    with pytest.raises(DataError):
        evaluate(model, [])


# ---------------------------------------------------------------------- loss

def test_loss_closed_forms():
    assert loss(0.5, 1) == pytest.approx(math.log(2.0), abs=1e-12)
    assert loss(0.5, 0) == pytest.approx(math.log(2.0), abs=1e-12)
    assert loss([0.9], [1]) == pytest.approx(-math.log(0.9), abs=1e-12)
    assert loss([0.9, 0.5], [1, 0]) == pytest.approx(
        (-math.log(0.9) + math.log(2.0)) / 2.0, abs=1e-12)


def test_loss_l2_term_counts_weights_not_biases():
    model = init_model(cfg_for(CellKind.VANILLA, input_dim=2, hidden=2))
    for name in model.params:
        model.params[name][:] = 0.5 if not name.endswith(".b") else 9.9
    n_weights = sum(v.size for k, v in model.params.items() if not k.endswith(".b"))
    want = math.log(2.0) + 0.1 * 0.25 * n_weights
    assert loss(0.5, 1, model, l2_lambda=0.1) == pytest.approx(want, abs=1e-12)
    assert loss(0.5, 1, model, l2_lambda=0.0) == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_clamps_saturated_predictions(caplog):
    with caplog.at_level(logging.WARNING, logger="cinet.rnn"):
        value = loss([0.0, 1.0], [1, 0])
    assert np.isfinite(value)
    assert value == pytest.approx(-math.log(1e-12), rel=1e-6)
    assert any("clamped" in rec.message for rec in caplog.records)


def test_loss_validates_alignment():
    with pytest.raises(DataError):
        loss([0.5], [1, 0])
    with pytest.raises(DataError):
        loss([], [])


# ----------------------------------------------------------------- gradients

@pytest.mark.parametrize("cell", ALL_CELLS, ids=lambda c: c.value)
@pytest.mark.parametrize("layers", (1, 2, 3))
def test_bptt_matches_finite_differences(cell, layers):
    assert fd_worst_error(cell, layers) < 1e-4


def test_gradients_invariant_under_batch_duplication():
    model = init_model(cfg_for(CellKind.LSTM, input_dim=4, layers=2, hidden=5,
                               l2_lambda=0.01))
    batch = make_training_pairs(dim=4)
    g1 = gradients(model, batch)
    g2 = gradients(model, batch + batch)
    for name in g1:
        np.testing.assert_allclose(g1[name], g2[name], rtol=1e-12, atol=1e-14)


def test_gradients_reject_empty_batch():
    model = init_model(cfg_for(CellKind.VANILLA))
    with pytest.raises(DataError):
        gradients(model, [])


# ---------------------------------------------------------------------- adam

def test_adam_first_step_size_is_learning_rate():
    model = init_model(cfg_for(CellKind.GRU, input_dim=4, hidden=5))
    before = model.copy_params()
    grads = gradients(model, make_training_pairs(dim=4))
    state = init_adam(model)
    ret_state, ret_model = adam_step(state, model, grads, lr=1e-3)
    assert ret_model is model and ret_state is state and state.t == 1
    for name, g in grads.items():
        delta = np.abs(model.params[name] - before[name])
        meaningful = np.abs(g) > 1e-5
        if meaningful.any():
            assert delta[meaningful].max() <= 1e-3 * (1 + 1e-9)
            assert delta[meaningful].min() >= 0.999e-3


def test_adam_two_steps_match_hand_update():
    cfg = cfg_for(CellKind.VANILLA)
    model = RnnModel(config=cfg, params={"p": np.array([0.0])})
    state = init_adam(model)
    adam_step(state, model, {"p": np.array([1.0])}, lr=0.1)
    adam_step(state, model, {"p": np.array([0.5])}, lr=0.1)

    m1, v1 = 0.1 * 1.0, 0.001 * 1.0
    p = -0.1 * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
    m2 = 0.9 * m1 + 0.1 * 0.5
    v2 = 0.999 * v1 + 0.001 * 0.25
    p -= 0.1 * (m2 / (1 - 0.9 ** 2)) / (math.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    assert model.params["p"][0] == pytest.approx(p, abs=1e-15)
    assert state.t == 2


# ------------------------------------------------------------------ training

def lstm_cfg(**overrides) -> RnnConfig:
    base = dict(cell=CellKind.LSTM, input_dim=6, layers=1, hidden=8,
                l2_lambda=0.0, learning_rate=1e-2, batch_size=8, seed=0,
                early_stop_patience=0, max_epochs=120)
    base.update(overrides)
    return RnnConfig(**base)


def test_train_memorizes_separable_data():
    ps = make_pairset()
    model, hist = train(ps, lstm_cfg())
    assert hist.records[-1].train_acc == 1.0
    assert hist.stopped_epoch == 120  # patience 0 disables early stopping
    acc, _ = evaluate(model, ps.subset("val"))
    assert acc == 1.0


def test_train_early_stops_and_returns_best_snapshot():
    ps = make_pairset()
    model, hist = train(ps, lstm_cfg(early_stop_patience=3, max_epochs=200))
    assert hist.stopped_epoch < 200
    assert hist.stopped_epoch == hist.best_epoch + 3
    best_val = max(r.val_acc for r in hist.records)
    assert hist.records[hist.best_epoch - 1].val_acc == best_val
    acc, _ = evaluate(model, ps.subset("val"))
    assert acc == best_val


def test_train_is_deterministic():
    ps = make_pairset()
    cfg = lstm_cfg(max_epochs=15)
    model_a, hist_a = train(ps, cfg)
    model_b, hist_b = train(ps, cfg)
    assert hist_a == hist_b
    for name in model_a.params:
        np.testing.assert_array_equal(model_a.params[name], model_b.params[name])


def test_train_seed_changes_outcome():
    ps = make_pairset()
    model_a, _ = train(ps, lstm_cfg(max_epochs=5))
    model_b, _ = train(ps, lstm_cfg(max_epochs=5, seed=1))
    assert any(not np.array_equal(model_a.params[n], model_b.params[n])
               for n in model_a.params)


def test_train_validates_mode_dim_monitor_and_splits():
    ps = make_pairset()
    with pytest.raises(ConfigError, match="encode"):
        train(ps, lstm_cfg(input_mode=InputMode.P_O))
    with pytest.raises(ConfigError, match="input_dim"):
        train(ps, lstm_cfg(input_dim=7))
    with pytest.raises(ConfigError, match="monitor"):
        train(ps, lstm_cfg(), monitor="train")
    no_val = make_pairset(n_val=0)
    with pytest.raises(DataError, match="non-empty"):
        train(no_val, lstm_cfg())
    empty = PairSet(mode=InputMode.P_C, vocab_size=6)
    with pytest.raises(DataError):
        train(empty, lstm_cfg())


def test_train_raises_on_divergence():
    ps = make_pairset()
    ps.pairs[-1].x = ps.pairs[-1].x.copy()
    ps.pairs[-1].x[0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(ps, lstm_cfg())


def test_metrics_csv_layout(tmp_path):
    ps = make_pairset()
    _, hist = train(ps, lstm_cfg(max_epochs=3))
    path = tmp_path / "metrics.csv"
    write_metrics_csv(hist, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_acc"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == "1" and float(first[1]) > 0.0


# --------------------------------------------------------------- persistence

def test_checkpoint_round_trip(tmp_path):
    ps = make_pairset()
    model, _ = train(ps, lstm_cfg(max_epochs=4, layers=2))
    path = tmp_path / "model.json"
    save_rnn(model, path)
    back = load_rnn(path)
    assert back.config == model.config
    for name in model.params:
        np.testing.assert_array_equal(back.params[name], model.params[name])
    assert forward(back, ps.pairs[0].x) == forward(model, ps.pairs[0].x)


def test_checkpoint_load_rejects_corruption(tmp_path):
    model = init_model(cfg_for(CellKind.GRU))
    path = tmp_path / "model.json"
    save_rnn(model, path)

    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    stale = tmp_path / "stale.json"
    stale.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="format_version"):
        load_rnn(stale)

    doc = json.loads(path.read_text())
    doc["params"]["out.w"] = [0.0]  # wrong length for hidden=4
    short = tmp_path / "short.json"
    short.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="out.w"):
        load_rnn(short)

    doc = json.loads(path.read_text())
    del doc["params"]["layer0.w_h"]
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="layer0.w_h"):
        load_rnn(missing)

    garbage = tmp_path / "garbage.json"
    garbage.write_text("{nope")
    with pytest.raises(FormatError):
        load_rnn(garbage)
