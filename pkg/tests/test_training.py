"""Objective decomposition, optimization sanity, and checkpoint format."""

import struct

import numpy as np
import pytest

from sqar import synth_blobs
from sqar.ensemble import SQEnsembleModel, build_model, wrap_parameters
from sqar.quant import SqParams
from sqar.training import (CheckpointError, CheckpointVersionError,
                           TrainConfig, load_checkpoint, loss, loss_graph,
                           save_checkpoint, train)


def small_model(seed=0, **sq):
    params = SqParams(2.0, 8)
    return build_model([4, 6, 3], sq_input=params, sq_feature=params,
                       n_members=4, seed=seed, **sq)


def batch(seed=0, n=16):
    rng = np.random.default_rng(seed)
    return rng.random((n, 4)), rng.integers(0, 3, n)


def test_loss_decomposition():
    model = small_model()
    config = TrainConfig(alpha=2.0, n_bins=8, n_members=4, beta=10.0, mu=1.0)
    params = wrap_parameters(model, requires_grad=False)
    X, y = batch()
    total, parts = loss_graph(model, params, X, y, config,
                              np.random.default_rng(0))
    recomposed = parts["l_class"] + 10.0 * parts["mi"] + 1.0 * parts["bin_spacing"]
    assert float(total.data) == pytest.approx(recomposed, abs=1e-9)
    assert parts["total"] == pytest.approx(recomposed, abs=1e-9)
    assert parts["mi"] >= 0 and parts["bin_spacing"] > 0


def test_loss_reduces_to_cross_entropy():
    model = small_model()
    config = TrainConfig(alpha=2.0, n_bins=8, n_members=4, beta=0.0, mu=0.0)
    total, parts = loss(model, batch(), config, np.random.default_rng(0))
    assert total == pytest.approx(parts["l_class"], abs=1e-12)


def test_spacing_term_arithmetic():
    # identity feature map on input (0, 1.5): grid spacing = 1.5/15 = 0.1
    model = SQEnsembleModel(
        arch=(2, 2, 2),
        weights=[(np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2))],
        sq_input=None, sq_feature=SqParams(4.0, 16), input_range=(0.0, 1.5),
        n_members=1)
    config = TrainConfig(alpha=4.0, n_bins=16, n_members=1, mu=1.0)
    _, parts = loss(model, (np.array([[0.0, 1.5]]), np.array([1])), config,
                    np.random.default_rng(0))
    assert parts["bin_spacing"] == pytest.approx(1.5 / 15, abs=1e-12)


def test_frozen_toy_mi_matches_golden():
    """MI term of the frozen toy model under exact enumeration."""
    from sqar.ensemble import feature_pmfs, features_np
    from sqar.infotheory import mi_from_stack, toy_two_feature_fixture
    fx = toy_two_feature_fixture()
    model = SQEnsembleModel(arch=(2, 2), weights=[(fx.weight.T, np.zeros(2))],
                            sq_input=None, sq_feature=SqParams(2.0, 2),
                            n_members=1)
    t = features_np(model, fx.state_grid)
    cond = feature_pmfs(model, t, np.zeros(4), np.ones(4))
    est = mi_from_stack(cond, fx.state_weights)
    golden = 0.1771403
    assert est.per_feature_mi[0] == pytest.approx(golden, abs=1e-6)


def test_zero_epochs_returns_initial_model():
    model = small_model()
    data = batch(n=8)
    out, history = train(model, data, TrainConfig(alpha=2.0, n_bins=8,
                                                  n_members=2, epochs=0))
    assert history == []
    for (Wa, ba), (Wb, bb) in zip(out.weights, model.weights):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)


def test_blobs_reach_high_accuracy():
    data = synth_blobs(50, 3, 4, 10, seed=0)
    model = build_model([4, 8, 3], sq_input=SqParams(2.0, 8),
                        sq_feature=SqParams(2.0, 8), n_members=4, seed=0)
    config = TrainConfig(alpha=2.0, n_bins=8, n_members=4, beta=0.0, mu=0.0,
                         epochs=12, batch_size=32, seed=0)
    _, history = train(model, (data.flat, data.labels), config)
    assert history[-1]["clean_accuracy"] >= 0.99
    assert history[-1]["l_class"] < history[0]["l_class"]


def test_training_deterministic():
    data = batch(seed=3, n=32)
    runs = []
    for _ in range(2):
        model = small_model(seed=5)
        out, history = train(model, data, TrainConfig(
            alpha=2.0, n_bins=8, n_members=2, epochs=2, batch_size=16, seed=7))
        runs.append((out, history))
    for (Wa, _), (Wb, _) in zip(runs[0][0].weights, runs[1][0].weights):
        assert np.array_equal(Wa, Wb)
    assert runs[0][1] == runs[1][1]


def test_invalid_configs():
    with pytest.raises(ValueError):
        TrainConfig(beta=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(mu=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(n_members=0)


# -- checkpoints ---------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = small_model(seed=9)
    config = TrainConfig(alpha=2.0, n_bins=8, n_members=4)
    history = [{"epoch": 0, "total": 1.0}]
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(model, p1, config=config, history=history)
    loaded, cfg, hist = load_checkpoint(p1)
    for (Wa, ba), (Wb, bb) in zip(model.weights, loaded.weights):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)
    assert loaded.arch == model.arch
    assert loaded.sq_input == model.sq_input
    assert cfg["alpha"] == 2.0
    assert hist == history
    save_checkpoint(loaded, p2, config=TrainConfig(**cfg), history=hist)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_version_and_corruption(tmp_path):
    model = small_model()
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    raw = bytearray(p.read_bytes())

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)

    v0 = bytearray(raw)
    v0[4:8] = struct.pack("<I", 0)
    bad.write_bytes(bytes(v0))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(bad)

    bad.write_bytes(bytes(raw[:-16]))            # truncated parameters
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)

    bad.write_bytes(bytes(raw) + b"\x00" * 8)    # trailing bytes
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)

    tampered = bytearray(raw)
    tampered[8:12] = struct.pack("<I", 2 ** 30)  # absurd header length
    bad.write_bytes(bytes(tampered))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
