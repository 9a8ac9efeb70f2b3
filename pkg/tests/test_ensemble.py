"""Ensemble forward semantics: toy-model conditionals, invariants, MI."""

import numpy as np
import pytest

from sqar.ensemble import (SQEnsembleModel, build_model, ensemble_eval,
                           forward_ensemble, forward_member, predict, softmax)
from sqar.infotheory import mi_from_stack, toy_two_feature_fixture
from sqar.quant import SqParams, binary_sq_pmf, make_bin_grid


def toy_model(n_members=4):
    """The two-pixel linear fixture as an ensemble model (identity classifier)."""
    fx = toy_two_feature_fixture()
    with pytest.warns(UserWarning):      # binary grids need no sparsity radius
        sq = SqParams(alpha=1.0, n_bins=2)
    return SQEnsembleModel(arch=(2, 2), weights=[(fx.weight.T, np.zeros(2))],
                           sq_input=sq, sq_feature=None, n_members=n_members)


def test_build_model_deterministic():
    a = build_model([784, 256, 64, 10], sq_input=SqParams(4.0, 16),
                    sq_feature=SqParams(4.0, 16), seed=0)
    b = build_model([784, 256, 64, 10], sq_input=SqParams(4.0, 16),
                    sq_feature=SqParams(4.0, 16), seed=0)
    for (Wa, ba), (Wb, bb) in zip(a.weights, b.weights):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)
    assert a.has_classifier and a.n_classes == 10

    with pytest.raises(ValueError):
        build_model([784, 0, 10])
    with pytest.raises(ValueError):
        build_model([4, 3], n_members=0)


def test_toy_model_feature_conditionals():
    """Binary-quantized features of the toy model match the fixture tables."""
    fx = toy_two_feature_fixture()
    model = toy_model()
    grid = make_bin_grid(0.0, 1.0, 2)
    for state, expect1, expect2 in zip(fx.state_grid,
                                       fx.tables[0].cond_probs,
                                       fx.tables[1].cond_probs):
        t = fx.weight @ state
        c1 = binary_sq_pmf(float(t[0]), grid).probs
        c2 = binary_sq_pmf(float(t[1]), grid).probs
        assert np.abs(c1 - expect1).max() < 1e-12
        assert np.abs(c2 - expect2).max() < 1e-12
        # the model's deterministic feature map agrees
        fwd = forward_member(model, state, np.random.default_rng(0))
        assert np.abs(fwd.features[0] - t).max() < 1e-12


def test_input_point_mass_passthrough():
    model = toy_model()
    x = np.array([1.0, 0.0])            # binary image on the 2-bin grid
    fwd = forward_member(model, x, np.random.default_rng(0))
    assert np.array_equal(fwd.x_sample[0], x)


def test_input_perturbation_bound():
    model = build_model([6, 5, 3], sq_input=SqParams(4.0, 16),
                        sq_feature=SqParams(4.0, 16), seed=1)
    rng = np.random.default_rng(2)
    x = rng.random((8, 6))
    delta = 1.0 / 15
    for _ in range(50):
        fwd = forward_member(model, x, rng)
        assert np.abs(fwd.x_sample - x).max() <= 4.0 * delta + 1e-12


def test_member_determinism_and_range_check():
    model = build_model([4, 6, 3], sq_input=SqParams(2.0, 8),
                        sq_feature=SqParams(2.0, 8), seed=3)
    x = np.random.default_rng(4).random(4)
    a = forward_member(model, x, np.random.default_rng(9))
    b = forward_member(model, x, np.random.default_rng(9))
    assert np.array_equal(a.logits, b.logits)
    with pytest.raises(ValueError):
        forward_member(model, x + 10.0, np.random.default_rng(0))


def test_ensemble_output_invariants():
    model = build_model([4, 6, 3], sq_input=SqParams(2.0, 8),
                        sq_feature=SqParams(2.0, 8), seed=3)
    x = np.random.default_rng(5).random(4)
    out = forward_ensemble(model, x, n_members=8, rng=np.random.default_rng(6))
    assert out.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert (out.probs >= 0).all()
    assert out.diversity >= 0
    assert out.member_logits.shape == (8, 3)
    assert out.mi.mean_mi >= 0


def test_single_member_equals_softmax():
    model = build_model([4, 6, 3], sq_input=SqParams(2.0, 8),
                        sq_feature=SqParams(2.0, 8), seed=3)
    x = np.random.default_rng(7).random(4)
    out = forward_ensemble(model, x, n_members=1, rng=np.random.default_rng(8))
    assert np.allclose(out.probs, softmax(out.member_logits[0]), atol=1e-12)


def test_predict_tie_breaks_low():
    # zero weights give equal logits for every class
    model = SQEnsembleModel(arch=(3, 4), weights=[(np.zeros((3, 4)), np.zeros(4))],
                            sq_input=None, sq_feature=None)
    assert predict(model, np.random.default_rng(0).random(3)) == 0


def test_ensemble_eval_matches_forward_ensemble():
    model = build_model([4, 6, 3], sq_input=SqParams(2.0, 8),
                        sq_feature=SqParams(2.0, 8), seed=3)
    X = np.random.default_rng(9).random((5, 4))
    res = ensemble_eval(model, X, labels=np.zeros(5, dtype=int),
                        n_members=4, rng=np.random.default_rng(1),
                        collect_mi=True)
    assert res["probs"].shape == (5, 3)
    assert np.abs(res["probs"].sum(axis=1) - 1).max() < 1e-9
    assert 0.0 <= res["accuracy"] <= 1.0
    assert res["mi"].shape == (5,)
    assert (res["mi"] >= 0).all()


def test_exact_enumeration_equivalence():
    """Monte Carlo MI over members approaches exact enumeration for 2-bin inputs."""
    model = build_model([3, 4, 2], sq_input=SqParams(2.0, 2),
                        sq_feature=SqParams(2.0, 4), seed=10)
    x = np.array([0.3, 0.8, 0.5])

    # exact: enumerate the 8 binary input states with product weights
    from itertools import product
    from sqar.ensemble import feature_grids, feature_pmfs, features_np
    states = np.array(list(product([0.0, 1.0], repeat=3)))
    w = np.prod(np.where(states == 1.0, x, 1 - x), axis=1)
    t = features_np(model, states)
    lo, hi, _ = feature_grids(model, t)
    cond = feature_pmfs(model, t, lo, hi)          # (8, d, n)
    exact = mi_from_stack(cond, w).mean_mi

    reps = []
    for r in range(6):
        res = ensemble_eval(model, x[None, :], n_members=4096,
                            rng=np.random.default_rng(100 + r), collect_mi=True)
        reps.append(res["mi"][0])
    reps = np.asarray(reps)
    se = reps.std(ddof=1) / np.sqrt(len(reps))
    assert abs(reps.mean() - exact) <= 3 * se + 1e-3
