import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from tieredids import autoencoder as ae
from tieredids import neuralnet as nn
from tieredids.dataset import Dataset, generate_synthetic, split_train_test


def exhaustive_best(errors, labels):
    """Scan every midpoint; return (best accuracy, smallest threshold reaching it)."""
    values = sorted(set(errors))
    best_acc, best_eta = -1.0, None
    for a, b in zip(values, values[1:]):
        eta = (a + b) / 2
        acc = sum((e >= eta) == bool(y) for e, y in zip(errors, labels)) / len(errors)
        if acc > best_acc:
            best_acc, best_eta = acc, eta
    return best_acc, best_eta


@pytest.fixture(scope="module")
def trained():
    data = generate_synthetic(1000, 100, 12, seed=1)
    train, test = split_train_test(data, 0.8, seed=2)
    normals = train.take(np.flatnonzero(train.labels == 0))
    model = ae.build_autoencoder(12, 6, seed=3)
    model, history = ae.train(model, normals, nn.TrainConfig(epochs=40, seed=4))
    return model, train, test, normals, history


def test_default_widths():
    assert ae.layer_widths(40, 25) == [40, 35, 30, 25, 30, 35, 40]
    m = ae.build_autoencoder(40, 25, seed=0)
    assert m.params.layer_sizes == [40, 35, 30, 25, 30, 35, 40]
    assert m.code_layer_index == 3 and m.code_size == 25


def test_widths_to_small_code():
    assert ae.layer_widths(40, 10) == [40, 30, 20, 10, 20, 30, 40]


@pytest.mark.parametrize("k,h", [(4, 4), (4, 5), (10, 1)])
def test_code_must_compress(k, h):
    with pytest.raises(ValueError):
        ae.build_autoencoder(k, h, seed=0)


@given(st.integers(3, 80), st.data())
def test_widths_symmetric_with_bottleneck(k, data):
    h = data.draw(st.integers(2, k - 1))
    w = ae.layer_widths(k, h)
    assert w == w[::-1] and w[0] == k and w[3] == h and min(w) == h


def test_asymmetric_params_rejected():
    with pytest.raises(ValueError):
        ae.AutoencoderModel(nn.init_params([4, 2, 3], 0), 2, 1)


def test_memorizes_single_sample():
    one = Dataset(np.array([[0.3, -1.2, 0.8, 2.0]]), [0], ("a", "b", "c", "d"))
    m = ae.build_autoencoder(4, 2, seed=0)
    before = ae.reconstruction_error(m, one.features[0])
    trained, _ = ae.train(m, one, nn.TrainConfig(epochs=100, dropout_rate=0.0))
    assert ae.reconstruction_error(trained, one.features[0]) < before


def test_train_rejects_attacks():
    mixed = generate_synthetic(20, 2, 4, seed=0)
    with pytest.raises(ValueError):
        ae.train(ae.build_autoencoder(4, 2, 0), mixed, nn.TrainConfig(epochs=1))


def test_trained_model_separates(trained):
    model, _, test, normals, history = trained
    err = ae.reconstruction_error(model, test.features)
    assert err[test.labels == 0].mean() < err[test.labels == 1].mean()
    cutoff = np.percentile(ae.reconstruction_error(model, normals.features), 95)
    assert np.all(err[test.labels == 1] > cutoff)
    assert history[-1] < history[0]


def test_reconstruction_error_matches_oracle():
    p = nn.NetworkParams([np.array([[0.5, -0.25, 1.0]], np.float32), np.array([[1.0], [-2.0], [0.5]], np.float32)],
                         [np.array([0.1], np.float32), np.array([0.0, 0.2, -0.1], np.float32)])
    m = ae.AutoencoderModel(p, 1, 1)
    x = np.array([0.4, 0.9, -0.3], np.float32)
    # oracle in float64 on the same float32 values
    w1, b1 = p.weights[0].astype(float), p.biases[0].astype(float)
    w2, b2 = p.weights[1].astype(float), p.biases[1].astype(float)
    code = np.tanh(w1 @ x.astype(float) + b1)
    out = w2 @ code + b2
    expected = np.mean((x.astype(float) - out) ** 2)
    assert ae.reconstruction_error(m, x) == pytest.approx(expected, abs=1e-6)
    np.testing.assert_allclose(ae.encode(m, x), code, atol=1e-6)


def test_perfect_reconstruction_is_zero():
    # 2-1-2 net reconstructing points on the line x0 = x1 exactly in the linear regime
    p = nn.NetworkParams([np.zeros((1, 2), np.float32), np.zeros((2, 1), np.float32)],
                         [np.zeros(1, np.float32), np.array([0.5, 0.5], np.float32)])
    m = ae.AutoencoderModel(p, 1, 1)
    assert ae.reconstruction_error(m, np.array([0.5, 0.5])) == 0.0


def test_encode_shapes_and_zero_net():
    m = ae.build_autoencoder(40, 25, seed=0)
    assert ae.encode(m, np.ones(40)).shape == (25,)
    assert ae.encode(m, np.ones((3, 40))).shape == (3, 25)
    zero = nn.NetworkParams([w * 0 for w in m.params.weights], [b * 0 for b in m.params.biases])
    np.testing.assert_array_equal(ae.encode(ae.AutoencoderModel(zero, 25, 3), np.ones(40)), 0.0)


def test_inference_dimension_mismatch():
    m = ae.build_autoencoder(6, 3, seed=0)
    with pytest.raises(ValueError):
        ae.encode(m, np.zeros(5))
    with pytest.raises(ValueError):
        ae.reconstruction_error(m, np.zeros(7))


def test_inference_is_pure(trained):
    model, _, test, _, _ = trained
    x = test.features[:10]
    assert ae.encode(model, x).tobytes() == ae.encode(model, x).tobytes()
    assert ae.reconstruction_error(model, x).tobytes() == ae.reconstruction_error(model, x).tobytes()
    code, err = ae.encode_with_error(model, x)
    assert code.tobytes() == ae.encode(model, x).tobytes()
    assert err.tobytes() == ae.reconstruction_error(model, x).tobytes()


@pytest.mark.parametrize("err,expected", [(0.1, 0), (0.43, 1), (1.5, 1)])
def test_classify_local(err, expected):
    assert ae.classify_local(err, 0.43) == expected


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_classify_local_monotone(e1, e2, eta):
    lo, hi = sorted((e1, e2))
    if ae.classify_local(lo, eta) == 1:
        assert ae.classify_local(hi, eta) == 1


def test_threshold_separable_midpoint():
    eta, acc = ae.best_threshold([0.1, 0.2, 0.9, 1.0], [0, 0, 1, 1])
    assert eta == pytest.approx(0.55, abs=1e-15) and acc == 1.0


def test_threshold_interleaved():
    # every distinct error is shared by one normal and one attack
    errors = [0.1, 0.1, 0.2, 0.2, 0.3, 0.3]
    labels = [0, 1, 0, 1, 0, 1]
    eta, acc = ae.best_threshold(errors, labels)
    assert acc == 0.5
    assert eta == pytest.approx(0.15, abs=1e-15)
    assert exhaustive_best(errors, labels) == (acc, eta)


def test_threshold_requires_both_classes():
    with pytest.raises(ValueError):
        ae.best_threshold([0.1, 0.2], [0, 0])


def test_threshold_all_equal_errors():
    eta, acc = ae.best_threshold([0.4, 0.4, 0.4], [0, 1, 1])
    assert eta == 0.4 and acc == pytest.approx(2 / 3)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 1)), min_size=2, max_size=40))
def test_threshold_matches_exhaustive_scan(pairs):
    errors = [e / 10 for e, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2 or len(set(errors)) < 2:
        return
    eta, acc = ae.best_threshold(errors, labels)
    oracle_acc, oracle_eta = exhaustive_best(errors, labels)
    assert acc == oracle_acc
    assert eta == oracle_eta


def test_select_threshold_on_trained_model(trained):
    model, train, _, _, _ = trained
    eta = ae.select_threshold(model, train)
    errors = ae.reconstruction_error(model, train.features)
    assert (eta, 1.0) == ae.best_threshold(errors, train.labels)


def test_local_range_hand_case():
    lo, hi = ae.compute_local_range([0.1, 0.2, 0.3, 0.4, 0.5], 0.3, 0.6, 5)
    # the hand evaluation gives [0.1, 0.7]; 0.3 - 0.2 is not exactly 0.1 in binary floating point
    assert (lo, hi) == (0.3 - 0.2, 0.3 + 0.4)
    assert (lo, hi) == pytest.approx((0.1, 0.7), abs=1e-15)


def test_local_range_full_trust():
    errs = [0.1, 0.2, 0.3, 0.4, 0.5]
    assert ae.compute_local_range(errs, 0.3, 1.0) == (0.0, 0.6)


def test_local_range_clamps_indices():
    errs = [0.1, 0.2, 0.3]
    lo, hi = ae.compute_local_range(errs, 0.2, 0.0, 3)
    # k = 1: both neighbours exist; with n = 100, k = 50 clamps to the ends
    assert (lo, hi) == (0.2 - 0.1, 0.2 + 0.3)
    assert ae.compute_local_range(errs, 0.2, 0.0, 100) == (0.2 - 0.1, 0.2 + 0.3)


def test_local_range_lower_index_on_ties():
    # 0.25 is equally close to 0.2 and 0.3, so idx = 1 and the range uses errs[1 +- 1]
    lo, hi = ae.compute_local_range([0.1, 0.2, 0.3, 0.4], 0.25, 0.5, 4)
    assert (lo, hi) == (0.25 - 0.1, 0.25 + 0.3)


def test_local_range_rejects_bad_trust():
    with pytest.raises(ValueError):
        ae.compute_local_range([0.1], 0.1, 1.5)


sorted_errors = st.lists(st.floats(0, 5, allow_nan=False), min_size=1, max_size=60).map(sorted)


@given(sorted_errors, st.floats(0, 1), st.data())
def test_local_range_contains_eta(errs, trust, data):
    # eta is a midpoint of the errors, as select_threshold produces
    eta = data.draw(st.sampled_from(errs))
    lo, hi = ae.compute_local_range(errs, eta, trust)
    assert lo <= eta <= hi


@given(sorted_errors, st.floats(0, 1), st.floats(0, 1), st.data())
def test_local_range_endpoints_move_up_as_trust_falls(errs, f1, f2, data):
    eta = data.draw(st.sampled_from(errs))
    high_trust, low_trust = max(f1, f2), min(f1, f2)
    lo1, hi1 = ae.compute_local_range(errs, eta, high_trust)
    lo2, hi2 = ae.compute_local_range(errs, eta, low_trust)
    # both endpoints are non-decreasing in k: hi widens, lo rises toward eta
    assert hi2 >= hi1
    assert lo2 >= lo1


def test_profile_invariants():
    with pytest.raises(ValueError):
        ae.LocalProfile("u", eta=0.5, trust=0.9, range_lo=0.6, range_hi=1.0, n_train=3)
    with pytest.raises(ValueError):
        ae.LocalProfile("u", eta=0.5, trust=1.1, range_lo=0.1, range_hi=1.0, n_train=3)


def test_fit_profile(trained):
    model, train, _, _, _ = trained
    prof = ae.fit_profile("unit-0", model, train)
    assert prof.n_train == len(train) and prof.trust == 1.0
    assert prof.range_lo <= prof.eta <= prof.range_hi
    assert list(prof.as_dict()) == ["unit_id", "eta", "trust", "range_lo", "range_hi", "n_train"]


def test_model_bytes_default():
    sizes = ae.model_bytes(ae.build_autoencoder(40, 25, 0))
    assert sizes["full"] == 6595 * 4
    # encoder half: 40*35+35 + 35*30+30 + 30*25+25
    assert sizes["encoder_only"] == (1435 + 1080 + 775) * 4
