import sys
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbfl.blackbox import (LogisticBlackBox, LogisticConfig, MlpBlackBox, MlpConfig, external_model,
                           init_reference_model, load_model, loss_and_grads, save_model, softmax,
                           train_reference_model)
from gbfl.data import Dataset
from gbfl.errors import ModelError


def blobs(n=200, seed=0, gap=4.0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, 2)) + np.where(y[:, None] == 1, gap, -gap) * np.array([1.0, 0.5])
    return Dataset(X, y, ("a", "b"), 2)


def perceptron_separates(X, y, epochs=1000):
    """Classic perceptron; converges (zero mistakes in a pass) iff the data are separable."""
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    s = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(Xa.shape[1])
    for _ in range(epochs):
        mistakes = 0
        for xi, si in zip(Xa, s):
            if si * (xi @ w) <= 0:
                w += si * xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


def test_zero_weight_logistic_is_uniform():
    m = LogisticBlackBox(np.zeros((3, 4)), np.zeros(4))
    np.testing.assert_allclose(m.confidence([1.0, -2.0, 3.0]), np.full(4, 0.25))
    assert m.predict([1.0, -2.0, 3.0]) == 0  # lowest-index tie-break


def test_sigmoid_at_zero():
    m = LogisticBlackBox.binary([1.0], 0.0)
    np.testing.assert_allclose(m.confidence([0.0]), [0.5, 0.5])
    assert m.confidence([2.0])[1] == pytest.approx(1 / (1 + np.exp(-2.0)))


def test_batch_contract_and_dimension_errors():
    rng = np.random.default_rng(0)
    m = LogisticBlackBox(rng.normal(size=(3, 3)), rng.normal(size=3))
    X = rng.normal(size=(7, 3))
    P = m.confidence(X)
    assert P.shape == (7, 3)
    for i in range(7):
        np.testing.assert_array_equal(P[i], m.confidence(X[i]))
    with pytest.raises(ModelError):
        m.confidence(np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_confidence_is_on_the_simplex(x):
    rng = np.random.default_rng(1)
    m = MlpBlackBox([(rng.normal(size=(3, 5)), rng.normal(size=5)), (rng.normal(size=(5, 4)), np.zeros(4))])
    p = m.confidence(np.array(x))
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-9


def test_log_confidence_matches_log_of_confidence_and_stays_finite():
    m = LogisticBlackBox.binary([50.0, 0.0], 0.0)
    X = np.array([[0.1, 0.0], [-0.3, 1.0]])
    np.testing.assert_allclose(m.log_confidence(X), np.log(m.confidence(X)), rtol=1e-9, atol=1e-12)
    far = np.array([[100.0, 0.0]])
    assert m.confidence(far)[0, 0] == 0.0
    assert np.isfinite(m.log_confidence(far)).all()
    assert m.log_confidence(far)[0, 0] == pytest.approx(-5000.0)


def test_separable_blobs_logistic_training():
    d = blobs()
    assert perceptron_separates(d.features, d.labels)
    m = train_reference_model(LogisticConfig(epochs=50), d, seed=0)
    assert np.mean(m.predict(d.features) == d.labels) >= 0.99


def test_zero_learning_rate_keeps_initialisation():
    d = blobs(seed=2)
    cfg = MlpConfig(hidden_layer_widths=[4], epochs=1, learning_rate=0.0)
    trained = train_reference_model(cfg, d, seed=7)
    from gbfl.blackbox import _Standardizer
    init = init_reference_model(cfg, 2, 2, 7, _Standardizer.fit(d.features))
    np.testing.assert_array_equal(trained.confidence(d.features), init.confidence(d.features))


def test_training_is_deterministic_and_records_metadata():
    d = blobs(seed=3)
    cfg = MlpConfig(hidden_layer_widths=[6, 3], dropout_rates=[0.2, 0.0], epochs=5)
    a = train_reference_model(cfg, d, seed=11)
    b = train_reference_model(cfg, d, seed=11)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)
    assert a.metadata["config_hash"] == b.metadata["config_hash"]
    c = train_reference_model(cfg, d, seed=12)
    assert c.metadata["config_hash"] != a.metadata["config_hash"]


def test_sky_survey_shaped_mlp():
    cfg = MlpConfig(hidden_layer_widths=[128, 256, 256, 128, 64], dropout_rates=[0.5, 0, 0.5, 0.5, 0.5],
                    epochs=1)
    rng = np.random.default_rng(0)
    d = Dataset(rng.normal(size=(40, 8)), np.arange(40) % 3, tuple("abcdefgh"), 3)
    m = train_reference_model(cfg, d, seed=0)
    assert m.widths == [128, 256, 256, 128, 64]
    P = m.confidence(d.features)
    assert P.shape == (40, 3)
    np.testing.assert_allclose(P.sum(axis=1), 1, atol=1e-9)
    # dropout is off at inference: repeated calls agree exactly
    np.testing.assert_array_equal(P, m.confidence(d.features))


def test_divergence_is_reported():
    d = blobs(seed=4, gap=1e3)
    with pytest.raises(ModelError, match="learning_rate"):
        train_reference_model(MlpConfig(hidden_layer_widths=[5], epochs=20, learning_rate=1e6,
                                        standardize_inputs=False), d, seed=0)


def test_config_validation():
    with pytest.raises(ModelError):
        MlpConfig(hidden_layer_widths=[0])
    with pytest.raises(ModelError):
        MlpConfig(hidden_layer_widths=[3], dropout_rates=[1.0])
    with pytest.raises(ModelError):
        MlpConfig(activation="tanh")


def test_backprop_matches_central_differences():
    rng = np.random.default_rng(5)
    params = [rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=(5, 2)), rng.normal(size=2)]
    X = rng.normal(size=(8, 3))
    Y = np.eye(2)[rng.integers(0, 2, 8)]
    masks = [(rng.random((8, 5)) > 0.3) / 0.7]
    for l2, dm in ((0.0, None), (0.01, masks)):
        _, grads = loss_and_grads(params, X, Y, l2, dm)
        h = 1e-6
        for p, g in zip(params, grads):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                fp, _ = loss_and_grads(params, X, Y, l2, dm)
                p[idx] = old - h
                fm, _ = loss_and_grads(params, X, Y, l2, dm)
                p[idx] = old
                num[idx] = (fp - fm) / (2 * h)
            rel = np.abs(num - g) / np.maximum(np.abs(num) + np.abs(g), 1e-8)
            assert rel.max() < 1e-4


def test_save_load_round_trip_is_bit_exact(tmp_path):
    d = blobs(seed=6)
    m = train_reference_model(MlpConfig(hidden_layer_widths=[5, 4], epochs=3), d, seed=0)
    save_model(m, tmp_path / "m.bin")
    back = load_model(tmp_path / "m.bin")
    probes = np.random.default_rng(0).normal(size=(100, 2)) * 5
    np.testing.assert_array_equal(m.confidence(probes), back.confidence(probes))
    assert back.metadata == m.metadata
    lg = LogisticBlackBox.binary([1.0, 2.0], 0.5)
    save_model(lg, tmp_path / "l.bin")
    np.testing.assert_array_equal(load_model(tmp_path / "l.bin").confidence(probes), lg.confidence(probes))


def test_load_errors(tmp_path):
    m = LogisticBlackBox.binary([1.0, 2.0], 0.5)
    p = tmp_path / "m.bin"
    save_model(m, p)
    with pytest.raises(ModelError, match="features"):
        load_model(p, expected_features=3)
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ModelError):
        load_model(tmp_path / "t.bin")
    (tmp_path / "c.bin").write_bytes(raw[:-1] + bytes([raw[-1] ^ 1]))
    with pytest.raises(ModelError, match="checksum"):
        load_model(tmp_path / "c.bin")
    (tmp_path / "x.bin").write_bytes(b"nope" + raw)
    with pytest.raises(ModelError, match="magic"):
        load_model(tmp_path / "x.bin")


def stub(tmp_path, body):
    p = tmp_path / "stub.py"
    p.write_text("import sys\nrows = [l for l in sys.stdin.read().splitlines() if l.strip()]\n" + body)
    return [sys.executable, str(p)]


def test_external_constant_stub(tmp_path):
    m = external_model(stub(tmp_path, "for r in rows: print('1,0')\n"), n_features=2)
    assert m.predict(np.zeros((3, 2))).tolist() == [0, 0, 0]
    assert m.n_classes == 2


@pytest.mark.parametrize("body,match", [
    ("for r in rows: print('0.3,0.8')\n", "simplex"),
    ("print('1,0')\n", "rows"),
    ("for r in rows: print('a,b')\n", "malformed"),
    ("sys.exit(3)\n", "status 3"),
])
def test_external_contract_violations(tmp_path, body, match):
    m = external_model(stub(tmp_path, body), n_features=2)
    with pytest.raises(ModelError, match=match):
        m.confidence(np.zeros((2, 2)))


def test_external_adapter_round_trip_of_builtin_model(tmp_path):
    rng = np.random.default_rng(8)
    m = LogisticBlackBox(rng.normal(size=(3, 3)), rng.normal(size=3))
    save_model(m, tmp_path / "m.bin")
    ext = external_model([sys.executable, "-m", "gbfl.blackbox", str(tmp_path / "m.bin")], 3)
    X = rng.normal(size=(25, 3)) * 3
    np.testing.assert_array_equal(ext.predict(X), m.predict(X))
    np.testing.assert_allclose(ext.confidence(X), m.confidence(X), rtol=0, atol=1e-15)


def test_external_adapter_serialises_concurrent_callers(tmp_path):
    m = external_model(stub(tmp_path, "for r in rows: print('0.25,0.75')\n"), n_features=1)
    out = []

    def call():
        out.append(m.confidence(np.zeros((4, 1))))

    threads = [threading.Thread(target=call) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(out) == 4 and all(P.shape == (4, 2) for P in out)


def test_softmax_is_shift_invariant():
    z = np.array([[1000.0, 1001.0], [-5.0, 5.0]])
    np.testing.assert_allclose(softmax(z), softmax(z - 7.0))
