import gzip
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halp.objectives import (
    Dataset, DatasetError, Objective, load_csv, load_idx, make_classification,
    make_conditioned_regression, make_regression, quantize_dataset, read_idx, write_csv, write_idx,
)
from halp.fixed_point import to_real
from halp.optimizers import OptimizerConfig, run


def central_difference(f, w, h=1e-6):
    g = np.zeros_like(w)
    flat = w.reshape(-1)
    out = g.reshape(-1)
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = h
        out[j] = (f((flat + e).reshape(w.shape)) - f((flat - e).reshape(w.shape))) / (2 * h)
    return g


def component_loss(obj, w, i):
    """Independent closed form of f_i, used only as a finite-difference target."""
    x, y = obj.dataset.X[i], obj.dataset.y[i]
    W = w.reshape(obj.d, obj.C)
    reg = 0.5 * obj.l2 * np.sum(W * W)
    if obj.loss_family == "squared":
        return 0.5 * (x @ W[:, 0] - y) ** 2 + reg
    m = x @ W
    return np.log(np.sum(np.exp(m - m.max()))) + m.max() - m[int(y)] + reg


def small_objective(family, seed, l2=0.1):
    if family == "squared":
        ds = make_regression(30, 5, noise_sd=0.5, seed=seed)
    else:
        ds = make_classification(30, 4, n_classes=3, seed=seed)
    return Objective(ds, family, l2=l2)


@pytest.mark.parametrize("family", ["squared", "softmax"])
def test_component_gradient_finite_difference(family):
    rng = np.random.default_rng(1)
    for trial in range(50):
        obj = small_objective(family, trial)
        w = rng.normal(scale=0.5, size=obj.shape)
        i = int(rng.integers(obj.N))
        g = obj.component_gradient(w, i)
        fd = central_difference(lambda v: component_loss(obj, v, i), w)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)


@pytest.mark.parametrize("family", ["squared", "softmax"])
def test_full_gradient_finite_difference(family):
    obj = small_objective(family, 0)
    w = np.random.default_rng(2).normal(size=obj.shape)
    fd = central_difference(obj.loss, w)
    assert np.linalg.norm(obj.full_gradient(w) - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.mark.parametrize("family", ["squared", "softmax"])
def test_full_gradient_is_mean_of_components(family):
    obj = small_objective(family, 3)
    w = np.random.default_rng(3).normal(size=obj.shape)
    mean = sum(obj.component_gradient(w, i) for i in range(obj.N)) / obj.N
    assert np.allclose(obj.full_gradient(w), mean, rtol=0, atol=1e-12)


def test_full_gradient_zero_at_minimizer():
    obj = Objective(make_regression(200, 10, seed=0))
    w = obj.solve()
    assert np.linalg.norm(obj.full_gradient(w)) < 1e-12
    assert obj.loss(obj.dataset.info["w_true"]) == pytest.approx(0.0, abs=1e-25)


@pytest.mark.parametrize("family", ["squared", "softmax"])
def test_parallel_and_serial_agree_bitwise(family):
    if family == "squared":
        ds = make_regression(9000, 20, seed=1)
    else:
        ds = make_classification(9000, 20, n_classes=4, seed=1)
    obj = Objective(ds, family, l2=0.01)
    w = np.random.default_rng(0).normal(size=obj.shape)
    serial = obj.full_gradient(w)
    for workers in (2, 3, 8):
        assert np.array_equal(obj.full_gradient(w, workers=workers), serial)


@pytest.mark.parametrize("family", ["squared", "softmax"])
def test_duplicating_data_leaves_gradient_unchanged(family):
    obj = small_objective(family, 4)
    ds = obj.dataset
    twice = Dataset(np.vstack([ds.X, ds.X]), np.concatenate([ds.y, ds.y]), ds.n_classes)
    obj2 = Objective(twice, family, l2=obj.l2)
    w = np.random.default_rng(4).normal(size=obj.shape)
    assert np.allclose(obj.full_gradient(w), obj2.full_gradient(w), rtol=1e-13, atol=1e-14)
    assert obj.loss(w) == pytest.approx(obj2.loss(w), rel=1e-13)


def test_squared_loss_nonnegative_and_zero_residual():
    obj = Objective(make_regression(50, 4, seed=0))
    assert obj.loss(obj.dataset.info["w_true"]) == pytest.approx(0.0, abs=1e-25)
    for s in range(10):
        assert obj.loss(np.random.default_rng(s).normal(size=4)) >= 0


def test_softmax_uniform_logits_give_log_c():
    for C in (2, 3, 10):
        obj = Objective(make_classification(40, 6, n_classes=C, seed=C), "softmax")
        assert obj.loss(obj.zeros()) == pytest.approx(math.log(C), rel=1e-14)


@pytest.mark.parametrize("family", ["squared", "softmax"])
def test_loss_matches_path_integral_of_gradient(family):
    obj = small_objective(family, 5)
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=obj.shape), rng.normal(size=obj.shape)
    ts = np.linspace(0, 1, 2001)
    vals = np.array([np.sum(obj.full_gradient(a + t * (b - a)) * (b - a)) for t in ts])
    integral = np.sum((vals[1:] + vals[:-1]) / 2) * (ts[1] - ts[0])
    assert integral == pytest.approx(obj.loss(b) - obj.loss(a), rel=1e-4, abs=1e-6)


@pytest.mark.parametrize("family", ["squared", "softmax"])
def test_strong_convexity_and_smoothness(family):
    obj = small_objective(family, 6, l2=0.2)
    mu, L = obj.strong_convexity(), obj.lipschitz()
    rng = np.random.default_rng(6)
    for _ in range(30):
        w, v = rng.normal(size=obj.shape), rng.normal(size=obj.shape)
        gap = obj.loss(v) - obj.loss(w) - np.sum(obj.full_gradient(w) * (v - w))
        assert gap >= mu / 2 * np.sum((v - w) ** 2) - 1e-12
        for i in rng.integers(obj.N, size=3):
            diff = obj.component_gradient(w, i) - obj.component_gradient(v, i)
            assert np.linalg.norm(diff) <= L * np.linalg.norm(w - v) * (1 + 1e-12)


def test_generators_are_reproducible():
    for make in (lambda s: make_regression(40, 5, 0.1, s),
                 lambda s: make_classification(40, 5, 3, 1.0, s),
                 lambda s: make_conditioned_regression(10.0, s, n=100, d=8)):
        a, b, c = make(1), make(1), make(2)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
        assert not np.array_equal(a.X, c.X)


def test_reference_scale_shapes():
    ds = make_regression(1000, 100, seed=0)
    assert ds.X.shape == (1000, 100)
    ds = make_classification(7500, 10_000, n_classes=10, seed=0)
    assert ds.X.shape == (7500, 10_000) and ds.n_classes == 10
    assert set(np.unique(ds.y)) == set(range(10))


@pytest.mark.parametrize("kappa", [1.0, 4.0, 64.0, 1024.0])
def test_conditioned_spectrum(kappa):
    ds = make_conditioned_regression(kappa, seed=3)
    eig = np.linalg.eigvalsh(ds.X.T @ ds.X / ds.N)
    assert ds.X.shape == (1000, 64)
    tol = 1e-8 if kappa == 1 else 1e-6
    assert eig[0] == pytest.approx(1.0, abs=tol * max(1, kappa))
    assert eig[-1] == pytest.approx(kappa, rel=tol)
    if kappa == 1:
        assert np.all(np.abs(eig - 1) <= 1e-8)


def test_unseparated_classes_are_indistinguishable():
    C = 4
    train = make_classification(3000, 5, n_classes=C, separation=0.0, seed=0)
    test = make_classification(3000, 5, n_classes=C, separation=0.0, seed=1)
    obj = Objective(train, "softmax", l2=1e-3)
    rec = run(obj, OptimizerConfig("svrg", alpha=0.05, epochs=5, seed=0))
    pred = np.argmax(test.X @ rec.final, axis=1)
    assert abs(np.mean(pred == test.y) - 1 / C) <= 0.05


def test_separated_classes_are_learnable():
    train = make_classification(2000, 5, n_classes=3, separation=6.0, seed=0)
    obj = Objective(train, "softmax", l2=1e-3)
    rec = run(obj, OptimizerConfig("svrg", alpha=0.05, epochs=5, seed=0))
    assert np.mean(np.argmax(train.X @ rec.final, axis=1) == train.y) > 0.9


def test_dataset_validation():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(DatasetError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), np.array([0.0, 3.0]), n_classes=3)
    with pytest.raises(ValueError):
        Objective(make_regression(5, 2), "softmax")
    with pytest.raises(ValueError):
        Objective(make_regression(5, 2), "hinge")


# -- quantized datasets ------------------------------------------------------------

def test_quantize_all_zero_data():
    ds = Dataset(np.zeros((4, 3)), np.zeros(4))
    for b in (2, 8, 16):
        assert np.all(quantize_dataset(ds, b).quantized.codes == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 16), st.integers(0, 1000))
def test_quantized_data_properties(bits, seed):
    ds = make_regression(50, 6, seed=seed)
    q = quantize_dataset(ds, bits, seed=seed).quantized
    hi = (1 << (bits - 1)) - 1
    peak = np.max(np.abs(ds.X))
    assert q.repr.delta == peak / hi and q.repr.bits == bits
    j = np.unravel_index(np.argmax(np.abs(ds.X)), ds.X.shape)
    assert abs(to_real(q)[j] - ds.X[j]) <= q.repr.delta
    assert np.all(np.abs(to_real(q) - ds.X) < q.repr.delta * (1 + 1e-12))


def test_quantized_data_mean_error():
    ds = make_regression(500, 20, seed=0)
    q = quantize_dataset(ds, 8, seed=0).quantized
    assert np.mean(np.abs(to_real(q) - ds.X)) <= q.repr.delta / 2


# -- file formats ---------------------------------------------------------------------

def test_idx_round_trip(tmp_path):
    images = np.array([[[0, 255], [17, 128]], [[1, 2], [3, 4]]], dtype=np.uint8)
    labels = np.array([3, 7], dtype=np.uint8)
    write_idx(tmp_path / "img.idx", images)
    write_idx(tmp_path / "lab.idx", labels)
    assert np.array_equal(read_idx(tmp_path / "img.idx"), images)
    ds = load_idx(tmp_path / "img.idx", tmp_path / "lab.idx")
    assert ds.X.shape == (2, 4) and ds.n_classes == 10
    assert np.array_equal(ds.X * 255, images.reshape(2, 4))
    assert list(ds.y) == [3, 7]
    raw = (tmp_path / "img.idx").read_bytes()
    (tmp_path / "img.idx.gz").write_bytes(gzip.compress(raw))
    assert np.array_equal(read_idx(tmp_path / "img.idx.gz"), images)


def test_idx_errors(tmp_path):
    (tmp_path / "empty").write_bytes(b"")
    with pytest.raises(DatasetError, match="truncated"):
        read_idx(tmp_path / "empty")
    (tmp_path / "bad").write_bytes(b"\x00\x00\x09\x99" + b"\x00" * 8)
    with pytest.raises(DatasetError, match="magic"):
        read_idx(tmp_path / "bad")
    write_idx(tmp_path / "img", np.zeros((3, 2, 2), dtype=np.uint8))
    (tmp_path / "short").write_bytes((tmp_path / "img").read_bytes()[:-1])
    with pytest.raises(DatasetError, match="truncated"):
        read_idx(tmp_path / "short")
    write_idx(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
    with pytest.raises(DatasetError):
        load_idx(tmp_path / "img", tmp_path / "lab")


def test_csv_round_trip(tmp_path):
    ds = make_classification(20, 3, n_classes=3, seed=0)
    write_csv(tmp_path / "d.csv", ds)
    back = load_csv(tmp_path / "d.csv", n_classes=3)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)


def test_csv_errors(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(DatasetError):
        load_csv(tmp_path / "e.csv")
    (tmp_path / "h.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DatasetError):
        load_csv(tmp_path / "h.csv")
    (tmp_path / "r.csv").write_text("f0,f1,target\n1,2,3\n1,x,3\n")
    with pytest.raises(DatasetError):
        load_csv(tmp_path / "r.csv")
