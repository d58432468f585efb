import itertools
import numpy as np
import pytest

from backends.base_backend import BaseBackend
from backends.svm import (KernelSpec, SvmModel, dual_objective, kernel, kernel_matrix,
                          load_svm, parse_svm, save_svm, svm_text, train_binary, train_ovr)
from core.errors import ConfigurationError, DegenerateDataError, ParseError


def _blobs(rng, n_per=10, dim=2, classes=2, spread=0.6):
    centers = rng.standard_normal((classes, dim)) * 3
    X = np.concatenate([c + spread * rng.standard_normal((n_per, dim)) for c in centers])
    labels = np.repeat(np.arange(classes), n_per)
    return X, labels


def test_kernels():
    spec = KernelSpec("rbf", gamma=0.5)
    x, y = np.array([1.0, 2.0]), np.array([0.0, 0.0])
    assert kernel(x, x, spec) == 1.0
    np.testing.assert_allclose(kernel(x, y, spec), np.exp(-2.5))
    sig = KernelSpec("sigmoid", gamma=0.1, coef0=-1.0)
    np.testing.assert_allclose(kernel(x, x, sig), np.tanh(0.5 - 1.0))
    X = np.array([[1.0, 2.0], [0.0, 0.0], [3.0, -1.0]])
    np.testing.assert_allclose(kernel_matrix(X, X, spec),
                               [[kernel(a, b, spec) for b in X] for a in X])


def test_rbf_gram_is_psd(rng):
    X = rng.standard_normal((30, 4))
    gram = kernel_matrix(X, X, KernelSpec("rbf"))
    np.testing.assert_array_equal(np.diag(gram), 1.0)
    np.testing.assert_allclose(gram, gram.T)
    assert np.linalg.eigvalsh(gram).min() > -1e-10


def test_kernel_spec_validation():
    for kw in ({"kind": "poly"}, {"gamma": -1.0}, {"C": 0.0}, {"tol": 0.0}, {"max_iter": 0}):
        with pytest.raises(ConfigurationError):
            KernelSpec(**kw).validate()
    assert KernelSpec().resolved(8).gamma == 0.125


def test_kkt_conditions_hold(rng):
    X, labels = _blobs(rng, spread=2.0)
    y = np.where(labels == 0, 1.0, -1.0)
    spec = KernelSpec("rbf", gamma=0.5, C=1.0, tol=1e-6)
    model = train_binary(X, y, spec)
    assert model.converged
    alpha = model.alpha
    margin = y * model.decision(X)
    tol = 1e-3
    assert abs(alpha @ y) < 1e-10
    assert np.all((alpha >= 0) & (alpha <= spec.C))
    assert np.all(margin[alpha == 0] >= 1 - tol)
    assert np.all(margin[alpha >= spec.C] <= 1 + tol)
    free = (alpha > 0) & (alpha < spec.C)
    np.testing.assert_allclose(margin[free], 1.0, atol=tol)


def _oracle_dual(X, y, spec):
    """Best dual objective over every (zero, bound, free) assignment."""
    K = kernel_matrix(X, X, spec)
    Q = np.outer(y, y) * K
    n, C = len(y), spec.C
    best = -np.inf
    for states in itertools.product((0, 1, 2), repeat=n):
        states = np.array(states)
        alpha = np.where(states == 1, C, 0.0)
        free = np.flatnonzero(states == 2)
        if free.size:
            fixed = states != 2
            # stationarity on the free set plus the equality constraint
            A = np.zeros((free.size + 1, free.size + 1))
            A[:-1, :-1] = Q[np.ix_(free, free)]
            A[:-1, -1] = y[free]
            A[-1, :-1] = y[free]
            rhs = np.concatenate([1 - Q[np.ix_(free, np.flatnonzero(fixed))] @ alpha[fixed],
                                  [-y[fixed] @ alpha[fixed]]])
            sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
            alpha[free] = sol[:-1]
        if abs(alpha @ y) > 1e-8 or np.any(alpha < -1e-10) or np.any(alpha > C + 1e-10):
            continue
        best = max(best, dual_objective(np.clip(alpha, 0, C), y, K))
    return best


FIXTURE_LABELS = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0])


def _max_violation(alpha, y, gram, C):
    """Largest KKT violation of the dual, the quantity SMO drives below tol."""
    minus_yg = -y * (np.outer(y, y) * gram @ alpha - 1.0)
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return minus_yg[up].max() - minus_yg[low].min()


def _sigmoid_fixtures(spec, psd):
    """Pinned 7-point sets whose sigmoid Gram matrix is (or is not) PSD."""
    out = []
    for seed in range(40):
        X = np.random.default_rng(seed).standard_normal((7, 30 if psd else 2))
        is_psd = np.linalg.eigvalsh(kernel_matrix(X, X, spec)).min() > 1e-10
        if is_psd == psd:
            out.append(X)
    return out


def test_smo_matches_brute_force_dual_rbf(rng):
    X = rng.standard_normal((7, 2))
    spec = KernelSpec("rbf", gamma=0.7, C=2.0, tol=1e-8)
    model = train_binary(X, FIXTURE_LABELS, spec)
    smo = dual_objective(model.alpha, FIXTURE_LABELS, kernel_matrix(X, X, spec))
    np.testing.assert_allclose(smo, _oracle_dual(X, FIXTURE_LABELS, spec), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("spec", [KernelSpec("sigmoid", gamma=0.01, coef0=0.0, C=1.0, tol=1e-8),
                                  KernelSpec("sigmoid", gamma=0.01, coef0=0.2, C=2.0, tol=1e-8)])
def test_smo_matches_brute_force_dual_sigmoid(spec):
    fixtures = _sigmoid_fixtures(spec, psd=True)
    assert len(fixtures) >= 5
    for X in fixtures[:5]:
        model = train_binary(X, FIXTURE_LABELS, spec)
        gram = kernel_matrix(X, X, spec)
        assert model.converged
        assert np.all((model.alpha >= 0) & (model.alpha <= spec.C))
        assert abs(model.alpha @ FIXTURE_LABELS) < 1e-10
        assert _max_violation(model.alpha, FIXTURE_LABELS, gram, spec.C) < 1e-6
        smo = dual_objective(model.alpha, FIXTURE_LABELS, gram)
        np.testing.assert_allclose(smo, _oracle_dual(X, FIXTURE_LABELS, spec), rtol=1e-6,
                                   atol=1e-8)


def test_indefinite_sigmoid_gram_stops_at_a_kkt_point():
    spec = KernelSpec("sigmoid", gamma=0.5, coef0=0.0, C=1.0, tol=1e-6)
    fixtures = _sigmoid_fixtures(spec, psd=False)
    assert fixtures
    for X in fixtures[:5]:
        model = train_binary(X, FIXTURE_LABELS, spec)
        gram = kernel_matrix(X, X, spec)
        assert model.converged
        assert np.all((model.alpha >= 0) & (model.alpha <= spec.C))
        assert abs(model.alpha @ FIXTURE_LABELS) < 1e-10
        assert _max_violation(model.alpha, FIXTURE_LABELS, gram, spec.C) < spec.tol
        # a KKT point, possibly below the global maximum of the non-concave dual
        assert dual_objective(model.alpha, FIXTURE_LABELS, gram) <= \
            _oracle_dual(X, FIXTURE_LABELS, spec) + 1e-6


def test_duplicate_points_with_mixed_labels():
    X = np.array([[0.5, -1.0]] * 4 + [[2.0, 1.0], [-1.0, 0.0]])
    y = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
    for spec in (KernelSpec("rbf", gamma=0.5), KernelSpec("sigmoid", gamma=0.5, coef0=0.1)):
        model = train_binary(X, y, spec)
        assert model.converged
        assert np.all((model.alpha >= 0) & (model.alpha <= spec.C))
        assert np.isfinite(model.bias)
        assert np.all(np.isfinite(model.decision(X)))


def test_iteration_cap_returns_a_model(rng):
    X, labels = _blobs(rng)
    model = train_binary(X, np.where(labels == 0, 1.0, -1.0), KernelSpec(max_iter=1))
    assert not model.converged
    assert model.iterations == 1


def test_binary_degenerate_inputs(rng):
    X = rng.standard_normal((4, 2))
    with pytest.raises(DegenerateDataError):
        train_binary(X, np.ones(4), KernelSpec())
    with pytest.raises(DegenerateDataError):
        train_binary(X, np.array([1.0, -1.0, 0.0, 1.0]), KernelSpec())
    X[0, 0] = np.nan
    with pytest.raises(DegenerateDataError):
        train_binary(X, np.array([1.0, -1.0, 1.0, -1.0]), KernelSpec())


def test_ovr_separates_blobs(rng):
    X, labels = _blobs(rng, n_per=15, dim=3, classes=4, spread=0.3)
    model = train_ovr(X, labels, KernelSpec("rbf"), 4)
    assert model.converged
    assert np.mean(model.predict_batch(X) == labels) == 1.0
    assert model.predict(X[20]) == labels[20]


def test_ovr_threads_give_the_same_model(rng):
    X, labels = _blobs(rng, classes=3)
    serial = train_ovr(X, labels, KernelSpec(), 3)
    threaded = train_ovr(X, labels, KernelSpec(), 3, n_jobs=3)
    np.testing.assert_array_equal(serial.decision_matrix(X), threaded.decision_matrix(X))


def test_ovr_absent_class(rng):
    X, labels = _blobs(rng, classes=2)
    with pytest.raises(DegenerateDataError) as err:
        train_ovr(X, labels, KernelSpec(), 3)
    assert "class 2" in str(err.value)
    with pytest.raises(DegenerateDataError):
        train_ovr(X, np.zeros(len(X), dtype=int), KernelSpec())


def test_ties_go_to_the_lowest_index():

    class Flat(BaseBackend):
        def fit(self, codes, labels):
            return self

        def decision_values(self, code):
            return np.array([0.5, 1.0, 1.0])

    assert Flat().predict(np.zeros(2)) == 1
    np.testing.assert_array_equal(Flat().predict_batch(np.zeros((2, 2))), [1, 1])


def test_model_file_round_trip(tmp_path, rng):
    X, labels = _blobs(rng, classes=3)
    model = train_ovr(X * 10 + 5, labels, KernelSpec("sigmoid", coef0=0.5), 3)
    path = tmp_path / "svm.txt"
    save_svm(model, path)
    loaded = load_svm(path)
    np.testing.assert_array_equal(loaded.decision_matrix(X), model.decision_matrix(X))
    assert svm_text(loaded) == path.read_text()
    assert isinstance(loaded, SvmModel) and loaded.num_classes == 3


def test_model_file_errors(rng):
    X, labels = _blobs(rng)
    text = svm_text(train_ovr(X, labels, KernelSpec(), 2))
    with pytest.raises(ParseError) as err:
        parse_svm("svm 1\n" + text.split("\n", 1)[1])
    assert err.value.offset == 1
    lines = text.splitlines()
    lines[3] = "mean 0.5"
    with pytest.raises(ParseError) as err:
        parse_svm("\n".join(lines))
    assert err.value.offset == 4
    with pytest.raises(ParseError):
        parse_svm(text + "junk\n")
    with pytest.raises(ParseError):
        parse_svm("\n".join(text.splitlines()[:-1]))
