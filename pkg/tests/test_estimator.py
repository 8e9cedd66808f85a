import numpy as np
import pytest
from sklearn.base import clone

from conftest import SMALL, toy_samples
from qbm import QBMClassifier
from qbm.exceptions import DegenerateInputError, LabelError


def test_get_params_and_clone():
    est = QBMClassifier(variant="base", hidden=9, seed=4)
    params = est.get_params()
    assert params["variant"] == "base" and params["hidden"] == 9 and params["seed"] == 4
    copy = clone(est)
    assert copy.get_params() == params and copy is not est


def test_fit_predict_shapes():
    X = toy_samples(6)
    y = np.array([1, 0, 1, 0, 1, 0])
    est = QBMClassifier(**SMALL, max_epochs=1).fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (6, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert est.predict(X).shape == (6,) and set(est.predict(X)) <= {0, 1}
    np.testing.assert_array_equal(est.decision_function(X), proba[:, 1])
    assert 0.0 <= est.score(X, y) <= 1.0
    assert list(est.classes_) == [0, 1]


def test_single_string_bag_is_accepted():
    X = [("refund order", "refund my order")]
    est = QBMClassifier(**SMALL).init_network(X)
    assert est.predict_proba(X).shape == (1, 2)


@pytest.mark.parametrize("X, err", [
    ("not a list", TypeError),
    ([("q",)], TypeError),
    ([(3, ("a",))], TypeError),
    ([("q", ())], DegenerateInputError),
    ([("q", ("a", 5))], TypeError),
])
def test_input_validation(X, err):
    with pytest.raises(err):
        QBMClassifier(**SMALL).fit(X, [1] * (len(X) if not isinstance(X, str) else 1))


def test_label_validation():
    X = toy_samples(3)
    with pytest.raises(LabelError):
        QBMClassifier(**SMALL).fit(X, [0, 1, 2])
    with pytest.raises(ValueError):
        QBMClassifier(**SMALL).fit(X, [0, 1])


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        QBMClassifier().predict_proba(toy_samples(1))


def test_save_load_keeps_settings(tmp_path):
    X = toy_samples(6)
    y = np.array([1, 0] * 3)
    est = QBMClassifier(**dict(SMALL, dtype="float32"), variant="base+mc", max_epochs=1, qq_pool="mean",
                        seed=9).fit(X, y)
    est.save(tmp_path / "m.qbm")
    back = QBMClassifier.load(tmp_path / "m.qbm")
    assert back.variant == "base+mc" and back.seed == 9 and back.qq_pool == "mean"
    assert back.n_params_ == est.n_params_
    np.testing.assert_array_equal(back.predict_proba(X), est.predict_proba(X))


def test_embeddings_file_is_used(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("refund " + " ".join(["0.5"] * 6) + "\n", encoding="utf-8")
    est = QBMClassifier(**SMALL, embeddings=str(path)).init_network([("refund order", ("order",))])
    row = est.network_.params["embedding"].data[est.network_.vocab["refund"]]
    np.testing.assert_array_equal(row, np.full(6, 0.5))
