import itertools

import numpy as np
import pytest

from conftest import small_model
from qbm.dataset import Bag, QueryBagInstance
from qbm.evaluate import (
    LabelOracle,
    ablation_report,
    format_report,
    inspect_weights,
    metric_row,
    mrr,
    rank_all,
    rank_candidates,
    rank_scores,
    recall_at,
)
from qbm.exceptions import CapabilityError, ConfigurationError, InvalidInstanceError


def oracle_rank(scores, positive, among=None):
    """Rank counting strictly better candidates plus earlier ties."""
    among = range(len(scores)) if among is None else among
    p = scores[positive]
    return 1 + sum(1 for i in among if i != positive and
                   (scores[i] > p or (scores[i] == p and i < positive)))


def ranked_with_positive_at(rank, n=10):
    scores = np.linspace(1.0, 0.1, n)
    return rank_scores("q", scores, rank - 1)


def test_mrr_examples():
    assert mrr([ranked_with_positive_at(1), ranked_with_positive_at(4)]) == 0.625
    assert mrr([ranked_with_positive_at(1)] * 3) == 1.0
    assert mrr([]) == 0.0


def test_rank_three_example():
    r = [ranked_with_positive_at(3)]
    assert (recall_at(r, 10, 1), recall_at(r, 10, 2), recall_at(r, 10, 5)) == (0.0, 0.0, 1.0)
    assert mrr(r) == pytest.approx(1 / 3)


def test_recall_at_n_is_one():
    rng = np.random.default_rng(0)
    ranked = [rank_scores("q", rng.random(10), int(rng.integers(10))) for _ in range(20)]
    assert recall_at(ranked, 10, 10) == 1.0


def test_k_above_n_rejected():
    with pytest.raises(ConfigurationError):
        recall_at([ranked_with_positive_at(1)], 2, 5)
    with pytest.raises(ConfigurationError):
        recall_at([ranked_with_positive_at(1, n=5)], 10, 1)


def test_mrr_matches_brute_force_on_random_rankings():
    rng = np.random.default_rng(1)
    ranked, expected = [], []
    for _ in range(200):
        scores = rng.integers(0, 5, size=10) / 4.0  # many ties
        pos = int(rng.integers(10))
        ranked.append(rank_scores("q", scores, pos))
        expected.append(1.0 / oracle_rank(scores, pos))
    assert abs(mrr(ranked) - sum(expected) / len(expected)) < 1e-12


def test_subset_recall_matches_exhaustive_oracle():
    rng = np.random.default_rng(2)
    for n, k in itertools.product((2, 5, 10), (1, 2)):
        if k > n:
            continue
        ranked, hits = [], []
        for _ in range(100):
            scores = rng.integers(0, 4, size=10) / 3.0
            pos = int(rng.integers(10))
            ranked.append(rank_scores("q", scores, pos))
            negatives = [i for i in range(10) if i != pos][:n - 1]
            hits.append(oracle_rank(scores, pos, negatives) <= k)
        assert recall_at(ranked, n, k) == pytest.approx(np.mean(hits), abs=1e-12)


def test_ties_keep_input_order():
    r = rank_scores("q", [0.5, 0.5, 0.5], 2)
    assert r.order == [0, 1, 2] and r.rank == 3


def test_metrics_are_monotone():
    rng = np.random.default_rng(3)
    ranked = [rank_scores("q", rng.random(10), int(rng.integers(10))) for _ in range(50)]
    for n in (2, 5, 10):
        values = [recall_at(ranked, n, k) for k in range(1, n + 1)]
        assert values == sorted(values)
    for k in (1, 2):
        values = [recall_at(ranked, n, k) for n in range(max(k, 2), 11)]
        assert values == sorted(values, reverse=True)


# ---------------------------------------------------------------- models

def instances(n=4, n_cand=10):
    out = []
    for i in range(n):
        cands = [Bag(f"b{i}_{j}", (f"refund order {j}", f"parcel {i} {j}")) for j in range(n_cand)]
        out.append(QueryBagInstance(f"q{i}", f"refund order {i}", cands, (3 * i) % n_cand))
    return out


def test_perfect_model_scores_one_everywhere():
    inst = instances()
    row = metric_row(rank_all(LabelOracle(inst), inst))
    assert row == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_ablation_rows_and_report():
    inst = instances()
    models = {"base": small_model("base"), "qbm": small_model("qbm"), "oracle": LabelOracle(inst)}
    rows = ablation_report(models, inst)
    assert [r[0] for r in rows] == ["base", "qbm", "oracle"]
    text = format_report(rows)
    lines = text.splitlines()
    assert lines[0] == "model\tMRR\tR10@1\tR10@2\tR10@5\tR2@1"
    assert len(lines) == 4 and lines[3] == "oracle\t1.0000\t1.0000\t1.0000\t1.0000\t1.0000"
    with pytest.raises(CapabilityError):
        ablation_report({"missing": None}, inst)


def test_rank_candidates_matches_batched_path():
    inst = instances()
    model = small_model("qbm")
    single = [rank_candidates(model, i) for i in inst]
    batched = rank_all(model, inst)
    assert [r.order for r in single] == [r.order for r in batched]


def test_wrong_candidate_count():
    inst = instances(n_cand=9)
    with pytest.raises(InvalidInstanceError, match="q0"):
        rank_all(LabelOracle(inst), inst)
    with pytest.raises(InvalidInstanceError):
        rank_candidates(LabelOracle(inst), inst[0])


# ---------------------------------------------------------------- inspect-weights

def test_inspect_weights_dedup_and_unknown():
    model = small_model("qbm")
    rows, avg = inspect_weights(model, ["refund", "Refund", "zzzunknown", "refund"])
    assert [r[0] for r in rows] == ["refund", "zzzunknown"]
    assert rows[0][2] is True and rows[1][2] is False
    unk = model.coverage_weights(["<unk>"])[0]
    assert rows[1][1] == pytest.approx(float(unk))
    assert np.isfinite(avg)


def test_zero_output_layer_gives_equal_weights():
    model = small_model("qbm")
    model.network_.params["coverage_w2"].data[...] = 0.0
    model.network_.params["coverage_b2"].data[...] = 0.0
    rows, avg = inspect_weights(model, ["refund", "order", "nothere"])
    assert {r[1] for r in rows} == {0.0} and avg == 0.0


@pytest.mark.parametrize("variant", ["base", "base+br_nocov", "qq", "bagcon"])
def test_inspect_weights_needs_coverage(variant):
    with pytest.raises(CapabilityError):
        inspect_weights(small_model(variant), ["refund"])
