from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn import metrics as skm

from privforest import analysis
from privforest.analysis import CostReport
from privforest.errors import DomainError, EmptyFeaturePool
from privforest.forest import build_tree, default_bank_features, default_pns_features


def closed_form(c_s, c_b, h, tau):
    return tau * 2**h * (1 - Fraction(c_s, c_s + c_b) ** h)


def test_forest_of_twelve_height_six():
    value = analysis.expected_red_leaves(10, 2, 6, 12)
    assert value == pytest.approx(float(closed_form(10, 2, 6, 12)), rel=1e-12)
    assert value == pytest.approx(510.7984, abs=1e-4)
    assert round(value) == 511


def test_no_bank_conditions_means_no_red_leaves():
    assert analysis.expected_red_leaves(7, 0, 5, 3) == 0


def test_base_case():
    assert analysis.expected_red_leaves(1, 1, 1, 1) == 1
    assert analysis.expected_red_leaves(3, 1, 1) == pytest.approx(2 * 1 / 4)


def test_domain_errors():
    with pytest.raises(DomainError):
        analysis.expected_red_leaves(0, 0, 3)
    with pytest.raises(DomainError):
        analysis.expected_red_leaves(1, 1, 0)


@given(st.integers(0, 10), st.integers(0, 10), st.integers(1, 10), st.integers(1, 20))
def test_closed_form_matches_exact_rational(c_s, c_b, h, tau):
    if c_s + c_b == 0:
        return
    got = analysis.expected_red_leaves(c_s, c_b, h, tau)
    assert got == pytest.approx(float(closed_form(c_s, c_b, h, tau)), rel=1e-12, abs=1e-12)


@given(st.integers(1, 10), st.integers(0, 10), st.integers(1, 8))
def test_branching_recursion_reduces_to_closed_form(c_s, c_b, h):
    got = analysis.expected_red_leaves_branching([2] * c_s, [2] * c_b, h)
    assert got == pytest.approx(analysis.expected_red_leaves(c_s, c_b, h), rel=1e-12, abs=1e-12)


def test_branching_recursion_by_enumeration():
    # one ternary PNS condition and one 3-flag bank condition, height 2:
    # root PNS (1/2): 3 children each red w.p. 1/2 with 3 leaves -> 4.5
    # root bank (1/2): 3 children, each a ternary PNS split -> 9 red leaves
    assert analysis.expected_red_leaves_branching([3], [3], 2) == pytest.approx(0.5 * 4.5 + 0.5 * 9)


def test_branching_needs_pns_conditions_past_height_one():
    assert analysis.expected_red_leaves_branching([], [3], 1) == 3
    with pytest.raises(DomainError):
        analysis.expected_red_leaves_branching([], [3], 2)


def test_mc_without_bank_conditions_is_zero():
    r = analysis.monte_carlo_red_leaves(0, 5, 0, 4, 200)
    assert (r.mean, r.stderr) == (0.0, 0.0)


def test_mc_height_one():
    r = analysis.monte_carlo_red_leaves(3, 3, 1, 1, 20_000)
    assert abs(r.mean - 2 * 1 / 4) <= 3 * r.stderr


def test_mc_needs_pns_conditions_below_bank_nodes():
    with pytest.raises(EmptyFeaturePool):
        analysis.monte_carlo_red_leaves(0, 0, 4, 2, 10)


@pytest.mark.parametrize("c_s,c_b,h", [(10, 2, 6), (1, 1, 8), (3, 17, 5), (19, 1, 8), (5, 5, 3),
                                       (2, 9, 7), (12, 8, 4)])
def test_mc_within_three_standard_errors(c_s, c_b, h):
    r = analysis.monte_carlo_red_leaves(11, c_s, c_b, h, 1000)
    assert abs(r.mean - analysis.expected_red_leaves(c_s, c_b, h)) <= 3 * r.stderr


def test_lemma_table_rows():
    rows = analysis.lemma_table(10, 2, 3, 12, trials=50)
    assert [r["height"] for r in rows] == [1, 2, 3]
    assert rows[-1]["mc_trials"] == 50
    assert rows[0]["expected_forest"] == pytest.approx(12 * 2 * 2 / 12)


def test_perfect_and_all_negative():
    y = [1, 0, 1, 0]
    m = analysis.evaluate(y, y)
    assert all(m[k] == 1.0 for k in ("accuracy", "precision", "recall", "f1", "average_precision"))
    truth = [1] * 5 + [0] * 95
    m = analysis.evaluate([0] * 100, truth)
    assert (m["accuracy"], m["recall"]) == (0.95, 0.0)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 6)),
                min_size=1, max_size=80))
def test_metrics_match_recount_and_sklearn(rows):
    pred = [r[0] for r in rows]
    truth = [r[1] for r in rows]
    scores = [r[2] / 6 for r in rows]
    m = analysis.evaluate(pred, truth, scores)
    pairs = list(zip(pred, truth))
    tp = sum(p and t for p, t in pairs)
    fp = sum(p and not t for p, t in pairs)
    fn = sum(t and not p for p, t in pairs)
    assert (m["tp"], m["fp"], m["fn"]) == (tp, fp, fn)
    assert m["accuracy"] == pytest.approx(skm.accuracy_score(truth, pred))
    assert m["precision"] == pytest.approx(skm.precision_score(truth, pred, zero_division=0))
    assert m["recall"] == pytest.approx(skm.recall_score(truth, pred, zero_division=0))
    assert m["f1"] == pytest.approx(skm.f1_score(truth, pred, zero_division=0))
    if any(truth):
        assert m["average_precision"] == pytest.approx(skm.average_precision_score(truth, scores))


def test_evaluate_rejects_bad_input():
    with pytest.raises(ValueError):
        analysis.evaluate([0, 1], [0])
    with pytest.raises(ValueError):
        analysis.evaluate([2], [0])


def test_cost_report_totals():
    phases = {"train": {"pet": 3, "mul": 2, "add": 1, "bootstrap": 0, "rotate": 0, "compare": 1,
                        "encrypt": 4, "decrypt": 0},
              "infer": {"pet": 1, "mul": 1, "add": 0, "bootstrap": 1, "rotate": 2, "compare": 0,
                        "encrypt": 1, "decrypt": 1}}
    records = [{"direction": "send", "src": "pns", "dst": "bank1", "types": {"ct": 4}},
               {"direction": "recv", "src": "pns", "dst": "bank1", "types": {"ct": 4}},
               {"direction": "send", "src": "pns", "dst": "bank1", "types": {"ct_bits": 1,
                                                                             "leaf_ref": 3}}]
    r = CostReport.from_phases(phases, records)
    assert (r.pet_count, r.he_mul_count, r.bootstrap_count, r.decrypt_count) == (4, 3, 1, 1)
    assert r.ciphertexts_sent == {"pns->bank1": 5}
    assert "train" in r.table() and r.to_dict()["phases"] == phases


def test_op_delta():
    assert analysis.op_delta({"pet": 1}, {"pet": 4, "mul": 2}) == {"pet": 3, "mul": 2}


def test_average_precision_ties_match_reference():
    scores = np.array([0.5, 0.5, 0.2, 0.9])
    truth = [1, 0, 1, 0]
    assert analysis.average_precision(scores, truth) == pytest.approx(
        skm.average_precision_score(truth, scores))


def test_branching_recursion_matches_default_pools():
    pns, bank = default_pns_features(), default_bank_features()
    rng = np.random.default_rng(0)
    counts = [sum(1 for leaf in build_tree(rng, pns, bank, 3).leaves if leaf.bank_feature)
              for _ in range(3000)]
    branching = [len(f.domain) if f.kind == "categorical" else 2 for f in pns]
    expected = analysis.expected_red_leaves_branching(branching, [len(f.domain) for f in bank], 3)
    assert abs(np.mean(counts) - expected) <= 3 * np.std(counts, ddof=1) / np.sqrt(len(counts))
