import numpy as np
import pytest

from distillab.errors import DegenerateInputError, InvalidInputError
from distillab.metrics import (
    DEFAULT_MARKER,
    INVALID,
    ProblemMetrics,
    SampleGrade,
    aggregate_metrics,
    default_equivalence,
    extract_final_answer,
    grade_and_cluster,
    normalize_answer,
    problem_metrics,
    score_problem,
    seed_spread,
)
from distillab.seeding import derive_rng


def test_extract_basic_and_last_occurrence():
    assert extract_final_answer(r"so \boxed{42}") == "42"
    assert extract_final_answer(r"\boxed{1} then \boxed{2}") == "2"
    assert extract_final_answer("no marker here") == INVALID
    assert extract_final_answer("") == INVALID


def test_extract_brace_balancing():
    assert extract_final_answer(r"\boxed{\frac{1}{2}}") == r"\frac{1}{2}"
    assert extract_final_answer(r"\boxed{a{b{c}}d}") == "a{b{c}}d"
    # unbalanced after the last marker
    assert extract_final_answer(r"\boxed{\frac{1}{2}") == INVALID
    # empty box is a real (empty) answer, not INVALID
    assert extract_final_answer(r"\boxed{}") == ""


def test_extract_custom_marker():
    assert extract_final_answer("answer{7} done", marker="answer{") == "7"
    with pytest.raises(InvalidInputError):
        extract_final_answer("x", marker="answer")
    with pytest.raises(InvalidInputError):
        extract_final_answer("x", marker="")


def test_normalization_and_equivalence():
    assert normalize_answer("  Two  Words \n") == "two words"
    assert default_equivalence("42", " 42 ")
    assert default_equivalence("ABC", "abc")
    assert not default_equivalence("42", "43")


def test_grading_marks_invalid_never_correct():
    grades = grade_and_cluster([r"\boxed{5}", "no answer", r"\boxed{6}"], "5")
    assert [g.correct for g in grades] == [True, False, False]
    assert grades[1].answer == INVALID
    assert grades[1].cluster_key == INVALID


def test_clustering_uses_first_occurrence_representative():
    grades = grade_and_cluster(
        [r"\boxed{ 42 }", r"\boxed{42}", r"\boxed{43}"], "42"
    )
    # the second sample joins the first cluster under normalized equality,
    # keeping the first sample's literal answer as the key
    assert grades[0].cluster_key == " 42 "
    assert grades[1].cluster_key == " 42 "
    assert grades[2].cluster_key == "43"


def test_problem_metrics_fixture_majority_correct():
    m = score_problem(
        [r"\boxed{7}", r"\boxed{7}", r"\boxed{9}", "junk"], "7"
    )
    assert m.avg_at_n == 0.5
    assert m.pass_at_n == 1.0
    assert m.maj_at_n == 1.0
    assert m.n == 4


def test_problem_metrics_fixture_wrong_majority():
    m = score_problem(
        [r"\boxed{9}", r"\boxed{9}", r"\boxed{7}"], "7"
    )
    assert abs(m.avg_at_n - 1.0 / 3.0) < 1e-15
    assert m.pass_at_n == 1.0
    assert m.maj_at_n == 0.0


def test_problem_metrics_fixture_invalid_plurality_scores_zero():
    # INVALID holds the plurality: it may win the vote but never the point
    m = score_problem(
        ["junk", "junk", r"\boxed{7}"], "7"
    )
    assert abs(m.avg_at_n - 1.0 / 3.0) < 1e-15
    assert m.pass_at_n == 1.0
    assert m.maj_at_n == 0.0


def test_majority_tie_breaks_toward_earliest_cluster():
    # 2 vs 2 tie: cluster "9" appeared first, so it wins and is wrong
    m = score_problem(
        [r"\boxed{9}", r"\boxed{7}", r"\boxed{9}", r"\boxed{7}"], "7"
    )
    assert m.maj_at_n == 0.0
    # flip the order: now the correct cluster appears first
    m2 = score_problem(
        [r"\boxed{7}", r"\boxed{9}", r"\boxed{7}", r"\boxed{9}"], "7"
    )
    assert m2.maj_at_n == 1.0


def test_maj_never_exceeds_pass_on_random_grade_lists():
    # Maj@N == 1 requires a correct plurality representative, which requires
    # at least one correct sample, so maj <= pass always
    rng = derive_rng(61)
    for _ in range(10_000):
        n = int(rng.integers(1, 9))
        answers = rng.integers(0, 4, size=n)
        texts = []
        for a in answers:
            if a == 3:
                texts.append("no box")
            else:
                texts.append(rf"\boxed{{{a}}}")
        m = score_problem(texts, "1")
        assert m.maj_at_n <= m.pass_at_n
        assert 0.0 <= m.avg_at_n <= m.pass_at_n


def test_single_sample_metrics_coincide():
    m = score_problem([r"\boxed{5}"], "5")
    assert (m.avg_at_n, m.pass_at_n, m.maj_at_n, m.n) == (1.0, 1.0, 1.0, 1)
    m0 = score_problem(["nope"], "5")
    assert (m0.avg_at_n, m0.pass_at_n, m0.maj_at_n) == (0.0, 0.0, 0.0)


def test_empty_inputs_are_degenerate():
    with pytest.raises(DegenerateInputError):
        grade_and_cluster([], "5")
    with pytest.raises(DegenerateInputError):
        problem_metrics([])
    with pytest.raises(DegenerateInputError):
        aggregate_metrics([])
    with pytest.raises(DegenerateInputError):
        seed_spread([])


def test_aggregate_means():
    per = [
        ProblemMetrics(avg_at_n=1.0, pass_at_n=1.0, maj_at_n=1.0, n=4),
        ProblemMetrics(avg_at_n=0.0, pass_at_n=0.0, maj_at_n=0.0, n=4),
        ProblemMetrics(avg_at_n=0.5, pass_at_n=1.0, maj_at_n=0.0, n=4),
    ]
    agg = aggregate_metrics(per)
    assert agg["avg_at_n"] == 0.5
    assert abs(agg["pass_at_n"] - 2.0 / 3.0) < 1e-15
    assert abs(agg["maj_at_n"] - 1.0 / 3.0) < 1e-15


def test_seed_spread_mean_and_sample_sd():
    runs = [
        {"avg_at_n": 0.4, "pass_at_n": 1.0, "maj_at_n": 0.2},
        {"avg_at_n": 0.6, "pass_at_n": 1.0, "maj_at_n": 0.4},
    ]
    spread = seed_spread(runs)
    mean, sd = spread["avg_at_n"]
    assert abs(mean - 0.5) < 1e-15
    assert abs(sd - float(np.std([0.4, 0.6], ddof=1))) < 1e-15
    # constant metric spreads to zero
    assert spread["pass_at_n"][1] == 0.0
    # a single run has no sample deviation
    solo = seed_spread([runs[0]])
    assert solo["avg_at_n"] == (0.4, 0.0)


def test_custom_equivalence_predicate():
    def numeric_eq(a, b):
        try:
            return float(a) == float(b)
        except ValueError:
            return False

    m = score_problem([r"\boxed{0.50}", r"\boxed{1/2}"], "0.5", eq=numeric_eq)
    assert m.avg_at_n == 0.5  # "1/2" does not parse as float
    assert m.pass_at_n == 1.0


def test_sample_grade_is_frozen_record():
    g = SampleGrade(answer="5", cluster_key="5", correct=True)
    with pytest.raises(AttributeError):
        g.correct = False
