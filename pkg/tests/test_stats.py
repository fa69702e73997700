import numpy as np
import pytest

from distillab.errors import DegenerateInputError, InvalidInputError
from distillab.seeding import RNG_ID, derive_rng
from distillab.stats import (
    BootstrapConfig,
    BootstrapResult,
    ScoredCandidate,
    auprc,
    auroc,
    cluster_bootstrap_auroc,
    residualize_within_problem,
    score_report,
)


def _items(scores, labels, problems=None):
    if problems is None:
        problems = [f"p{i}" for i in range(len(scores))]
    return [ScoredCandidate(p, s, l) for p, s, l in zip(problems, scores, labels)]


def _brute_force_auroc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(pos) * len(neg))


def test_auroc_perfect_and_reversed():
    assert auroc(_items([3.0, 2.0, 1.0, 0.0], [True, True, False, False])) == 1.0
    assert auroc(_items([0.0, 1.0, 2.0, 3.0], [True, True, False, False])) == 0.0


def test_auroc_all_tied_is_half():
    assert auroc(_items([1.0] * 6, [True, False, True, False, False, True])) == 0.5


def test_auroc_matches_brute_force_on_tied_data():
    # discrete scores force heavy ties; mid-rank result must equal the
    # O(n^2) pairwise count exactly, not approximately
    rng = derive_rng(41)
    for trial in range(200):
        n = int(rng.integers(5, 201))
        scores = rng.integers(0, 6, size=n).astype(float)
        labels = rng.random(n) < 0.4
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        fast = auroc(_items(scores, labels))
        slow = _brute_force_auroc(scores.tolist(), labels.tolist())
        assert fast == slow, f"trial {trial}: {fast} != {slow}"


def test_auroc_label_flip_antisymmetry():
    rng = derive_rng(42)
    for _ in range(50):
        n = int(rng.integers(5, 80))
        scores = rng.integers(0, 4, size=n).astype(float)
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        a = auroc(_items(scores, labels))
        b = auroc(_items(scores, (~labels)))
        assert a + b == 1.0


def test_auroc_needs_both_classes():
    with pytest.raises(DegenerateInputError):
        auroc(_items([1.0, 2.0], [True, True]))
    with pytest.raises(DegenerateInputError):
        auroc(_items([], []))
    with pytest.raises(InvalidInputError):
        auroc(_items([float("nan"), 1.0], [True, False]))


def test_auprc_hand_values():
    # descending sweep: hits at ranks 1 and 3
    # AP = 1/2 * (1/1) + 1/2 * (2/3)
    items = _items([3.0, 2.0, 1.0], [True, False, True])
    assert abs(auprc(items) - (0.5 + 0.5 * (2.0 / 3.0))) < 1e-15
    # all scores tied: one block, lands at prevalence
    tied = _items([1.0, 1.0, 1.0, 1.0], [True, False, False, True])
    assert auprc(tied) == 0.5


def test_auprc_needs_a_positive():
    with pytest.raises(DegenerateInputError):
        auprc(_items([1.0, 2.0], [False, False]))


def test_residualize_centers_each_problem():
    items = _items(
        [1.0, 3.0, 10.0, 20.0],
        [True, False, True, False],
        problems=["a", "a", "b", "b"],
    )
    out = residualize_within_problem(items)
    assert [c.score for c in out] == [-1.0, 1.0, -5.0, 5.0]
    assert [c.problem_id for c in out] == ["a", "a", "b", "b"]
    assert [c.label for c in out] == [True, False, True, False]


def test_residualization_removes_between_problem_shift():
    # raw scores are dominated by a problem-level offset; within problems the
    # positive always scores higher, so residualized AUROC is 1
    items = _items(
        [100.0, 99.0, 0.5, 0.0],
        [True, False, True, False],
        problems=["a", "a", "b", "b"],
    )
    assert auroc(residualize_within_problem(items)) == 1.0
    # raw AUROC is weaker: problem a's negative outranks problem b's positive
    assert auroc(items) < 1.0


def test_bootstrap_is_deterministic():
    rng = derive_rng(43)
    scores = rng.random(30)
    labels = rng.random(30) < 0.5
    labels[0] = True
    labels[1] = False
    problems = [f"p{i % 6}" for i in range(30)]
    items = _items(scores, labels, problems)
    cfg = BootstrapConfig(resamples=200, confidence=0.95, seed=7)
    r1 = cluster_bootstrap_auroc(items, cfg)
    r2 = cluster_bootstrap_auroc(items, cfg)
    assert r1 == r2
    assert isinstance(r1, BootstrapResult)
    assert r1.rng_id == RNG_ID
    assert r1.seed == 7
    assert r1.n_resamples + r1.n_degenerate == 200
    assert r1.ci_low <= r1.point or r1.ci_low <= r1.ci_high  # interval is ordered
    assert r1.ci_low <= r1.ci_high


def test_duplicated_problem_equals_duplicated_dataset():
    # drawing problem "a" twice in a resample must equal computing AUROC on a
    # dataset where problem "a" literally appears twice
    scores = [1.0, 3.0, 2.0, 0.5, 4.0]
    labels = [True, False, True, False, True]
    problems = ["a", "a", "a", "b", "b"]
    items = _items(scores, labels, problems)

    from distillab.stats import _assemble_resample, _group_indices, _split

    pids, groups = _group_indices(problems)
    sc = np.array(scores)
    lb = np.array(labels)
    draw = np.array([0, 0, 1])  # problem a twice, b once
    rs, rl = _assemble_resample(groups, draw, sc, lb)

    dup_scores = scores[0:3] + scores[0:3] + scores[3:5]
    dup_labels = labels[0:3] + labels[0:3] + labels[3:5]
    dup_problems = ["a1"] * 3 + ["a2"] * 3 + ["b"] * 2
    dup_items = _items(dup_scores, dup_labels, dup_problems)
    expected = auroc(residualize_within_problem(dup_items))

    from distillab.stats import _auroc_from_arrays

    assert _auroc_from_arrays(rs, rl) == expected


def test_bootstrap_null_simulation_covers_half():
    # labels independent of scores: point AUROC near 1/2 and CI covering it
    rng = derive_rng(0)
    items = []
    for p in range(50):
        req = rng.random(4)
        lab = rng.random(4) < 0.5
        for s, l in zip(req, lab):
            items.append(ScoredCandidate(f"p{p}", float(s), bool(l)))
    cfg = BootstrapConfig(resamples=500, confidence=0.95, seed=0)
    res = cluster_bootstrap_auroc(items, cfg)
    assert abs(res.point - 0.5) < 0.1
    assert res.ci_low <= 0.5 <= res.ci_high


def test_bootstrap_rejects_single_problem():
    items = _items([1.0, 2.0], [True, False], problems=["a", "a"])
    with pytest.raises(DegenerateInputError):
        cluster_bootstrap_auroc(items, BootstrapConfig(resamples=10))


def test_bootstrap_config_validation():
    with pytest.raises(InvalidInputError):
        BootstrapConfig(resamples=0)
    with pytest.raises(InvalidInputError):
        BootstrapConfig(confidence=1.0)
    with pytest.raises(InvalidInputError):
        BootstrapConfig(seed=-1)


def test_score_report_shape():
    rng = derive_rng(44)
    items = []
    for p in range(8):
        for _ in range(3):
            items.append(ScoredCandidate(f"p{p}", float(rng.random()), bool(rng.random() < 0.5)))
    labels = [it.label for it in items]
    if all(labels) or not any(labels):
        items[0] = ScoredCandidate(items[0].problem_id, items[0].score, not labels[0])
    rep = score_report("mean_entropy", items, BootstrapConfig(resamples=50, seed=3))
    assert rep["score_name"] == "mean_entropy"
    assert 0.0 <= rep["point_auroc"] <= 1.0
    assert len(rep["ci"]) == 2
    assert rep["n_pos"] + rep["n_neg"] == len(items)
    assert rep["n_problems"] == 8
    assert rep["seed"] == 3
    assert rep["rng_id"] == RNG_ID
