"""Feature scoring oracles, sub-bag plans, selection, and aggregation."""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats as scipy_stats

from datscore.errors import ValidationError
from datscore.featsel import (
    FeatureScore,
    FeatureSelection,
    FeatureSet,
    aggregate_frequency,
    combine_modalities,
    fisher_exact_test,
    genotype_contingency,
    impute_missing_with_mode,
    make_subbag_plan,
    select_per_subset,
    welch_t_test,
    SubBaggedFrequencySelector,
)


def fisher_2x3_oracle(table) -> float:
    """Exact-rational enumeration of all tables with the observed margins."""
    table = np.asarray(table, dtype=int)
    r1 = int(table[0].sum())
    cols = [int(c) for c in table.sum(axis=0)]
    n = int(table.sum())
    f = math.factorial
    const = Fraction(f(r1) * f(n - r1) * f(cols[0]) * f(cols[1]) * f(cols[2]), f(n))

    def prob(x0, x1, x2):
        denom = 1
        for top, x in zip(cols, (x0, x1, x2)):
            denom *= f(x) * f(top - x)
        return const / denom

    observed = prob(*table[0])
    total = Fraction(0)
    included = Fraction(0)
    for x1 in range(cols[1] + 1):
        for x2 in range(cols[2] + 1):
            x0 = r1 - x1 - x2
            if 0 <= x0 <= cols[0]:
                p = prob(x0, x1, x2)
                total += p
                if p <= observed:
                    included += p
    assert total == 1
    return float(included)


# ---------------------------------------------------------------------------
# Welch's t-test
# ---------------------------------------------------------------------------


def test_welch_identical_samples():
    score = welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert score.statistic_value == 0.0
    assert score.p_value == 1.0
    assert score.effect_size == 0.0


def test_welch_small_example_matches_reference():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [3.0, 4.0, 5.0, 6.0, 7.0]
    score = welch_t_test(x, y)
    ref = scipy_stats.ttest_ind(x, y, equal_var=False)
    assert abs(score.statistic_value - ref.statistic) < 1e-10
    assert abs(score.p_value - ref.pvalue) < 1e-10


def test_welch_matches_reference_on_random_pairs(rng):
    for _ in range(300):
        nx, ny = rng.integers(2, 40, size=2)
        x = rng.normal(rng.normal(), rng.uniform(0.5, 3.0), nx)
        y = rng.normal(rng.normal(), rng.uniform(0.5, 3.0), ny)
        score = welch_t_test(x, y)
        ref = scipy_stats.ttest_ind(x, y, equal_var=False)
        assert abs(score.statistic_value - ref.statistic) < 1e-10
        assert abs(score.p_value - ref.pvalue) < 1e-10


def test_welch_swap_antisymmetry(rng):
    x = rng.normal(0, 1, 12)
    y = rng.normal(0.5, 2, 9)
    a = welch_t_test(x, y)
    b = welch_t_test(y, x)
    assert a.statistic_value == -b.statistic_value
    assert a.p_value == b.p_value
    assert a.effect_size == b.effect_size


def test_welch_degenerate_constant_samples():
    equal = welch_t_test([2.0, 2.0], [2.0, 2.0])
    assert (equal.statistic_value, equal.p_value, equal.effect_size) == (0.0, 1.0, 0.0)
    differs = welch_t_test([2.0, 2.0], [3.0, 3.0])
    assert differs.effect_size == math.inf
    assert differs.p_value == 0.0


def test_welch_planted_effect_selected_consistently(rng):
    """d = 1.2 planted on one of 30 features at n = 87 + 87."""
    n, n_features = 87, 30
    hits = 0
    for subset in range(10):
        x = rng.normal(0, 1, (n, n_features))
        y = rng.normal(0, 1, (n, n_features))
        y[:, 4] += 1.2
        scores = [
            welch_t_test(x[:, j], y[:, j], f"f{j}") for j in range(n_features)
        ]
        if "f4" in select_per_subset(scores, 5):
            hits += 1
    assert hits >= 9


# ---------------------------------------------------------------------------
# Fisher's exact test (2 x 3)
# ---------------------------------------------------------------------------


def test_fisher_identical_rows():
    score = fisher_exact_test([[10, 5, 2], [10, 5, 2]])
    assert score.p_value == pytest.approx(1.0, abs=1e-12)
    assert score.effect_size == 0.0


def test_fisher_disjoint_classes_value():
    # the mirror table has exactly the observed probability, so the
    # two-sided sum includes both extremes: p = 2 / C(20, 10)
    score = fisher_exact_test([[10, 0, 0], [0, 0, 10]])
    expected = fisher_2x3_oracle([[10, 0, 0], [0, 0, 10]])
    assert expected == pytest.approx(2 / math.comb(20, 10), rel=1e-12)
    assert score.p_value == pytest.approx(expected, abs=1e-12)
    assert score.metadata["collapsed"] is True


def test_fisher_matches_enumeration_oracle(rng):
    for _ in range(150):
        table = rng.integers(0, 15, size=(2, 3))
        if table.sum(axis=1).min() == 0:
            continue
        score = fisher_exact_test(table)
        assert score.p_value == pytest.approx(
            fisher_2x3_oracle(table), abs=1e-12
        ), table.tolist()


def test_fisher_2x2_reduction_matches_scipy(rng):
    """Zero third column: the collapsed test equals the classic 2x2 case."""
    for _ in range(50):
        table = rng.integers(0, 20, size=(2, 2))
        if table.sum(axis=1).min() == 0:
            continue
        full = np.column_stack([table, [0, 0]])
        ours = fisher_exact_test(full)
        ref = scipy_stats.fisher_exact(table)[1]
        assert ours.p_value == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_fisher_cramers_v_bounds(rng):
    for _ in range(100):
        table = rng.integers(0, 25, size=(2, 3))
        if table.sum(axis=1).min() == 0:
            continue
        score = fisher_exact_test(table)
        assert 0.0 <= score.effect_size <= 1.0 + 1e-12


def test_fisher_rejects_bad_tables():
    with pytest.raises(ValidationError):
        fisher_exact_test([[1, 2], [3, 4]])
    with pytest.raises(ValidationError):
        fisher_exact_test([[0, 0, 0], [1, 1, 1]])
    with pytest.raises(ValidationError):
        fisher_exact_test([[-1, 2, 3], [1, 1, 1]])


def test_contingency_excludes_missing():
    values = np.array([0, 1, 2, -1, -1, 0])
    is_a = np.array([True, True, True, True, False, False])
    table = genotype_contingency(values, is_a)
    assert table.sum() == 4  # two missing calls excluded
    assert table[0].tolist() == [1, 1, 1]
    assert table[1].tolist() == [1, 0, 0]


# ---------------------------------------------------------------------------
# sub-bag plans
# ---------------------------------------------------------------------------


def test_plan_paper_arithmetic():
    a = [f"a{i}" for i in range(109)]
    b = [f"b{i}" for i in range(138)]
    plan = make_subbag_plan(a, b, f=10, ratio=0.8, seed=3)
    assert plan.subset_size == 174
    for subset, oob in zip(plan.subsets, plan.oob):
        in_a = sum(1 for sid in subset if sid.startswith("a"))
        assert in_a == 87 and len(subset) - in_a == 87
        assert len(set(subset)) == 174
        assert set(subset) | set(oob) == set(a) | set(b)


def test_plan_ratio_one_flags_empty_oob():
    a = ["a0", "a1"]
    b = ["b0", "b1"]
    with pytest.warns(UserWarning, match="out-of-bag"):
        plan = make_subbag_plan(a, b, f=3, ratio=1.0, seed=0)
    assert all(len(o) == 0 for o in plan.oob)


def test_plan_deterministic():
    a = [f"a{i}" for i in range(20)]
    b = [f"b{i}" for i in range(30)]
    p1 = make_subbag_plan(a, b, f=5, ratio=0.8, seed=42)
    p2 = make_subbag_plan(a, b, f=5, ratio=0.8, seed=42)
    assert p1 == p2
    assert p1.to_json() == p2.to_json()


def test_plan_rejects_empty_selection():
    with pytest.raises(ValidationError):
        make_subbag_plan(["a"], ["b0", "b1"], f=2, ratio=0.3, seed=0)


def test_plan_json_roundtrip():
    plan = make_subbag_plan(["a0", "a1", "a2"], ["b0", "b1", "b2"], 4, 0.7, 9)
    from datscore.featsel import SubBagPlan

    assert SubBagPlan.from_json(plan.to_json()) == plan


# ---------------------------------------------------------------------------
# selection and aggregation
# ---------------------------------------------------------------------------


def _score(fid, effect, p=0.5):
    return FeatureScore(fid, 0.0, p, effect)


def test_select_all_when_k_equals_count():
    scores = [_score("a", 1.0), _score("b", 2.0)]
    assert set(select_per_subset(scores, 2)) == {"a", "b"}


def test_select_tie_breaks_lexicographic():
    scores = [_score("z", 1.0, 0.1), _score("m", 1.0, 0.1), _score("a", 0.5)]
    assert select_per_subset(scores, 1) == ["m"]


def test_select_streaming_equals_full_sort(rng):
    effects = rng.choice([0.1, 0.2, 0.3, 0.4], size=10000)
    ps = rng.choice([0.01, 0.05, 0.5], size=10000)
    scores = [_score(f"f{j:05d}", effects[j], ps[j]) for j in range(10000)]
    streamed = select_per_subset(scores, 17)
    full = [
        s.feature_id
        for s in sorted(scores, key=lambda s: (-s.effect_size, s.p_value, s.feature_id))
    ][:17]
    assert streamed == full


def test_select_infinite_effect_ranks_first():
    scores = [_score("a", 5.0), _score("weird", math.inf, 0.0), _score("b", 7.0)]
    assert select_per_subset(scores, 1) == ["weird"]


def test_aggregate_spec_example(rng):
    """10 features always selected + 12 selected twice, k = 17."""
    certain = [f"c{i:02d}" for i in range(10)]
    boundary = [f"b{i:02d}" for i in range(12)]
    per_subset = []
    for subset in range(10):
        sel = list(certain)
        if subset < 2:
            sel += boundary  # each boundary feature appears in 2 subsets
        per_subset.append(sel)
    fs = aggregate_frequency(per_subset, 17, np.random.default_rng(0))
    ids = fs.feature_ids
    assert len(ids) == 17
    assert set(certain) <= set(ids)
    chosen_boundary = set(ids) - set(certain)
    assert len(chosen_boundary) == 7 and chosen_boundary <= set(boundary)
    freqs = {f.feature_id: f.selection_frequency for f in fs.features}
    assert all(freqs[c] == 1.0 for c in certain)
    assert all(freqs[b] == 0.2 for b in chosen_boundary)


def test_aggregate_single_subset():
    fs = aggregate_frequency([["a", "b", "c"]], 2, np.random.default_rng(1))
    assert len(fs.features) == 2
    assert all(f.selection_frequency == 1.0 for f in fs.features)


def test_aggregate_deterministic_tie_resolution():
    per_subset = [["a", "b"], ["c", "d"]]
    fs1 = aggregate_frequency(per_subset, 3, np.random.default_rng(7))
    fs2 = aggregate_frequency(per_subset, 3, np.random.default_rng(7))
    assert fs1.feature_ids == fs2.feature_ids


def test_aggregate_too_few_features():
    with pytest.raises(ValidationError, match="distinct features"):
        aggregate_frequency([["a"]], 2, np.random.default_rng(0))


def test_combine_disjoint_17_17():
    gen = FeatureSet(
        "genetic", [FeatureSelection(f"snp:rs{i}", 1.0, "genetic") for i in range(17)], 17
    )
    mri = FeatureSet(
        "mri", [FeatureSelection(f"roi:r{i}", 1.0, "mri") for i in range(17)], 17
    )
    combined = combine_modalities(gen, mri)
    assert combined.k == 34
    assert combined.modality == "combined"
    assert {f.modality for f in combined.features} == {"genetic", "mri"}


def test_combine_overlap_warns():
    gen = FeatureSet("genetic", [FeatureSelection("x", 1.0, "genetic")], 1)
    mri = FeatureSet("mri", [FeatureSelection("x", 0.5, "mri")], 1)
    with pytest.warns(UserWarning, match="both modalities"):
        combined = combine_modalities(gen, mri)
    assert combined.k == 1


def test_combine_with_empty_is_identity():
    gen = FeatureSet("genetic", [], 0)
    mri = FeatureSet("mri", [FeatureSelection("roi:a", 1.0, "mri")], 1)
    combined = combine_modalities(gen, mri)
    assert combined.feature_ids == ["roi:a"]


def test_featureset_json_roundtrip():
    fs = FeatureSet(
        "genetic",
        [FeatureSelection("snp:rs1", 0.8, "genetic"), FeatureSelection("snp:rs2", 0.2, "genetic")],
        2,
    )
    assert FeatureSet.from_json(fs.to_json()).feature_ids == fs.feature_ids


def test_impute_mode():
    x = np.array([[0, -1], [0, 2], [1, 2], [-1, 2]], dtype=float)
    imputed, modes = impute_missing_with_mode(x)
    assert modes.tolist() == [0.0, 2.0]
    assert imputed[3, 0] == 0.0 and imputed[0, 1] == 2.0


def test_selector_estimator_lasso_arm(rng):
    """The regression comparator recovers planted continuous features."""
    n_per, n_features = 50, 25
    causal = [5, 12, 20]
    x = rng.normal(0, 1, (2 * n_per, n_features))
    y = np.array([-1.0] * n_per + [1.0] * n_per)
    for j in causal:
        x[:, j] += 0.9 * y
    sel = SubBaggedFrequencySelector(
        method="lasso", k=5, f_subsets=5, ratio=0.8, seed=4, modality="mri"
    )
    sel.fit(x, y)
    chosen = set(sel.feature_set_.feature_ids)
    assert {f"f{j}" for j in causal} <= chosen


def test_selector_estimator_recovers_planted_fisher(rng):
    """End-to-end: planted frequency shift recovered by the estimator."""
    n_per, n_features = 60, 40
    causal = [3, 17]
    x = np.empty((2 * n_per, n_features), dtype=np.int8)
    x[:n_per] = rng.binomial(2, 0.3, size=(n_per, n_features))
    x[n_per:] = rng.binomial(2, 0.3, size=(n_per, n_features))
    for j in causal:
        x[n_per:, j] = rng.binomial(2, 0.7, size=n_per)
    y = np.array([-1.0] * n_per + [1.0] * n_per)
    sel = SubBaggedFrequencySelector(method="fisher", k=4, f_subsets=6, ratio=0.8, seed=2)
    sel.fit(x, y)
    chosen = set(sel.feature_set_.feature_ids)
    assert {f"f{j}" for j in causal} <= chosen
    assert sel.transform(x).shape == (2 * n_per, 4)
    assert sel.get_support().sum() == 4
