import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mecp.nested_sets import (
    EMPTY_SET,
    BandFamily,
    Interval,
    IntervalUnion,
    LabelSet,
    LossSublevelFamily,
    SymmetricFamily,
    contains,
    coverage_threshold,
    measure,
    set_at,
    set_from_json,
    set_to_json,
    sets_at,
    thresholds,
    union_sets,
)
from oracles import oracle_interval_measure, oracle_union_measure_exact

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def const_symmetric(value):
    return SymmetricFamily(predict=lambda xs, v=value: np.full(xs.shape[0], float(v)))


def const_band(low, high):
    return BandFamily(
        lower=lambda xs, v=low: np.full(xs.shape[0], float(v)),
        upper=lambda xs, v=high: np.full(xs.shape[0], float(v)),
    )


def const_logits(values):
    row = np.asarray(values, dtype=float)
    return LossSublevelFamily(
        logits=lambda xs, r=row: np.tile(r, (xs.shape[0], 1)), n_classes=len(row)
    )


class TestSetTypes:
    def test_interval_validation(self):
        with pytest.raises(ValueError):
            Interval(2.0, 1.0)
        with pytest.raises(ValueError):
            Interval(float("nan"), 1.0)
        assert Interval(1, 2).lo == 1.0  # endpoints normalized to floats

    def test_union_must_be_sorted_and_disjoint(self):
        with pytest.raises(ValueError):
            IntervalUnion((Interval(0, 2), Interval(1, 3)))
        with pytest.raises(ValueError):
            IntervalUnion((Interval(0, 1), Interval(1, 2)))  # touching merges
        with pytest.raises(ValueError):
            IntervalUnion((Interval(2, 3), Interval(0, 1)))

    def test_label_set_validation(self):
        with pytest.raises(ValueError):
            LabelSet((-1, 2))
        with pytest.raises(ValueError):
            LabelSet((2, 1))
        with pytest.raises(ValueError):
            LabelSet((1, 1))


class TestCoverageThreshold:
    def test_symmetric(self):
        assert coverage_threshold(const_symmetric(3.0), np.zeros(2), 5.0) == 2.0

    def test_band_inside_is_negative(self):
        assert coverage_threshold(const_band(0.0, 4.0), np.zeros(2), 2.0) == -2.0

    def test_uniform_logits(self):
        fam = const_logits([0.0, 0.0, 0.0])
        for label in range(3):
            got = coverage_threshold(fam, np.zeros(1), label)
            assert got == pytest.approx(math.log(3.0), abs=1e-12)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=2)
        fam = SymmetricFamily(predict=lambda xs, w=w: xs @ w)
        xs = rng.normal(size=(6, 2))
        ys = rng.normal(size=6)
        batch = thresholds(fam, xs, ys)
        scalar = [coverage_threshold(fam, x, y) for x, y in zip(xs, ys)]
        assert np.allclose(batch, scalar, atol=0)


class TestSetAt:
    def test_symmetric_zero_tau_is_singleton(self):
        got = set_at(const_symmetric(1.5), np.zeros(1), 0.0)
        assert got == Interval(1.5, 1.5)

    def test_infinite_tau_is_full_line(self):
        got = set_at(const_symmetric(1.5), np.zeros(1), math.inf)
        assert got == Interval(-math.inf, math.inf)

    def test_negative_tau_is_empty(self):
        got = set_at(const_symmetric(1.5), np.zeros(1), -0.5)
        assert got == EMPTY_SET
        assert measure(got) == 0.0

    def test_band_shrinks_then_empties(self):
        fam = const_band(0.0, 4.0)
        assert set_at(fam, np.zeros(1), -2.0) == Interval(2.0, 2.0)
        assert set_at(fam, np.zeros(1), -3.0) == EMPTY_SET
        assert set_at(fam, np.zeros(1), math.inf) == Interval(-math.inf, math.inf)

    def test_sublevel_label_sets(self):
        fam = const_logits([2.0, 0.0, 0.0])
        x = np.zeros(1)
        assert set_at(fam, x, 0.1) == LabelSet(())
        assert set_at(fam, x, 1.0) == LabelSet((0,))
        assert set_at(fam, x, math.inf) == LabelSet((0, 1, 2))

    def test_sets_at_matches_pointwise(self):
        # predictor evaluates row by row so its rounding cannot differ by shape
        rng = np.random.default_rng(1)
        w = rng.normal(size=3)
        fam = SymmetricFamily(
            predict=lambda xs, w=w: np.array([float(row @ w) for row in xs])
        )
        xs = rng.normal(size=(10, 3))
        batch = sets_at(fam, xs, 0.7)
        single = [set_at(fam, x, 0.7) for x in xs]
        assert batch == single

    def test_nan_tau_rejected(self):
        with pytest.raises(ValueError):
            set_at(const_symmetric(0.0), np.zeros(1), float("nan"))

    def test_membership_threshold_consistency(self):
        # the two routes to "is y covered at tau" must agree case by case
        rng = np.random.default_rng(2)
        for case in range(1000):
            kind = case % 3
            x = rng.normal(size=2)
            if kind == 0:
                w = rng.normal(size=2)
                fam = SymmetricFamily(predict=lambda xs, w=w: xs @ w)
                y = rng.normal() * 3.0
            elif kind == 1:
                w1, w2 = rng.normal(size=2), rng.normal(size=2)
                off = float(rng.uniform(0.0, 2.0))
                fam = BandFamily(
                    lower=lambda xs, w=w1, o=off: xs @ w - o,
                    upper=lambda xs, w=w2, o=off: xs @ w + o,
                )
                y = rng.normal() * 3.0
            else:
                fam = const_logits(rng.normal(size=4))
                y = int(rng.integers(0, 4))
            tau = float(rng.uniform(-1.0, 3.0))
            if case % 17 == 0:
                tau = math.inf if case % 2 else -math.inf
            member = contains(set_at(fam, x, tau), y)
            assert member == (coverage_threshold(fam, x, y) <= tau)

    @given(center=finite, y=finite, tau1=finite, tau2=finite)
    def test_nesting_in_tau(self, center, y, tau1, tau2):
        lo, hi = sorted((tau1, tau2))
        fam = const_symmetric(center)
        x = np.zeros(1)
        if contains(set_at(fam, x, lo), y):
            assert contains(set_at(fam, x, hi), y)


class TestMeasure:
    def test_clip_to_reporting_range(self):
        assert measure(Interval(-2.0, 4.0), clip=(0.0, 2000.0)) == 4.0

    def test_label_count(self):
        assert measure(LabelSet((1, 4, 7))) == 3.0

    def test_union_clipped(self):
        u = IntervalUnion((Interval(0.0, 1.0), Interval(2.0, 4.0)))
        assert measure(u, clip=(0.5, 3.0)) == 1.5

    def test_infinite_and_empty(self):
        assert measure(Interval(-math.inf, math.inf)) == math.inf
        assert measure(Interval(-math.inf, math.inf), clip=(-1.0, 3.0)) == 4.0
        assert measure(EMPTY_SET) == 0.0

    def test_bad_clip(self):
        with pytest.raises(ValueError):
            measure(Interval(0.0, 1.0), clip=(2.0, 1.0))


class TestUnionSets:
    def test_overlap_merges(self):
        assert union_sets([Interval(1, 3), Interval(2, 5)]) == Interval(1.0, 5.0)

    def test_disjoint_keeps_components(self):
        got = union_sets([Interval(0, 1), Interval(2, 3)])
        assert isinstance(got, IntervalUnion) and len(got.parts) == 2
        assert measure(got) == 2.0

    def test_touching_closed_intervals_merge(self):
        assert union_sets([Interval(0, 1), Interval(1, 2)]) == Interval(0.0, 2.0)

    def test_unions_flatten(self):
        u = IntervalUnion((Interval(0, 1), Interval(4, 5)))
        got = union_sets([u, Interval(1, 2)])
        assert got == IntervalUnion((Interval(0.0, 2.0), Interval(4.0, 5.0)))

    def test_label_sets_union(self):
        got = union_sets([LabelSet((0, 2)), LabelSet((1, 2))])
        assert got == LabelSet((0, 1, 2))

    def test_empty_input(self):
        assert union_sets([]) == EMPTY_SET
        assert union_sets([EMPTY_SET, EMPTY_SET]) == EMPTY_SET

    def test_mixed_kinds_rejected(self):
        with pytest.raises(ValueError):
            union_sets([Interval(0, 1), LabelSet((0,))])

    def test_measure_matches_partition_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            k = int(rng.integers(1, 9))
            raw = np.sort(rng.uniform(-10.0, 10.0, size=(k, 2)), axis=1)
            parts = [Interval(a, b) for a, b in raw]
            got = measure(union_sets(parts))
            assert got == pytest.approx(oracle_union_measure_exact(raw), abs=1e-6)
            # coarse uniform-grid rasterization as a second, dumber route
            grid = oracle_interval_measure(raw, clip=(-10.0, 10.0))
            assert got == pytest.approx(grid, abs=5e-4)

    @settings(max_examples=200)
    @given(
        spans=st.lists(st.tuples(finite, finite), min_size=1, max_size=6),
        y=finite,
    )
    def test_union_membership_and_subadditivity(self, spans, y):
        parts = [Interval(min(a, b), max(a, b)) for a, b in spans]
        u = union_sets(parts)
        assert contains(u, y) == any(contains(p, y) for p in parts)
        assert measure(u) <= sum(measure(p) for p in parts) + 1e-9


class TestJson:
    def test_round_trip(self):
        cases = [
            Interval(-1.25, 3.5),
            Interval(-math.inf, math.inf),
            IntervalUnion((Interval(0.0, 1.0), Interval(2.0, math.inf))),
            LabelSet((0, 3)),
            EMPTY_SET,
        ]
        for s in cases:
            blob = json.dumps(set_to_json(s))
            assert "Infinity" not in blob  # infinities travel as strings
            assert set_from_json(json.loads(blob)) == s

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            set_from_json({"kind": "circle"})

    def test_bad_endpoint_string(self):
        with pytest.raises(ValueError):
            set_from_json({"kind": "interval", "lo": "wide", "hi": 1.0})
