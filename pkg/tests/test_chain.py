import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_ergodic_chain
from qcoupling.chain import (
    Distribution,
    TransitionMatrix,
    chain_from_json_dict,
    distance_to_stationary,
    mixing_report,
    mixing_time,
    read_chain_json,
    stationary_distribution,
    total_variation,
    validate_chain,
    write_chain_json,
)
from qcoupling.errors import (
    InvalidInputError,
    NonErgodicError,
    ThresholdNotReachedError,
)


def two_state(a=0.3, b=0.4):
    # columns: Pr(0->.) = (1-a, a), Pr(1->.) = (b, 1-b)
    return TransitionMatrix(("0", "1"), np.array([[1 - a, b], [a, 1 - b]]))


class TestTransitionMatrix:
    def test_rejects_bad_column_sums(self):
        with pytest.raises(InvalidInputError, match="sums to"):
            TransitionMatrix(("a", "b"), np.array([[0.5, 0.5], [0.4, 0.5]]))

    def test_rejects_negative_entries(self):
        with pytest.raises(InvalidInputError):
            TransitionMatrix(("a", "b"), np.array([[1.1, 0.5], [-0.1, 0.5]]))

    def test_rejects_duplicate_labels(self):
        with pytest.raises(InvalidInputError, match="unique"):
            TransitionMatrix(("a", "a"), np.eye(2))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidInputError, match="shape"):
            TransitionMatrix(("a", "b", "c"), np.eye(2))

    def test_tolerates_1e13_colsum_error(self):
        m = np.array([[0.5, 0.5], [0.5, 0.5]]) + np.array([[1e-13, 0], [0, 0]])
        TransitionMatrix(("a", "b"), m)  # within the 1e-12 input tolerance


class TestValidateChain:
    def test_ergodic_chain(self):
        rep = validate_chain(two_state())
        assert rep.valid and rep.details["ergodic"]
        assert rep.details["period"] == 1

    def test_periodic_chain_detected(self):
        swap = TransitionMatrix(("a", "b"), np.array([[0.0, 1.0], [1.0, 0.0]]))
        rep = validate_chain(swap)
        assert not rep.valid
        assert rep.details["irreducible"]
        assert not rep.details["aperiodic"]
        assert rep.details["period"] == 2

    def test_reducible_chain_detected(self):
        rep = validate_chain(TransitionMatrix(("a", "b"), np.eye(2)))
        assert not rep.details["irreducible"]
        assert any("strong components" in issue for issue in rep.issues)


class TestStationary:
    def test_two_state_closed_form(self):
        # pi = (b, a) / (a + b) for the two-state chain
        a, b = 0.3, 0.4
        pi = stationary_distribution(two_state(a, b))
        np.testing.assert_allclose(pi.weights, [b / (a + b), a / (a + b)], atol=1e-12)

    def test_fixed_point_residual(self):
        rng = np.random.Generator(np.random.Philox(3))
        for n in (2, 4, 6):
            P = random_ergodic_chain(n, rng)
            pi = stationary_distribution(P)
            assert np.max(np.abs(P.entries @ pi.weights - pi.weights)) <= 1e-10

    def test_rejects_non_ergodic(self):
        with pytest.raises(NonErgodicError):
            stationary_distribution(TransitionMatrix(("a", "b"), np.eye(2)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=10**6))
    def test_property_stationary_is_fixed(self, n, seed):
        P = random_ergodic_chain(n, np.random.Generator(np.random.Philox(seed)))
        pi = stationary_distribution(P)
        assert np.max(np.abs(P.entries @ pi.weights - pi.weights)) <= 1e-10


class TestDistances:
    def test_total_variation_bounds(self):
        p = Distribution(np.array([1.0, 0.0]))
        q = Distribution(np.array([0.0, 1.0]))
        assert total_variation(p, q) == pytest.approx(1.0)
        assert total_variation(p, p) == 0.0

    def test_distance_decreases(self):
        P = two_state()
        d = [distance_to_stationary(P, m) for m in range(6)]
        assert all(d[i + 1] <= d[i] + 1e-12 for i in range(5))

    def test_mixing_report_monotone_and_threshold(self):
        rep = mixing_report(two_state(), (0.25, 0.01))
        assert rep.t_mix[0.25] <= rep.t_mix[0.01]
        assert np.all(np.diff(rep.d_values) <= 1e-12)

    def test_mixing_time_relation(self):
        P = two_state()
        t_q = mixing_time(P, 0.25)
        t_8 = mixing_time(P, 1 / 8)
        assert t_8 <= int(np.ceil(np.log2(8))) * t_q

    def test_threshold_not_reached(self):
        slow = TransitionMatrix(
            ("a", "b"), np.array([[1 - 1e-6, 1e-6], [1e-6, 1 - 1e-6]])
        )
        with pytest.raises(ThresholdNotReachedError) as exc:
            mixing_report(slow, (0.25,), m_max=10)
        assert exc.value.best is not None


class TestChainJson:
    def test_roundtrip(self, tmp_path):
        P = two_state()
        path = tmp_path / "chain.json"
        write_chain_json(P, path)
        P2 = read_chain_json(path)
        assert P2.labels == P.labels
        np.testing.assert_array_equal(P2.entries, P.entries)

    def test_missing_field_diagnostic(self):
        with pytest.raises(InvalidInputError, match="missing field 'P'"):
            chain_from_json_dict({"labels": ["a"]})

    def test_ragged_rows_diagnostic(self):
        with pytest.raises(InvalidInputError, match="row 1 has length"):
            chain_from_json_dict({"labels": ["a", "b"], "P": [[1, 0], [0]]})

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"labels": [,]}')
        with pytest.raises(InvalidInputError, match="line 1"):
            read_chain_json(path)
