import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_ergodic_chain
from qcoupling.coupling import (
    CouplingMatrix,
    RandomMappingRep,
    check_tail_submultiplicativity,
    coalescence_tail_exact,
    coalescence_tail_mc,
    coupling_from_json_dict,
    coupling_time,
    grand_coupling_matrix,
    independent_coupling,
    mixing_vs_coalescence_bound,
    pair_index,
    rmr_to_json_dict,
    coupling_to_json_dict,
    validate_coupling,
)
from qcoupling.errors import (
    GuardExceededError,
    InvalidInputError,
    ThresholdNotReachedError,
)


class TestValidateCoupling:
    def test_independent_coupling_satisfies_all_conditions(self):
        rng = np.random.Generator(np.random.Philox(11))
        for n in (2, 3, 5):
            C = independent_coupling(random_ergodic_chain(n, rng))
            rep = validate_coupling(C)
            assert rep.valid, rep.issues

    def test_grand_coupling_satisfies_all_conditions(self, hypercube3):
        rep = validate_coupling(hypercube3.coupling())
        assert rep.valid, rep.issues

    def test_broken_marginal_reported(self, hypercube2):
        C = hypercube2.coupling()
        E = C.entries.copy()
        n = C.n
        # move weight within one off-diagonal start column: breaks condition 1
        col = pair_index(0, 1, n)
        src = np.nonzero(E[:, col])[0][0]
        dst = (src + 1) % (n * n)
        E[src, col] -= 0.05
        E[dst, col] += 0.05
        rep = validate_coupling(CouplingMatrix(base=C.base, entries=E))
        assert not rep.valid
        assert any("condition" in issue for issue in rep.issues)

    def test_diagonal_leak_reported(self, hypercube2):
        C = hypercube2.coupling()
        E = C.as_4tensor().copy()
        E[0, 1, 2, 2] += 0.1  # diagonal start leaking to an off-diagonal pair
        E[0, 0, 2, 2] -= 0.1
        rep = validate_coupling(
            CouplingMatrix(base=C.base, entries=E.reshape(C.n**2, C.n**2))
        )
        assert not rep.details["coalescence"]

    def test_asymmetry_reported(self, hypercube2):
        C = hypercube2.coupling()
        E = C.as_4tensor().copy()
        x, y = 0, 1
        # pick an off-diagonal successor pair: perturbing a diagonal one
        # (xp == yp) would cancel out and leave the matrix symmetric
        xps, yps = np.nonzero(E[:, :, x, y])
        xp, yp = next((a, b) for a, b in zip(xps, yps) if a != b)
        E[yp, xp, y, x] -= 0.01
        E[xp, yp, y, x] += 0.01
        rep = validate_coupling(
            CouplingMatrix(base=C.base, entries=E.reshape(C.n**2, C.n**2))
        )
        assert not rep.details["symmetry"]


class TestRandomMappingRep:
    def test_marginal_mismatch_rejected(self, hypercube2):
        rmr = hypercube2.rmr
        bad_table = rmr.table.copy()
        bad_table[0, 0] = (bad_table[0, 0] + 1) % rmr.n
        with pytest.raises(InvalidInputError, match="does not reproduce"):
            RandomMappingRep(
                base=rmr.base, r_labels=rmr.r_labels, probs=rmr.probs, table=bad_table
            )

    def test_out_of_range_successor_rejected(self):
        with pytest.raises(InvalidInputError, match="out-of-range"):
            RandomMappingRep(
                base=None, r_labels=("r",), probs=np.array([1.0]),
                table=np.array([[5]]),
            )

    def test_base_free_mapping_allowed(self):
        rmr = RandomMappingRep(
            base=None, r_labels=("a", "b"), probs=np.array([0.5, 0.5]),
            table=np.array([[0, 1], [0, 1]]),
        )
        assert rmr.n == 2

    def test_grand_coupling_requires_base(self):
        rmr = RandomMappingRep(
            base=None, r_labels=("a",), probs=np.array([1.0]),
            table=np.array([[0], [0]]),
        )
        with pytest.raises(InvalidInputError, match="base chain"):
            grand_coupling_matrix(rmr)


class TestExactTails:
    def test_hypercube2_closed_form(self, hypercube2):
        # worst-pair tail is exactly 2^(1-m) for the bit-refresh coupling
        report = coalescence_tail_exact(hypercube2.coupling(), m_max=10)
        for m in range(1, 11):
            assert report.tail_at(m) == pytest.approx(2.0 ** (1 - m), abs=1e-12)
        assert report.t_couple == 3

    def test_tails_monotone_per_pair(self, hypercube3):
        report = coalescence_tail_exact(hypercube3.coupling(), m_max=8)
        assert np.all(np.diff(report.per_pair, axis=0) <= 1e-12)

    def test_guard(self, hypercube3):
        with pytest.raises(GuardExceededError):
            coalescence_tail_exact(hypercube3.coupling(), m_max=3, guard_n=4)

    def test_expected_time_reported(self, hypercube2):
        report = coalescence_tail_exact(
            hypercube2.coupling(), m_max=5, expected_time=True
        )
        # E[tau] = sum_m 2^(1-m) for the worst pair = 1 + 2 = 3... the exact
        # series: tails 1,1,1/2,1/4,... so E = 1 + 1 + 1/2 + ... = 3
        assert report.expected_time_max == pytest.approx(3.0, abs=1e-9)
        assert report.expected_time_truncation is not None

    def test_mixing_bound_reported(self, hypercube2):
        report = coalescence_tail_exact(
            hypercube2.coupling(), m_max=5, expected_time=True
        )
        out = mixing_vs_coalescence_bound(hypercube2.chain, report)
        assert out["holds"]

    @settings(max_examples=10, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_property_independent_coupling_tails_decay(self, seed):
        P = random_ergodic_chain(3, np.random.Generator(np.random.Philox(seed)))
        report = coalescence_tail_exact(independent_coupling(P), m_max=12)
        assert report.tail_max[-1] < report.tail_max[0] or report.tail_max[0] == 0


class TestSubmultiplicativity:
    def test_hypercube3_grid(self, hypercube3):
        C = hypercube3.coupling()
        for m in (1, 3, 5):
            for l in (2, 4):
                assert check_tail_submultiplicativity(C, m, l).passed

    def test_diagonal_block_matches_chain_power(self, hypercube2):
        res = check_tail_submultiplicativity(hypercube2.coupling(), 4, 2)
        assert res.details["diag_block_error"] <= 1e-12


class TestMonteCarlo:
    def test_matches_exact_within_ci(self, hypercube2):
        exact = coalescence_tail_exact(hypercube2.coupling(), m_max=8)
        mc = coalescence_tail_mc(
            hypercube2.rmr, [(0, 3)], list(range(9)), samples=20_000, seed=5
        )
        for i, m in enumerate(mc.m_values):
            assert abs(mc.tail_max[i] - exact.tail_at(int(m))) <= 3 * mc.ci_half[i]

    def test_worker_count_invariance(self, hypercube3):
        runs = [
            coalescence_tail_mc(
                hypercube3.rmr, [(0, 7)], [5, 10, 20], samples=5_000, seed=9,
                workers=w,
            )
            for w in (1, 2, 4)
        ]
        for other in runs[1:]:
            assert runs[0].to_csv() == other.to_csv()

    def test_seed_changes_result(self, hypercube3):
        a = coalescence_tail_mc(hypercube3.rmr, [(0, 7)], [5], samples=2_000, seed=1)
        b = coalescence_tail_mc(hypercube3.rmr, [(0, 7)], [5], samples=2_000, seed=2)
        assert not np.array_equal(a.per_pair, b.per_pair)

    def test_coupling_time_unresolved(self, hypercube3):
        mc = coalescence_tail_mc(
            hypercube3.rmr, [(0, 7)], [0, 1], samples=1_000, seed=3
        )
        with pytest.raises(ThresholdNotReachedError):
            coupling_time(mc)

    def test_numpy_backend_matches_numba(self, hypercube3):
        kw = dict(samples=4_000, seed=17)
        a = coalescence_tail_mc(hypercube3.rmr, [(0, 7)], [4, 8], backend="numpy", **kw)
        try:
            b = coalescence_tail_mc(
                hypercube3.rmr, [(0, 7)], [4, 8], backend="numba", **kw
            )
        except RuntimeError:
            pytest.skip("numba backend disabled")
        np.testing.assert_array_equal(a.per_pair, b.per_pair)


class TestCouplingJson:
    def test_dense_roundtrip(self, hypercube2):
        C = hypercube2.coupling()
        C2 = coupling_from_json_dict(coupling_to_json_dict(C))
        np.testing.assert_allclose(C2.entries, C.entries, atol=1e-15)
        assert validate_coupling(C2).valid

    def test_rmr_roundtrip(self, hypercube2):
        rmr = hypercube2.rmr
        rmr2 = coupling_from_json_dict(rmr_to_json_dict(rmr))
        np.testing.assert_array_equal(rmr2.table, rmr.table)
        np.testing.assert_allclose(rmr2.probs, rmr.probs, atol=1e-15)

    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError, match="unknown coupling kind"):
            coupling_from_json_dict({"kind": "sparse"})

    def test_non_square_side(self):
        with pytest.raises(InvalidInputError, match="perfect square"):
            coupling_from_json_dict({"kind": "dense", "C": np.eye(3).tolist()})
