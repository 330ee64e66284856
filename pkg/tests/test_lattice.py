"""The enumeration oracle is the ground truth here: tests first pin the
oracle itself on hand-checkable lattices, then hold the DP passes to it."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transtok.lattice import (
    NEG_INF,
    AlignmentPath,
    ProbLattice,
    Step,
    backward,
    brute_force_likelihood,
    enumerate_alignments,
    forward,
    forward_backward,
    logaddexp,
    logsumexp,
    occupancy,
    path_log_prob,
    viterbi_alignment,
)


def uniform_lattice(U, T, blank=0.5, emit=0.1):
    return ProbLattice(
        log_blank=np.full((U, T + 1), math.log(blank)),
        log_emit=np.full((U, T), math.log(emit)),
    )


def random_normalized_lattice(rng, U, T):
    """Arc probabilities drawn so blank + emit <= 1 at every node, i.e. a
    proper sub-distribution per node."""
    blank = rng.uniform(0.05, 0.9, size=(U, T + 1))
    emit = rng.uniform(0.05, 0.9, size=(U, T))
    scale = np.maximum(1.0, blank[:, :T] + emit + 0.01)
    emit = emit / scale
    blank = blank.copy()
    blank[:, :T] = blank[:, :T] / scale
    return ProbLattice(log_blank=np.log(blank), log_emit=np.log(emit))


class TestScalarHelpers:
    def test_logaddexp_basic(self):
        assert logaddexp(math.log(0.25), math.log(0.75)) == pytest.approx(0.0)

    def test_logaddexp_neg_inf(self):
        assert logaddexp(NEG_INF, -1.5) == -1.5
        assert logaddexp(-1.5, NEG_INF) == -1.5
        assert logaddexp(NEG_INF, NEG_INF) == NEG_INF

    def test_logsumexp_empty_is_neg_inf(self):
        assert logsumexp([]) == NEG_INF
        assert logsumexp([NEG_INF, NEG_INF]) == NEG_INF


class TestEnumerationOracle:
    def test_single_blank_path(self):
        paths = enumerate_alignments(1, 0)
        assert len(paths) == 1
        assert paths[0].steps == [Step.BLANK]
        assert paths[0].nodes == [(1, 0)]

    def test_counts_match_binomial(self):
        # C(U-1+T, T): three paths for 2x2, six for 3x2.
        assert len(enumerate_alignments(2, 2)) == 3
        assert len(enumerate_alignments(3, 2)) == 6
        assert len(enumerate_alignments(4, 3)) == math.comb(6, 3)

    def test_paths_are_valid_and_lexicographic(self):
        paths = enumerate_alignments(3, 2)
        for p in paths:
            p.validate()
            assert p.emit_count() == 2
            assert p.blank_count() == 3
        keys = [tuple(s.value for s in p.steps) for p in paths]
        assert keys == sorted(keys)

    def test_deterministic_order(self):
        a = enumerate_alignments(3, 3)
        b = enumerate_alignments(3, 3)
        assert [p.steps for p in a] == [p.steps for p in b]

    def test_guard_on_large_lattice(self):
        with pytest.raises(ValueError):
            enumerate_alignments(20, 10)

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            enumerate_alignments(0, 2)
        with pytest.raises(ValueError):
            enumerate_alignments(1, -1)


class TestBruteForce:
    def test_single_path_product(self):
        # U=1, T=1: one path, emit then terminate: 0.2 * 0.5 = 0.1.
        lat = ProbLattice(
            log_blank=np.log([[0.5, 0.5]]),
            log_emit=np.log([[0.2]]),
        )
        assert brute_force_likelihood(lat) == pytest.approx(math.log(0.1), abs=1e-12)

    def test_zero_arc_kills_path(self):
        lat = ProbLattice(
            log_blank=np.array([[math.log(0.5), NEG_INF]]),
            log_emit=np.log([[0.2]]),
        )
        assert brute_force_likelihood(lat) == NEG_INF


class TestForward:
    def test_trivial_lattice(self):
        lat = ProbLattice(log_blank=np.log([[0.3]]), log_emit=np.zeros((1, 0)))
        ab = forward(lat)
        assert ab.log_likelihood == pytest.approx(math.log(0.3), abs=1e-12)
        assert ab.alpha[0, 0] == 0.0

    def test_uniform_2x2_frozen_value(self):
        # Three paths, each 0.5^2 * 0.1^2, so likelihood 3 * 0.0075/3 ... =
        # 0.0075 and log = -4.892852.  Value frozen from the enumeration
        # oracle and checked against it live.
        lat = uniform_lattice(2, 2)
        ab = forward(lat)
        assert ab.log_likelihood == pytest.approx(math.log(0.0075), abs=1e-12)
        assert ab.log_likelihood == pytest.approx(-4.892852, abs=1e-6)
        assert ab.log_likelihood == pytest.approx(brute_force_likelihood(lat), abs=1e-12)

    def test_matches_oracle_on_random_lattices(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            U = int(rng.integers(1, 5))
            T = int(rng.integers(0, 5))
            lat = random_normalized_lattice(rng, U, T)
            ab = forward(lat)
            assert ab.log_likelihood == pytest.approx(
                brute_force_likelihood(lat), abs=1e-9
            )

    def test_rejects_malformed_tables(self):
        with pytest.raises(ValueError):
            forward(ProbLattice(log_blank=np.zeros((2, 3)), log_emit=np.zeros((2, 1))))
        with pytest.raises(ValueError):
            forward(ProbLattice(log_blank=np.zeros((0, 1)), log_emit=np.zeros((0, 0))))

    def test_rejects_nan(self):
        lb = np.log([[0.5, 0.5]])
        lb[0, 0] = math.nan
        with pytest.raises(ValueError):
            forward(ProbLattice(log_blank=lb, log_emit=np.log([[0.2]])))


class TestBackward:
    def test_trivial_duality(self):
        lat = ProbLattice(log_blank=np.log([[0.3]]), log_emit=np.zeros((1, 0)))
        assert backward(lat).log_likelihood == pytest.approx(math.log(0.3), abs=1e-12)

    def test_duality_uniform(self):
        lat = uniform_lattice(2, 2)
        assert backward(lat).log_likelihood == pytest.approx(
            forward(lat).log_likelihood, abs=1e-9
        )

    def test_duality_random(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            U = int(rng.integers(1, 5))
            T = int(rng.integers(0, 5))
            lat = random_normalized_lattice(rng, U, T)
            f, b = forward(lat), backward(lat)
            assert b.log_likelihood == pytest.approx(f.log_likelihood, abs=1e-9)
            assert b.beta[lat.U - 1, lat.T] == pytest.approx(
                lat.log_blank[lat.U - 1, lat.T], abs=1e-12
            )


class TestOccupancy:
    def test_single_node_all_mass_on_terminator(self):
        lat = ProbLattice(log_blank=np.log([[0.3]]), log_emit=np.zeros((1, 0)))
        occ = occupancy(lat, forward_backward(lat))
        assert occ.gamma[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert occ.xi_blank[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_antidiagonal_sums_are_one(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            U = int(rng.integers(1, 5))
            T = int(rng.integers(0, 5))
            lat = random_normalized_lattice(rng, U, T)
            occ = occupancy(lat, forward_backward(lat))
            for c in range(U + T):
                total = 0.0
                for u in range(U):
                    t = c - u
                    if 0 <= t <= T:
                        total += occ.gamma[u, t]
                assert total == pytest.approx(1.0, abs=1e-9), (U, T, c)

    def test_gamma_is_sum_of_outgoing_arcs(self):
        rng = np.random.default_rng(24)
        lat = random_normalized_lattice(rng, 3, 4)
        occ = occupancy(lat, forward_backward(lat))
        expected = occ.xi_blank.copy()
        expected[:, :4] += occ.xi_emit
        np.testing.assert_allclose(occ.gamma, expected, atol=1e-12)
        assert np.all(occ.gamma >= 0)
        assert np.all(occ.gamma <= 1 + 1e-9)

    def test_zero_probability_arc_has_zero_occupancy(self):
        lat = ProbLattice(
            log_blank=np.array([[math.log(0.5), math.log(0.4)], [NEG_INF, math.log(0.5)]]),
            log_emit=np.log([[0.3], [0.4]]),
        )
        occ = occupancy(lat, forward_backward(lat))
        assert occ.xi_blank[1, 0] == 0.0

    def test_requires_both_tables_and_finite_likelihood(self):
        lat = uniform_lattice(2, 2)
        with pytest.raises(ValueError):
            occupancy(lat, forward(lat))
        dead = ProbLattice(
            log_blank=np.array([[NEG_INF, NEG_INF]]), log_emit=np.array([[NEG_INF]])
        )
        with pytest.raises(ValueError):
            occupancy(dead, forward_backward(dead))


class TestViterbi:
    def test_dominant_path_wins(self):
        # Emitting is cheap only on the second row, so the best path blanks
        # down first even though ties would prefer emit.
        lat = ProbLattice(
            log_blank=np.log(np.full((2, 2), 0.5)),
            log_emit=np.log(np.array([[0.01], [0.9]])),
        )
        path, lp = viterbi_alignment(lat)
        path.validate()
        assert lp == pytest.approx(math.log(0.5 * 0.9 * 0.5), abs=1e-12)
        assert path.steps[0] is Step.BLANK

    def test_uniform_tie_prefers_emit(self):
        path, _ = viterbi_alignment(uniform_lattice(2, 2))
        assert [s.value for s in path.steps] == ["E", "E", "B", "B"]

    def test_matches_enumeration_max(self):
        rng = np.random.default_rng(25)
        for _ in range(40):
            U = int(rng.integers(1, 5))
            T = int(rng.integers(0, 5))
            lat = random_normalized_lattice(rng, U, T)
            path, lp = viterbi_alignment(lat)
            path.validate()
            best = max(
                path_log_prob(lat, p) for p in enumerate_alignments(U, T)
            )
            assert lp == pytest.approx(best, abs=1e-9)
            assert path_log_prob(lat, path) == pytest.approx(lp, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    U=st.integers(1, 4),
    T=st.integers(0, 4),
)
def test_forward_equals_oracle_property(seed, U, T):
    rng = np.random.default_rng(seed)
    lat = random_normalized_lattice(rng, U, T)
    assert forward(lat).log_likelihood == pytest.approx(
        brute_force_likelihood(lat), abs=1e-9
    )


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    U=st.integers(1, 4),
    T=st.integers(0, 4),
)
def test_path_structure_property(seed, U, T):
    paths = enumerate_alignments(U, T)
    assert len(paths) == math.comb(U - 1 + T, T)
    for p in paths:
        p.validate()
        assert p.emit_count() == T
        assert p.blank_count() == U
