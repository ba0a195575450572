import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import scipy.linalg

from urnkit.model import cyclic, friedman, identity, matching, mean_matrix, mixed_spectrum
from urnkit.spectral import (
    DefectiveMatrixError,
    SpectralError,
    chain_matrix,
    classify,
    decompose,
    decomposition_for,
    expm,
    nilpotent_project,
    perron_frobenius,
    v_of_mu,
)
from conftest import random_balanced_structure

EXAMPLE_MATRICES = [
    mean_matrix(friedman(2, 1)),
    mean_matrix(friedman(3, 1)),
    mean_matrix(friedman(5, 1)),
    mean_matrix(matching(2)),
    mean_matrix(identity(3, 2)),
    mean_matrix(mixed_spectrum()),
    mean_matrix(cyclic(2, 1, 3)),
]


class TestPerronFrobenius:
    def test_friedman_5_1(self):
        lam1, m1, a3 = perron_frobenius(mean_matrix(friedman(5, 1)))
        assert lam1 == pytest.approx(6.0, abs=1e-10)
        assert m1 == 1 and a3

    def test_identity_two_blocks(self):
        lam1, m1, a3 = perron_frobenius(mean_matrix(identity(2, 1)))
        assert lam1 == pytest.approx(1.0, abs=1e-12)
        assert m1 == 1 and a3

    def test_matching_fails_a3(self):
        lam1, m1, a3 = perron_frobenius(mean_matrix(matching(2)))
        assert lam1 == pytest.approx(-1.0, abs=1e-12)
        assert not a3

    def test_column_sum_bound(self):
        for A in EXAMPLE_MATRICES:
            lam1, _, _ = perron_frobenius(A)
            assert lam1 <= A.sum(axis=0).max() + 1e-9

    def test_defective_leading_block(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        lam1, m1, _ = perron_frobenius(A)
        assert lam1 == pytest.approx(1.0)
        assert m1 == 2


class TestDecompose:
    def test_friedman_projectors(self):
        dec = decomposition_for(mean_matrix(friedman(5, 1)))
        P1 = dec.blocks_at(6.0)[0].P
        P2 = dec.blocks_at(4.0)[0].P
        np.testing.assert_allclose(P1.real, [[0.5, 0.5], [0.5, 0.5]], atol=1e-10)
        np.testing.assert_allclose(P2.real, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-10)

    def test_identity_projector_is_identity(self):
        dec = decomposition_for(mean_matrix(identity(3, 2)))
        np.testing.assert_allclose(np.real(dec.P_lambda1()), np.eye(3), atol=1e-12)
        np.testing.assert_allclose(dec.N_A, 0, atol=1e-12)
        assert dec.m1 == 1 and len(dec.leading_blocks) == 3

    def test_projector_identities(self):
        for A in EXAMPLE_MATRICES:
            dec = decomposition_for(A)
            total = sum(b.P for b in dec.blocks)
            np.testing.assert_allclose(total, np.eye(dec.d), atol=1e-8)
            for b1 in dec.blocks:
                np.testing.assert_allclose(b1.P @ b1.P, b1.P, atol=1e-8)
                for b2 in dec.blocks:
                    if b1.index != b2.index:
                        np.testing.assert_allclose(
                            b1.P @ b2.P, np.zeros_like(b1.P), atol=1e-8
                        )

    def test_conjugate_blocks_paired(self):
        dec = decomposition_for(mean_matrix(cyclic(2, 1, 3)))
        for b in dec.blocks:
            partner = dec.blocks[b.conj_index]
            assert partner.lam == pytest.approx(np.conj(b.lam), abs=1e-9)
            np.testing.assert_allclose(np.conj(b.P), partner.P, atol=1e-8)

    def test_defective_raises_without_basis(self):
        with pytest.raises(DefectiveMatrixError):
            decompose(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_defective_with_supplied_basis(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        dec = decompose(A, jordan_basis=[(1.0, np.eye(2))])
        assert dec.blocks[0].m == 2 and dec.m1 == 2
        np.testing.assert_allclose(dec.N_A, [[0, 1], [0, 0]], atol=1e-12)
        # canonical shift: N_A P_J (0,1)' = (1,0)'
        out = nilpotent_project(dec, dec.blocks[0], 1, np.array([0.0, 1.0]))
        np.testing.assert_allclose(out.real, [1, 0], atol=1e-12)

    def test_supplied_basis_must_satisfy_chain(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        # (0,1) is not an eigenvector of A, so this chain is inconsistent
        bad = [(1.0, np.array([[0.0, 1.0], [1.0, 0.0]]))]
        with pytest.raises(SpectralError):
            decompose(A, jordan_basis=bad)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_balanced_leading_eigenvalue(self, seed):
        s = random_balanced_structure(seed)
        lam1, m1, _ = perron_frobenius(mean_matrix(s))
        assert lam1 == pytest.approx(s.S, abs=1e-8)
        assert m1 == 1


class TestClassify:
    @pytest.mark.parametrize(
        "alpha,gamma,subcase",
        [(2, 1, "small-urn"), (3, 1, "critical-urn"), (5, 1, "large-urn-simple")],
    )
    def test_friedman_subcases(self, alpha, gamma, subcase):
        dec = decomposition_for(mean_matrix(friedman(alpha, gamma)))
        assert classify(dec).subcase == subcase

    def test_identity_nonsimple(self):
        dec = decomposition_for(mean_matrix(identity(2, 1)))
        assert classify(dec).subcase == "large-urn-nonsimple"

    def test_matching_has_no_subcase(self):
        dec = decomposition_for(mean_matrix(matching(2)))
        assert classify(dec).subcase is None

    def test_complex_critical(self):
        dec = decomposition_for(mean_matrix(cyclic(2, 1, 3)))
        cls = classify(dec)
        assert cls.subcase == "critical-urn"
        assert len(cls.critical) == 2
        assert all(abs(l.real - 1.5) < 1e-9 for l in cls.critical)


class TestVOfMu:
    def test_identity_returns_mu(self):
        dec = decomposition_for(mean_matrix(identity(2, 1)))
        np.testing.assert_allclose(v_of_mu(dec, [0.3, 0.7]), [0.3, 0.7], atol=1e-12)

    def test_friedman_beta1_v1(self):
        for alpha, gamma in [(2, 1), (5, 1)]:
            dec = decomposition_for(mean_matrix(friedman(alpha, gamma)))
            np.testing.assert_allclose(v_of_mu(dec, [0.3, 0.7]), [0.5, 0.5], atol=1e-10)

    def test_block_diagonal_two_leading_directions(self):
        # identity colour with S=2 alongside a (1,1) two-colour rule: the
        # leading eigenvalue 2 has two blocks and v(mu) sums both projections
        from urnkit.model import ReplacementDistribution, ReplacementStructure

        s = ReplacementStructure(
            a=(1.0, 1.0, 1.0),
            rules=(
                ReplacementDistribution(0, (((2, 0, 0), 1.0),)),
                ReplacementDistribution(1, (((0, 1, 1), 1.0),)),
                ReplacementDistribution(2, (((0, 1, 1), 1.0),)),
            ),
            S=2.0,
        )
        dec = decomposition_for(mean_matrix(s))
        mu = np.array([0.2, 0.5, 0.3])
        expected = np.array([0.2, 0.4, 0.4])
        np.testing.assert_allclose(v_of_mu(dec, mu), expected, atol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_nonzero_for_balanced(self, seed):
        s = random_balanced_structure(seed)
        try:
            dec = decomposition_for(mean_matrix(s))
        except DefectiveMatrixError:
            return  # random structure defective away from the leading block
        mu = np.full(s.d, 1.0 / s.d)
        assert np.linalg.norm(v_of_mu(dec, mu)) > 1e-12


class TestExpm:
    def test_t_zero_is_identity(self):
        for A in EXAMPLE_MATRICES:
            dec = decomposition_for(A)
            np.testing.assert_allclose(expm(dec, 0.0), np.eye(dec.d), atol=1e-12)

    def test_friedman_closed_form(self):
        alpha, gamma, t = 2.0, 1.0, 0.7
        dec = decomposition_for(mean_matrix(friedman(2, 1)))
        expected = math.exp(alpha * t) * np.array(
            [
                [math.cosh(gamma * t), math.sinh(gamma * t)],
                [math.sinh(gamma * t), math.cosh(gamma * t)],
            ]
        )
        np.testing.assert_allclose(expm(dec, t), expected, rtol=1e-12)

    def test_matching_scalar(self):
        dec = decomposition_for(mean_matrix(matching(2)))
        np.testing.assert_allclose(expm(dec, math.log(2)), 0.5 * np.eye(2), rtol=1e-12)

    def test_matches_scaling_and_squaring(self):
        for A in EXAMPLE_MATRICES:
            dec = decomposition_for(A)
            for t in (0.3, 1.7):
                direct = expm(A, t)  # series fallback path
                spectral = expm(dec, t)
                np.testing.assert_allclose(spectral, direct, rtol=1e-9, atol=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(
        st.floats(-10, 10).filter(lambda x: abs(x) > 1e-3),
        st.floats(-10, 10).filter(lambda x: abs(x) > 1e-3),
    )
    def test_semigroup_property(self, s, t):
        for A in EXAMPLE_MATRICES[:4]:
            dec = decomposition_for(A)
            left = expm(dec, s + t)
            right = expm(dec, s) @ expm(dec, t)
            scale = max(1.0, np.abs(left).max())
            assert np.abs(left - right).max() / scale < 1e-8

    def test_defective_block_polynomial_factor(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        dec = decompose(A, jordan_basis=[(1.0, np.eye(2))])
        t = 1.3
        np.testing.assert_allclose(
            expm(dec, t), math.exp(t) * np.array([[1, t], [0, 1]]), rtol=1e-12
        )


class TestNilpotentProject:
    def test_kappa_out_of_range(self):
        dec = decomposition_for(mean_matrix(friedman(2, 1)))
        with pytest.raises(SpectralError, match="kappa"):
            nilpotent_project(dec, dec.blocks[0], 2, np.ones(2))

    def test_size_one_block_is_projection(self):
        dec = decomposition_for(mean_matrix(friedman(2, 1)))
        b = dec.blocks[0]
        x = np.array([1.0, -2.0])
        np.testing.assert_allclose(
            nilpotent_project(dec, b, 1, x), b.P @ x, atol=1e-12
        )

    def test_kernel_of_projector_maps_to_zero(self):
        dec = decomposition_for(mean_matrix(friedman(5, 1)))
        b6 = dec.blocks_at(6.0)[0]
        x = np.array([1.0, -1.0])  # eigenvector of 4, killed by P_6
        np.testing.assert_allclose(nilpotent_project(dec, b6, 1, x), 0, atol=1e-10)


def test_memo_returns_same_object():
    A = mean_matrix(friedman(2, 1))
    assert decomposition_for(A) is decomposition_for(A.copy())


def test_transitional_composition_decay_exponent():
    """The off-leading part of the transitional colour composition decays
    polynomially with exponent lambda2/S (fit over t in [1, 1e3])."""
    structure = friedman(5, 1)
    dec = decomposition_for(mean_matrix(structure))
    S, beta1 = 6.0, 1.0
    mu = np.array([0.3, 0.7])
    PS = np.real(dec.P_lambda1())
    ts = np.geomspace(1.0, 1e3, 25)
    norms = []
    for t in ts:
        E = expm(dec, math.log1p(S * t / beta1) / S)
        norms.append(np.linalg.norm((np.eye(2) - PS) @ E @ mu))
    slope = np.polyfit(np.log(1 + ts[-12:]), np.log(norms[-12:]), 1)[0]
    assert abs(slope - 4.0 / 6.0) < 0.05
