import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhgstat.errors import InvalidState, TruncationOverflow, ZeroIntensity
from hhgstat.fock import (
    DEFAULT_CUTOFF,
    FockVector,
    ModeLabel,
    TwoModeState,
    apply_ladder,
    coherent_state,
    fock_state,
    g2_cross,
    g2_single,
    mean_photon,
    photon_number_distribution,
    product_coherent_state,
    required_cutoff,
    single_mode_squeezed_vacuum,
    tail_mass,
    two_mode_squeezed_vacuum,
    vacuum,
)

H3, H5 = ModeLabel.H3, ModeLabel.H5


def pmf_moments(pmf):
    """Independent Fock-sum oracle: <n> and <n(n-1)> from a marginal pmf."""
    n = np.arange(len(pmf))
    return float(np.sum(n * pmf)), float(np.sum(n * (n - 1) * pmf))


def test_annihilate_vacuum_is_zero():
    out = apply_ladder(vacuum(4), H3, "annihilate")
    assert isinstance(out, FockVector) and not isinstance(out, TwoModeState)
    assert out.norm_squared == 0.0


def test_create_on_vacuum():
    out = apply_ladder(vacuum(4), H3, "create")
    expected = np.zeros((5, 5))
    expected[1, 0] = 1.0
    np.testing.assert_array_equal(out.amplitudes, expected)


def test_annihilate_two_photons():
    out = apply_ladder(fock_state(2, 0, 4), H3, "annihilate")
    assert out.amplitudes[1, 0] == pytest.approx(np.sqrt(2))
    assert out.norm_squared == pytest.approx(2.0)


def test_create_past_cutoff_overflows():
    with pytest.raises(TruncationOverflow):
        apply_ladder(fock_state(0, 3, 3), H5, "create")


@pytest.mark.parametrize("n3,n5", [(0, 0), (1, 0), (3, 2), (5, 6)])
@pytest.mark.parametrize("mode", [H3, H5])
def test_commutator_is_identity_below_cutoff(n3, n5, mode):
    psi = fock_state(n3, n5, 7)
    a_adag = apply_ladder(apply_ladder(psi, mode, "create"), mode, "annihilate")
    adag_a = apply_ladder(apply_ladder(psi, mode, "annihilate"), mode, "create")
    np.testing.assert_allclose(a_adag.amplitudes - adag_a.amplitudes, psi.amplitudes, atol=1e-14)


def test_mean_photon_examples():
    assert mean_photon(vacuum(), H3) == 0.0
    assert mean_photon(fock_state(1, 0), H3) == pytest.approx(1.0)
    psi = two_mode_squeezed_vacuum(0.5, 30)
    for mode in (H3, H5):
        assert mean_photon(psi, mode) == pytest.approx(np.sinh(0.5) ** 2, abs=1e-12)
        assert mean_photon(psi, mode) == pytest.approx(0.27154, abs=1e-5)


def test_mean_photon_rejects_unnormalized():
    with pytest.raises(InvalidState):
        mean_photon(FockVector(2 * vacuum(3).amplitudes), H3)
    with pytest.raises(InvalidState):
        TwoModeState(np.ones((2, 2)))


def test_g2_single_coherent():
    psi = coherent_state(1.2, H3, (required_cutoff("coherent", 1.2), 2))
    assert g2_single(psi, H3) == pytest.approx(1.0, abs=1e-8)


def test_g2_single_tmsv_marginal_is_thermal():
    psi = two_mode_squeezed_vacuum(0.5, 40)
    assert g2_single(psi, H3) == pytest.approx(2.0, abs=1e-9)
    assert g2_single(psi, H5) == pytest.approx(2.0, abs=1e-9)


def test_g2_single_smsv_against_fock_sum():
    psi = single_mode_squeezed_vacuum(0.5, H3, (60, 1))
    n, nn = pmf_moments(photon_number_distribution(psi, H3))
    oracle = nn / n**2
    closed = 3 + 1 / np.sinh(0.5) ** 2
    assert oracle == pytest.approx(closed, abs=1e-9)
    assert g2_single(psi, H3) == pytest.approx(closed, abs=1e-9)
    assert closed == pytest.approx(6.6824, abs=1e-3)


def test_g2_single_vacuum_raises():
    with pytest.raises(ZeroIntensity):
        g2_single(vacuum(), H5)


def test_g2_cross_examples():
    assert g2_cross(product_coherent_state(0.8, 1.1, 30)) == pytest.approx(1.0, abs=1e-10)
    assert g2_cross(fock_state(1, 1)) == pytest.approx(1.0)
    psi = two_mode_squeezed_vacuum(0.5, 40)
    # Fock-sum oracle: <n3 n5> / (<n3><n5>) with n3 = n5 on the diagonal
    p = np.abs(np.diag(psi.amplitudes)) ** 2
    n = np.arange(len(p))
    oracle = np.sum(n * n * p) / np.sum(n * p) ** 2
    assert g2_cross(psi) == pytest.approx(oracle, abs=1e-10)
    assert g2_cross(psi) == pytest.approx(2 + 1 / np.sinh(0.5) ** 2, abs=1e-9)


def test_g2_cross_needs_both_modes_lit():
    with pytest.raises(ZeroIntensity):
        g2_cross(coherent_state(1.0, H3, 20))


def test_tmsv_structure():
    assert two_mode_squeezed_vacuum(0.0, 5).amplitudes[0, 0] == 1.0
    psi = two_mode_squeezed_vacuum(0.5, 30)
    p1 = abs(psi.amplitudes[1, 1]) ** 2
    assert p1 == pytest.approx(np.tanh(0.5) ** 2 / np.cosh(0.5) ** 2, abs=1e-12)
    off = psi.amplitudes - np.diag(np.diag(psi.amplitudes))
    assert np.all(off == 0)


def test_tmsv_truncation_check():
    with pytest.raises(TruncationOverflow):
        two_mode_squeezed_vacuum(1.0, 20)


def test_smsv_parity_and_vacuum_limit():
    assert single_mode_squeezed_vacuum(0.0, H3, 6).amplitudes[0, 0] == 1.0
    pmf = photon_number_distribution(single_mode_squeezed_vacuum(0.7, H3, 80), H3)
    assert np.all(pmf[1::2] == 0)


def test_coherent_pmf():
    pmf = photon_number_distribution(coherent_state(1.0, H5, 30), H5)
    assert pmf[0] == pytest.approx(np.exp(-1), abs=1e-12)
    assert pmf[0] == pytest.approx(0.36788, abs=1e-5)


def test_photon_number_distribution_examples():
    np.testing.assert_allclose(photon_number_distribution(vacuum(3), H3), [1, 0, 0, 0])
    np.testing.assert_allclose(photon_number_distribution(fock_state(1, 0, 3), H3), [0, 1, 0, 0])
    pmf = photon_number_distribution(two_mode_squeezed_vacuum(0.5, 30), H3)
    assert pmf[0] == pytest.approx(1 / np.cosh(0.5) ** 2, abs=1e-12)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-10)


def test_tail_mass_reportable():
    psi = two_mode_squeezed_vacuum(0.5, 30)
    assert tail_mass(psi, H3) < 1e-10
    assert tail_mass(fock_state(3, 0, 3), H3) == 1.0


@settings(max_examples=40, deadline=None)
@given(r=st.floats(0.0, 1.0))
def test_constructors_are_normalized(r):
    for psi in (two_mode_squeezed_vacuum(r, required_cutoff("tmsv", r)),
                single_mode_squeezed_vacuum(r, H5, (2, required_cutoff("smsv", r)))):
        assert psi.norm_squared == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(r=st.floats(0.0, 1.2))
def test_tmsv_marginals_identical(r):
    psi = two_mode_squeezed_vacuum(r, required_cutoff("tmsv", r))
    np.testing.assert_allclose(photon_number_distribution(psi, H3),
                               photon_number_distribution(psi, H5), atol=1e-12)


@pytest.mark.parametrize("r", [0.2, 0.6, 1.0])
def test_g2_cutoff_convergence_squeezed(r):
    c = max(required_cutoff("smsv", r), DEFAULT_CUTOFF)
    a = single_mode_squeezed_vacuum(r, H3, (c, 1))
    b = single_mode_squeezed_vacuum(r, H3, (2 * c, 1))
    assert abs(g2_single(a, H3) - g2_single(b, H3)) < 1e-6
    c = max(required_cutoff("tmsv", r), DEFAULT_CUTOFF)
    a, b = two_mode_squeezed_vacuum(r, c), two_mode_squeezed_vacuum(r, 2 * c)
    assert abs(g2_cross(a) - g2_cross(b)) < 1e-6
    assert abs(g2_single(a, H5) - g2_single(b, H5)) < 1e-6


@pytest.mark.parametrize("alpha", [0.3, 1.0, 2.0])
def test_g2_cutoff_convergence_coherent(alpha):
    c = max(required_cutoff("coherent", alpha), DEFAULT_CUTOFF)
    a = product_coherent_state(alpha, alpha / 2, c)
    b = product_coherent_state(alpha, alpha / 2, 2 * c)
    assert abs(g2_cross(a) - g2_cross(b)) < 1e-6
    assert abs(g2_single(a, H3) - g2_single(b, H3)) < 1e-6


def test_csi_equality_for_product_coherent():
    psi = product_coherent_state(1.3, 0.7, 40)
    r = g2_cross(psi) ** 2 / (g2_single(psi, H3) * g2_single(psi, H5))
    assert r == pytest.approx(1.0, abs=1e-9)
