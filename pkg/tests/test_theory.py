import numpy as np
import pytest

from bidomain_bddc import ionic
from bidomain_bddc.assembly import State
from bidomain_bddc.bddc import BddcPreconditioner
from bidomain_bddc.geometry import build_conductivity, build_fibers
from bidomain_bddc.partition import decompose
from bidomain_bddc.solvers import LinearStack, StimulusProtocol
from bidomain_bddc.theory import (check_envelope, compute_constants, envelope_diagnostic, estimate_c_C,
                                  log_exponent, write_diagnostic_csv)

from conftest import make_disc
from test_bddc import spd_setup

P = ionic.DEFAULT


def rest_constants(tau, elems=(4, 4, 4), grid=(2, 2, 2), scaling="rho"):
    disc = make_disc(*elems)
    dec = decompose(disc.mesh, *grid)
    return compute_constants(State.rest(disc.n_nodes), dec, disc.tensors, tau, scaling)


def test_k2_rest_closed_form():
    tau = 0.05
    k = rest_constants(tau)
    ref = 0.25 * tau**2 * (P.eta2 / P.v_p) ** 2 / ((P.capacitance + tau * P.G) * (1 + P.eta2 * tau))
    assert k.C_Iw == 0.0
    assert k.C_Rv == pytest.approx(P.eta2 / P.v_p)
    assert k.K2 == pytest.approx(ref, rel=1e-12)


def test_k2_vanishes_with_step():
    values = [rest_constants(t).K2 for t in (1e-1, 1e-2, 1e-3)]
    assert values[0] > values[1] > values[2]
    assert values[2] / values[0] == pytest.approx(1e-4, rel=0.15)


@pytest.mark.parametrize("scaling", ["rho", "deluxe"])
def test_phi_direct_formula(scaling):
    tau = 0.05
    k = rest_constants(tau, scaling=scaling)
    n = log_exponent(scaling)
    first = np.max((tau * k.sigma_M + k.H**2 * (P.capacitance + tau * k.K_MI)) / (tau * k.sigma_m))
    second = (1 - tau * k.K_MR) / (1 - tau * k.K_mR)
    assert k.Phi == pytest.approx((first + second) * (1 + np.log(k.Hh)) ** n, rel=1e-14)


def test_phi_grows_with_subdomain_size():
    # fixed mesh spacing, subdomains twice as wide
    small = rest_constants(0.05, elems=(4, 4, 4), grid=(2, 2, 2))
    big = rest_constants(0.05, elems=(8, 8, 8), grid=(2, 2, 2))
    assert big.Hh == 2 * small.Hh
    log_ratio = ((1 + np.log(big.Hh)) / (1 + np.log(small.Hh))) ** 2
    assert big.log_factor / small.log_factor == pytest.approx(log_ratio)
    assert big.Phi > small.Phi * log_ratio


def test_theoretical_constants_uninformative_at_desk_scale():
    k = rest_constants(0.05)
    assert k.K2 < 1e-10
    assert not k.informative


def test_estimate_identity():
    c, C, failures = estimate_c_C(lambda u: u, lambda u, v: float(u @ v), 20, samples=100, rng=0)
    assert c == pytest.approx(1.0, abs=1e-12) and C == pytest.approx(1.0, abs=1e-12)
    assert failures == 0


def test_estimate_spd_bddc_lower_bound():
    part, locals_, S = spd_setup()
    M = BddcPreconditioner(part, locals_, "deluxe", deflate=False)
    G = S.dense()

    def inner(u, v):
        return float(v @ (G @ u))

    c, C, _ = estimate_c_C(lambda u: M(S(u)), inner, S.n, samples=100, rng=3)
    assert c >= 1 - 1e-8
    assert C >= c


def test_envelope_first_ratio_and_degenerate_case():
    rep = check_envelope([1.0, 0.5, 0.2], 0.0, 2.0)
    assert not rep.informative
    np.testing.assert_array_equal(rep.bound, 1.0)
    assert rep.rate == 1.0 and rep.ok
    rep = check_envelope([1.0, 0.9], 1.0, 2.0)
    assert rep.bound[0] == 1.0
    assert rep.bound[1] == pytest.approx(np.sqrt(0.5))
    assert rep.violations.tolist() == [1]


def test_envelope_on_small_slab(tmp_path):
    disc = make_disc(4, 4, 4)
    lin = LinearStack(disc, decompose(disc.mesh, 2, 2, 2))
    rest = State.rest(disc.n_nodes)
    iapp = StimulusProtocol.slab_corner(radius=0.03).currents(disc, 0.0)
    rhs = -disc.residual(rest, rest, 0.05, *iapp)
    rep = envelope_diagnostic(lin, rest, 0.05, rhs, samples=100)
    assert rep.ratios[0] == 1.0
    assert rep.ok and rep.informative
    assert 0 < 1 - rep.c_emp**2 / rep.C_emp < 1
    assert rep.z_form_max <= 1e-12
    path = write_diagnostic_csv(rep, tmp_path / "diag.csv") or tmp_path / "diag.csv"
    lines = path.read_text().splitlines()
    assert lines[0] == "m,ratio,bound" and len(lines) == len(rep.ratios) + 1
