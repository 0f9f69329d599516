import math
from math import factorial

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy.physics.quantum.cg import CG

from perimesh import transitions as tr
from perimesh.coordinates import MassSet, PerimetricPoint, quad_kernel
from perimesh.eigensolver import solve_band
from perimesh.hamiltonian import band_labels
from perimesh.laguerre_mesh import MeshSpec
from perimesh.transitions import (PhysicalConstants, angular_factor, clebsch_gordan,
                                  forbidden_reason, lifetime, oscillator_strength,
                                  perimetric_element, printed_factor, reduced_strength,
                                  transition, transition_probability)

# -- Clebsch-Gordan -----------------------------------------------------------------


def sympy_cg(j1, j2, j3, m1, m2, m3):
    r = sympy.Rational
    return float(CG(r(j1), r(m1), r(j2), r(m2), r(j3), r(m3)).doit())


def test_cg_against_sympy_small_grid():
    vals = [0, 0.5, 1, 1.5, 2, 2.5, 3]
    for j1 in vals:
        for j2 in vals:
            for j3 in vals:
                for m1 in np.arange(-j1, j1 + 1):
                    for m2 in np.arange(-j2, j2 + 1):
                        m3 = m1 + m2
                        if abs(m3) > j3:
                            continue
                        ref = sympy_cg(j1, j2, j3, m1, m2, m3) if (j1 + j2 + j3) % 1 == 0 else 0.0
                        assert clebsch_gordan(j1, j2, j3, m1, m2, m3) == pytest.approx(ref, abs=1e-15)


@settings(max_examples=80, deadline=None)
@given(Li=st.integers(0, 42), dL=st.sampled_from([-2, -1, 0, 1, 2]), data=st.data())
def test_cg_quadrupole_against_sympy(Li, dL, data):
    Lf = Li + dL
    if Lf < 0:
        return
    mu = data.draw(st.integers(-2, 2))
    m1 = data.draw(st.integers(-Li, Li))
    ref = sympy_cg(Li, 2, Lf, m1, mu, m1 + mu) if abs(m1 + mu) <= Lf else 0.0
    assert clebsch_gordan(Li, 2, Lf, m1, mu, m1 + mu) == pytest.approx(ref, abs=1e-15)


def test_cg_selection_rules():
    assert clebsch_gordan(1, 1, 3, 0, 0, 0) == 0.0
    assert clebsch_gordan(1, 1, 1, 1, 0, 0) == 0.0
    assert clebsch_gordan(1, 1, 1, 0, 0, 0) == 0.0  # parity zero
    with pytest.raises(ValueError):
        clebsch_gordan(0.3, 1, 1, 0, 0, 0)
    with pytest.raises(ValueError):
        clebsch_gordan(-1, 1, 1, 0, 0, 0)


# -- Euler-angle oracle ---------------------------------------------------------------


def small_d(j, m, k, beta):
    tot = 0.0
    for t in range(2 * j + 1):
        a1, a2, a3 = j + k - t, j - m - t, t + m - k
        if min(a1, a2, a3) < 0:
            continue
        num = math.sqrt(factorial(j + k) * factorial(j - k) * factorial(j + m) * factorial(j - m))
        den = factorial(a1) * factorial(t) * factorial(a2) * factorial(a3)
        tot = tot + (-1) ** (t + m - k) * num / den * np.cos(beta / 2) ** (2 * j + k - m - 2 * t) \
            * np.sin(beta / 2) ** (2 * t + m - k)
    return tot


def wigner_D(j, m, k, a, b, g):
    return np.exp(1j * m * a) * small_d(j, m, k, b) * np.exp(1j * k * g)


def sym_rotation(L, M, K, a, b, g):
    """Normalized natural-parity symmetrized rotation function."""
    c = math.sqrt(2 * L + 1) / (4 * math.pi) / math.sqrt(1 + (K == 0))
    return c * (wigner_D(L, M, K, a, b, g) + (-1) ** K * wigner_D(L, M, -K, a, b, g))


def euler_grid(Li, Lf):
    na, nb = 2 * (Li + Lf + 4), Li + Lf + 4
    al = np.arange(na) * 2 * np.pi / na
    x, wb = np.polynomial.legendre.leggauss(nb)
    a, b, g = np.meshgrid(al, np.arccos(x), al, indexing="ij")
    return a, b, g, wb[None, :, None] * (2 * np.pi / na) ** 2


@pytest.mark.parametrize("Li,Lf", [(4, 2), (2, 4), (3, 3), (6, 4), (2, 0), (5, 5), (1, 3), (12, 10)])
def test_angular_factor_against_euler_quadrature(Li, Lf):
    """<D_f M_f | sum_kappa D^2_{mu kappa} q_kappa | D_i M_i> with q_{-k} = (-1)^k q_k,
    integrated over the Euler angles, equals G * CG * sqrt((2L_i+1)/(2L_f+1))."""
    a, b, g, w = euler_grid(Li, Lf)
    for Ki in range(min(Li, 2) + 1):
        for Kf in range(min(Lf, 2) + 1):
            for kappa in range(3):
                G = angular_factor(Li, Lf, (-1) ** Lf, Ki, Kf, kappa)
                for Mi, mu in ((0, 0), (1, 1), (-1, 2), (1, -1)):
                    Mf = Mi + mu
                    if abs(Mi) > Li or abs(Mf) > Lf:
                        continue
                    op = wigner_D(2, mu, kappa, a, b, g)
                    if kappa:
                        op = op + (-1) ** kappa * wigner_D(2, mu, -kappa, a, b, g)
                    amp = np.sum(w * np.conj(sym_rotation(Lf, Mf, Kf, a, b, g)) * op
                                 * sym_rotation(Li, Mi, Ki, a, b, g))
                    pred = G * clebsch_gordan(Li, 2, Lf, Mi, mu, Mf) * math.sqrt((2 * Li + 1) / (2 * Lf + 1))
                    assert abs(amp - pred) < 1e-10, (Ki, Kf, kappa, Mi, mu)


def test_printed_form_differs_only_in_one_entry():
    for Li in range(0, 12):
        for Lf in (Li - 2, Li, Li + 2):
            if Lf < 0 or Li + Lf < 2:
                continue
            for Ki in range(min(Li, 2) + 1):
                for Kf in range(min(Lf, 2) + 1):
                    for kappa in range(3):
                        a = angular_factor(Li, Lf, (-1) ** Lf, Ki, Kf, kappa)
                        p = printed_factor(Li, Lf, Ki, Kf, kappa)
                        if (Ki, Kf, kappa) == (1, 1, 2):
                            continue
                        assert a == pytest.approx(p, abs=1e-14)
    # the entry itself differs, e.g. for 4 -> 2
    assert abs(angular_factor(4, 2, 1, 1, 1, 2) - printed_factor(4, 2, 1, 1, 2)) > 0.1


def test_angular_factor_validation():
    with pytest.raises(ValueError):
        angular_factor(2, 2, 1, 0, 0, 3)
    with pytest.raises(ValueError):
        angular_factor(2, 2, 1, 3, 0, 0)
    assert angular_factor(4, 1, -1, 0, 0, 0) == 0.0


# -- perimetric elements on a small mesh ------------------------------------------------

MESH = MeshSpec(10, 8)


@pytest.fixture(scope="module")
def bands():
    return {L: solve_band(MESH, L, n_states=2) for L in (0, 2, 3, 4)}


def test_perimetric_element_against_dense_sum():
    spec = MeshSpec(6, 6)
    m = MassSet()
    wi, wf = solve_band(spec, 4, 1)[0], solve_band(spec, 2, 1)[0]
    x, z = spec.mesh_xy.points, spec.mesh_z.points
    for Ki in range(3):
        for Kf in range(3):
            gi, gf = wi.full_grid(Ki), wf.full_grid(Kf)
            for kappa in range(3):
                ref = 0.0
                for p in range(6):
                    for q in range(6):
                        for r in range(6):
                            ref += gf[p, q, r] * gi[p, q, r] * quad_kernel(
                                kappa, PerimetricPoint(x[p], x[q], z[r]), m)
                got = perimetric_element(wi, wf, Ki, Kf, kappa, m)
                assert got == pytest.approx(ref, rel=1e-13, abs=1e-13)


def test_orthogonal_states_give_zero_with_unit_kernel(bands, monkeypatch):
    monkeypatch.setattr(tr, "_kernel_grid", lambda spec, kappa, m_p: np.ones((spec.n_xy, spec.n_xy, spec.n_z)))
    w0, w1 = bands[2]
    total = sum(perimetric_element(w0, w1, K, K, 0) for K in range(3))
    assert abs(total) < 1e-13
    norm = sum(perimetric_element(w0, w0, K, K, 0) for K in range(3))
    assert norm == pytest.approx(1.0, abs=1e-13)


def test_strength_sign_invariance(bands):
    wi, wf = bands[4][0], bands[2][0]
    S, forb = reduced_strength(wi, wf)
    assert not forb and S > 0
    flipped = type(wi)(wi.label, wi.spec, -wi.coeffs, wi.energy)
    assert reduced_strength(flipped, wf)[0] == pytest.approx(S, rel=1e-14)


def test_forbidden_pairs_exact_zero(bands):
    assert reduced_strength(bands[3][0], bands[2][0]) == (0.0, True)
    assert reduced_strength(bands[0][1], bands[0][0]) == (0.0, True)
    assert forbidden_reason(band_labels(4), band_labels(7)) is not None
    assert forbidden_reason(band_labels(3), band_labels(5)) is None
    rec = transition(bands[3][0], bands[2][0])
    assert rec.forbidden and rec.W == 0.0 and rec.S == 0.0


@pytest.mark.parametrize("pair", [((4, 0), (2, 0)), ((2, 1), (2, 0)), ((2, 1), (0, 0)), ((0, 1), (2, 0))])
def test_reciprocity_and_rate_relation(bands, pair):
    (La, va), (Lb, vb) = pair
    a, b = bands[La][va], bands[Lb][vb]
    c = PhysicalConstants()
    S_ab, _ = reduced_strength(a, b)
    S_ba, _ = reduced_strength(b, a)
    f_ab = oscillator_strength(S_ab, a.energy, b.energy, La, c)
    f_ba = oscillator_strength(S_ba, b.energy, a.energy, Lb, c)
    assert (2 * La + 1) * f_ab == pytest.approx(-(2 * Lb + 1) * f_ba, rel=1e-12)
    hi, lo, f_hi = (a, b, f_ab) if a.energy > b.energy else (b, a, f_ba)
    S = S_ab if hi is a else S_ba
    W = transition_probability(S, hi.energy, lo.energy, hi.label.L, c)
    via_f = 2 * c.alpha**3 * (hi.energy - lo.energy) ** 2 * abs(f_hi) / c.atomic_time_s
    assert W == pytest.approx(via_f, rel=1e-12)
    assert f_hi < 0


def test_truncations(bands):
    wi, wf = bands[4][0], bands[2][0]
    full = reduced_strength(wi, wf)[0]
    for kw in ({"kappa_max": 0}, {"kappa_max": 1}, {"k_max": 0}, {"k_max": 1}, {"form": "printed"}):
        assert reduced_strength(wi, wf, **kw)[0] == pytest.approx(full, rel=1e-2)
    with pytest.raises(ValueError):
        reduced_strength(wi, wf, form="other")


def test_transition_orientation(bands):
    lo, hi = bands[2][0], bands[4][0]
    rec = transition(lo, hi)
    assert rec.reversed and rec.initial.L == 4 and rec.final.L == 2
    assert rec.W > 0 and rec.f < 0
    assert rec.photon_energy == pytest.approx(hi.energy - lo.energy)
    same = transition(hi, lo)
    assert not same.reversed and same.W == rec.W


# -- rates and constants -----------------------------------------------------------------


def test_atomic_time():
    assert PhysicalConstants().atomic_time_s == pytest.approx(2.4188843e-17, rel=1e-6)
    assert PhysicalConstants(137.0359895, 0.529177249e-10).atomic_time_s == pytest.approx(2.4188843e-17, rel=1e-6)


def test_rate_requires_emission():
    with pytest.raises(ValueError):
        transition_probability(1.0, -0.6, -0.5, 2)


def test_lifetime():
    assert lifetime([]) == math.inf
    # single (2+,0) -> (0+,0) channel of the rotational ground band
    assert lifetime([9.73137e-12]) == pytest.approx(1.0276e11, rel=1e-4)
    assert lifetime([1.0, 3.0]) == 0.25
    with pytest.raises(ValueError):
        lifetime([-1.0])
