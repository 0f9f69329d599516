"""
Electric quadrupole strengths, oscillator strengths, transition
probabilities and lifetimes from mesh wavefunctions.

The reduced strength of a natural-parity pair is

    S = (2 L_i + 1) | sum_{K_i K_f} sum_kappa G^kappa_{K_i K_f} A^kappa_{K_i K_f} |^2

with perimetric matrix elements ``A`` of the body-frame kernels and angular
coefficients ``G`` built from Clebsch-Gordan coefficients. Energies are in
hartree, strengths in a.u. and probabilities in s^-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .coordinates import MassSet, quad_kernel_arrays
from .hamiltonian import MeshWavefunction, StateLabel, _pair_indices

LAMBDA = 2


@dataclass(frozen=True)
class PhysicalConstants:
    """Fine-structure constant and the atomic unit of time.

    ``atomic_time_s = a0 / (alpha c)`` is derived from the Bohr radius and the
    speed of light rather than stored. Defaults are the CODATA 2002 values,
    which reproduce the published probabilities to about 2e-9; ``W`` scales
    as ``alpha**6 / a0``, so older sets shift it by a few 1e-7.
    """

    alpha_inverse: float = 137.03599911
    bohr_radius_m: float = 0.5291772108e-10
    speed_of_light_m_s: float = 299792458.0

    @property
    def alpha(self) -> float:
        return 1.0 / self.alpha_inverse

    @property
    def atomic_time_s(self) -> float:
        return self.bohr_radius_m / (self.alpha * self.speed_of_light_m_s)


@dataclass(frozen=True)
class TransitionRecord:
    """One E2 transition ``initial -> final``."""

    initial: StateLabel
    final: StateLabel
    energy_initial: float
    energy_final: float
    S: float
    f: float
    W: float
    forbidden: bool = False
    reversed: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def photon_energy(self) -> float:
        return abs(self.energy_initial - self.energy_final)


# -- angular momentum algebra --------------------------------------------------


def _check_half_integer(*vals):
    for v in vals:
        if abs(2 * v - round(2 * v)) > 1e-12:
            raise ValueError(f"{v} is not a multiple of 1/2")


@lru_cache(maxsize=65536)
def _cg_exact(tj1: int, tj2: int, tj3: int, tm1: int, tm2: int, tm3: int) -> tuple[Fraction, Fraction]:
    """Racah formula on doubled quantum numbers in exact rationals; returns
    ``(root, sum)`` with ``CG = sqrt(root) * sum``."""
    fac = math.factorial
    a = (tj1 + tj2 - tj3) // 2
    b = (tj1 - tj2 + tj3) // 2
    c = (-tj1 + tj2 + tj3) // 2
    d = (tj1 + tj2 + tj3) // 2 + 1
    root = Fraction((tj3 + 1) * fac(a) * fac(b) * fac(c), fac(d))
    root *= (fac((tj1 + tm1) // 2) * fac((tj1 - tm1) // 2) * fac((tj2 + tm2) // 2) * fac((tj2 - tm2) // 2)
             * fac((tj3 + tm3) // 2) * fac((tj3 - tm3) // 2))
    kmin = max(0, (tj2 - tj3 - tm1) // 2, (tj1 - tj3 + tm2) // 2)
    kmax = min(a, (tj1 - tm1) // 2, (tj2 + tm2) // 2)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (fac(k) * fac(a - k) * fac((tj1 - tm1) // 2 - k) * fac((tj2 + tm2) // 2 - k)
               * fac((tj3 - tj2 + tm1) // 2 + k) * fac((tj3 - tj1 - tm2) // 2 + k))
        total += Fraction((-1) ** k, den)
    return root, total


def clebsch_gordan(j1, j2, j3, m1, m2, m3) -> float:
    """Clebsch-Gordan coefficient ``(j1 m1 j2 m2 | j3 m3)``, Condon-Shortley phase.

    Returns 0 when the triangle rule, the projection ranges or
    ``m1 + m2 = m3`` fail.

    Examples
    --------
    >>> round(clebsch_gordan(2, 2, 0, 0, 0, 0), 12) == round(5 ** -0.5, 12)
    True
    """
    _check_half_integer(j1, j2, j3, m1, m2, m3)
    if min(j1, j2, j3) < 0:
        raise ValueError("angular momenta must be nonnegative")
    tj1, tj2, tj3 = (int(round(2 * v)) for v in (j1, j2, j3))
    tm1, tm2, tm3 = (int(round(2 * v)) for v in (m1, m2, m3))
    if tm1 + tm2 != tm3:
        return 0.0
    if tj3 > tj1 + tj2 or tj3 < abs(tj1 - tj2) or (tj1 + tj2 + tj3) % 2:
        return 0.0
    for tj, tm in ((tj1, tm1), (tj2, tm2), (tj3, tm3)):
        if abs(tm) > tj or (tj + tm) % 2:
            return 0.0
    root, total = _cg_exact(tj1, tj2, tj3, tm1, tm2, tm3)
    if total == 0:
        return 0.0
    return math.copysign(math.sqrt(root * total * total), total)


def _cg(Li: int, Lf: int, Ki: int, mu: int, Kf: int) -> float:
    return clebsch_gordan(Li, LAMBDA, Lf, Ki, mu, Kf)


def angular_factor(L_i: int, L_f: int, parity_f: int, K_i: int, K_f: int, kappa: int) -> float:
    """Coefficient of ``A^kappa_{K_i K_f}`` in the reduced quadrupole element.

    Equals ``(1 + delta_kappa0)^-1`` times the Wigner-matrix bracket of the
    symmetrized rotation functions with the ``M`` Clebsch-Gordan coefficient
    and ``sqrt((2L_i+1)/(2L_f+1))`` taken out, so that
    ``S = (2L_i+1) |sum G A|^2``.
    """
    if kappa not in (0, 1, 2):
        raise ValueError(f"kappa must be 0, 1 or 2, got {kappa!r}")
    if not (0 <= K_i <= L_i and 0 <= K_f <= L_f):
        raise ValueError("need 0 <= K <= L")
    if not abs(L_i - L_f) <= LAMBDA <= L_i + L_f:
        return 0.0
    sgn = (-1) ** kappa
    brace = (_cg(L_i, L_f, K_i, kappa, K_f) + sgn * _cg(L_i, L_f, K_i, -kappa, K_f)
             + parity_f * (-1) ** (L_f + K_f)
             * (_cg(L_i, L_f, K_i, kappa, -K_f) + sgn * _cg(L_i, L_f, K_i, -kappa, -K_f)))
    norm = math.sqrt((1 + (K_i == 0)) * (1 + (K_f == 0)))
    return brace / norm / (1 + (kappa == 0))


def printed_factor(L_i: int, L_f: int, K_i: int, K_f: int, kappa: int) -> float:
    """Natural-parity coefficient in the closed form with explicit
    ``(1 + delta_K0)^(1/2)`` factors.

    The ``K_i = K_f = 1``, ``kappa = 2`` correction is read as
    ``(L_i 2 2 -1 | L_f 1)``. It agrees with :func:`angular_factor` everywhere
    except that entry, where the bracket gives ``-(L_i 2 1 -2 | L_f -1)``.
    """
    si, sf = math.sqrt(1 + (K_i == 0)), math.sqrt(1 + (K_f == 0))
    if kappa == 0:
        return _cg(L_i, L_f, K_i, 0, K_f)
    if kappa == 1:
        return _cg(L_i, L_f, K_i, 1, K_f) * si - _cg(L_i, L_f, K_i, -1, K_f) * sf
    if kappa == 2:
        val = _cg(L_i, L_f, K_i, 2, K_f) * si + _cg(L_i, L_f, K_i, -2, K_f) * sf
        if K_i == 1 and K_f == 1:
            val -= _cg(L_i, L_f, 2, -1, 1)
        return val
    raise ValueError(f"kappa must be 0, 1 or 2, got {kappa!r}")


# -- perimetric matrix elements ------------------------------------------------


@lru_cache(maxsize=64)
def _kernel_grid(spec, kappa: int, m_p: float) -> np.ndarray:
    x, y, z = spec.grid()
    return np.broadcast_to(quad_kernel_arrays(kappa, x, y, z, MassSet(m_p)),
                           (spec.n_xy, spec.n_xy, spec.n_z))


def _restrict(c: np.ndarray, n: int, nz: int, delta_own: int, delta: int) -> np.ndarray:
    """Coefficients on pairs ``j <= i - delta`` from a component stored with
    ``j <= i - delta_own``."""
    c = c.reshape(-1, nz)
    if delta_own == delta:
        return c
    i, j = _pair_indices(n, delta_own)
    return c[i != j]


def perimetric_element(wf_i: MeshWavefunction, wf_f: MeshWavefunction, K_i: int, K_f: int,
                       kappa: int, masses: MassSet | None = None) -> float:
    """Gauss-quadrature matrix element ``<Phi^f_{K_f}| A_kappa |Phi^i_{K_i}>``.

    The sum runs over the symmetrized pairs ``j <= i - delta`` with
    ``delta = max(delta_{K_i}, delta_{K_f})``. When the integrand is odd
    under ``x <-> y`` (the kernel has parity ``(-1)**kappa``) the element
    vanishes and exactly 0 is returned.
    """
    if wf_i.spec != wf_f.spec:
        raise ValueError("wavefunctions live on different meshes")
    if wf_i.label.epsilon(K_i) * wf_f.label.epsilon(K_f) * (-1) ** kappa < 0:
        return 0.0
    spec = wf_i.spec
    masses = masses or MassSet()
    n, nz = spec.n_xy, spec.n_z
    di, df = wf_i.label.delta(K_i), wf_f.label.delta(K_f)
    d = max(di, df)
    ci = _restrict(wf_i.component(K_i), n, nz, di, d)
    cf = _restrict(wf_f.component(K_f), n, nz, df, d)
    i, j = _pair_indices(n, d)
    kern = _kernel_grid(spec, kappa, masses.m_p)[i, j]
    return float(np.sum(ci * cf * kern))


def forbidden_reason(a: StateLabel, b: StateLabel) -> str | None:
    """Why an E2 transition between two blocks vanishes, or ``None``."""
    if abs(a.L - b.L) not in (0, 2):
        return "Delta L not in {0, +-2}"
    if a.L + b.L < LAMBDA:
        return "L_i + L_f < 2"
    if a.parity != b.parity:
        return "parity change"
    if a.exchange != b.exchange:
        return "proton exchange symmetry change"
    return None


def reduced_strength(wf_i: MeshWavefunction, wf_f: MeshWavefunction, masses: MassSet | None = None,
                     kappa_max: int = 2, k_max: int | None = None, form: str = "bracket",
                     elements: dict | None = None) -> tuple[float, bool]:
    """Reduced quadrupole strength ``S_if`` in a.u.

    Parameters
    ----------
    wf_i, wf_f : MeshWavefunction
        Natural-parity states on the same mesh.
    kappa_max : int
        Keep only body-frame components ``kappa <= kappa_max``.
    k_max : int, optional
        Truncate both ``K`` sums (components above it are dropped, not
        re-solved).
    form : {"bracket", "printed"}
        Angular coefficients from :func:`angular_factor` or
        :func:`printed_factor`.
    elements : dict, optional
        Cache of perimetric elements keyed by ``(K_i, K_f, kappa)``.

    Returns
    -------
    (S, forbidden)
    """
    li, lf = wf_i.label, wf_f.label
    if forbidden_reason(li, lf) is not None:
        return 0.0, True
    for lab in (li, lf):
        if lab.parity != (-1) ** lab.L:
            raise ValueError("only natural-parity states are supported")
    kmi = li.k_max if k_max is None else min(k_max, li.k_max)
    kmf = lf.k_max if k_max is None else min(k_max, lf.k_max)
    elements = {} if elements is None else elements
    amp = 0.0
    for Ki in range(kmi + 1):
        for Kf in range(kmf + 1):
            for kappa in range(kappa_max + 1):
                if form == "bracket":
                    g = angular_factor(li.L, lf.L, lf.parity, Ki, Kf, kappa)
                elif form == "printed":
                    g = printed_factor(li.L, lf.L, Ki, Kf, kappa)
                else:
                    raise ValueError(f"unknown form {form!r}")
                if g == 0.0:
                    continue
                key = (Ki, Kf, kappa)
                if key not in elements:
                    elements[key] = perimetric_element(wf_i, wf_f, Ki, Kf, kappa, masses)
                amp += g * elements[key]
    return (2 * li.L + 1) * amp * amp, False


# -- rates -----------------------------------------------------------------------


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2))


_F_COEF = (2 * LAMBDA + 1) * (LAMBDA + 1) / (_double_factorial(2 * LAMBDA + 1) ** 2 * LAMBDA)
_W_COEF = 2 * (LAMBDA + 1) * (2 * LAMBDA + 1) / (LAMBDA * _double_factorial(2 * LAMBDA + 1) ** 2)


def oscillator_strength(S: float, E_i: float, E_f: float, L_i: int,
                        consts: PhysicalConstants = PhysicalConstants()) -> float:
    """Dimensionless E2 oscillator strength; negative for emission."""
    return _F_COEF * consts.alpha ** (2 * LAMBDA - 2) * (E_f - E_i) ** (2 * LAMBDA - 1) * S / (2 * L_i + 1)


def transition_probability(S: float, E_i: float, E_f: float, L_i: int,
                           consts: PhysicalConstants = PhysicalConstants()) -> float:
    """Spontaneous E2 emission rate ``W_{i->f}`` in s^-1 (requires ``E_f < E_i``)."""
    if not E_f < E_i:
        raise ValueError("transition_probability needs E_f < E_i; orient the pair first")
    w_au = _W_COEF * consts.alpha ** (2 * LAMBDA + 1) * (E_i - E_f) ** (2 * LAMBDA + 1) * S / (2 * L_i + 1)
    return w_au / consts.atomic_time_s


def lifetime(rates) -> float:
    """``1 / sum(W)`` in seconds; ``math.inf`` when there is no decay channel."""
    total = math.fsum(float(w) for w in rates)
    if total < 0:
        raise ValueError("rates must be nonnegative")
    return math.inf if total == 0.0 else 1.0 / total


def transition(wf_a: MeshWavefunction, wf_b: MeshWavefunction, masses: MassSet | None = None,
               consts: PhysicalConstants = PhysicalConstants(), **kwargs) -> TransitionRecord:
    """Oriented E2 record between two states.

    The higher state becomes the initial one; ``reversed`` is set when that
    swaps the given order.
    """
    rev = wf_b.energy > wf_a.energy
    wi, wf = (wf_b, wf_a) if rev else (wf_a, wf_b)
    S, forb = reduced_strength(wi, wf, masses, **kwargs)
    f = oscillator_strength(S, wi.energy, wf.energy, wi.label.L, consts)
    W = 0.0 if forb or wf.energy == wi.energy else transition_probability(S, wi.energy, wf.energy, wi.label.L, consts)
    return TransitionRecord(wi.label, wf.label, wi.energy, wf.energy, S, f, W, forb, rev)
