"""
Lowest eigenpairs of block Hamiltonians and vibrational labelling.

Explicit matrices (:class:`SparseSymMatrix`) are solved densely when small
and by shift-invert Lanczos otherwise. The matrix-free
:class:`PerimetricHamiltonian` is dense within every ``xy`` plane, which
rules out sparse factorization at production mesh sizes; it is solved by a
block preconditioned conjugate-gradient eigensolver (LOBPCG) whose
preconditioner is the exact inverse of the shifted diagonal ``K`` blocks,
held as Cholesky factors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .coordinates import MassSet
from .hamiltonian import (MeshWavefunction, PerimetricHamiltonian, SparseSymMatrix, StateLabel, band_labels,
                          enumerate_basis)
from .laguerre_mesh import MeshSpec

log = logging.getLogger(__name__)

#: H(1s) + p threshold for the benchmark proton mass (hartree)
DISSOCIATION_ENERGY = -0.499727839716

WAVEFUNCTION_FORMAT = "perimesh-wavefunction"
WAVEFUNCTION_VERSION = 1


@dataclass(frozen=True)
class EigenRequest:
    """What to compute.

    Parameters
    ----------
    n_states : int
        Number of lowest eigenpairs.
    shift : float or None
        Spectral shift below the wanted cluster. ``None`` picks one from a
        coarse-mesh estimate.
    tol : float
        Residual tolerance relative to the operator norm.
    max_iter : int
        Iteration limit.
    energy_tol : float
        Largest change of any wanted Ritz value between two iterations
        (hartree) accepted at convergence. The residual norm is dominated by
        high-frequency components, so this second test is what protects the
        13th digit.
    guard : int
        Extra vectors carried in the block to speed up the highest wanted pair.
    """

    n_states: int = 4
    shift: float | None = None
    tol: float = 1e-12
    max_iter: int = 300
    energy_tol: float = 1e-14
    guard: int = 4

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class EigenResult:
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)
    residuals: np.ndarray
    iterations: int = 0
    norm_estimate: float = float("nan")

    @property
    def pairs(self) -> list[tuple[float, np.ndarray]]:
        return [(float(e), self.vectors[:, i]) for i, e in enumerate(self.energies)]


class ConvergenceError(RuntimeError):
    """Raised when the eigensolver stops before meeting the tolerance."""

    def __init__(self, message: str, result: EigenResult):
        super().__init__(message)
        self.result = result


# -- explicit matrices --------------------------------------------------------

_DENSE_LIMIT = 3000


def _gershgorin_lower(a) -> float:
    """A shift strictly below the spectrum of the CSR matrix ``a``."""
    d = a.diagonal()
    radius = np.asarray(abs(a).sum(axis=1)).ravel() - np.abs(d)
    low = float(np.min(d - radius))
    return low - 1e-3 * max(1.0, abs(low))


def _solve_explicit(h: SparseSymMatrix, req: EigenRequest) -> EigenResult:
    k = req.n_states
    if k > h.dim:
        raise ValueError(f"requested {k} states from a matrix of dimension {h.dim}")
    if h.dim <= _DENSE_LIMIT:
        w, v = linalg.eigh(h.to_dense(), subset_by_index=[0, k - 1])
        norm = float(np.max(np.abs(linalg.eigvalsh(h.to_dense(), subset_by_index=[h.dim - 1, h.dim - 1]))))
        norm = max(norm, abs(float(w[0])))
    else:
        from scipy.sparse.linalg import eigsh

        a = h.to_scipy()
        sigma = req.shift if req.shift is not None else _gershgorin_lower(a)
        v0 = np.ones(h.dim) / np.sqrt(h.dim)
        w, v = eigsh(a, k=k, sigma=sigma, which="LM", v0=v0, tol=0.0, maxiter=req.max_iter * h.dim)
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        norm = float(eigsh(a, k=1, which="LM", v0=v0, return_eigenvectors=False, tol=1e-3)[0])
        norm = abs(norm)
    res = np.linalg.norm(h.matvec(v) - v * w, axis=0)
    return EigenResult(np.asarray(w), v, res, 1, norm)


# -- matrix-free operator ----------------------------------------------------


class BlockPreconditioner:
    """Inverse of ``blockdiag(H_KK) - shift`` from per-block Cholesky factors.

    ``float32`` factors keep the production blocks (about 16400 rows each)
    within a few GB; they only steer the iteration, residuals are always
    formed in ``float64``.
    """

    def __init__(self, op: PerimetricHamiltonian, shift: float, dtype=np.float32):
        self.op = op
        self.shift = shift
        self.dtype = np.dtype(dtype)
        self.factors = []
        potrf = lapack.spotrf if self.dtype == np.float32 else lapack.dpotrf
        for K in op.basis.k_values:
            a = op.diagonal_block(K, dtype=self.dtype, shift=shift)
            # a is symmetric, so its transpose is the same matrix in Fortran order
            c, info = potrf(a.T, lower=0, overwrite_a=1, clean=0)
            if info != 0:
                raise np.linalg.LinAlgError(
                    f"K={K} block is not positive definite at shift {shift} (info={info})")
            self.factors.append(c)
            del a

    def __call__(self, r: np.ndarray) -> np.ndarray:
        potrs = lapack.spotrs if self.dtype == np.float32 else lapack.dpotrs
        out = np.empty_like(r)
        for K, c in zip(self.op.basis.k_values, self.factors):
            s = self.op.basis.block_slice(K)
            rhs = np.asfortranarray(r[s], dtype=self.dtype)
            x, info = potrs(c, rhs, lower=0)
            if info != 0:
                raise np.linalg.LinAlgError(f"triangular solve failed (info={info})")
            out[s] = x
        return out


def estimate_norm(apply, dim: int, steps: int = 30, seed: int = 12345) -> float:
    """Power-iteration estimate of the largest |eigenvalue| (a lower bound)."""
    x = np.random.default_rng(seed).standard_normal(dim)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(steps):
        y = apply(x)
        lam = float(np.linalg.norm(y))
        x = y / lam
    return lam


def coarse_ground_estimate(op: PerimetricHamiltonian, n_xy: int = 12, n_z: int = 10) -> float:
    """Lowest eigenvalue of the K = 0 block on a small mesh with the same scales."""
    spec = op.spec
    small = MeshSpec(min(n_xy, spec.n_xy), min(n_z, spec.n_z), spec.h_xy, spec.h_z)
    lab = op.label
    coarse = PerimetricHamiltonian(small, StateLabel(lab.L, lab.parity, lab.exchange, 0), op.masses)
    a = coarse.diagonal_block(0)
    return float(linalg.eigvalsh(a, subset_by_index=[0, 0])[0])


def _default_preconditioner(op: PerimetricHamiltonian, shift: float | None) -> BlockPreconditioner:
    if shift is not None:
        return BlockPreconditioner(op, shift)
    guess = coarse_ground_estimate(op)
    # the coarse mesh overestimates high-L energies, so back off until the
    # shifted blocks are positive definite
    for offset in (0.02, 0.05, 0.1, 0.2):
        try:
            return BlockPreconditioner(op, guess - offset)
        except np.linalg.LinAlgError:
            log.debug("shift %.6f rejected", guess - offset)
    raise np.linalg.LinAlgError(f"no positive definite shift found below {guess}")


def _orthonormalize(s: np.ndarray) -> np.ndarray:
    # unit columns first: converged residual directions are tiny and would
    # otherwise fall under the rank cut relative to the Ritz vectors
    norms = np.linalg.norm(s, axis=0)
    s = s[:, norms > 0] / norms[norms > 0]
    q, r = np.linalg.qr(s)
    keep = np.abs(np.diag(r)) > 1e-12 * np.abs(np.diag(r)).max()
    q = q[:, keep]
    # second pass restores orthogonality lost to cancellation
    q, _ = np.linalg.qr(q)
    return q


def lobpcg(op: PerimetricHamiltonian, req: EigenRequest, precond=None, x0=None) -> EigenResult:
    """Block preconditioned eigensolver for the lowest ``req.n_states`` pairs.

    Each step performs a Rayleigh-Ritz projection on the span of the current
    Ritz vectors, their preconditioned residuals and the previous search
    directions. Products with ``H`` are formed fresh for every new
    direction, and the final residuals come from a separate product.
    """
    dim = op.dim
    nev = req.n_states
    m = min(nev + req.guard, dim)
    if nev > dim:
        raise ValueError(f"requested {nev} states from a matrix of dimension {dim}")
    norm = estimate_norm(op.apply, dim)
    if precond is None:
        precond = _default_preconditioner(op, req.shift)
    if x0 is None:
        x = np.random.default_rng(2024).standard_normal((dim, m))
        x = precond(x)
    else:
        x = np.asarray(x0, dtype=float)[:, :m]
        if x.shape[1] < m:
            extra = np.random.default_rng(2024).standard_normal((dim, m - x.shape[1]))
            x = np.hstack([x, extra])
    x = _orthonormalize(x)
    hx = op.apply(x)
    t = x.T @ hx
    w, c = linalg.eigh(0.5 * (t + t.T))
    x, hx = x @ c, hx @ c
    p = None
    res = np.full(m, np.inf)
    w_prev = np.full(m, np.inf)
    calm = 0
    it = 0
    converged = False
    for it in range(1, req.max_iter + 1):
        r = hx - x * w
        res = np.linalg.norm(r, axis=0)
        # frozen columns would pass the energy test trivially, so every wanted
        # column keeps receiving a direction until both tests pass twice
        calm = calm + 1 if np.abs(w - w_prev)[:nev].max() <= req.energy_tol else 0
        if calm >= 2 and np.all(res[:nev] <= req.tol * norm):
            converged = True
            break
        active = res > 1e-3 * req.tol * norm
        active[:nev] = True
        w_prev = w.copy()
        d = precond(r[:, active])
        blocks = [x, d] if p is None else [x, d, p]
        s = np.hstack(blocks)
        q = _orthonormalize(s)
        hq = op.apply(q)
        t = q.T @ hq
        w_all, c = linalg.eigh(0.5 * (t + t.T))
        c = c[:, :m]
        x_new = q @ c
        hx_new = hq @ c
        # next direction: the part of the new Ritz vectors outside span(x)
        pd = x_new - x @ (x.T @ x_new)
        p = _orthonormalize(pd) if np.linalg.norm(pd) > 0 else None
        x, hx, w = x_new, hx_new, w_all[:m]
        if it % 10 == 0:
            log.debug("iteration %d: max residual %.3e", it, res[:nev].max())
    # final residuals from a fresh product
    hx = op.apply(x)
    t = x.T @ hx
    w, c = linalg.eigh(0.5 * (t + t.T))
    x, hx = x @ c, hx @ c
    res = np.linalg.norm(hx - x * w, axis=0)
    result = EigenResult(w[:nev].copy(), x[:, :nev].copy(), res[:nev].copy(), it, norm)
    if not converged and np.any(res[:nev] > req.tol * norm):
        raise ConvergenceError(
            f"no convergence after {it} iterations; residuals {res[:nev]}", result)
    return result


def lowest_eigenpairs(h, req: EigenRequest = EigenRequest(), **kwargs) -> EigenResult:
    """Lowest eigenpairs of an explicit or matrix-free block Hamiltonian.

    Parameters
    ----------
    h : SparseSymMatrix or PerimetricHamiltonian
        Symmetric operator.
    req : EigenRequest
        Number of states, shift, tolerance and iteration limit.

    Returns
    -------
    EigenResult
        Ascending energies with orthonormal vectors and residual norms.

    Raises
    ------
    ConvergenceError
        If the tolerance is not met; the best available pairs are attached.
    """
    if isinstance(h, SparseSymMatrix):
        return _solve_explicit(h, req)
    if isinstance(h, PerimetricHamiltonian):
        return lobpcg(h, req, **kwargs)
    raise TypeError(f"unsupported operator type {type(h).__name__}")


def dissociation_energy(masses: MassSet | None = None) -> float:
    """Threshold of H(1s) + p, ``-m_p / (2 (m_p + 1))`` hartree."""
    m_p = (masses or MassSet()).m_p
    return -0.5 * m_p / (m_p + 1.0)


def outer_probability(wf: MeshWavefunction, r_out: float = 10.0) -> float:
    """Probability that the proton distance ``R`` exceeds ``r_out`` (bohr).

    Resonances and bound states stay near the well; discretized continuum
    states spread over the whole mesh.
    """
    e = enumerate_basis(wf.spec, wf.label).entries
    p = wf.spec.mesh_xy.points
    R = 0.5 * (p[e[:, 1] - 1] + p[e[:, 2] - 1])
    c = np.asarray(wf.coeffs)
    return float(np.sum(c[R > r_out] ** 2) / np.sum(c * c))


def assign_vibrational(res: EigenResult, label: StateLabel, spec: MeshSpec,
                       degeneracy_tol: float = 1e-14, masses: MassSet | None = None,
                       r_out: float = 10.0, leak_tol: float | None = None) -> list[MeshWavefunction]:
    """Label eigenpairs ``v = 0, 1, ...`` in ascending energy order.

    Energies closer than ``degeneracy_tol`` keep the solver's order and are
    flagged ``near_degenerate`` in the metadata. With ``leak_tol`` set,
    states above threshold whose :func:`outer_probability` exceeds it are
    treated as continuum and skipped, so ``v`` counts only resonances.
    """
    e_d = dissociation_energy(masses)
    energies = np.asarray(res.energies, dtype=float)
    order = np.argsort(energies, kind="stable")
    out = []
    for idx in order:
        e = float(energies[idx])
        vec = np.asarray(res.vectors[:, idx], dtype=float)
        vec = vec / np.linalg.norm(vec)
        # fix the global sign for reproducible files
        big = np.argmax(np.abs(vec))
        if vec[big] < 0:
            vec = -vec
        neighbours = np.abs(np.delete(energies, idx) - e)
        meta = {
            "quasibound": e > e_d,
            "near_degenerate": bool(np.any(neighbours < degeneracy_tol)),
            "residual": float(res.residuals[idx]) if len(res.residuals) > idx else float("nan"),
        }
        wf = MeshWavefunction(label.with_v(len(out)), spec, vec, e, meta)
        if leak_tol is not None and e > e_d:
            meta["outer_probability"] = outer_probability(wf, r_out)
            if meta["outer_probability"] > leak_tol:
                log.debug("L=%d: E=%.10f dropped as continuum", label.L, e)
                continue
        out.append(wf)
    return out


def solve_band(spec: MeshSpec, L: int, n_states: int = 4, masses=None, k_max_cap: int = 2,
               req: EigenRequest | None = None, leak_tol: float = 1e-3,
               max_states: int | None = None) -> list[MeshWavefunction]:
    """Lowest ``n_states`` bound or quasibound states of the natural-parity band.

    Above threshold the eigenvalues interleave with discretized continuum
    states. These are filtered out (see :func:`assign_vibrational`) and the
    search widens up to ``max_states`` eigenpairs (default
    ``2 n_states + 2``). Near the end of a band fewer than ``n_states``
    states may be returned.
    """
    label = band_labels(L, k_max_cap)
    op = PerimetricHamiltonian(spec, label, masses)
    req = req or EigenRequest(n_states=n_states)
    cap = min(max_states or 2 * n_states + 2, op.dim)
    n = min(n_states, op.dim)
    e_d = dissociation_energy(masses)
    while True:
        res = lowest_eigenpairs(op, replace(req, n_states=n))
        wfs = assign_vibrational(res, label, spec, masses=masses, leak_tol=leak_tol)
        if len(wfs) >= n_states or n >= cap or res.energies.max() <= e_d:
            return wfs[:n_states]
        n = min(n + n_states, cap)


# -- persistence --------------------------------------------------------------


def save_wavefunction(wf: MeshWavefunction, path) -> None:
    """Write a wavefunction container (``.npz``) with an explicit version tag."""
    s, lab = wf.spec, wf.label
    np.savez(
        path,
        format=np.array(WAVEFUNCTION_FORMAT),
        version=np.array(WAVEFUNCTION_VERSION),
        mesh=np.array([s.n_xy, s.n_z], dtype=np.int64),
        scales=np.array([s.h_xy, s.h_z]),
        label=np.array([lab.L, lab.parity, lab.exchange, lab.k_max, lab.v], dtype=np.int64),
        energy=np.array(wf.energy),
        coeffs=wf.coeffs,
        quasibound=np.array(wf.quasibound),
    )


def load_wavefunction(path) -> MeshWavefunction:
    with np.load(path, allow_pickle=False) as f:
        if str(f["format"]) != WAVEFUNCTION_FORMAT:
            raise ValueError(f"{path}: not a wavefunction file")
        version = int(f["version"])
        if version != WAVEFUNCTION_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        n_xy, n_z = (int(v) for v in f["mesh"])
        h_xy, h_z = (float(v) for v in f["scales"])
        L, par, exc, kmax, v = (int(a) for a in f["label"])
        spec = MeshSpec(n_xy, n_z, h_xy, h_z)
        label = StateLabel(L, par, exc, kmax, v)
        meta = {"quasibound": bool(f["quasibound"])}
        return MeshWavefunction(label, spec, f["coeffs"].copy(), float(f["energy"]), meta)
