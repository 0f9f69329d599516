"""
Symmetrized Lagrange basis and the mesh Hamiltonian for one (L, pi, sigma) block.

Wavefunction convention
-----------------------
A state of total angular momentum ``L`` is written as
``Psi = sum_K D_K(Euler angles) Phi_K(x, y, z)`` for ``0 <= K <= K_max``
with rotation functions normalized to one over the Euler angles. The
internal functions carry the volume element ``(x+y)(y+z)(z+x)`` and are
expanded as ``Phi_K = R_K(x,y,z) * (Lagrange product)`` with ``R_0 = 1`` and
``R_K = sqrt(xyz(x+y+z))`` for ``K > 0``. On the mesh the value of ``Phi_K``
at a point ``p`` is ``c_p / sqrt(omega_p)`` with
``omega_p = h^2 h_z lam_i lam_j lam_k (x+y)(y+z)(z+x)``.

Kinetic energy
--------------
With Jacobi reduced masses ``mu_R = m_p/2`` (proton pair) and
``mu_r = 2 m_p/(2 m_p + 1)`` (electron), the angular integral of
``|grad_R Psi|^2/mu_R + |grad_r Psi|^2/mu_r`` reduces pointwise to

``sum_K [Q_0(Phi_K) + V_K Phi_K^2]
  + sum_K b_K [Phi_{K+1} D Phi_K - Phi_K D Phi_{K+1}
               + (2K+1)(zeta/rho) Phi_K Phi_{K+1}]``

where ``Q_0`` is the rotationless three-body form in interparticle
distances, ``D = rho d/dzeta - zeta d/drho`` rotates the electron about the
proton midpoint,
``V_K = (L(L+1) - K^2 + K^2 zeta^2/rho^2)/(mu_R R^2) + K^2/(mu_r rho^2)``
and ``b_K = -sqrt(L(L+1) - K(K+1)) sqrt(1 + delta_K0) / (mu_R R^2)``.
Half of it, integrated with the Gauss rule on the mesh, is the kinetic
energy. The Hamiltonian is applied matrix-free; explicit matrices are only
built for small meshes or single ``K`` blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .coordinates import MassSet, body_frame_arrays, coulomb_potential_arrays
from .laguerre_mesh import MeshSpec

# sign of the body-frame x axis relative to the electron's azimuth; chosen so
# that the quadrupole kernels take their conventional signs
_AZIMUTH_SIGN = -1.0


@dataclass(frozen=True)
class StateLabel:
    """Symmetry block ``(L, pi, sigma, K_max)`` plus vibrational index ``v``."""

    L: int
    parity: int
    exchange: int
    k_max: int
    v: int = 0

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("L must be nonnegative")
        if self.parity not in (1, -1) or self.exchange not in (1, -1):
            raise ValueError("parity and exchange must be +1 or -1")
        if not 0 <= self.k_max <= self.L:
            raise ValueError(f"k_max must lie in 0..L, got {self.k_max}")
        if self.v < 0:
            raise ValueError("v must be nonnegative")
        if self.parity != (-1) ** self.L:
            # the K = 0 component would vanish identically
            raise NotImplementedError("only natural-parity blocks are supported")

    def delta(self, K: int) -> int:
        """1 if the K component is antisymmetric under x <-> y, else 0."""
        return 0 if (-1) ** K == self.exchange * self.parity else 1

    def epsilon(self, K: int) -> int:
        """Sign acquired by ``Phi_K`` under x <-> y."""
        return self.exchange * self.parity * (-1) ** K

    def with_v(self, v: int) -> "StateLabel":
        return StateLabel(self.L, self.parity, self.exchange, self.k_max, v)

    @property
    def block(self) -> tuple[int, int, int, int]:
        return (self.L, self.parity, self.exchange, self.k_max)


def band_labels(L: int, k_max_cap: int = 2) -> StateLabel:
    """Label of the natural-parity gerade band at angular momentum ``L``."""
    if L < 0:
        raise ValueError("L must be nonnegative")
    p = (-1) ** L
    return StateLabel(L, p, p, min(L, k_max_cap))


@dataclass(frozen=True)
class BasisIndex:
    """Ordered basis entries ``(K, i, j, k)`` with 1-based mesh indices.

    Entries run over ``K`` first, then ``i``, ``j <= i - delta_K`` and ``k``.
    """

    entries: np.ndarray = field(repr=False)
    offsets: tuple[int, ...]
    deltas: tuple[int, ...]

    def __len__(self) -> int:
        return int(self.entries.shape[0])

    @property
    def k_values(self) -> range:
        return range(len(self.offsets) - 1)

    def block_slice(self, K: int) -> slice:
        return slice(self.offsets[K], self.offsets[K + 1])

    def block_size(self, K: int) -> int:
        return self.offsets[K + 1] - self.offsets[K]


def _pair_indices(n: int, delta: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.tril_indices(n, -delta)
    return i, j


def enumerate_basis(spec: MeshSpec, label: StateLabel) -> BasisIndex:
    """Symmetrized basis enumeration for a block."""
    n, nz = spec.n_xy, spec.n_z
    blocks, offsets, deltas = [], [0], []
    for K in range(label.k_max + 1):
        d = label.delta(K)
        i, j = _pair_indices(n, d)
        npair = i.size
        ent = np.empty((npair * nz, 4), dtype=np.int64)
        ent[:, 0] = K
        ent[:, 1] = np.repeat(i + 1, nz)
        ent[:, 2] = np.repeat(j + 1, nz)
        ent[:, 3] = np.tile(np.arange(1, nz + 1), npair)
        blocks.append(ent)
        offsets.append(offsets[-1] + ent.shape[0])
        deltas.append(d)
    entries = np.concatenate(blocks)
    entries.setflags(write=False)
    return BasisIndex(entries, tuple(offsets), tuple(deltas))


@dataclass
class SparseSymMatrix:
    """Symmetric matrix stored as its lower triangle in coordinate format.

    Entries are sorted by ``(row, col)`` so sums over them are reproducible.
    """

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.cols > self.rows):
            raise ValueError("only the lower triangle may be stored")
        order = np.lexsort((self.cols, self.rows))
        self.rows, self.cols, self.values = self.rows[order], self.cols[order], self.values[order]

    @classmethod
    def from_dense(cls, a, tol: float = 0.0) -> "SparseSymMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        r, c = np.tril_indices(a.shape[0])
        v = a[r, c]
        keep = (np.abs(v) > tol) | (r == c)
        return cls(a.shape[0], r[keep], c[keep], v[keep])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def to_scipy(self):
        from scipy.sparse import coo_matrix

        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.values, self.values[off]])
        return coo_matrix((v, (r, c)), shape=self.shape).tocsr()

    def to_dense(self) -> np.ndarray:
        a = np.zeros(self.shape)
        a[self.rows, self.cols] = self.values
        a[self.cols, self.rows] = self.values
        return a

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.dim)
        on = self.rows == self.cols
        d[self.rows[on]] = self.values[on]
        return d

    def matvec(self, x):
        return self.to_scipy() @ x

    def dump(self, path) -> None:
        """Write ``row col value`` lines (0-based, 17 significant digits)."""
        with open(path, "w", encoding="ascii") as fh:
            for r, c, v in zip(self.rows, self.cols, self.values):
                fh.write(f"{r} {c} {v:.16e}\n")


@dataclass
class MeshWavefunction:
    """Eigenvector of a block Hamiltonian on a given mesh."""

    label: StateLabel
    spec: MeshSpec
    coeffs: np.ndarray = field(repr=False)
    energy: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        expected = len(enumerate_basis(self.spec, self.label))
        if self.coeffs.shape != (expected,):
            raise ValueError(f"expected {expected} coefficients, got {self.coeffs.shape}")

    @property
    def quasibound(self) -> bool:
        return bool(self.metadata.get("quasibound", False))

    def component(self, K: int) -> np.ndarray:
        """Coefficients ``C_Kijk`` of one ``K`` component."""
        basis = enumerate_basis(self.spec, self.label)
        return self.coeffs[basis.block_slice(K)]

    def full_grid(self, K: int) -> np.ndarray:
        """Values ``Phi_K(p) sqrt(omega_p)`` on the full ``(N, N, N_z)`` grid."""
        eps = self.label.epsilon(K)
        return _unfold(self.component(K), self.spec.n_xy, self.spec.n_z, self.label.delta(K), eps)


def _unfold(c: np.ndarray, n: int, nz: int, delta: int, eps: int) -> np.ndarray:
    """Symmetrized coefficients ``(npair*nz, ...)`` to full grid ``(n, n, nz, ...)``."""
    i, j = _pair_indices(n, delta)
    tail = c.shape[1:]
    c = c.reshape((i.size, nz) + tail)
    off = i != j
    scale = np.where(off, np.sqrt(0.5), 1.0).reshape((-1, 1) + (1,) * len(tail))
    full = np.zeros((n, n, nz) + tail, dtype=c.dtype)
    full[i, j] = scale * c
    full[j[off], i[off]] = eps * scale[off] * c[off]
    return full


def _fold(full: np.ndarray, delta: int, eps: int) -> np.ndarray:
    """Adjoint of :func:`_unfold`."""
    n, _, nz = full.shape[:3]
    tail = full.shape[3:]
    i, j = _pair_indices(n, delta)
    off = i != j
    out = full[i, j].copy()
    out[off] = np.sqrt(0.5) * (out[off] + eps * full[j[off], i[off]])
    return out.reshape((i.size * nz,) + tail)


class PerimetricHamiltonian:
    """Matrix-free mesh Hamiltonian of one symmetry block.

    Parameters
    ----------
    spec : MeshSpec
        Mesh (``x`` and ``y`` share size and scale).
    label : StateLabel
        Symmetry block; ``v`` is ignored.
    masses : MassSet, optional
        Particle masses.
    """

    def __init__(self, spec: MeshSpec, label: StateLabel, masses: MassSet | None = None):
        self.spec = spec
        self.label = label
        self.masses = masses or MassSet()
        self.basis = enumerate_basis(spec, label)
        self._geometry()

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    def _geometry(self):
        spec, m = self.spec, self.masses
        x, y, z = np.broadcast_arrays(*spec.grid())
        x, y, z = x.copy(), y.copy(), z.copy()
        R, rho, zeta = body_frame_arrays(x, y, z)
        r1, r2 = 0.5 * (x + z), 0.5 * (y + z)
        vol = (x + y) * (y + z) * (z + x)
        self.omega = spec.cell_weights() * vol
        self.potential = coulomb_potential_arrays(x, y, z)

        # rotationless kinetic form in the distance derivatives (d_R, d_r1, d_r2)
        inv_p = 1.0 / m.m_p
        cos1 = (R**2 + r1**2 - r2**2) / (2 * R * r1)
        cos2 = (R**2 + r2**2 - r1**2) / (2 * R * r2)
        cos3 = (r1**2 + r2**2 - R**2) / (2 * r1 * r2)
        a = np.empty((3, 3) + x.shape)
        a[0, 0] = 2 * inv_p
        a[1, 1] = a[2, 2] = 1.0 + inv_p
        a[0, 1] = a[1, 0] = inv_p * cos1
        a[0, 2] = a[2, 0] = inv_p * cos2
        a[1, 2] = a[2, 1] = cos3
        t = np.array([[1.0, 1.0, -1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, 1.0]])
        self.metric = np.einsum("ap,abxyz,bq->pqxyz", t, a, t)

        # D = rho d/dzeta - zeta d/drho expressed on (d/dx, d/dy, d/dz)
        self.dvec = (0.5 * rho * R) * (t[1][:, None, None, None] / r1 - t[2][:, None, None, None] / r2)

        L, mu_R, mu_r = self.label.L, m.mu_R, m.mu_r
        ll = L * (L + 1)
        self.vk = []
        self.bk = []
        for K in range(self.label.k_max + 1):
            vk = (ll - K**2 + K**2 * zeta**2 / rho**2) / (mu_R * R**2) + K**2 / (mu_r * rho**2)
            self.vk.append(vk + 2.0 * self.potential)
            lam = np.sqrt(ll - K * (K + 1)) * np.sqrt(2.0 if K == 0 else 1.0)
            # halved: each coupling product is linear in both components
            self.bk.append(0.5 * _AZIMUTH_SIGN * lam / (mu_R * R**2))
        self.zeta_over_rho = zeta / rho

        reg = np.sqrt(x * y * z * (x + y + z))
        self.reg = reg
        self.reg_grad = np.stack(
            [y * z * (2 * x + y + z), x * z * (2 * y + x + z), x * y * (2 * z + x + y)]
        ) / (2.0 * reg)
        self.sqrt_omega = np.sqrt(self.omega)
        self.dx = spec.mesh_xy.derivative_matrix / spec.h_xy
        self.dz = spec.mesh_z.derivative_matrix / spec.h_z

    def potential_diagonal(self) -> np.ndarray:
        """Coulomb potential at the mesh point of every basis entry."""
        e = self.basis.entries
        return self.potential[e[:, 1] - 1, e[:, 2] - 1, e[:, 3] - 1]

    # -- field maps -------------------------------------------------------

    def _grad(self, u):
        gx = np.tensordot(self.dx, u, axes=(1, 0))
        gy = np.moveaxis(np.tensordot(self.dx, u, axes=(1, 1)), 0, 1)
        gz = np.moveaxis(np.tensordot(self.dz, u, axes=(1, 2)), 0, 2)
        return gx, gy, gz

    def _grad_t(self, ax, ay, az):
        u = np.tensordot(self.dx.T, ax, axes=(1, 0))
        u += np.moveaxis(np.tensordot(self.dx.T, ay, axes=(1, 1)), 0, 1)
        u += np.moveaxis(np.tensordot(self.dz.T, az, axes=(1, 2)), 0, 2)
        return u

    def _fields(self, K: int, full: np.ndarray):
        """Values and gradient of ``Phi_K`` at the mesh points."""
        ex = (Ellipsis,) + (None,) * (full.ndim - 3)
        phi = full / self.sqrt_omega[ex]
        if K == 0:
            g = self._grad(phi)
        else:
            reg = self.reg[ex]
            u = phi / reg
            g = tuple(reg * gi + self.reg_grad[d][ex] * u for d, gi in enumerate(self._grad(u)))
        return phi, g

    def _fields_t(self, K: int, aphi, ag):
        ex = (Ellipsis,) + (None,) * (aphi.ndim - 3)
        if K == 0:
            au = self._grad_t(*ag)
            return (aphi + au) / self.sqrt_omega[ex]
        reg = self.reg[ex]
        au = self._grad_t(*(reg * a for a in ag))
        au += sum(self.reg_grad[d][ex] * ag[d] for d in range(3))
        return (aphi + au / reg) / self.sqrt_omega[ex]

    # -- application ------------------------------------------------------

    def apply(self, c: np.ndarray, ks: tuple[int, ...] | None = None) -> np.ndarray:
        """Return ``H @ c`` for ``c`` of shape ``(dim,)`` or ``(dim, m)``.

        If ``ks`` is given, only those ``K`` blocks (and couplings among
        them) are used and ``c`` is indexed by the concatenated blocks.
        """
        ks = tuple(self.basis.k_values) if ks is None else tuple(ks)
        lab = self.label
        n, nz = self.spec.n_xy, self.spec.n_z
        sizes = [self.basis.block_size(K) for K in ks]
        starts = np.concatenate([[0], np.cumsum(sizes)])
        if c.shape[0] != starts[-1]:
            raise ValueError(f"vector length {c.shape[0]} does not match {starts[-1]}")
        fields = {}
        for s, K in enumerate(ks):
            full = _unfold(c[starts[s] : starts[s + 1]], n, nz, lab.delta(K), lab.epsilon(K))
            fields[K] = self._fields(K, full)
        ex = (Ellipsis,) + (None,) * (c.ndim - 1)
        out = np.empty_like(c)
        zr = self.zeta_over_rho[ex]
        for s, K in enumerate(ks):
            phi, g = fields[K]
            met = self.metric
            ag = [sum(met[a, b][ex] * g[b] for b in range(3)) for a in range(3)]
            aphi = self.vk[K][ex] * phi
            for nb, sign, b in ((K + 1, 1.0, self.bk[K]), (K - 1, -1.0, self.bk[K - 1] if K else None)):
                if nb not in fields:
                    continue
                phn, gn = fields[nb]
                b = b[ex]
                dgn = sum(self.dvec[d][ex] * gn[d] for d in range(3))
                kk = 2 * min(K, nb) + 1
                aphi = aphi + b * (-sign * dgn + kk * zr * phn)
                for d in range(3):
                    ag[d] = ag[d] + sign * b * phn * self.dvec[d][ex]
            w = 0.5 * self.omega[ex]
            res = self._fields_t(K, w * aphi, [w * a for a in ag])
            out[starts[s] : starts[s + 1]] = _fold(res, lab.delta(K), lab.epsilon(K))
        return out

    def __matmul__(self, c):
        return self.apply(np.asarray(c, dtype=float))

    def block_dense(self, K: int, batch: int = 128, dtype=np.float64, out=None) -> np.ndarray:
        """Dense diagonal block ``H_KK`` built from batched unit-vector products."""
        size = self.basis.block_size(K)
        a = np.empty((size, size), dtype=dtype) if out is None else out
        for s in range(0, size, batch):
            e = np.zeros((size, min(batch, size - s)))
            e[np.arange(s, s + e.shape[1]), np.arange(e.shape[1])] = 1.0
            a[:, s : s + e.shape[1]] = self.apply(e, ks=(K,))
        return a

    def diagonal_block(self, K: int, dtype=np.float64, shift: float = 0.0) -> np.ndarray:
        """Dense ``H_KK - shift * I`` assembled row by row from the mesh
        operators; equal to :meth:`block_dense` up to rounding but far
        cheaper, since each row only touches lines and planes of the grid."""
        from ._assembly import diagonal_block

        n, nz = self.spec.n_xy, self.spec.n_z
        reg = np.ones_like(self.reg) if K == 0 else self.reg
        reg_grad = np.zeros_like(self.reg_grad) if K == 0 else self.reg_grad
        s = self.sqrt_omega * reg
        eye_n, eye_z = np.eye(n), np.eye(nz)
        # a[p, i', j, k]: d/dx at (p, j, k) of the basis function at (i', j, k)
        ax = (reg[:, None] * self.dx[:, :, None, None] / s[None]
              + eye_n[:, :, None, None] * (reg_grad[0] / s)[:, None])
        ay = (reg[:, :, None] * self.dx[None, :, :, None] / s[:, None]
              + eye_n[None, :, :, None] * (reg_grad[1] / s)[:, :, None])
        az = (reg[..., None] * self.dz[None, None] / s[:, :, None, :]
              + eye_z[None, None] * (reg_grad[2] / s)[..., None])
        w = 0.5 * self.omega * self.metric
        dpot = 0.5 * self.vk[K] - shift
        lab = self.label
        delta, eps = lab.delta(K), lab.epsilon(K)
        idx = np.full((n, n, nz), -1, dtype=np.int64)
        col = np.zeros((n, n, nz))
        i, j = _pair_indices(n, delta)
        pos = np.arange(i.size * nz).reshape(i.size, nz)
        idx[i, j] = pos
        idx[j, i] = pos
        off = (i != j)[:, None]
        col[i, j] = np.where(off, 1.0, np.sqrt(2.0))
        col[j, i] = np.where(off, eps, np.sqrt(2.0))
        out = np.zeros((i.size * nz, i.size * nz), dtype=dtype)
        diagonal_block(ax, ay, az, w, dpot, idx, col, i.astype(np.int64), j.astype(np.int64), out)
        return out

    def to_dense(self, batch: int = 128) -> np.ndarray:
        """Full dense matrix; intended for small meshes."""
        a = np.empty(self.shape)
        for s in range(0, self.dim, batch):
            e = np.zeros((self.dim, min(batch, self.dim - s)))
            e[np.arange(s, s + e.shape[1]), np.arange(e.shape[1])] = 1.0
            a[:, s : s + e.shape[1]] = self.apply(e)
        return a

    def aslinearoperator(self):
        from scipy.sparse.linalg import LinearOperator

        return LinearOperator(self.shape, matvec=self.apply, matmat=self.apply, dtype=float)


def assemble_hamiltonian(spec: MeshSpec, label: StateLabel, masses: MassSet | None = None,
                         max_dim: int = 20000) -> SparseSymMatrix:
    """Explicit lower-triangle Hamiltonian of a block.

    The matrix is dense within each ``xy`` plane, so explicit storage grows
    like ``N^4 N_z``; above ``max_dim`` rows a ``MemoryError`` is raised and
    :class:`PerimetricHamiltonian` should be used instead.
    """
    op = PerimetricHamiltonian(spec, label, masses)
    if op.dim > max_dim:
        raise MemoryError(f"explicit Hamiltonian of dimension {op.dim} exceeds max_dim={max_dim}")
    rows, cols, vals = [], [], []
    batch = 128
    for s in range(0, op.dim, batch):
        m = min(batch, op.dim - s)
        e = np.zeros((op.dim, m))
        e[np.arange(s, s + m), np.arange(m)] = 1.0
        blk = op.apply(e)
        r, c = np.nonzero(blk)
        c = c + s
        low = r >= c
        rows.append(r[low])
        cols.append(c[low])
        vals.append(blk[r[low], c[low] - s])
    # only the lower triangle is kept; the operator is symmetric to rounding
    return SparseSymMatrix(op.dim, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def iter_blocks(label: StateLabel) -> Iterator[int]:
    return iter(range(label.k_max + 1))
