"""
Lagrange-Laguerre meshes.

One-dimensional nodes, Christoffel weights and Lagrange functions, plus the
scaled three-dimensional product mesh used for the perimetric coordinates.

Weights follow the weight-free convention

    int_0^inf G(u) du  ~  sum_i lam_i G(u_i),

i.e. they are the classical Gauss-Laguerre weights multiplied by exp(u_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import lgamma

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal


def laguerre_values(n: int, u, dtype=float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(L_n(u), L_{n-1}(u))`` by the three-term recurrence.

    Parameters
    ----------
    n : int
        Degree, ``n >= 1``.
    u : array_like
        Evaluation points.
    dtype : numpy dtype, optional
        Working precision; node polishing uses ``np.longdouble``.
    """
    u = np.asarray(u, dtype=dtype)
    prev = np.ones_like(u)
    cur = 1.0 - u
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 - u) * cur - k * prev) / (k + 1)
    return cur, prev


def laguerre_zeros(n: int) -> np.ndarray:
    """Zeros of the Laguerre polynomial ``L_n`` in ascending order.

    The zeros are the eigenvalues of the symmetric Jacobi matrix
    (diagonal ``2k+1``, off-diagonal ``k``), each polished with two Newton
    steps on ``L_n`` carried out in extended precision.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n)
    nodes = np.sort(eigvalsh_tridiagonal(2.0 * k + 1.0, np.arange(1.0, n)))
    return _newton_polish(n, nodes).astype(float)


def _newton_polish(n: int, nodes, steps: int = 2) -> np.ndarray:
    u = np.asarray(nodes, dtype=np.longdouble)
    for _ in range(steps):
        ln, lm1 = laguerre_values(n, u, dtype=np.longdouble)
        u = u - ln / (n * (ln - lm1) / u)
    return u


def christoffel_weights(n: int, nodes) -> np.ndarray:
    """Gauss-Laguerre weights including the ``exp(u_i)`` factor.

    Uses ``lam_i = u_i exp(u_i) / (n L_{n-1}(u_i))**2``, which stays accurate
    for the outermost nodes where eigenvector-based weights lose all digits.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.shape != (n,):
        raise ValueError(f"expected {n} nodes, got shape {nodes.shape}")
    ln, lm1 = laguerre_values(n, nodes)
    if np.any(nodes <= 0) or np.any(np.abs(ln) > 1e-8 * np.abs(n * lm1 / nodes) * np.maximum(nodes, 1.0)):
        raise ValueError("nodes are not the zeros of L_n")
    # the float64 nodes are re-polished so exp(u) does not amplify their rounding
    u = _newton_polish(n, nodes)
    _, lm1 = laguerre_values(n, u, dtype=np.longdouble)
    return (u * np.exp(u) / (n * lm1) ** 2).astype(float)


@dataclass(frozen=True)
class Mesh1D:
    """Scaled one-dimensional Lagrange-Laguerre mesh.

    Attributes
    ----------
    n : int
        Number of mesh points.
    nodes : ndarray
        Zeros ``u_i`` of ``L_n`` (dimensionless, ascending).
    weights : ndarray
        Christoffel numbers ``lam_i`` (weight-free convention).
    scale : float
        Length per mesh unit; physical points are ``scale * nodes``.
    """

    n: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    scale: float = 1.0

    @classmethod
    def build(cls, n: int, scale: float = 1.0) -> "Mesh1D":
        if scale <= 0:
            raise ValueError("scale must be positive")
        nodes = laguerre_zeros(n)
        weights = christoffel_weights(n, nodes)
        nodes.setflags(write=False)
        weights.setflags(write=False)
        return cls(n, nodes, weights, float(scale))

    @property
    def points(self) -> np.ndarray:
        return self.scale * self.nodes

    @cached_property
    def _node_slopes(self) -> np.ndarray:
        # L_n'(u_i) exp(-u_i/2), from L_n' = n (L_n - L_{n-1}) / u at a zero
        _, lm1 = laguerre_values(self.n, self.nodes)
        return -self.n * lm1 / self.nodes * np.exp(-0.5 * self.nodes)

    @cached_property
    def derivative_matrix(self) -> np.ndarray:
        """First-derivative matrix ``D[p, i] = g_i'(u_p)`` in mesh units.

        ``g_i = lam_i**0.5 f_i`` is the cardinal function with
        ``g_i(u_p) = delta_ip``, so ``D @ values`` differentiates any
        function of the form ``exp(-u/2) * poly_{n-1}(u)`` exactly at the
        nodes.
        """
        u = self.nodes
        s = self._node_slopes
        diff = u[:, None] - u[None, :]
        np.fill_diagonal(diff, 1.0)
        d = s[:, None] / (s[None, :] * diff)
        np.fill_diagonal(d, -0.5 / u)
        d.setflags(write=False)
        return d

    def lagrange_eval(self, i: int, u) -> np.ndarray:
        """Evaluate the Lagrange-Laguerre function ``f_i`` (1-based ``i``).

        Uses the product form ``L_n(u)/(u - u_i) = c prod_{j != i}(u - u_j)``
        so nothing is divided near the node. At ``u = u_j`` the result is
        ``lam_j**-0.5 * delta_ij``.
        """
        if not 1 <= i <= self.n:
            raise IndexError(f"function index {i} outside 1..{self.n}")
        u = np.asarray(u, dtype=float)
        ui = self.nodes[i - 1]
        others = np.delete(self.nodes, i - 1)
        # leading coefficient of L_n is (-1)^n / n!
        log_c = -lgamma(self.n + 1)
        diffs = u[..., None] - others
        sign = (-1.0) ** self.n * np.prod(np.sign(diffs), axis=-1)
        log_mag = log_c + np.sum(np.log(np.abs(diffs) + (diffs == 0)), axis=-1)
        zero = np.any(diffs == 0, axis=-1)
        ratio = np.where(zero, 0.0, sign * np.exp(log_mag))
        return (-1.0) ** i * np.sqrt(ui) * ratio * np.exp(-0.5 * u)


@dataclass(frozen=True)
class MeshSpec:
    """Mesh sizes and scale factors of the 3D perimetric mesh.

    ``x`` and ``y`` share the size ``n_xy`` and scale ``h_xy`` so the mesh is
    symmetric under proton exchange.
    """

    n_xy: int = 40
    n_z: int = 20
    h_xy: float = 0.14
    h_z: float = 0.4

    def __post_init__(self):
        if self.n_xy < 2 or self.n_z < 2:
            raise ValueError("mesh sizes must be >= 2")
        if not (self.h_xy > 0 and self.h_z > 0):
            raise ValueError("scale factors must be positive")

    @cached_property
    def mesh_xy(self) -> Mesh1D:
        return Mesh1D.build(self.n_xy, self.h_xy)

    @cached_property
    def mesh_z(self) -> Mesh1D:
        return Mesh1D.build(self.n_z, self.h_z)

    def grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable physical coordinates ``(x, y, z)`` of the mesh points,
        shaped ``(n, 1, 1)``, ``(1, n, 1)`` and ``(1, 1, n_z)``."""
        p = self.mesh_xy.points
        w = self.mesh_z.points
        return p[:, None, None], p[None, :, None], w[None, None, :]

    def cell_weights(self) -> np.ndarray:
        """``h^2 h_z lam_i lam_j lam_k`` on the full ``(n, n, n_z)`` grid."""
        lx = self.mesh_xy.weights
        lz = self.mesh_z.weights
        return (self.h_xy**2 * self.h_z) * lx[:, None, None] * lx[None, :, None] * lz[None, None, :]


def quadrature_3d(spec: MeshSpec, func) -> float:
    """Gauss-Laguerre approximation of ``int G(x, y, z) dx dy dz``.

    ``func`` is called once with broadcastable coordinate arrays. The sum is
    reduced over ``z`` first, then ``y``, then ``x``, so the result is
    independent of how ``func`` vectorizes.
    """
    x, y, z = spec.grid()
    vals = np.broadcast_to(func(x, y, z), (spec.n_xy, spec.n_xy, spec.n_z))
    terms = spec.cell_weights() * vals
    return float(terms.sum(axis=2).sum(axis=1).sum(axis=0))
