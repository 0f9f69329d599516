import numpy as np
import pytest

from perimesh.coordinates import MassSet
from perimesh.eigensolver import (DISSOCIATION_ENERGY, BlockPreconditioner, ConvergenceError,
                                  EigenRequest, EigenResult, assign_vibrational,
                                  dissociation_energy, load_wavefunction, lobpcg,
                                  lowest_eigenpairs, outer_probability, save_wavefunction,
                                  solve_band)
from perimesh.hamiltonian import (MeshWavefunction, PerimetricHamiltonian, SparseSymMatrix,
                                  band_labels, enumerate_basis)
from perimesh.laguerre_mesh import MeshSpec

SMALL = MeshSpec(8, 6, 0.3, 0.7)


def test_request_validation():
    for bad in ({"n_states": 0}, {"tol": 0.0}, {"max_iter": 0}):
        with pytest.raises(ValueError):
            EigenRequest(**bad)


def test_dissociation_threshold():
    # H(1s) energy with the reduced electron mass of the benchmark proton mass
    assert dissociation_energy() == pytest.approx(DISSOCIATION_ENERGY, abs=1e-12)
    assert dissociation_energy(MassSet(1e12)) == pytest.approx(-0.5, abs=1e-11)


def test_explicit_dense_path():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((40, 40))
    a = a + a.T
    res = lowest_eigenpairs(SparseSymMatrix.from_dense(a), EigenRequest(n_states=3))
    assert np.allclose(res.energies, np.linalg.eigvalsh(a)[:3], rtol=1e-12)
    assert np.all(res.residuals < 1e-11)


def test_explicit_shift_invert_path():
    # 1D Laplacian above the dense limit: eigenvalues 2 - 2 cos(k pi / (n + 1))
    n = 3200
    rows = np.concatenate([np.arange(n), np.arange(1, n)])
    cols = np.concatenate([np.arange(n), np.arange(n - 1)])
    vals = np.concatenate([np.full(n, 2.0), np.full(n - 1, -1.0)])
    res = lowest_eigenpairs(SparseSymMatrix(n, rows, cols, vals), EigenRequest(n_states=2))
    exact = 2 - 2 * np.cos(np.arange(1, 3) * np.pi / (n + 1))
    assert np.allclose(res.energies, exact, rtol=1e-9)


def test_explicit_too_many_states():
    with pytest.raises(ValueError):
        lowest_eigenpairs(SparseSymMatrix.from_dense(np.eye(2)), EigenRequest(n_states=3))


def test_unsupported_operator():
    with pytest.raises(TypeError):
        lowest_eigenpairs(np.eye(3))


@pytest.mark.parametrize("L", [0, 3])
def test_lobpcg_matches_dense(L):
    op = PerimetricHamiltonian(SMALL, band_labels(L))
    ref = np.linalg.eigvalsh(op.to_dense())[:3]
    res = lowest_eigenpairs(op, EigenRequest(n_states=3))
    assert np.allclose(res.energies, ref, rtol=0, atol=1e-12)
    v = res.vectors
    assert np.allclose(v.T @ v, np.eye(3), atol=1e-12)
    assert np.all(res.residuals <= 1e-12 * res.norm_estimate)


def test_preconditioner_inverts_shifted_blocks():
    op = PerimetricHamiltonian(SMALL, band_labels(2))
    pre = BlockPreconditioner(op, -1.0, dtype=np.float64)
    r = np.random.default_rng(1).standard_normal(op.dim)
    x = pre(r)
    for K in range(3):
        s = op.basis.block_slice(K)
        blk = op.block_dense(K) + np.eye(op.basis.block_size(K))
        assert np.allclose(blk @ x[s], r[s], rtol=1e-9, atol=1e-9)
    with pytest.raises(np.linalg.LinAlgError):
        BlockPreconditioner(op, 0.0, dtype=np.float64)


def test_convergence_error_carries_result():
    op = PerimetricHamiltonian(SMALL, band_labels(0))
    with pytest.raises(ConvergenceError) as info:
        lobpcg(op, EigenRequest(n_states=2, max_iter=1))
    assert info.value.result.energies.shape == (2,)


def test_assign_vibrational_labels_and_signs():
    op = PerimetricHamiltonian(SMALL, band_labels(2))
    res = lowest_eigenpairs(op, EigenRequest(n_states=3))
    flipped = EigenResult(res.energies[::-1].copy(), -res.vectors[:, ::-1], res.residuals[::-1], 1)
    wfs = assign_vibrational(flipped, band_labels(2), SMALL)
    assert [w.label.v for w in wfs] == [0, 1, 2]
    assert [w.energy for w in wfs] == sorted(res.energies)
    for w in wfs:
        assert w.coeffs[np.argmax(np.abs(w.coeffs))] > 0
        assert not w.metadata["near_degenerate"]


def test_degenerate_pairs_flagged():
    spec, lab = MeshSpec(2, 2), band_labels(0)
    assert len(enumerate_basis(spec, lab)) == 6
    res = EigenResult(np.array([-0.6, -0.6]), np.eye(6)[:, :2], np.zeros(2), 1)
    wfs = assign_vibrational(res, lab, spec)
    assert all(w.metadata["near_degenerate"] for w in wfs)


def test_continuum_filter():
    spec, lab = MeshSpec(6, 3, 2.0, 0.5), band_labels(0)
    basis = enumerate_basis(spec, lab)
    p = spec.mesh_xy.points
    R = 0.5 * (p[basis.entries[:, 1] - 1] + p[basis.entries[:, 2] - 1])
    inner = np.where(R < 5, 1.0, 0.0)
    outer = np.where(R > 10, 1.0, 0.0)
    vecs = np.stack([inner / np.linalg.norm(inner), outer / np.linalg.norm(outer)], axis=1)
    res = EigenResult(np.array([-0.49, -0.495]), vecs, np.zeros(2), 1)
    wf_out = MeshWavefunction(lab, spec, vecs[:, 1], -0.495)
    assert outer_probability(wf_out) == pytest.approx(1.0)
    kept = assign_vibrational(res, lab, spec, leak_tol=1e-3)
    assert len(kept) == 1 and kept[0].energy == -0.49 and kept[0].label.v == 0
    assert kept[0].quasibound
    assert len(assign_vibrational(res, lab, spec)) == 2


def test_solve_band_small():
    wfs = solve_band(SMALL, 1, n_states=2)
    assert [w.label.v for w in wfs] == [0, 1]
    assert wfs[0].energy < wfs[1].energy < DISSOCIATION_ENERGY


def test_wavefunction_file_round_trip(tmp_path):
    wf = solve_band(SMALL, 2, n_states=1)[0]
    path = tmp_path / "wf.npz"
    save_wavefunction(wf, path)
    back = load_wavefunction(path)
    assert back.label == wf.label and back.spec == wf.spec
    assert back.energy == wf.energy and np.array_equal(back.coeffs, wf.coeffs)


def test_wavefunction_file_version_check(tmp_path):
    wf = solve_band(SMALL, 0, n_states=1)[0]
    path = tmp_path / "wf.npz"
    save_wavefunction(wf, path)
    with np.load(path) as f:
        data = dict(f)
    data["version"] = np.array(99)
    np.savez(tmp_path / "bad.npz", **data)
    with pytest.raises(ValueError, match="version"):
        load_wavefunction(tmp_path / "bad.npz")
    data["format"] = np.array("other")
    np.savez(tmp_path / "bad2.npz", **data)
    with pytest.raises(ValueError, match="not a wavefunction"):
        load_wavefunction(tmp_path / "bad2.npz")
