import numpy as np
import pytest

from precondlab.spectra import (
    Preconditioner,
    cross_gram,
    gram,
    matrix_power,
    sym_eig,
    thin_svd,
)


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestSymEig:
    def test_identity(self):
        eig = sym_eig(np.eye(3))
        assert np.allclose(eig.eigenvalues, 1.0)
        # columns are signed permutations of the standard basis
        assert np.allclose(np.abs(eig.eigenvectors) @ np.abs(eig.eigenvectors.T), np.eye(3))

    def test_diagonal(self):
        eig = sym_eig(np.diag([10.0, 0.1]))
        assert np.allclose(eig.eigenvalues, [10.0, 0.1])
        assert np.allclose(eig.eigenvectors, np.eye(2))

    def test_random_spd_reconstruction(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((5, 5))
        spd = m @ m.T
        eig = sym_eig(spd)
        assert rel_fro(eig.reconstruct(), spd) < 1e-9
        assert np.linalg.norm(eig.eigenvectors.T @ eig.eigenvectors - np.eye(5)) < 1e-10
        assert np.all(np.diff(eig.eigenvalues) <= 0)

    def test_sign_convention(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((4, 4))
        spd = m @ m.T
        v = sym_eig(spd).eigenvectors
        idx = np.argmax(np.abs(v), axis=0)
        assert np.all(v[idx, np.arange(4)] > 0)

    def test_rejects_asymmetric(self):
        a = np.array([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="not symmetric"):
            sym_eig(a)


class TestThinSvd:
    def test_identity_padded(self):
        x = np.hstack([np.eye(3), np.zeros((3, 2))])
        svd = thin_svd(x)
        assert np.allclose(svd.singulars, 1.0)
        assert rel_fro(svd.reconstruct(), x) < 1e-9

    def test_scaled_orthonormal_rows(self):
        rng = np.random.default_rng(2)
        q = np.linalg.qr(rng.standard_normal((6, 2)))[0].T  # 2 x 6 orthonormal rows
        x = np.diag([np.sqrt(10.0), 1.0 / np.sqrt(10.0)]) @ q
        svd = thin_svd(x)
        assert np.allclose(svd.singulars, [np.sqrt(10.0), 1.0 / np.sqrt(10.0)])

    def test_orthogonality(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 20))
        svd = thin_svd(x)
        assert np.linalg.norm(svd.left.T @ svd.left - np.eye(4)) < 1e-10
        assert np.linalg.norm(svd.right.T @ svd.right - np.eye(4)) < 1e-10
        assert rel_fro(svd.reconstruct(), x) < 1e-9

    def test_rejects_tall(self):
        with pytest.raises(ValueError, match="d <= n"):
            thin_svd(np.zeros((5, 3)))


class TestMatrixPower:
    def test_power_zero_is_exact_identity(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((4, 4))
        p = matrix_power(m @ m.T, 0.0)
        assert np.array_equal(p.matrix, np.eye(4))

    def test_diagonal_inverse(self):
        p = matrix_power(np.diag([10.0, 0.1]), -1.0, floor=0.0)
        assert np.allclose(p.matrix, np.diag([0.1, 10.0]), atol=1e-12)

    def test_inverse_sqrt_oracle(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((5, 5))
        sigma = m @ m.T
        p = matrix_power(sigma, -0.5, floor=0.0)
        assert np.linalg.norm(p.matrix @ p.matrix @ sigma - np.eye(5)) < 1e-8

    @pytest.mark.parametrize("power", [-2.0, -1.0, -0.5, 0.5, 1.0])
    def test_power_times_negated_power(self, power):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((5, 5))
        sigma = m @ m.T
        a = matrix_power(sigma, power, floor=0.0).matrix
        b = matrix_power(sigma, -power, floor=0.0).matrix
        assert np.linalg.norm(a @ b - np.eye(5)) < 1e-8

    def test_zero_matrix_negative_power_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            matrix_power(np.zeros((3, 3)), -1.0)

    def test_result_symmetric_psd(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((6, 6))
        p = matrix_power(m @ m.T, -1.5)
        assert np.array_equal(p.matrix, p.matrix.T)
        assert np.linalg.eigvalsh(p.matrix).min() >= 0


class TestGram:
    def test_identity_preconditioner(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((3, 10))
        g = gram(x, np.eye(3))
        assert np.allclose(g, x.T @ x)

    def test_inverse_power_is_projector(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 12))
        g = gram(x, matrix_power(x @ x.T, -1.0, floor=0.0))
        assert np.linalg.norm(g @ g - g) < 1e-8

    @pytest.mark.parametrize("power", [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0])
    def test_svd_decomposition(self, power):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((6, 40))
        svd = thin_svd(x)
        g = gram(x, matrix_power(x @ x.T, power, floor=0.0))
        ref = (svd.right * svd.singulars ** (2 * (power + 1))) @ svd.right.T
        assert rel_fro(g, ref) < 1e-9

    def test_orthogonal_transform_invariance(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((5, 30))
        o = np.linalg.qr(rng.standard_normal((5, 5)))[0]
        sigma = x @ x.T
        for power in (-1.0, 0.5):
            g = gram(x, matrix_power(sigma, power, floor=0.0))
            g_rot = gram(o @ x, matrix_power(o @ sigma @ o.T, power, floor=0.0))
            assert rel_fro(g_rot, g) < 1e-9

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((4, 15))
        g = gram(x, matrix_power(x @ x.T, 0.5))
        assert np.array_equal(g, g.T)
        assert np.linalg.eigvalsh(g).min() >= -1e-9 * np.trace(g)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            gram(np.zeros((3, 5)), np.eye(4))


class TestCrossGram:
    def test_zero_point(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((4, 9))
        assert np.allclose(cross_gram(x, np.eye(4), np.zeros(4)), 0.0)

    def test_column_recovery(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((4, 9))
        c = cross_gram(x, np.eye(4), x[:, 2])
        assert np.allclose(c, (x.T @ x)[:, 2])

    def test_svd_assembly(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((5, 25))
        point = rng.standard_normal(5)
        svd = thin_svd(x)
        beta = (svd.left.T @ point) / svd.singulars
        for power in (-1.0, 0.5):
            c = cross_gram(x, matrix_power(x @ x.T, power, floor=0.0), point)
            ref = svd.right @ (svd.singulars ** (2 * (power + 1)) * beta)
            assert np.linalg.norm(c - ref) / np.linalg.norm(ref) < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            cross_gram(np.zeros((3, 5)), np.eye(3), np.zeros(4))


def test_preconditioner_dataclass_carries_metadata():
    p = matrix_power(np.diag([4.0, 1.0]), -1.0, floor=1e-8)
    assert isinstance(p, Preconditioner)
    assert p.power == -1.0
    assert p.floor == 1e-8
