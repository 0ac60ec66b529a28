import numpy as np
import pytest

from precondlab.data import (
    DataError,
    TeacherSpec,
    build_ood,
    calibrate_sigma,
    export_csv,
    load_mnist_idx,
    make_spectrum,
    make_teacher,
    make_transfer_pair,
    make_transfer_specs,
    one_hot,
    synth_generate,
    teacher_label,
    teacher_signal,
    write_idx_images,
    write_idx_labels,
)


class TestSpectrum:
    def test_high_case(self):
        spec = make_spectrum("High", 10, 10.0)
        assert spec.s_squared[0] == 10.0
        assert np.all(spec.s_squared[1:] == 0.1)
        assert np.array_equal(spec.u, np.eye(10))

    def test_low_case(self):
        spec = make_spectrum("Low", 10, 10.0)
        assert np.all(spec.s_squared[:-1] == 10.0)
        assert spec.s_squared[-1] == 0.1

    def test_isotropic_degenerate(self):
        hi = make_spectrum("High", 6, 1.0)
        lo = make_spectrum("Low", 6, 1.0)
        assert np.array_equal(hi.s_squared, lo.s_squared)

    def test_rejects_bad_case(self):
        with pytest.raises(ValueError):
            make_spectrum("Medium", 10, 10.0)


class TestTeacher:
    def test_alignments(self):
        assert np.argmax(make_teacher("High", 10).alpha) == 0
        assert np.argmax(make_teacher("Low", 10).alpha) == 9

    def test_single_dim_degenerate(self):
        assert np.array_equal(make_teacher("High", 1).alpha, make_teacher("Low", 1).alpha)

    def test_label_softplus_zero(self):
        teacher = make_teacher("High", 4)
        assert abs(teacher_label(np.zeros(4), teacher, 0.0) - np.log(2.0)) < 1e-15

    def test_label_linear_regime(self):
        teacher = make_teacher("High", 4)
        beta = np.zeros(4)
        beta[0] = 10.0  # argument = steepness * 10 = 100
        assert abs(teacher_label(beta, teacher, 0.0) - 100.0) < 1e-12

    def test_label_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        teacher = TeacherSpec(alpha=rng.standard_normal(5), steepness=3.0, sigma_noise=0.4)
        for _ in range(20):
            beta = rng.standard_normal(5)
            noise = rng.standard_normal()
            arg = 3.0 * float(teacher.alpha @ beta)
            ref = np.log1p(np.exp(arg)) if arg < 30 else arg + np.log1p(np.exp(-arg))
            assert abs(teacher_label(beta, teacher, noise) - (ref + 0.4 * noise)) < 1e-12

    def test_vectorized_signal(self):
        rng = np.random.default_rng(1)
        teacher = make_teacher("Low", 6)
        beta = rng.standard_normal((6, 9))
        sig = teacher_signal(beta, teacher)
        for i in range(9):
            assert abs(sig[i] - teacher_label(beta[:, i], teacher, 0.0)) < 1e-12

    def test_zero_alpha_rejected(self):
        with pytest.raises(ValueError):
            TeacherSpec(alpha=np.zeros(3))


class TestCalibrateSigma:
    def test_definition(self):
        vals = np.array([0.0, 4.0])  # population std = 2
        assert abs(calibrate_sigma(vals, 4.0) - 1.0) < 1e-14

    def test_unit_snr(self):
        rng = np.random.default_rng(2)
        vals = rng.standard_normal(1000) * 3.0
        assert abs(calibrate_sigma(vals, 1.0) - np.std(vals)) < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        vals = rng.standard_normal(100)
        assert calibrate_sigma(vals, 2.0) == pytest.approx(calibrate_sigma(vals + 7.0, 2.0))

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="zero-variance"):
            calibrate_sigma(np.ones(10), 2.0)


class TestSynthGenerate:
    def test_constant_teacher_noiseless(self):
        spec = make_spectrum("High", 4, 10.0)
        teacher = TeacherSpec(alpha=np.array([1.0, 0, 0, 0]), steepness=0.0)
        ds = synth_generate(spec, teacher, 50, None, 0)
        assert np.allclose(ds.y, np.log(2.0))

    def test_latent_identity_holds_exactly(self):
        spec = make_spectrum("Low", 5, 10.0)
        teacher = make_teacher("Low", 5)
        ds = synth_generate(spec, teacher, 64, 2.0, 1)
        ref = spec.u @ (np.sqrt(spec.s_squared)[:, None] * ds.beta)
        assert np.array_equal(ds.x, ref)

    def test_covariance_moment_check(self):
        spec = make_spectrum("High", 6, 10.0)
        teacher = make_teacher("High", 6)
        ds = synth_generate(spec, teacher, 100_000, 3.0, 2)
        emp = ds.x @ ds.x.T / ds.n
        target = spec.u @ np.diag(spec.s_squared) @ spec.u.T
        assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.10

    def test_empirical_snr(self):
        spec = make_spectrum("High", 6, 10.0)
        teacher = make_teacher("High", 6)
        ds = synth_generate(spec, teacher, 100_000, 2.0, 3)
        sig = teacher_signal(ds.beta, teacher)
        snr = np.var(sig) / np.var(ds.y[0] - sig)
        assert abs(snr - 2.0) / 2.0 < 0.05

    def test_reproducible(self):
        spec = make_spectrum("High", 4, 10.0)
        teacher = make_teacher("High", 4)
        a = synth_generate(spec, teacher, 32, 1.0, 4)
        b = synth_generate(spec, teacher, 32, 1.0, 4)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_csv_export(self, tmp_path):
        spec = make_spectrum("High", 3, 10.0)
        teacher = make_teacher("High", 3)
        ds = synth_generate(spec, teacher, 5, 1.0, 5)
        path = tmp_path / "dump.csv"
        export_csv(ds, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x0,x1,x2,y"
        assert len(lines) == 6
        first = [float(v) for v in lines[1].split(",")]
        assert first[0] == ds.x[0, 0] and first[-1] == ds.y[0, 0]


class TestTransfer:
    def test_spectrum_layout(self):
        spectrum, t1, t2 = make_transfer_specs("HighToLow", 10, 10.0)
        assert np.all(spectrum.s_squared[:5] == 10.0)
        assert np.all(spectrum.s_squared[5:] == 0.1)
        assert np.argmax(t1.alpha) == 0 and np.argmax(t2.alpha) == 9

    def test_direction_swap(self):
        _, t1, t2 = make_transfer_specs("LowToHigh", 8, 10.0)
        assert np.argmax(t1.alpha) == 7 and np.argmax(t2.alpha) == 0

    def test_isotropic_lambda_tasks_differ_only_in_alpha(self):
        spectrum, t1, t2 = make_transfer_specs("HighToLow", 6, 1.0)
        assert np.all(spectrum.s_squared == 1.0)
        assert not np.array_equal(t1.alpha, t2.alpha)

    def test_pair_draws_are_independent(self):
        a, b = make_transfer_pair("HighToLow", 6, 10.0, 40, 1.0, 7)
        assert a.x.shape == b.x.shape == (6, 40)
        assert not np.allclose(a.x, b.x)

    def test_odd_dimension_rejected(self):
        with pytest.raises(ValueError, match="even"):
            make_transfer_specs("HighToLow", 7, 10.0)


class TestIdx:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        images = rng.random((784, 2))
        labels = np.array([3, 9])
        write_idx_images(images, tmp_path / "im", 28, 28)
        write_idx_labels(labels, tmp_path / "la")
        loaded, lab = load_mnist_idx(tmp_path / "im", tmp_path / "la")
        assert np.array_equal(lab, labels)
        # quantized to byte resolution
        assert np.max(np.abs(loaded - images)) <= 0.5 / 255.0

    def test_full_intensity_maps_to_one(self, tmp_path):
        write_idx_images(np.ones((4, 1)), tmp_path / "im", 2, 2)
        write_idx_labels(np.array([0]), tmp_path / "la")
        loaded, _ = load_mnist_idx(tmp_path / "im", tmp_path / "la")
        assert np.all(loaded == 1.0)

    def test_header_magic(self, tmp_path):
        write_idx_images(np.zeros((4, 1)), tmp_path / "im", 2, 2)
        raw = (tmp_path / "im").read_bytes()
        assert raw[:4] == b"\x00\x00\x08\x03"

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"\x00\x00\x07\x03" + b"\x00" * 16)
        write_idx_labels(np.array([0]), tmp_path / "la")
        with pytest.raises(DataError, match="bad magic"):
            load_mnist_idx(tmp_path / "bad", tmp_path / "la")

    def test_truncated_rejected(self, tmp_path):
        write_idx_images(np.zeros((4, 2)), tmp_path / "im", 2, 2)
        raw = (tmp_path / "im").read_bytes()
        (tmp_path / "tr").write_bytes(raw[:-3])
        write_idx_labels(np.array([0, 1]), tmp_path / "la")
        with pytest.raises(DataError, match="truncated"):
            load_mnist_idx(tmp_path / "tr", tmp_path / "la")

    def test_count_mismatch_rejected(self, tmp_path):
        write_idx_images(np.zeros((4, 2)), tmp_path / "im", 2, 2)
        write_idx_labels(np.array([0, 1, 2]), tmp_path / "la")
        with pytest.raises(DataError, match="count"):
            load_mnist_idx(tmp_path / "im", tmp_path / "la")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_mnist_idx(tmp_path / "nope", tmp_path / "nope2")

    def test_digits_corpus(self, digits_idx):
        images, labels = load_mnist_idx(*digits_idx)
        assert images.shape[0] == 784
        assert images.shape[1] == labels.shape[0] == 1797
        assert 0.0 <= images.min() and images.max() <= 1.0
        assert set(np.unique(labels)) == set(range(10))


class TestBuildOod:
    @staticmethod
    def source(n=600, d=50, lo=0.3, hi=0.7, seed=8):
        rng = np.random.default_rng(seed)
        images = rng.uniform(lo, hi, size=(d, n))
        labels = rng.integers(0, 10, size=n)
        return images, labels

    @staticmethod
    def quantized(col):
        # add-then-subtract of the noise pattern leaves ~1e-17 rounding, so
        # match columns on a coarse grid rather than exact bytes
        return np.round(col * 1e9).astype(np.int64).tobytes()

    def test_train_is_clean_plus_bank(self):
        images, labels = self.source()
        ds = build_ood(images, labels, 0.05, 0, n_train=200, n_val=50, n_test=100)
        # no clamping can occur for these ranges, so train - bank[label] must
        # recover columns of the source exactly
        recovered = ds.train_x - ds.noise_bank[ds.train_labels].T
        cols = {self.quantized(images[:, i]) for i in range(images.shape[1])}
        for i in range(recovered.shape[1]):
            assert self.quantized(recovered[:, i]) in cols

    def test_flip_noise_shifts_bank_keeps_label(self):
        images, labels = self.source(seed=9)
        ds = build_ood(images, labels, 0.05, 1, n_train=200, n_val=50, n_test=100)
        recovered = ds.flip_noise_x - ds.noise_bank[(ds.flip_noise_labels + 1) % 10].T
        cols = {self.quantized(images[:, i]) for i in range(images.shape[1])}
        for i in range(recovered.shape[1]):
            assert self.quantized(recovered[:, i]) in cols

    def test_flip_digit_pairs_digit_with_previous_class_bank(self):
        images, labels = self.source(seed=10)
        ds = build_ood(images, labels, 0.05, 2, n_train=200, n_val=50, n_test=100)
        # label is the noise class c; subtracting bank[c] must recover a clean
        # image whose digit is pi(c) = c + 1
        recovered = ds.flip_digit_x - ds.noise_bank[ds.flip_digit_labels].T
        by_digit = {}
        for i in range(images.shape[1]):
            by_digit.setdefault(int(labels[i]), set()).add(self.quantized(images[:, i]))
        for i in range(recovered.shape[1]):
            digit = int((ds.flip_digit_labels[i] + 1) % 10)
            assert self.quantized(recovered[:, i]) in by_digit[digit]

    def test_zero_noise_collapses_to_clean(self):
        images, labels = self.source(seed=11)
        ds = build_ood(images, labels, 0.0, 3, n_train=200, n_val=50, n_test=100)
        assert np.all(ds.noise_bank == 0.0)
        cols = {images[:, i].tobytes() for i in range(images.shape[1])}
        for i in range(ds.flip_noise_x.shape[1]):
            assert ds.flip_noise_x[:, i].tobytes() in cols

    def test_deterministic_bank(self):
        images, labels = self.source(seed=12)
        a = build_ood(images, labels, 0.1, 7, n_train=200, n_val=50, n_test=100)
        b = build_ood(images, labels, 0.1, 7, n_train=200, n_val=50, n_test=100)
        assert np.array_equal(a.noise_bank, b.noise_bank)
        assert np.array_equal(a.train_x, b.train_x)

    def test_per_class_mean_recovers_bank(self):
        images, labels = self.source(n=2000, seed=13)
        ds = build_ood(images, labels, 0.05, 4, n_train=1000, n_val=100, n_test=100)
        for c in range(10):
            mask = ds.train_labels == c
            if not np.any(mask):
                continue
            diff = ds.train_x[:, mask] - ds.noise_bank[np.full(mask.sum(), c)].T
            mean_noise = (ds.train_x[:, mask] - diff).mean(axis=1)
            assert np.max(np.abs(mean_noise - ds.noise_bank[c])) < 1e-12

    def test_subset_too_large(self):
        images, labels = self.source(n=100)
        with pytest.raises(ValueError, match="source has only"):
            build_ood(images, labels, 0.1, 0, n_train=80, n_val=20, n_test=50)

    def test_clamping(self):
        images, labels = self.source(lo=0.0, hi=1.0, seed=14)
        ds = build_ood(images, labels, 5.0, 5, n_train=200, n_val=50, n_test=100)
        assert ds.train_x.min() >= -0.5 and ds.train_x.max() <= 1.5

    def test_negative_sigma_rejected(self):
        images, labels = self.source()
        with pytest.raises(ValueError):
            build_ood(images, labels, -0.1, 0)


def test_one_hot():
    y = one_hot(np.array([0, 3, 9]), 10)
    assert y.shape == (10, 3)
    assert y[0, 0] == y[3, 1] == y[9, 2] == 1.0
    assert y.sum() == 3.0
