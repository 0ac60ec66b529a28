"""Dataset construction: synthetic single-index teacher data, transfer-task
pairs, IDX-format image ingestion, and the spurious-noise OOD assembly.

Synthetic inputs follow the latent model x = U S beta with beta ~ N(0, I), so
the stored latent coefficients reproduce the labels exactly.  All generation
is deterministic given a seed.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SpectrumSpec",
    "TeacherSpec",
    "Dataset",
    "OodDataset",
    "make_spectrum",
    "make_teacher",
    "teacher_label",
    "teacher_signal",
    "calibrate_sigma",
    "synth_generate",
    "make_transfer_specs",
    "make_transfer_pair",
    "load_mnist_idx",
    "write_idx_images",
    "write_idx_labels",
    "write_digits_idx",
    "build_ood",
    "one_hot",
    "export_csv",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CASES = ("High", "Low")
DIRECTIONS = ("HighToLow", "LowToHigh")


class DataError(RuntimeError):
    """Raised for unreadable or inconsistent external data files."""


@dataclass(frozen=True)
class SpectrumSpec:
    """Prescribed input geometry: eigenbasis U and squared singular values."""

    d_x: int
    u: np.ndarray  # (d_x, d_x) orthogonal
    s_squared: np.ndarray  # (d_x,) positive

    def __post_init__(self):
        if self.u.shape != (self.d_x, self.d_x):
            raise ValueError(f"U has shape {self.u.shape}, expected ({self.d_x}, {self.d_x})")
        ortho = np.max(np.abs(self.u.T @ self.u - np.eye(self.d_x)))
        if ortho > 1e-10:
            raise ValueError(f"U is not orthogonal: max |U^T U - I| = {ortho:.3e}")
        if self.s_squared.shape != (self.d_x,) or np.any(self.s_squared <= 0):
            raise ValueError("s_squared must be d_x positive values")


@dataclass(frozen=True)
class TeacherSpec:
    """Single-index teacher: label = softplus(steepness * alpha . beta) + noise."""

    alpha: np.ndarray  # (d_x,)
    steepness: float = 10.0
    sigma_noise: float | None = None  # None until calibrated

    def __post_init__(self):
        if np.linalg.norm(self.alpha) == 0:
            raise ValueError("teacher coefficient vector must be nonzero")
        if self.sigma_noise is not None and self.sigma_noise < 0:
            raise ValueError(f"sigma_noise must be >= 0, got {self.sigma_noise}")


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (d_x, n)
    y: np.ndarray  # (d_y, n)
    beta: np.ndarray | None = None  # (d_x, n) latent coefficients, synthetic only
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class OodDataset:
    """MNIST-style splits with class-keyed additive noise patterns.

    Training couples the digit class and the noise class; the two test splits
    break the coupling by shifting either the noise pattern (label stays the
    digit) or the digit (label stays the noise class).
    """

    train_x: np.ndarray
    train_labels: np.ndarray
    val_x: np.ndarray
    val_labels: np.ndarray
    flip_noise_x: np.ndarray
    flip_noise_labels: np.ndarray
    flip_digit_x: np.ndarray
    flip_digit_labels: np.ndarray
    noise_bank: np.ndarray  # (10, d)
    sigma_n: float


def make_spectrum(case: str, d_x: int, lam: float) -> SpectrumSpec:
    """Spectrum with one extreme eigenvalue: ``High`` puts the unique large
    value (lam) first, ``Low`` puts the unique small value (1/lam) last."""
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}, got {case!r}")
    if lam <= 0 or d_x < 2:
        raise ValueError(f"need lam > 0 and d_x >= 2, got lam={lam}, d_x={d_x}")
    s2 = np.full(d_x, 1.0 / lam)
    if case == "High":
        s2[0] = lam
    else:
        s2 = np.full(d_x, lam)
        s2[-1] = 1.0 / lam
    return SpectrumSpec(d_x=d_x, u=np.eye(d_x), s_squared=s2)


def make_teacher(case: str, d_x: int) -> TeacherSpec:
    """Teacher aligned with the extreme spectral direction of the case."""
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}, got {case!r}")
    alpha = np.zeros(d_x)
    alpha[0 if case == "High" else -1] = 1.0
    return TeacherSpec(alpha=alpha)


def _softplus(arg: np.ndarray | float) -> np.ndarray | float:
    # log(1 + exp(arg)) without overflow for large |arg|
    return np.logaddexp(0.0, arg)


def teacher_signal(beta: np.ndarray, teacher: TeacherSpec) -> np.ndarray:
    """Noiseless labels for latent coefficients beta of shape (d_x, n)."""
    return _softplus(teacher.steepness * (teacher.alpha @ beta))


def teacher_label(beta: np.ndarray, teacher: TeacherSpec, noise_draw: float) -> float:
    """Label for a single latent vector with an explicit unit noise draw."""
    sigma = teacher.sigma_noise if teacher.sigma_noise is not None else 0.0
    return float(_softplus(teacher.steepness * float(teacher.alpha @ beta)) + sigma * noise_draw)


def calibrate_sigma(signal_values: np.ndarray, target_snr: float) -> float:
    """Noise level giving Var(signal) / sigma^2 = target_snr (population std)."""
    if target_snr <= 0:
        raise ValueError(f"target_snr must be > 0, got {target_snr}")
    signal_values = np.asarray(signal_values, dtype=float).ravel()
    if signal_values.size < 2:
        raise ValueError("need at least 2 signal values to calibrate")
    std = float(np.std(signal_values))
    if std == 0.0:
        raise ValueError("cannot calibrate noise against a zero-variance signal")
    return std / np.sqrt(target_snr)


def synth_generate(
    spectrum: SpectrumSpec,
    teacher: TeacherSpec,
    n: int,
    target_snr: float | None,
    seed: int | np.random.Generator,
    case_tag: str = "",
) -> Dataset:
    """Draw beta ~ N(0, I), map to x = U S beta, label through the teacher.

    The noise level is calibrated on this draw's noiseless signals to hit
    ``target_snr``; pass None to generate noiseless labels.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    beta = rng.standard_normal((spectrum.d_x, n))
    x = spectrum.u @ (np.sqrt(spectrum.s_squared)[:, None] * beta)
    signal = teacher_signal(beta, teacher)
    if target_snr is None:
        sigma = 0.0
        y = signal[None, :].copy()
    else:
        sigma = calibrate_sigma(signal, target_snr)
        y = (signal + sigma * rng.standard_normal(n))[None, :]
    meta = {
        "case": case_tag,
        "snr": target_snr,
        "seed": None if isinstance(seed, np.random.Generator) else int(seed),
        "sigma": sigma,
        "n": n,
    }
    return Dataset(x=x, y=y, beta=beta, meta=meta)


def make_transfer_specs(
    direction: str, d_x: int, lam: float
) -> tuple[SpectrumSpec, TeacherSpec, TeacherSpec]:
    """Shared half-and-half spectrum plus the two task teachers.

    The spectrum is lam on the first d_x/2 directions and 1/lam on the rest;
    the source teacher sits on one extreme direction and the target teacher on
    the opposite one.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if d_x % 2 != 0:
        raise ValueError(f"d_x must be even, got {d_x}")
    if lam <= 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    s2 = np.concatenate([np.full(d_x // 2, lam), np.full(d_x // 2, 1.0 / lam)])
    spectrum = SpectrumSpec(d_x=d_x, u=np.eye(d_x), s_squared=s2)
    alpha_first = np.zeros(d_x)
    alpha_first[0] = 1.0
    alpha_last = np.zeros(d_x)
    alpha_last[-1] = 1.0
    if direction == "HighToLow":
        return spectrum, TeacherSpec(alpha=alpha_first), TeacherSpec(alpha=alpha_last)
    return spectrum, TeacherSpec(alpha=alpha_last), TeacherSpec(alpha=alpha_first)


def make_transfer_pair(
    direction: str,
    d_x: int,
    lam: float,
    n: int,
    target_snr: float | None,
    seed: int,
) -> tuple[Dataset, Dataset]:
    """Independent draws for the source and target tasks of a direction."""
    spectrum, teacher1, teacher2 = make_transfer_specs(direction, d_x, lam)
    ss1, ss2 = np.random.SeedSequence(seed).spawn(2)
    task1 = synth_generate(
        spectrum, teacher1, n, target_snr, np.random.default_rng(ss1), case_tag=f"{direction}/task1"
    )
    task2 = synth_generate(
        spectrum, teacher2, n, target_snr, np.random.default_rng(ss2), case_tag=f"{direction}/task2"
    )
    return task1, task2


def _read_exact(f, count: int, path: Path) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise DataError(f"{path}: truncated file (wanted {count} bytes, got {len(buf)})")
    return buf


def load_mnist_idx(images_path: str | Path, labels_path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read big-endian IDX image/label files into ((d, n) floats in [0,1], (n,) ints)."""
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    for p in (images_path, labels_path):
        if not p.exists():
            raise DataError(f"{p}: file not found")
    with open(images_path, "rb") as f:
        magic, n_img, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(f, n_img * rows * cols, images_path)
    with open(labels_path, "rb") as f:
        magic, n_lab = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise DataError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        raw_labels = _read_exact(f, n_lab, labels_path)
    if n_img != n_lab:
        raise DataError(f"image count {n_img} != label count {n_lab}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n_img, rows * cols).T
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return images.astype(float) / 255.0, labels


def write_idx_images(images: np.ndarray, path: str | Path, rows: int, cols: int) -> None:
    """Write a (d, n) array of [0,1] pixel columns as a big-endian IDX image file."""
    d, n = images.shape
    if d != rows * cols:
        raise ValueError(f"images have {d} pixels per column, expected {rows}x{cols}")
    data = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8).T
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(data.tobytes())


def write_idx_labels(labels: np.ndarray, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def write_digits_idx(out_dir: str | Path, upscale: int = 4) -> tuple[Path, Path]:
    """Materialize an offline handwritten-digit corpus in MNIST IDX layout.

    Uses scikit-learn's bundled 8x8 handwritten digits, pixel-replicated to
    28x28, as a stand-in when the real MNIST files are not available locally.
    Returns (images_path, labels_path).
    """
    try:
        from sklearn.datasets import load_digits
    except ImportError as exc:  # pragma: no cover
        raise DataError(
            "scikit-learn is required to build the fallback digit corpus; "
            "install it or point the config at real MNIST IDX files"
        ) from exc
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bunch = load_digits()
    imgs = bunch.images / 16.0  # (n, 8, 8) in [0, 1]
    big = np.kron(imgs, np.ones((1, upscale, upscale)))  # (n, 32, 32)
    lo = (big.shape[1] - 28) // 2
    big = big[:, lo : lo + 28, lo : lo + 28]
    images = big.reshape(big.shape[0], -1).T  # (784, n)
    images_path = out_dir / "digits-images-idx3-ubyte"
    labels_path = out_dir / "digits-labels-idx1-ubyte"
    write_idx_images(images, images_path, 28, 28)
    write_idx_labels(bunch.target, labels_path)
    return images_path, labels_path


def build_ood(
    images: np.ndarray,
    labels: np.ndarray,
    sigma_n: float,
    seed: int,
    n_train: int = 2000,
    n_val: int = 500,
    n_test: int = 2000,
) -> OodDataset:
    """Assemble the correlation-shift splits from a clean image pool.

    One Gaussian pattern per class (std sigma_n) is added to every image: the
    train/val splits couple pattern and digit, the flip-noise split shifts the
    pattern by one class keeping the digit label, and the flip-digit split
    pairs each digit with the preceding class's pattern and labels by the
    pattern class.  Pixels are clamped to [-0.5, 1.5].
    """
    if sigma_n < 0:
        raise ValueError(f"sigma_n must be >= 0, got {sigma_n}")
    d, n_source = images.shape
    need = n_train + n_val + 2 * n_test
    if need > n_source:
        raise ValueError(f"requested {need} samples but source has only {n_source}")
    rng = np.random.default_rng(seed)
    bank = rng.normal(0.0, sigma_n, size=(10, d)) if sigma_n > 0 else np.zeros((10, d))
    perm = rng.permutation(n_source)
    cuts = np.cumsum([n_train, n_val, n_test, n_test])
    idx_train, idx_val, idx_fn, idx_fd = np.split(perm[: cuts[-1]], cuts[:-1])

    def _noised(idx: np.ndarray, noise_class: np.ndarray) -> np.ndarray:
        out = images[:, idx] + bank[noise_class].T
        return np.clip(out, -0.5, 1.5)

    lab_train = labels[idx_train]
    lab_val = labels[idx_val]
    lab_fn = labels[idx_fn]
    digit_fd = labels[idx_fd]
    noise_fd = (digit_fd - 1) % 10  # digit d gets pattern c with pi(c) = d
    return OodDataset(
        train_x=_noised(idx_train, lab_train),
        train_labels=lab_train,
        val_x=_noised(idx_val, lab_val),
        val_labels=lab_val,
        flip_noise_x=_noised(idx_fn, (lab_fn + 1) % 10),
        flip_noise_labels=lab_fn,
        flip_digit_x=_noised(idx_fd, noise_fd),
        flip_digit_labels=noise_fd,
        noise_bank=bank,
        sigma_n=float(sigma_n),
    )


def one_hot(labels: np.ndarray, n_classes: int = 10) -> np.ndarray:
    """(n_classes, n) one-hot targets for integer labels."""
    out = np.zeros((n_classes, len(labels)))
    out[labels, np.arange(len(labels))] = 1.0
    return out


def export_csv(dataset: Dataset, path: str | Path) -> None:
    """Dump a synthetic dataset as one sample per row: x0..x{d-1}, y."""
    d = dataset.x.shape[0]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(d)] + ["y"])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(v)) for v in dataset.x[:, i]] + [repr(float(dataset.y[0, i]))]
            )
