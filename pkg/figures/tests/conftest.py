import struct
import subprocess
import sys

import numpy as np
import pytest

PRIMARY = "precondlab"


def run_cli(args):
    proc = subprocess.run([PRIMARY] + args, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr + proc.stdout
    return proc


def write_idx_pair(dirpath, n=320, side=28, seed=0):
    """Minimal IDX files (documented big-endian format) with 10 class templates."""
    rng = np.random.default_rng(seed)
    templates = (rng.random((10, side * side)) > 0.6).astype(np.uint8) * 200
    labels = rng.integers(0, 10, size=n).astype(np.uint8)
    images = templates[labels] + rng.integers(0, 40, size=(n, side * side)).astype(np.uint8)
    images_path = dirpath / "images-idx3-ubyte"
    labels_path = dirpath / "labels-idx1-ubyte"
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, side, side))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    return images_path, labels_path


@pytest.fixture(scope="session")
def csv_bundle(tmp_path_factory):
    """Freshly generated CSVs for every figure id, produced through the
    primary package's command line interface."""
    root = tmp_path_factory.mktemp("csvs")

    rob = root / "robustness"
    run_cli([
        "robustness", "--out", str(rob),
        "--set", 'case="High"',
        "--set", "p_list=[0.0,-1.0,-2.0]",
        "--set", "snr_list=[1.0,3.0]",
        "--set", "seeds=[0,1]",
        "--set", "steps=40",
        "--set", "log_every=20",
        "--set", "n_test=100",
        "--set", "d_h=8",
    ])

    tr = root / "transfer"
    run_cli([
        "transfer", "--out", str(tr),
        "--set", "p_list=[0.0,-1.0]",
        "--set", "seeds=[0]",
        "--set", "steps=30",
        "--set", "n_test=100",
        "--set", "n_val=50",
        "--set", "d_h=8",
    ])

    idx_dir = tmp_path_factory.mktemp("idx")
    images_path, labels_path = write_idx_pair(idx_dir)
    ood = root / "ood"
    run_cli([
        "ood", "--out", str(ood),
        "--set", f'mnist_images="{images_path}"',
        "--set", f'mnist_labels="{labels_path}"',
        "--set", 'optimizers=["gd"]',
        "--set", "lr_grid=[0.01]",
        "--set", "ood_seeds=[0]",
        "--set", "ood_steps=40",
        "--set", "n_ood_train=150",
        "--set", "n_ood_val=50",
        "--set", "n_ood_test=50",
        "--set", "d_h=8",
    ])

    return {
        "robustness_final": rob / "robustness_summary.csv",
        "robustness_traj": rob / "robustness_traj.csv",
        "ood_columns": ood / "ood_summary.csv",
        "transfer_bars": tr / "transfer_summary.csv",
    }
