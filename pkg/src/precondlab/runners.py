"""Experiment orchestration and command-line interface.

Three studies (noise robustness, OOD ranking under correlation shift, forward
transfer with a frozen first layer) plus the verification suite, all driven
by a JSON config and emitting RFC-4180 CSV files with a manifest.  Per-run
random streams are derived by hashing the run identity, so results are
reproducible byte-for-byte (wall-time columns aside) for a given config and
independent of worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import multiprocessing
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .data import (
    DataError,
    build_ood,
    load_mnist_idx,
    make_spectrum,
    make_teacher,
    make_transfer_specs,
    one_hot,
    synth_generate,
)
from .model import MlpParams, forward, init_params, mse_loss
from .optim import OptimState, PreconditionerSpec, ridge_closed_form, step
from .spectra import matrix_power

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "derive_seed",
    "run_training",
    "run_robustness",
    "run_ood",
    "run_transfer",
    "run_verify",
    "cli_main",
]

SUBCOMMANDS = ("robustness", "ood", "transfer", "verify", "dump-config")
EXPERIMENTS = ("robustness", "ood", "transfer", "verify")
RIDGE_GRID = tuple(float(v) for v in np.logspace(-6.0, 2.0, 9))
CHECK_EVERY = 50  # divergence-detection cadence in steps

USAGE = """\
usage: precondlab <subcommand> [--config PATH] [--set key=value ...] [--out DIR] [--jobs N]

subcommands:
  robustness   noise-robustness sweep over preconditioner powers and SNR
  ood          correlation-shift comparison of optimizers on an image corpus
  transfer     frozen-first-layer forward transfer between paired tasks
  verify       run the theory-verification suite
  dump-config  print the default JSON config and exit
"""


class ConfigError(RuntimeError):
    """Raised for malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; unknown keys in a JSON file are errors.

    An empty ``optimizers`` list means the per-experiment default:
    robustness -> [cov_power, adahessian], transfer -> [cov_power],
    ood -> [gd, sam_gd, adam, adahessian].
    """

    experiment: str = "robustness"
    case: str = "both"  # robustness: High | Low | both
    direction: str = "both"  # transfer: HighToLow | LowToHigh | both
    p_list: list = field(default_factory=lambda: [0.0, -0.5, -1.0, -1.5, -2.0])
    ood_p_list: list = field(default_factory=lambda: [1.0, 0.5, 0.0, -0.5, -1.0, -1.5, -2.0])
    snr_list: list = field(default_factory=lambda: [5.0, 4.0, 3.0, 2.0, 1.0])
    seeds: list = field(default_factory=lambda: list(range(10)))
    ood_seeds: list = field(default_factory=lambda: list(range(5)))
    steps: int = 10000
    lr: float = 1e-2
    weight_decay: float = 1e-6
    d_x: int = 10
    d_h: int = 256
    n_train: int = 200
    n_test: int = 10000
    n_val: int = 200
    lam: float = 10.0
    init_sigma: float = 0.1
    log_every: int = 50
    optimizers: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    hutchinson_samples: int = 1
    rho: float = 0.05
    eig_floor: float = 1e-10
    divergence_threshold: float = 1e12
    transfer_snr: float = 1.0
    mnist_images: str = ""
    mnist_labels: str = ""
    sigma_n: float = 0.1
    ood_steps: int = 3000
    n_ood_train: int = 2000
    n_ood_val: int = 500
    n_ood_test: int = 2000
    lr_grid: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1])
    rho_grid: list = field(default_factory=lambda: [0.01, 0.05, 0.1])
    output_dir: str = "precondlab_out"

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.case not in ("High", "Low", "both"):
            raise ConfigError(f"case must be High, Low or both, got {self.case!r}")
        if self.direction not in ("HighToLow", "LowToHigh", "both"):
            raise ConfigError(f"direction must be HighToLow, LowToHigh or both, got {self.direction!r}")
        if not self.seeds or not self.ood_seeds:
            raise ConfigError("seed lists must be non-empty")
        if self.steps < 0 or self.ood_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.log_every <= 0:
            raise ConfigError("log_every must be > 0")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("need lr > 0 and weight_decay >= 0")
        if self.d_x < 2 or self.d_h < 1 or self.n_train < 2:
            raise ConfigError("need d_x >= 2, d_h >= 1, n_train >= 2")
        if not self.p_list or not self.snr_list:
            raise ConfigError("p_list and snr_list must be non-empty")
        known = {"gd", "cov_power", "adahessian", "adam", "sam_gd"}
        bad = [o for o in self.optimizers if o not in known]
        if bad:
            raise ConfigError(f"unknown optimizer(s) {bad}; choose from {sorted(known)}")

    def resolved_optimizers(self) -> list[str]:
        if self.optimizers:
            return list(self.optimizers)
        return {
            "robustness": ["cov_power", "adahessian"],
            "transfer": ["cov_power"],
            "ood": ["gd", "sam_gd", "adam", "adahessian"],
            "verify": [],
        }[self.experiment]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Defaults, optionally merged with a JSON file and ``key=value`` overrides."""
    base = dataclasses.asdict(ExperimentConfig())
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"malformed JSON in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"config root must be a JSON object, got {type(obj).__name__}")
        unknown = sorted(set(obj) - set(base))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        base.update(obj)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        if key not in base:
            raise ConfigError(f"unknown config key in --set: {key!r}")
        try:
            base[key] = json.loads(raw)
        except json.JSONDecodeError:
            base[key] = raw
    cfg = ExperimentConfig(**base)
    cfg.validate()
    return cfg


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from the run identity.

    Every run hashes its own (experiment, case/method, p, snr, seed-index,
    stream) tuple, so extending a sweep never perturbs existing streams.
    """
    canon = "|".join(repr(float(p)) if isinstance(p, float) else str(p) for p in parts)
    digest = hashlib.sha256(canon.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class TrainOutcome:
    params: MlpParams
    rows: list  # (step, train_mse, test_mse)
    diverged: bool


def run_training(
    params: MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    spec: PreconditionerSpec,
    steps: int,
    rng: np.random.Generator | None = None,
    *,
    state: OptimState | None = None,
    log_every: int | None = None,
    test_xy: tuple[np.ndarray, np.ndarray] | None = None,
    divergence_threshold: float = 1e12,
) -> TrainOutcome:
    """Full-batch training with periodic metric logging and divergence checks.

    Rows are recorded at step 0, every ``log_every`` steps and at the final
    step when ``log_every`` is given, otherwise only at the final step.  A
    non-finite or exploding train loss (checked every CHECK_EVERY steps) stops
    the run with the diverged flag instead of raising.
    """
    if state is None:
        state = OptimState()
    log_points = {steps}
    if log_every is not None:
        log_points |= set(range(0, steps + 1, log_every))
    rows: list = []
    diverged = False
    t = 0
    # exploding runs are detected and flagged; keep their overflow quiet
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while True:
            if t in log_points or t % CHECK_EVERY == 0 or t == steps:
                train_mse = mse_loss(forward(params, x).yhat, y)
                bad = (not np.isfinite(train_mse)) or train_mse > divergence_threshold
                if t in log_points or bad:
                    test_mse = float("nan")
                    if test_xy is not None and not bad:
                        test_mse = mse_loss(forward(params, test_xy[0]).yhat, test_xy[1])
                    rows.append((t, float(train_mse), test_mse))
                if bad:
                    diverged = True
                    break
            if t == steps:
                break
            try:
                params = step(params, x, y, spec, state, rng)
            except FloatingPointError:
                rows.append((t + 1, float("nan"), float("nan")))
                diverged = True
                break
            t += 1
    return TrainOutcome(params=params, rows=rows, diverged=diverged)


def _build_spec(cfg: dict, kind: str, p: float = 0.0, lr: float | None = None, rho: float | None = None) -> PreconditionerSpec:
    return PreconditionerSpec(
        kind=kind,
        lr=cfg["lr"] if lr is None else lr,
        weight_decay=cfg["weight_decay"],
        p=p,
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        eps_num=cfg["eps_num"],
        rho=cfg["rho"] if rho is None else rho,
        hutchinson_samples=cfg["hutchinson_samples"],
        floor=cfg["eig_floor"],
    )


# ----------------------------------------------------------------------
# robustness study


def _robustness_worker(task: dict) -> dict:
    cfg = task["cfg"]
    case, optimizer, p, snr, si = (
        task["case"],
        task["optimizer"],
        task["p"],
        task["snr"],
        task["seed"],
    )
    t0 = time.perf_counter()
    spectrum = make_spectrum(case, cfg["d_x"], cfg["lam"])
    teacher = make_teacher(case, cfg["d_x"])
    train = synth_generate(
        spectrum, teacher, cfg["n_train"], snr,
        derive_seed("robustness", case, snr, si, "data"), case,
    )
    test = synth_generate(
        spectrum, teacher, cfg["n_test"], snr,
        derive_seed("robustness", case, snr, si, "test"), case,
    )
    rng = np.random.default_rng(derive_seed("robustness", case, p, snr, si))
    state = OptimState()
    w1_precond = None
    if optimizer == "cov_power":
        state.precond = matrix_power(train.x @ train.x.T / train.n, p, cfg["eig_floor"])
        w1_precond = state.precond
    params = init_params(
        cfg["d_x"], cfg["d_h"], 1, rng, w1_precond=w1_precond, sigma=cfg["init_sigma"]
    )
    spec = _build_spec(cfg, optimizer, p=p)
    outcome = run_training(
        params, train.x, train.y, spec, task["steps"], rng,
        state=state, log_every=cfg["log_every"], test_xy=(test.x, test.y),
        divergence_threshold=cfg["divergence_threshold"],
    )
    last = outcome.rows[-1]
    return {
        "case": case,
        "optimizer": optimizer,
        "p": p,
        "snr": snr,
        "seed": si,
        "rows": outcome.rows,
        "final_train_mse": last[1],
        "final_test_mse": last[2],
        "diverged": outcome.diverged,
        "wall_time_s": time.perf_counter() - t0,
    }


def _pool_map(worker, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with multiprocessing.Pool(min(jobs, len(tasks))) as pool:
        return pool.map(worker, tasks)


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def run_robustness(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    cases = ["High", "Low"] if cfg.case == "both" else [cfg.case]
    cfg_dict = dataclasses.asdict(cfg)
    tasks = [
        {"cfg": cfg_dict, "case": c, "optimizer": o, "p": float(p), "snr": float(s),
         "seed": int(si), "steps": cfg.steps}
        for c in cases
        for o in cfg.resolved_optimizers()
        for p in cfg.p_list
        for s in cfg.snr_list
        for si in cfg.seeds
    ]
    results = _pool_map(_robustness_worker, tasks, jobs)
    results.sort(key=lambda r: (r["case"], r["optimizer"], r["p"], r["snr"], r["seed"]))

    traj_path = out_dir / "robustness_traj.csv"
    _write_csv(
        traj_path,
        ["case", "optimizer", "p", "snr", "seed", "step", "train_mse", "test_mse"],
        (
            [r["case"], r["optimizer"], r["p"], r["snr"], r["seed"], s, tr, te]
            for r in results
            for (s, tr, te) in r["rows"]
        ),
    )
    runs_path = out_dir / "robustness_runs.csv"
    _write_csv(
        runs_path,
        ["case", "optimizer", "p", "snr", "seed", "final_train_mse", "final_test_mse",
         "diverged", "wall_time_s"],
        (
            [r["case"], r["optimizer"], r["p"], r["snr"], r["seed"], r["final_train_mse"],
             r["final_test_mse"], r["diverged"], r["wall_time_s"]]
            for r in results
        ),
    )
    summary_rows = []
    for key in sorted({(r["case"], r["optimizer"], r["p"], r["snr"]) for r in results}):
        group = [r for r in results if (r["case"], r["optimizer"], r["p"], r["snr"]) == key]
        ok = [r for r in group if not r["diverged"]]
        test_m, test_s = _mean_std([r["final_test_mse"] for r in ok])
        train_m, train_s = _mean_std([r["final_train_mse"] for r in ok])
        summary_rows.append(
            list(key)
            + [len(group), len(group) - len(ok), train_m, train_s, test_m, test_s]
        )
    summary_path = out_dir / "robustness_summary.csv"
    _write_csv(
        summary_path,
        ["case", "optimizer", "p", "snr", "n_seeds", "n_diverged",
         "final_train_mse_mean", "final_train_mse_std",
         "final_test_mse_mean", "final_test_mse_std"],
        summary_rows,
    )
    return [summary_path, runs_path, traj_path]


# ----------------------------------------------------------------------
# OOD study


def _ood_accuracy(params: MlpParams, x: np.ndarray, labels: np.ndarray) -> float:
    pred = np.argmax(forward(params, x).yhat, axis=0)
    return float(np.mean(pred == labels))


def _ood_worker(task: dict) -> dict:
    cfg = task["cfg"]
    method, p, lr, rho, si = task["method"], task["p"], task["lr"], task["rho"], task["seed"]
    t0 = time.perf_counter()
    images, labels = load_mnist_idx(cfg["mnist_images"], cfg["mnist_labels"])
    ds = build_ood(
        images, labels, cfg["sigma_n"], derive_seed("ood", "data", si),
        n_train=cfg["n_ood_train"], n_val=cfg["n_ood_val"], n_test=cfg["n_ood_test"],
    )
    y_train = one_hot(ds.train_labels)
    rng = np.random.default_rng(derive_seed("ood", method, p, lr, rho, si))
    params = init_params(images.shape[0], cfg["d_h"], 10, rng, sigma=cfg["init_sigma"])
    spec = _build_spec(cfg, method, p=p, lr=lr, rho=rho)
    outcome = run_training(
        params, ds.train_x, y_train, spec, task["steps"], rng,
        divergence_threshold=cfg["divergence_threshold"],
    )
    if outcome.diverged:
        val = fn = fd = float("nan")
    else:
        val = _ood_accuracy(outcome.params, ds.val_x, ds.val_labels)
        fn = _ood_accuracy(outcome.params, ds.flip_noise_x, ds.flip_noise_labels)
        fd = _ood_accuracy(outcome.params, ds.flip_digit_x, ds.flip_digit_labels)
    return {
        "optimizer": method,
        "p": p,
        "lr": lr,
        "rho": rho,
        "seed": si,
        "id_val_acc": val,
        "flip_noise_acc": fn,
        "flip_digit_acc": fd,
        "final_train_mse": outcome.rows[-1][1],
        "diverged": outcome.diverged,
        "wall_time_s": time.perf_counter() - t0,
    }


def _ood_method_grid(cfg: ExperimentConfig) -> list[tuple[str, float, float, float | None]]:
    """(method, p, lr, rho) combinations; rho only varies for SAM."""
    combos = []
    for method in cfg.resolved_optimizers():
        if method == "adahessian":
            p_values = [float(p) for p in cfg.ood_p_list]
        else:
            p_values = [0.0]
        for p in p_values:
            for lr in cfg.lr_grid:
                if method == "sam_gd":
                    combos.extend((method, p, float(lr), float(r)) for r in cfg.rho_grid)
                else:
                    combos.append((method, p, float(lr), None))
    return combos


def run_ood(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    if not cfg.mnist_images or not cfg.mnist_labels:
        raise DataError(
            "ood experiment needs mnist_images / mnist_labels paths in the config "
            "(IDX format; see README for the offline fallback corpus)"
        )
    # fail fast on unreadable corpus before spawning workers
    load_mnist_idx(cfg.mnist_images, cfg.mnist_labels)
    cfg_dict = dataclasses.asdict(cfg)
    tasks = [
        {"cfg": cfg_dict, "method": m, "p": p, "lr": lr, "rho": rho,
         "seed": int(si), "steps": cfg.ood_steps}
        for (m, p, lr, rho) in _ood_method_grid(cfg)
        for si in cfg.ood_seeds
    ]
    results = _pool_map(_ood_worker, tasks, jobs)
    results.sort(
        key=lambda r: (
            r["optimizer"], r["p"], r["lr"],
            r["rho"] if r["rho"] is not None else -1.0, r["seed"],
        )
    )

    # hyperparameter selection: best mean ID-val accuracy per (method, p)
    by_method: dict[tuple, dict[tuple, list]] = {}
    for r in results:
        mkey = (r["optimizer"], r["p"])
        ckey = (r["lr"], r["rho"] if r["rho"] is not None else -1.0)
        by_method.setdefault(mkey, {}).setdefault(ckey, []).append(r)
    chosen: dict[tuple, tuple] = {}
    for mkey, combos in by_method.items():
        scored = []
        for ckey, runs in sorted(combos.items()):
            vals = [r["id_val_acc"] for r in runs if not r["diverged"]]
            mean_val = float(np.mean(vals)) if vals else float("-inf")
            scored.append((mean_val, ckey))
        best = max(scored, key=lambda t: t[0])[1]
        chosen[mkey] = best

    runs_path = out_dir / "ood_runs.csv"
    _write_csv(
        runs_path,
        ["optimizer", "p", "lr", "rho", "seed", "id_val_acc", "flip_noise_acc",
         "flip_digit_acc", "final_train_mse", "diverged", "selected", "wall_time_s"],
        (
            [r["optimizer"], r["p"], r["lr"], r["rho"], r["seed"], r["id_val_acc"],
             r["flip_noise_acc"], r["flip_digit_acc"], r["final_train_mse"], r["diverged"],
             chosen[(r["optimizer"], r["p"])] == (r["lr"], r["rho"] if r["rho"] is not None else -1.0),
             r["wall_time_s"]]
            for r in results
        ),
    )
    summary_rows = []
    for mkey in sorted(chosen):
        lr, rho_key = chosen[mkey]
        rho = None if rho_key == -1.0 else rho_key
        runs = [
            r for r in results
            if (r["optimizer"], r["p"]) == mkey
            and (r["lr"], r["rho"] if r["rho"] is not None else -1.0) == chosen[mkey]
            and not r["diverged"]
        ]
        val_m, val_s = _mean_std([r["id_val_acc"] for r in runs])
        fn_m, fn_s = _mean_std([r["flip_noise_acc"] for r in runs])
        fd_m, fd_s = _mean_std([r["flip_digit_acc"] for r in runs])
        summary_rows.append(
            [mkey[0], mkey[1], lr, rho, len(runs), val_m, val_s, fn_m, fn_s, fd_m, fd_s]
        )
    summary_path = out_dir / "ood_summary.csv"
    _write_csv(
        summary_path,
        ["optimizer", "p", "lr", "rho", "n_seeds", "id_val_acc_mean", "id_val_acc_std",
         "flip_noise_acc_mean", "flip_noise_acc_std", "flip_digit_acc_mean",
         "flip_digit_acc_std"],
        summary_rows,
    )
    return [summary_path, runs_path]


# ----------------------------------------------------------------------
# transfer study


def _transfer_worker(task: dict) -> dict:
    cfg = task["cfg"]
    direction, optimizer, p, si = task["direction"], task["optimizer"], task["p"], task["seed"]
    t0 = time.perf_counter()
    spectrum, teacher1, teacher2 = make_transfer_specs(direction, cfg["d_x"], cfg["lam"])
    snr = cfg["transfer_snr"]

    def draw(teacher, n, stream):
        return synth_generate(
            spectrum, teacher, n, snr,
            derive_seed("transfer", direction, snr, si, stream), direction,
        )

    task1_train = draw(teacher1, cfg["n_train"], "task1-train")
    task1_test = draw(teacher1, cfg["n_test"], "task1-test")
    task2_train = draw(teacher2, cfg["n_train"], "task2-train")
    task2_val = draw(teacher2, cfg["n_val"], "task2-val")
    task2_test = draw(teacher2, cfg["n_test"], "task2-test")

    rng = np.random.default_rng(derive_seed("transfer", direction, p, snr, si))
    state = OptimState()
    w1_precond = None
    if optimizer == "cov_power":
        state.precond = matrix_power(task1_train.x @ task1_train.x.T / task1_train.n, p, cfg["eig_floor"])
        w1_precond = state.precond
    params = init_params(
        cfg["d_x"], cfg["d_h"], 1, rng, w1_precond=w1_precond, sigma=cfg["init_sigma"]
    )
    spec = _build_spec(cfg, optimizer, p=p)
    outcome = run_training(
        params, task1_train.x, task1_train.y, spec, task["steps"], rng,
        state=state, divergence_threshold=cfg["divergence_threshold"],
    )
    if outcome.diverged:
        return {
            "direction": direction, "optimizer": optimizer, "p": p, "seed": si,
            "task1_test_mse": float("nan"), "task2_test_mse": float("nan"),
            "ridge_lambda": float("nan"), "diverged": True,
            "wall_time_s": time.perf_counter() - t0,
        }
    trained = outcome.params
    task1_mse = mse_loss(forward(trained, task1_test.x).yhat, task1_test.y)

    # frozen first layer: closed-form ridge readout tuned on task-2 validation
    h_train = np.maximum(trained.w1.T @ task2_train.x, 0.0)
    h_val = np.maximum(trained.w1.T @ task2_val.x, 0.0)
    h_test = np.maximum(trained.w1.T @ task2_test.x, 0.0)
    best = None
    for lam_reg in RIDGE_GRID:
        w2, b2 = ridge_closed_form(h_train, task2_train.y, lam_reg)
        val_mse = mse_loss(w2.T @ h_val + b2[:, None], task2_val.y)
        if best is None or val_mse < best[0]:
            best = (val_mse, lam_reg, w2, b2)
    _, lam_reg, w2, b2 = best
    task2_mse = mse_loss(w2.T @ h_test + b2[:, None], task2_test.y)
    return {
        "direction": direction, "optimizer": optimizer, "p": p, "seed": si,
        "task1_test_mse": task1_mse, "task2_test_mse": task2_mse,
        "ridge_lambda": lam_reg, "diverged": False,
        "wall_time_s": time.perf_counter() - t0,
    }


def run_transfer(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[Path]:
    directions = ["HighToLow", "LowToHigh"] if cfg.direction == "both" else [cfg.direction]
    cfg_dict = dataclasses.asdict(cfg)
    tasks = [
        {"cfg": cfg_dict, "direction": d, "optimizer": o, "p": float(p), "seed": int(si),
         "steps": cfg.steps}
        for d in directions
        for o in cfg.resolved_optimizers()
        for p in cfg.p_list
        for si in cfg.seeds
    ]
    results = _pool_map(_transfer_worker, tasks, jobs)
    results.sort(key=lambda r: (r["direction"], r["optimizer"], r["p"], r["seed"]))
    runs_path = out_dir / "transfer_runs.csv"
    _write_csv(
        runs_path,
        ["direction", "optimizer", "p", "seed", "task1_test_mse", "task2_test_mse",
         "ridge_lambda", "diverged", "wall_time_s"],
        (
            [r["direction"], r["optimizer"], r["p"], r["seed"], r["task1_test_mse"],
             r["task2_test_mse"], r["ridge_lambda"], r["diverged"], r["wall_time_s"]]
            for r in results
        ),
    )
    summary_rows = []
    for key in sorted({(r["direction"], r["optimizer"], r["p"]) for r in results}):
        group = [r for r in results if (r["direction"], r["optimizer"], r["p"]) == key]
        ok = [r for r in group if not r["diverged"]]
        t1_m, t1_s = _mean_std([r["task1_test_mse"] for r in ok])
        t2_m, t2_s = _mean_std([r["task2_test_mse"] for r in ok])
        summary_rows.append(
            list(key) + [len(group), len(group) - len(ok), t1_m, t1_s, t2_m, t2_s]
        )
    summary_path = out_dir / "transfer_summary.csv"
    _write_csv(
        summary_path,
        ["direction", "optimizer", "p", "n_seeds", "n_diverged",
         "task1_test_mse_mean", "task1_test_mse_std",
         "task2_test_mse_mean", "task2_test_mse_std"],
        summary_rows,
    )
    return [summary_path, runs_path]


# ----------------------------------------------------------------------
# verification suite


def run_verify(cfg: ExperimentConfig, out_dir: Path) -> tuple[list[Path], bool]:
    reports = verify_mod.run_all(seed=int(cfg.seeds[0]))
    for rep in reports:
        print(rep)
    path = out_dir / "verify_report.csv"
    _write_csv(
        path,
        ["check", "passed", "deviation", "tolerance", "instance"],
        ([r.name, r.passed, r.deviation, r.tolerance, r.instance] for r in reports),
    )
    all_passed = all(r.passed for r in reports)
    print(f"{sum(r.passed for r in reports)}/{len(reports)} checks passed")
    return [path], all_passed


# ----------------------------------------------------------------------
# CSV / manifest plumbing


def _format_cell(v) -> str:
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def canonical_csv_bytes(path: Path) -> bytes:
    """CSV content with any wall-time column removed; basis for output hashes."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if rows and "wall_time_s" in rows[0]:
        drop = rows[0].index("wall_time_s")
        rows = [r[:drop] + r[drop + 1 :] for r in rows]
    buf = io.StringIO()
    csv.writer(buf).writerows(rows)
    return buf.getvalue().encode("utf-8")


def write_manifest(cfg: ExperimentConfig, out_dir: Path, outputs: list[Path], wall_time_s: float) -> Path:
    manifest = {
        "experiment": cfg.experiment,
        "config": dataclasses.asdict(cfg),
        "seeds": cfg.ood_seeds if cfg.experiment == "ood" else cfg.seeds,
        "outputs": {
            p.name: hashlib.sha256(canonical_csv_bytes(p)).hexdigest() for p in sorted(outputs)
        },
        "wall_time_s": wall_time_s,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ----------------------------------------------------------------------
# CLI


def _parse_flags(argv: list[str]) -> dict:
    flags = {"config": None, "set": [], "out": None, "jobs": 1}
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            flags["config"] = _flag_value(argv, i)
            i += 2
        elif arg == "--set":
            flags["set"].append(_flag_value(argv, i))
            i += 2
        elif arg == "--out":
            flags["out"] = _flag_value(argv, i)
            i += 2
        elif arg == "--jobs":
            try:
                flags["jobs"] = int(_flag_value(argv, i))
            except ValueError as exc:
                raise ConfigError(f"--jobs expects an integer, got {argv[i + 1]!r}") from exc
            i += 2
        else:
            raise ConfigError(f"unknown flag {arg!r}")
    return flags


def _flag_value(argv: list[str], i: int) -> str:
    if i + 1 >= len(argv):
        raise ConfigError(f"flag {argv[i]} needs a value")
    return argv[i + 1]


def cli_main(argv: list[str]) -> int:
    """Entry point: 0 success, 1 usage/failed checks, 2 config error, 3 data error."""
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE, end="")
        return 0 if argv else 1
    sub = argv[0]
    if sub not in SUBCOMMANDS:
        print(f"unknown subcommand {sub!r}\n", file=sys.stderr)
        print(USAGE, end="", file=sys.stderr)
        return 1
    if sub == "dump-config":
        print(ExperimentConfig().to_json())
        return 0
    try:
        flags = _parse_flags(argv[1:])
        cfg = load_config(flags["config"], flags["set"])
        cfg.experiment = sub
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(flags["out"]) if flags["out"] else Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if sub == "robustness":
            outputs = run_robustness(cfg, out_dir, flags["jobs"])
        elif sub == "ood":
            outputs = run_ood(cfg, out_dir, flags["jobs"])
        elif sub == "transfer":
            outputs = run_transfer(cfg, out_dir, flags["jobs"])
        else:
            outputs, all_passed = run_verify(cfg, out_dir)
            write_manifest(cfg, out_dir, outputs, time.perf_counter() - t0)
            return 0 if all_passed else 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    write_manifest(cfg, out_dir, outputs, time.perf_counter() - t0)
    for p in outputs:
        print(f"wrote {p}")
    return 0


def cli_main_entry() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    cli_main_entry()
