import csv
import subprocess

import matplotlib.pyplot as plt
import pytest

from precondlab_figures import FIGURE_IDS, FigureSpec, SchemaError, render
from precondlab_figures.render import _render_robustness_final


def render_cli(args):
    return subprocess.run(["precondlab-render"] + args, capture_output=True, text=True)


@pytest.mark.parametrize("figure_id", FIGURE_IDS)
def test_cli_renders_each_figure(figure_id, csv_bundle, tmp_path):
    out = tmp_path / f"{figure_id}.png"
    proc = render_cli([
        "--figure", figure_id, "--in", str(csv_bundle[figure_id]), "--out", str(out)
    ])
    assert proc.returncode == 0, proc.stderr
    assert out.exists() and out.stat().st_size > 1000
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_header_only_csv_is_rejected(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(
        "case,optimizer,p,snr,n_seeds,n_diverged,final_train_mse_mean,"
        "final_train_mse_std,final_test_mse_mean,final_test_mse_std\r\n"
    )
    out = tmp_path / "fig.png"
    proc = render_cli(["--figure", "robustness_final", "--in", str(empty), "--out", str(out)])
    assert proc.returncode == 2
    assert "no data rows" in proc.stderr
    assert not out.exists()


def test_schema_mismatch_names_missing_columns(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("case,optimizer\r\nHigh,gd\r\n")
    out = tmp_path / "fig.png"
    proc = render_cli(["--figure", "robustness_final", "--in", str(bad), "--out", str(out)])
    assert proc.returncode == 2
    assert "missing column" in proc.stderr and "snr" in proc.stderr
    assert not out.exists()


def test_unknown_figure_id_rejected(csv_bundle, tmp_path):
    proc = render_cli([
        "--figure", "mystery", "--in", str(csv_bundle["robustness_final"]),
        "--out", str(tmp_path / "x.png"),
    ])
    assert proc.returncode == 2  # argparse choice error


def load_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_one_curve_per_power_with_bands(csv_bundle):
    rows = load_rows(csv_bundle["robustness_final"])
    p_values = {float(r["p"]) for r in rows}
    fig = plt.figure()
    _render_robustness_final(rows, fig)
    ax = fig.axes[0]
    assert len(ax.lines) == len(p_values)
    assert len(ax.collections) == len(p_values)  # std bands (2 seeds)
    plt.close(fig)


def test_single_seed_draws_no_band(csv_bundle, tmp_path):
    rows = load_rows(csv_bundle["robustness_final"])
    for r in rows:
        r["n_seeds"] = "1"
        r["final_test_mse_std"] = "0.0"
    fig = plt.figure()
    _render_robustness_final(rows, fig)
    assert len(fig.axes[0].collections) == 0
    plt.close(fig)


def test_rerender_overwrites_atomically(csv_bundle, tmp_path):
    out = tmp_path / "fig.png"
    spec = FigureSpec(
        figure_id="transfer_bars", inputs=[csv_bundle["transfer_bars"]], output=out
    )
    render(spec)
    first = out.read_bytes()
    render(spec)
    assert out.read_bytes() == first


def test_api_schema_error_type(tmp_path):
    missing = tmp_path / "missing.csv"
    with pytest.raises(SchemaError, match="not found"):
        render(FigureSpec(figure_id="ood_columns", inputs=[missing], output=tmp_path / "o.png"))
