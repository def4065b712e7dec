import subprocess
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from plot_convergence import (  # noqa: E402
    EmptyInput,
    MissingColumn,
    PlotSpec,
    main,
    plot_convergence,
    read_columns,
)

HEADER = (
    "level,n_elements,n_nodes,eta,osc,energy_error,fem_energy_error,"
    "ratio_card,osc_fraction_eta,sigma,solve_iters,wall_ms_solve,"
    "wall_ms_estimate,wall_ms_refine"
)


def synthetic_csv(path, levels=8, scale=1.0, slope=0.5):
    lines = [HEADER]
    n = 16
    for level in range(levels):
        eta = scale * 3.0 * n ** (-slope)
        osc = scale * 2.0 * n ** (-1.0)
        err = scale * 0.5 * n ** (-slope)
        lines.append(
            f"{level},{n},{n // 2},{eta!r},{osc!r},{err!r},nan,1.0,0.5,4.0,10,1.0,1.0,1.0"
        )
        n *= 2
    path.write_text("\n".join(lines) + "\n")
    return path


def test_read_columns_missing(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("level,n_elements\n0,16\n")
    with pytest.raises(MissingColumn):
        read_columns(path, ("eta",))


def test_read_columns_empty(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text(HEADER + "\n")
    with pytest.raises(EmptyInput):
        read_columns(path, ("eta",))


def test_single_run_has_three_series(tmp_path):
    csv_path = synthetic_csv(tmp_path / "ada.csv")
    out = tmp_path / "fig.png"
    spec = PlotSpec(runs=[("ada.", str(csv_path))], out=str(out))
    fig = plot_convergence(spec)
    _, labels = fig.axes[0].get_legend_handles_labels()
    assert len(labels) == 3
    assert out.exists()
    assert out.with_suffix(".pdf").exists()


def test_two_runs_have_six_series(tmp_path):
    ada = synthetic_csv(tmp_path / "ada.csv", slope=0.5)
    uni = synthetic_csv(tmp_path / "uni.csv", slope=0.4)
    out = tmp_path / "fig.png"
    spec = PlotSpec(runs=[("ada.", str(ada)), ("uni.", str(uni))], out=str(out))
    fig = plot_convergence(spec)
    _, labels = fig.axes[0].get_legend_handles_labels()
    assert len(labels) == 6
    assert sum("(ada.)" in lab for lab in labels) == 3
    assert sum("(uni.)" in lab for lab in labels) == 3


def test_power_law_series_parallel_to_guide(tmp_path):
    import numpy as np

    csv_path = synthetic_csv(tmp_path / "ada.csv", slope=0.5)
    data = read_columns(csv_path, ("n_elements", "eta"))
    lx = np.log(data["n_elements"])
    ly = np.log(data["eta"])
    slope = np.polyfit(lx, ly, 1)[0]
    assert slope == pytest.approx(-0.5, abs=1e-12)


def test_cli_headless_exit_zero(tmp_path):
    ada = synthetic_csv(tmp_path / "ada.csv")
    uni = synthetic_csv(tmp_path / "uni.csv")
    out = tmp_path / "fig.png"
    script = Path(__file__).parent / "plot_convergence.py"
    result = subprocess.run(
        [
            sys.executable, str(script),
            "--adaptive", str(ada), "--uniform", str(uni),
            "--out", str(out), "--guides", "1/2,1",
        ],
        capture_output=True, text=True, env={"PATH": "/usr/bin:/bin", "MPLBACKEND": "Agg"},
    )
    assert result.returncode == 0, result.stderr
    assert out.exists()


def test_cli_bad_input_exit_nonzero(tmp_path):
    out = tmp_path / "fig.png"
    code = main(["--adaptive", str(tmp_path / "missing.csv"), "--out", str(out)])
    assert code == 2


def test_rerun_is_deterministic(tmp_path):
    ada = synthetic_csv(tmp_path / "ada.csv")
    out = tmp_path / "fig.png"
    spec = PlotSpec(runs=[("ada.", str(ada))], out=str(out))
    plot_convergence(spec)
    first = out.read_bytes()
    plot_convergence(spec)
    assert out.read_bytes() == first


@pytest.mark.skipif(
    subprocess.run(
        [sys.executable, "-c", "import afvm"], capture_output=True
    ).returncode != 0,
    reason="solver package not installed",
)
def test_figure_from_real_solver_runs(tmp_path):
    for mode, extra in (("adaptive", ["--max-elements", "400"]), ("uniform", ["--levels", "4"])):
        code = subprocess.run(
            [
                sys.executable, "-m", "afvm.cli",
                "--problem", "square-smooth", "--mode", mode,
                "--out", str(tmp_path / mode), *extra,
            ],
            capture_output=True, text=True,
        )
        assert code.returncode == 0, code.stderr
    out = tmp_path / "figure.png"
    spec = PlotSpec(
        runs=[
            ("ada.", str(tmp_path / "adaptive" / "records.csv")),
            ("uni.", str(tmp_path / "uniform" / "records.csv")),
        ],
        out=str(out),
    )
    fig = plot_convergence(spec)
    _, labels = fig.axes[0].get_legend_handles_labels()
    assert len(labels) == 6
    assert out.exists() and out.with_suffix(".pdf").exists()
