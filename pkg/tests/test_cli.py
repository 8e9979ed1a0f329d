"""CLI driver tests: subcommands, artifacts, exit codes."""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from eigenadapt.cli import main, preset_configs, render_mesh_svg
from eigenadapt.errors import ConfigError
from eigenadapt.geometry import builtin_domain, initial_mesh

SVG_NS = "{http://www.w3.org/2000/svg}"


def _write_config(path, **kw):
    base = dict(domain="unit_square", n=4, cluster_lo=1, cluster_hi=2,
                max_dof=300)
    base.update(kw)
    path.write_text("".join(f"{k} = {v}\n" for k, v in base.items()))
    return path


def test_svg_two_triangles(tmp_path):
    tri = initial_mesh(builtin_domain("unit_square"), 1)
    out = tmp_path / "two.svg"
    render_mesh_svg(tri, out)
    root = ET.parse(out).getroot()
    assert root.get("viewBox") == "0 0 1 1"
    paths = root.findall(f"{SVG_NS}g/{SVG_NS}path")
    assert len(paths) == 2
    for p in paths:
        d = p.get("d")
        assert d.startswith("M") and d.endswith("Z") and d.count("L") == 2


def test_svg_lshape_via_cli(tmp_path, capsys):
    out = tmp_path / "lshape.svg"
    rc = main(["mesh", "svg", "--domain", "omega1", "--n", "8",
               "--out", str(out)])
    assert rc == 0
    assert "96 triangles" in capsys.readouterr().out
    root = ET.parse(out).getroot()
    assert root.get("viewBox") == "0 0 1 1"
    assert len(root.findall(f"{SVG_NS}g/{SVG_NS}path")) == 96


def test_mesh_dump_load_roundtrip(tmp_path, capsys):
    mesh_file = tmp_path / "omega.txt"
    rc = main(["mesh", "dump", "--domain", "omega2", "--n", "8",
               "--out", str(mesh_file)])
    assert rc == 0
    rc = main(["mesh", "load", "--path", str(mesh_file)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "triangles  512" in text
    rc = main(["mesh", "svg", "--path", str(mesh_file), "--out",
               str(tmp_path / "from_file.svg")])
    assert rc == 0


def test_run_writes_artifact_set(tmp_path, capsys):
    cfg = _write_config(tmp_path / "run.cfg")
    out = tmp_path / "artifacts"
    rc = main(["run", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    history = out / "history.csv"
    summary = out / "summary.json"
    assert history.is_file() and summary.is_file()
    header = history.read_text().splitlines()[0]
    assert header.startswith("level,ndof,nelem,eta_pointwise,eta_energy,"
                             "lambda_1,lambda_2,marked")
    info = json.loads(summary.read_text())
    assert info["stop_reason"] == "max_dof"
    assert info["config"]["domain"] == "unit_square"
    svgs = sorted(out.glob("mesh_L*.svg"))
    assert svgs and (out / "mesh_L0.svg") in svgs
    assert "stop: max_dof" in capsys.readouterr().out


def test_run_max_dof_override(tmp_path):
    cfg = _write_config(tmp_path / "run.cfg")
    out = tmp_path / "short"
    rc = main(["run", "--config", str(cfg), "--out", str(out),
               "--max-dof", "60"])
    assert rc == 0
    info = json.loads((out / "summary.json").read_text())
    assert info["config"]["max_dof"] == 60


def test_run_determinism_ex_timings(tmp_path):
    cfg = _write_config(tmp_path / "run.cfg")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "history.csv").read_text().splitlines()
        outs.append([",".join(line.split(",")[:-3]) for line in lines])
    assert outs[0] == outs[1]


def test_rate_on_written_history(tmp_path, capsys):
    cfg = _write_config(tmp_path / "run.cfg", max_dof=2000, n=8)
    out = tmp_path / "deep"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    rc = main(["rate", "--history", str(out / "history.csv"),
               "--field", "pointwise", "--min-dof", "100"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "pointwise slope" in text
    # the square ground state is smooth: decay near N^-1 for the max marker
    slope = float(text.split("slope")[1].split()[0])
    assert slope < -0.5


def test_rate_rejects_short_history(tmp_path, capsys):
    hist = tmp_path / "history.csv"
    hist.write_text(
        "level,ndof,nelem,eta_pointwise,eta_energy,lambda_1,marked,"
        "h_max,h_min,t_solve_ms,t_estimate_ms,t_refine_ms\n"
        "0,10,20,1.0,nan,19.0,5,0.3,0.3,1.0,1.0,1.0\n"
        "1,40,80,0.5,nan,18.0,9,0.2,0.1,1.0,1.0,1.0\n")
    rc = main(["rate", "--history", str(hist), "--field", "pointwise",
               "--min-dof", "1"])
    assert rc == 2
    assert "needs >= 3" in capsys.readouterr().err


def test_exit_code_2_on_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("theta = warm\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "eigenadapt:" in capsys.readouterr().err


def test_exit_code_2_on_bad_domain(tmp_path, capsys):
    assert main(["mesh", "dump", "--domain", "omega9",
                 "--out", str(tmp_path / "x.txt")]) == 2
    assert "eigenadapt:" in capsys.readouterr().err


def test_exit_code_3_on_solver_failure(tmp_path, capsys):
    cfg = _write_config(tmp_path / "run.cfg", eig_tol="1e-30")
    out = tmp_path / "failing"
    rc = main(["run", "--config", str(cfg), "--out", str(out)])
    assert rc == 3
    assert "solver failure" in capsys.readouterr().err
    # the partial history is still written for post-mortem work
    assert (out / "summary.json").is_file()


def test_exit_code_4_on_missing_file(capsys):
    assert main(["rate", "--history", "/nonexistent/history.csv",
                 "--field", "energy"]) == 4
    assert "eigenadapt:" in capsys.readouterr().err


def test_threads_env_validation(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("EIGENADAPT_THREADS", "zero")
    assert main(["mesh", "load", "--path", str(tmp_path / "whatever")]) == 2
    assert "EIGENADAPT_THREADS" in capsys.readouterr().err


def test_threads_env_applied(tmp_path, monkeypatch):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    monkeypatch.setenv("EIGENADAPT_THREADS", "2")
    mesh_file = tmp_path / "mesh.txt"
    assert main(["mesh", "dump", "--domain", "unit_square", "--n", "2",
                 "--out", str(mesh_file)]) == 0
    import os
    assert os.environ["OMP_NUM_THREADS"] == "2"
    assert os.environ["OPENBLAS_NUM_THREADS"] == "2"


def test_preset_configs_expand():
    assert [name for name, _ in preset_configs("lshape_products")] == ["pointwise_max"]
    compare = preset_configs("lshape_compare")
    assert [name for name, _ in compare] == ["pointwise_max", "energy_doerfler"]
    assert all(cfg.record_secondary_estimator for _, cfg in compare)
    assert compare[1][1].doerfler_bulk == "value"
    slit = preset_configs("slit_multiple")[0][1]
    assert (slit.domain, slit.cluster_lo, slit.cluster_hi) == ("omega2", 2, 3)
    assert slit.marked_subdivision == "bisect"
    for preset in ("slit_perturbed_j2", "slit_perturbed_cluster"):
        runs = preset_configs(preset)
        assert [name for name, _ in runs] == ["nvb", "bisec_lg1"]
        assert all(cfg.domain == "omega3" for _, cfg in runs)
    with pytest.raises(ConfigError):
        preset_configs("everything")


def test_preset_runs_to_directories(tmp_path, capsys):
    # smallest real preset invocation: slit run capped very low
    rc = main(["preset", "slit_multiple", "--out", str(tmp_path),
               "--max-dof", "400"])
    assert rc == 0
    run_dir = tmp_path / "slit_multiple" / "pointwise_max"
    assert (run_dir / "history.csv").is_file()
    assert (run_dir / "summary.json").is_file()
    text = capsys.readouterr().out
    assert "tip" in text
