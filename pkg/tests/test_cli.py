import json
import os

import pytest

from esfem.cli import main, parse_config
from esfem.errors import ConfigError

GOOD_CONFIG = """
[surface]
kind = circle
dimension = 1

[study]
scheme = stationary
degree = 1
levels = 16,24
pq = 2:2
profile = osc-seed42
richardson_rtol = 0.05

[output]
directory = {out}
"""


def write_config(tmp_path, text=None, **fmt):
    path = tmp_path / "study.cfg"
    path.write_text((text or GOOD_CONFIG).format(**fmt))
    return str(path)


def test_parse_config_roundtrip(tmp_path):
    path = write_config(tmp_path, out=str(tmp_path / "out"))
    config, extras = parse_config(path)
    assert config.levels == (16, 24)
    assert config.pq_pairs == ((2.0, 2.0),)
    assert extras["directory"].endswith("out")


def test_parse_config_missing_required_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[surface]\ndimension = 1\n")
    with pytest.raises(ConfigError, match="surface.kind"):
        parse_config(str(path))


def test_parse_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[surface]\nkind = circle\ncolour = blue\n")
    with pytest.raises(ConfigError, match="colour"):
        parse_config(str(path))


def test_cli_exit_codes(tmp_path, capsys):
    # missing required key -> exit 2 with a categorized line
    path = tmp_path / "bad.cfg"
    path.write_text("[surface]\ndimension = 1\n")
    code = main(["maxreg", "--config", str(path)])
    assert code == 2
    assert "ConfigError: surface.kind" in capsys.readouterr().err

    # runtime failure (unknown surface kind) -> exit 1
    path2 = tmp_path / "bad2.cfg"
    path2.write_text("[surface]\nkind = moebius\n")
    code = main(["maxreg", "--config", str(path2)])
    assert code == 1


def test_cli_mesh_command(tmp_path):
    out = tmp_path / "meshes"
    code = main([
        "mesh", "--surface", "sphere", "--dimension", "2",
        "--levels", "2", "--degree", "1", "--out", str(out),
    ])
    assert code == 0
    vtk = out / "sphere_l2_k1.vtk"
    lines = vtk.read_text().splitlines()
    polygons = [ln for ln in lines if ln.startswith("POLYGONS")]
    assert polygons and int(polygons[0].split()[1]) == 320
    manifest = json.loads((out / "sphere_l2_k1_manifest.json").read_text())
    assert manifest["artifact"] == "esfem"


def test_cli_maxreg_deterministic_across_runs_and_workers(tmp_path):
    cfg = write_config(tmp_path, out=str(tmp_path / "o1"))
    assert main(["maxreg", "--config", cfg, "--out", str(tmp_path / "o1")]) == 0
    assert main(["maxreg", "--config", cfg, "--out", str(tmp_path / "o2")]) == 0
    assert main(["maxreg", "--config", cfg, "--out", str(tmp_path / "o3"),
                 "--workers", "4"]) == 0
    b1 = (tmp_path / "o1" / "maxreg.csv").read_bytes()
    assert b1 == (tmp_path / "o2" / "maxreg.csv").read_bytes()
    assert b1 == (tmp_path / "o3" / "maxreg.csv").read_bytes()
    summary = (tmp_path / "o1" / "maxreg_summary.txt").read_text()
    assert summary.startswith(("PASS", "FAIL"))


def test_cli_config_hash_ignores_formatting(tmp_path):
    cfg1 = write_config(tmp_path, out=str(tmp_path / "h1"))
    spaced = GOOD_CONFIG.replace("levels = 16,24", "levels =  16,24") + "\n; comment\n"
    path2 = tmp_path / "study2.cfg"
    path2.write_text(spaced.format(out=str(tmp_path / "h2")))
    main(["maxreg", "--config", cfg1, "--out", str(tmp_path / "h1")])
    main(["maxreg", "--config", str(path2), "--out", str(tmp_path / "h2")])
    m1 = json.loads((tmp_path / "h1" / "maxreg_manifest.json").read_text())
    m2 = json.loads((tmp_path / "h2" / "maxreg_manifest.json").read_text())
    # output directory is not part of the semantic config
    assert m1["config_hash"] == m2["config_hash"]

    # changing a semantically relevant key changes the hash
    changed = GOOD_CONFIG.replace("profile = osc-seed42", "profile = bump")
    path3 = tmp_path / "study3.cfg"
    path3.write_text(changed.format(out=str(tmp_path / "h3")))
    main(["maxreg", "--config", str(path3), "--out", str(tmp_path / "h3")])
    m3 = json.loads((tmp_path / "h3" / "maxreg_manifest.json").read_text())
    assert m3["config_hash"] != m1["config_hash"]


def test_cli_outdir_env_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, out=str(tmp_path / "ignored"))
    target = tmp_path / "env_out"
    monkeypatch.setenv("ESFEM_OUTDIR", str(target))
    assert main(["maxreg", "--config", cfg]) == 0
    assert (target / "maxreg.csv").exists()


def test_cli_convergence_and_delta(tmp_path):
    text = GOOD_CONFIG.replace("levels = 16,24", "levels = 16,32,64")
    cfg = write_config(tmp_path, text=text, out=str(tmp_path / "conv"))
    assert main(["convergence", "--config", cfg]) == 0
    summary = (tmp_path / "conv" / "convergence_summary.txt").read_text()
    order = float(summary.split()[1])
    assert 1.6 <= order <= 2.4

    cfg2 = write_config(tmp_path, out=str(tmp_path / "delta"))
    assert main(["delta", "--config", cfg2, "--out", str(tmp_path / "delta")]) == 0
    report = (tmp_path / "delta" / "delta_report.csv").read_text().splitlines()
    assert report[0].startswith("level,h,slope")
    assert len(report) == 3
