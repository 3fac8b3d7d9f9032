import os

import numpy as np
import pytest

from freebound.cli import RunConfig, main

BASE = """
[grid]
dim = 2
n = {n}
box = -2 2

[data]
f = constant 1.0
g = constant 1.0
Q = constant 0.25

[optimize]
init_radius = 1.0

[output]
directory = {out}
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_missing_grid_n_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "[grid]\ndim = 2\nbox = -2 2\n")
    rc = main(["solve", cfg])
    assert rc == 2
    assert "missing required key [grid].n" in capsys.readouterr().err
    # nothing written
    assert not (tmp_path / "out").exists()


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "[grid]\nn = 64\nwibble = 3\n")
    assert main(["solve", cfg]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_unknown_section_exits_2(tmp_path):
    cfg = _write(tmp_path, "[grid]\nn = 64\n\n[banana]\nx = 1\n")
    assert main(["solve", cfg]) == 2


def test_malformed_number_exits_2(tmp_path):
    cfg = _write(tmp_path, "[grid]\nn = 64\nbox = -2 fish\n")
    assert main(["solve", cfg]) == 2


def test_missing_file_exits_2(tmp_path):
    assert main(["solve", str(tmp_path / "nope.ini")]) == 2


def test_solve_writes_outputs(tmp_path):
    cfg = _write(tmp_path, BASE.format(n=64, out="out"))
    assert main(["solve", cfg]) == 0
    out = tmp_path / "out"
    for f in ("manifest.ini", "u.fld", "v.fld"):
        assert (out / f).exists()


def test_manifest_round_trips(tmp_path):
    cfg = _write(tmp_path, BASE.format(n=64, out="out"))
    assert main(["solve", cfg]) == 0
    manifest = tmp_path / "out" / "manifest.ini"
    first = manifest.read_bytes()
    u_first = (tmp_path / "out" / "u.fld").read_bytes()
    # re-running from the manifest reproduces identical outputs
    assert main(["solve", str(manifest)]) == 0
    assert manifest.read_bytes() == first
    assert (tmp_path / "out" / "u.fld").read_bytes() == u_first


def test_variation_summary(tmp_path, capsys):
    text = BASE.format(n=64, out="out").replace(
        "Q = constant 0.25", "Q = constant 0.25\nxi = bump-e1 0.55 0.0 0.6 1.0"
    )
    cfg = _write(tmp_path, text, "var.ini")
    assert main(["variation", cfg]) == 0
    cap = capsys.readouterr().out
    assert "|dF| =" in cap
    assert (tmp_path / "out" / "variation.csv").exists()


def test_blowup_requires_points(tmp_path):
    cfg = _write(tmp_path, BASE.format(n=64, out="out"))
    assert main(["blowup", cfg]) == 2


def test_blowup_runs(tmp_path):
    text = BASE.format(n=128, out="outb") + "\n[blowup]\npoints = 1.0 0.0\n"
    cfg = _write(tmp_path, text)
    assert main(["blowup", cfg]) == 0
    assert (tmp_path / "outb" / "weiss_0.csv").exists()


def test_blowup_numerical_failure_exits_3(tmp_path):
    # radius ladder below the 4h resolution floor is a numerical failure
    text = (
        BASE.format(n=64, out="outn")
        + "\n[blowup]\npoints = 1.0 0.0\nradii = 0.1 0.05\n"
    )
    cfg = _write(tmp_path, text)
    assert main(["blowup", cfg]) == 3


def test_cone_subcommand(tmp_path, capsys):
    text = BASE.format(n=64, out="outc") + "\n[cone]\ndim = 3\n"
    cfg = _write(tmp_path, text)
    assert main(["cone", cfg]) == 0
    out = capsys.readouterr().out
    assert "stability_min" in out
    assert (tmp_path / "outc" / "cone_profile.csv").exists()
    assert (tmp_path / "outc" / "rayleigh.csv").exists()


def test_cone_scan(tmp_path):
    text = (
        BASE.format(n=64, out="outs")
        + "\n[cone]\ndim = 3\nscan = 0.8 2.4 5\n"
    )
    cfg = _write(tmp_path, text)
    assert main(["cone", cfg]) == 0
    lines = (tmp_path / "outs" / "cone_scan.csv").read_text().splitlines()
    assert len(lines) == 6


def test_classify_with_seeded_sampling(tmp_path, capsys):
    text = (
        BASE.format(n=128, out="outk").rstrip()
        + "\nseed = 11\n\n[blowup]\nnum_points = 3\n"
    )
    cfg = _write(tmp_path, text)
    assert main(["classify", cfg]) == 0
    assert (tmp_path / "outk" / "classify.csv").exists()
    first = (tmp_path / "outk" / "classify.csv").read_bytes()
    assert main(["classify", cfg]) == 0
    assert (tmp_path / "outk" / "classify.csv").read_bytes() == first


def test_diagnose(tmp_path, capsys):
    cfg = _write(tmp_path, BASE.format(n=128, out="outd"))
    assert main(["diagnose", cfg]) == 0
    assert "lipschitz" in capsys.readouterr().out
    assert (tmp_path / "outd" / "diagnostics.csv").exists()


def test_optimize_quick(tmp_path, capsys):
    text = BASE.format(n=64, out="outo").replace(
        "init_radius = 1.0",
        "init_radius = 1.1\nmax_steps = 5\nstep = 0.9",
    )
    cfg = _write(tmp_path, text)
    assert main(["optimize", cfg]) == 0
    out = capsys.readouterr().out
    assert "equivalent_radius" in out
    assert (tmp_path / "outo" / "opt_trace.csv").exists()
    assert (tmp_path / "outo" / "final.fld").exists()


def test_runconfig_resolves_relative_paths(tmp_path):
    cfg_path = _write(tmp_path, BASE.format(n=64, out="rel/sub"))
    cfg = RunConfig.from_file(cfg_path)
    assert os.path.isabs(cfg.get("output", "directory"))
    assert cfg.get("output", "directory").endswith(os.path.join("rel", "sub"))
