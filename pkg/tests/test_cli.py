import json

import numpy as np
import pytest

from selkam.cli import ConfigError, load_config, main, run

FAST_CFG = """[hamiltonian]
expr = p^2/2
dim = 1

[lagrangian]
kind = flowed
v = 0.02*sin(2*pi*q)
T = 0.2
steps = 200

[grids]
base = 256
lattice = 256
velocity = 256
samples = 1024

[run]
seed = 0
dt = 0.1
horizon = 5
"""


@pytest.fixture()
def fast_cfg(tmp_path):
    p = tmp_path / "fast.cfg"
    p.write_text(FAST_CFG)
    return p


def test_config_rejects_bad_resolution(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(FAST_CFG.replace("base = 256", "base = 100"))
    status = main(["weakkam", "--config", str(p), "--out", str(tmp_path / "o")])
    assert status == 2


def test_config_names_the_field(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(FAST_CFG.replace("base = 256", "base = 100"))
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.fieldpath == "grids.base"


def test_config_rejects_bad_expression(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(FAST_CFG.replace("p^2/2", "p^2/+cos(q)"))
    status = main(["weakkam", "--config", str(p), "--out", str(tmp_path / "o")])
    assert status == 2


def test_config_tolerance_range(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(FAST_CFG + "\n[tolerances]\nsnap_radius = 0.5\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.fieldpath == "tolerances.snap_radius"


def test_weakkam_free_alpha_zero(fast_cfg, tmp_path):
    cfg = load_config(fast_cfg, out_dir=tmp_path / "out")
    summary, status = run("weakkam", cfg)
    assert status == 0
    assert summary["results"]["alpha"] == pytest.approx(0.0, abs=1e-9)
    assert (tmp_path / "out" / "solution.txt").exists()


def test_determinism_bit_identical(fast_cfg, tmp_path):
    cfg_a = load_config(fast_cfg, out_dir=tmp_path / "a")
    cfg_b = load_config(fast_cfg, out_dir=tmp_path / "b")
    run("weakkam", cfg_a)
    run("weakkam", cfg_b)
    assert (tmp_path / "a" / "summary.json").read_bytes() == \
        (tmp_path / "b" / "summary.json").read_bytes()


def test_selector_front_invariant_and_oracle_roundtrip(fast_cfg, tmp_path):
    out = tmp_path / "out"
    cfg = load_config(fast_cfg, out_dir=out)
    summary, status = run("selector", cfg)
    assert status == 0 and summary["results"]["ok"]
    _, status = run("front", cfg)
    assert status == 0
    _, status = run("invariant", cfg)
    assert status == 0
    summary, status = run("oracle", cfg)
    assert status == 0
    reparsed = summary["results"]["reparsed_artifacts"]
    assert {"selector.txt", "front.txt", "invariant.txt",
            "oracle.txt"} <= set(reparsed)


def test_verify_suite_exit_status(fast_cfg, tmp_path):
    cfg = load_config(fast_cfg, out_dir=tmp_path / "v")
    summary, status = run("verify", cfg, suite="weakkam")
    assert status == 0
    assert summary["results"]["ok"]


def test_summary_has_versions_and_hash(fast_cfg, tmp_path):
    cfg = load_config(fast_cfg, out_dir=tmp_path / "out")
    run("weakkam", cfg)
    data = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert data["config_hash"] == cfg.config_hash
    assert "numpy" in data["versions"]
