import json

import numpy as np
import pytest

from qmaps import io as qio
from qmaps.cli import main
from qmaps.grid import QGridMap, sample_map
from qmaps.manifold import sphere
from qmaps.presets import hedgehog, root_map


def test_qmap_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    u = QGridMap(rng.normal(size=(4, 5, 2, 3)) / 3, 0.1, [-0.3, 0.7])
    p = qio.write_qmap(tmp_path / "a.qmap", u, "abc")
    v = qio.read_qmap(p)
    np.testing.assert_array_equal(u.values, v.values)
    assert v.h == u.h and np.array_equal(v.origin, u.origin) and v.target.label == "flat:3"
    text = p.read_text().splitlines()
    assert text[0] == "QMAP 1 N=2 Q=2 M=3 SHAPE=4,5 H=0.1 ORIGIN=-0.3,0.7 TARGET=flat:3"
    assert text[1] == "# config abc"
    assert text[2].startswith("0 0 ") and text[-1].startswith("3 4 ")


def test_qmap_roundtrip_sphere(tmp_path):
    u = sample_map(hedgehog, (5, 5, 5), 0.5, (-1, -1, -1), sphere(3))
    v = qio.read_qmap(qio.write_qmap(tmp_path / "h.qmap", u))
    np.testing.assert_array_equal(u.values, v.values)
    assert v.target.kind == "sphere"


def test_qmap_malformed(tmp_path):
    p = tmp_path / "bad.qmap"
    p.write_text("QMAP 2 N=2\n")
    with pytest.raises(ValueError):
        qio.read_qmap(p)
    p.write_text("QMAP 1 N=2 Q=1 M=1 SHAPE=2,2 H=1 ORIGIN=0,0 TARGET=flat:1\n0 0 1.0\n")
    with pytest.raises(ValueError, match="node lines"):
        qio.read_qmap(p)
    p.write_text("QMAP 1 N=2 Q=1 M=1 SHAPE=1,1 H=1 ORIGIN=0,0 TARGET=flat:1\n0 0 1.0 2.0\n")
    with pytest.raises(ValueError, match=":2:"):
        qio.read_qmap(p)


def test_config_parsing():
    cfg = qio.parse_config_text("# comment\nmax_sweeps = 10  # inline\n\ntarget = flat:2\nenergy_tol=1e-6\n")
    assert cfg == {"max_sweeps": 10, "target": "flat:2", "energy_tol": 1e-6}
    with pytest.raises(qio.ConfigError, match=":2: unknown key"):
        qio.parse_config_text("seed = 1\nfoo = 2\n")
    with pytest.raises(qio.ConfigError, match=":1:"):
        qio.parse_config_text("seed 1\n")
    with pytest.raises(qio.ConfigError, match=":1: seed expects int"):
        qio.parse_config_text("seed = x\n")
    with pytest.raises(qio.ConfigError, match="duplicate"):
        qio.parse_config_text("seed = 1\nseed = 2\n")


def test_config_hash_order_free():
    assert qio.config_hash({"a": 1, "b": 2}) == qio.config_hash({"b": 2, "a": 1})
    assert qio.config_hash({"a": 1}) != qio.config_hash({"a": 2})


def test_cli_metric(capsys):
    assert main(["metric", "--left", "2 1 0 ; 2", "--right", "2 1 1 ; 3"]) == 0
    assert capsys.readouterr().out.strip() == "1.4142135623730951"
    assert main(["metric", "--left", "2 1 0 ; 2", "--right", "2 1 1"]) == 2


def write_cfg(path, **kw):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kw.items()))
    return path


@pytest.fixture(scope="module")
def minimized(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write_cfg(d / "sqrt2.cfg", boundary_preset="sqrt2", grid_n=64, seed=0)
    code = main(["--out-dir", str(d), "minimize", "--config", str(cfg)])
    return d, code


def test_cli_minimize_artifacts(minimized):
    d, code = minimized
    assert code == 0
    u = qio.read_qmap(d / "out.qmap")
    assert u.shape == (65, 65)
    lines = (d / "energy_history.csv").read_text().splitlines()
    assert lines[0].startswith("# config ") and lines[1] == "sweep,energy"
    E = [float(x.split(",")[1]) for x in lines[2:]]
    assert np.all(np.diff(E) <= 0)
    summary = json.loads((d / "minimize.json").read_text())
    assert summary["converged"] and summary["energy"] == pytest.approx(E[-1])
    assert summary["unit_ball_energy"] == pytest.approx(2 * np.pi, rel=0.03)


def test_cli_minimize_deterministic(minimized, tmp_path):
    d, _ = minimized
    cfg = write_cfg(tmp_path / "sqrt2.cfg", boundary_preset="sqrt2", grid_n=64, seed=0)
    assert main(["--out-dir", str(tmp_path), "minimize", "--config", str(cfg)]) == 0
    for name in ("out.qmap", "energy_history.csv", "minimize.json"):
        assert (tmp_path / name).read_bytes() == (d / name).read_bytes()


def test_cli_holder(minimized, capsys):
    d, _ = minimized
    code = main(["--out-dir", str(d), "holder", "--map", str(d / "out.qmap"), "--center", "0,0",
                 "--rmin", "0.05", "--rmax", "0.5"])
    assert code == 0
    res = json.loads((d / "holder.json").read_text())
    assert res["alpha"] == pytest.approx(0.5, abs=0.05)
    assert "config_hash" in res


def test_cli_profile_monotonicity_classify(minimized):
    d, _ = minimized
    m = str(d / "out.qmap")
    assert main(["--out-dir", str(d), "profile", "--map", m]) == 0
    rows = (d / "profile.csv").read_text().splitlines()
    assert rows[1] == "r,raw_energy,scaled_energy" and len(rows) == 12
    assert main(["--out-dir", str(d), "monotonicity", "--map", m, "--rmin", "0.2", "--rmax", "0.8"]) == 0
    mono = json.loads((d / "monotonicity.json").read_text())
    assert len(mono["pairs"]) == 10 and mono["max_discrepancy"] <= mono["tolerance"]
    assert main(["--out-dir", str(d), "classify", "--map", m, "--eps0", "1.0"]) == 0
    assert json.loads((d / "classify.json").read_text())["count"] == 0


def test_cli_split(tmp_path):
    X = np.stack(np.meshgrid(np.linspace(-1, 1, 9), np.linspace(-1, 1, 9), indexing="ij"), -1)
    vals = root_map(X, 2) * 0.1 + np.array([[0.0, 0.0], [10.0, 0.0]])
    u = QGridMap(vals, 0.25, [-1, -1])
    qio.write_qmap(tmp_path / "m.qmap", u)
    code = main(["--out-dir", str(tmp_path), "split", "--map", str(tmp_path / "m.qmap"),
                 "--eps", "0.1", "--s", "auto", "--reference", "2 2 0 0 ; 10 0"])
    assert code == 0
    rep = json.loads((tmp_path / "split.json").read_text())
    assert rep["multiplicities"] == [1, 1] and rep["valid"]
    assert main(["--out-dir", str(tmp_path), "split", "--map", str(tmp_path / "m.qmap"),
                 "--s", "4", "--reference", "2 2 0 0 ; 10 0"]) == 2


def test_cli_luckhaus(tmp_path):
    code = main(["--out-dir", str(tmp_path), "luckhaus", "--n", "3", "--cap-l", "3", "--sub-l", "1",
                 "--q", "2", "--boundary", "branch", "--seed", "1", "--out", "rep.json"])
    assert code == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["trace_error"] == 0.0 and rep["L"] == 3 and rep["l"] == 1
    assert main(["luckhaus", "--n", "2", "--boundary", "branch"]) == 2


def test_cli_validation_and_nonconvergence(tmp_path):
    bad = write_cfg(tmp_path / "bad.cfg", boundary_preset="sqrt2", colour="red")
    assert main(["--out-dir", str(tmp_path), "minimize", "--config", str(bad)]) == 2
    wrong = write_cfg(tmp_path / "w.cfg", boundary_preset="sqrt2", q=3)
    assert main(["--out-dir", str(tmp_path), "minimize", "--config", str(wrong)]) == 2
    short = write_cfg(tmp_path / "s.cfg", boundary_preset="sqrt2", grid_n=32, max_sweeps=2)
    assert main(["--out-dir", str(tmp_path / "nc"), "minimize", "--config", str(short)]) == 3
    assert not json.loads((tmp_path / "nc" / "minimize.json").read_text())["converged"]
    assert main(["--out-dir", str(tmp_path), "holder", "--map", str(tmp_path / "none.qmap")]) == 2
    with pytest.raises(SystemExit):
        main(["bogus"])
