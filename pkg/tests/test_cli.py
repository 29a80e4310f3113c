import csv
import hashlib
import json

import pytest

from bhdimer import cli

BASE = """\
schema_version = 1
n_particles = 12
u = -3.0
delta_initial = -2
delta_turn = 2
"""


def _cfg(tmp_path, body, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(BASE + body)
    return str(path)


def test_parse_lists_and_log_grid():
    cfg = cli.parse_config(BASE + "kind = return-scan\nhalf_times = log:10:1000:3\nlevel = 0\n")
    assert cfg.half_times == pytest.approx([10.0, 100.0, 1000.0])
    cfg = cli.parse_config("schema_version = 1\nkind = gap-vs-N\nn_values = 10, 20\nu_values = -0.5\n")
    assert cfg.n_values == [10, 20]


@pytest.mark.parametrize("body, field", [
    ("kind = final-split\nhalf_time = 10\n", "level"),
    ("kind = nonsense\n", "kind"),
    ("kind = final-split\nhalf_time = 10\nlevel = 13\n", "level"),
    ("kind = final-split\nhalf_time = -1\nlevel = 0\n", "half_time"),
    ("kind = final-split\nhalf_time = ten\nlevel = 0\n", "half_time"),
    ("kind = dos\ndelta = 0\ncolour = red\n", "colour"),
    ("kind = classical-ensemble\nhalf_times = 10\n", "action"),
])
def test_invalid_configs_name_the_field(body, field):
    with pytest.raises(cli.ConfigError) as info:
        cli.parse_config(BASE + body)
    assert str(info.value).startswith(field)


def test_schema_version_required():
    with pytest.raises(cli.ConfigError, match="schema_version"):
        cli.parse_config("kind = dos\n")
    with pytest.raises(cli.ConfigError, match="unsupported"):
        cli.parse_config("schema_version = 7\nkind = dos\n")


def test_invalid_config_exit_code(tmp_path, capsys):
    path = _cfg(tmp_path, "kind = final-split\n")
    assert cli.main(["run", "--config", path, "--quiet"]) == cli.EXIT_INVALID
    assert "half_time" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_INVALID


def test_run_writes_manifest_with_checksums(tmp_path):
    path = _cfg(tmp_path, "kind = final-split\nhalf_time = 30\nlevel = 1\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", path, "--out", str(out), "--quiet"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok"
    assert man["config"]["level"] == 1
    names = {f["path"] for f in man["files"]}
    assert names == {"final.csv", "summary.json"}
    for f in man["files"]:
        assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["norm_drift"] < 1e-8


def test_outputs_are_deterministic(tmp_path):
    path = _cfg(tmp_path, "kind = spectrum-scan\n")
    digests = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert cli.main(["run", "--config", path, "--out", str(out), "--quiet"]) == 0
        man = json.loads((out / "manifest.json").read_text())
        digests.append({f["path"]: f["sha256"] for f in man["files"]})
        assert man["config_sha256"] == cli.parse_config(open(path).read()).digest()
    assert digests[0] == digests[1]


def test_summary_json_is_strict(tmp_path):
    # a non-separable outcome has undefined peak masses; they must serialize as null
    path = _cfg(tmp_path, "kind = final-split\nhalf_time = 200\nlevel = 1\n")
    out = tmp_path / "out"
    cli.main(["run", "--config", path, "--out", str(out), "--quiet"])
    doc = json.loads((out / "summary.json").read_text(), parse_constant=lambda c: pytest.fail(c))
    assert "separable" in doc


def test_compute_failure_exit_code(tmp_path):
    path = _cfg(tmp_path, "kind = final-split\nhalf_time = 20\nlevel = 0\ndrift_threshold = 1e-30\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", path, "--out", str(out), "--quiet"]) == cli.EXIT_COMPUTE
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_scan_over_half_time(tmp_path):
    path = _cfg(tmp_path, "kind = final-split\nhalf_time = 10\nlevel = 0\n")
    out = tmp_path / "scan"
    code = cli.main(["scan", "--config", path, "--axis", "T", "--values", "10,20",
                     "--out", str(out), "--workers", "1", "--quiet"])
    assert code == 0
    rows = list(csv.DictReader(open(out / "scan.csv")))
    assert [r["T"] for r in rows] == ["10.0", "20.0"]
    assert all(r["exit_code"] == "0" for r in rows)
    assert (out / "T=20.0" / "manifest.json").exists()


def test_scan_isolates_bad_points(tmp_path):
    path = _cfg(tmp_path, "kind = final-split\nhalf_time = 10\nlevel = 0\n")
    out = tmp_path / "scan"
    code = cli.main(["scan", "--config", path, "--axis", "level", "--values", "0,99",
                     "--out", str(out), "--workers", "1", "--quiet"])
    assert code == cli.EXIT_COMPUTE
    rows = list(csv.DictReader(open(out / "scan.csv")))
    assert [r["exit_code"] for r in rows] == ["0", "1"]


def test_validate_estimates_and_warns(tmp_path, capsys):
    path = _cfg(tmp_path, "kind = final-split\nhalf_time = 1e8\nlevel = 0\n")
    assert cli.main(["validate", "--config", path]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["dimension"] == 13
    assert rep["projected_steps"][0] > 1e9
    assert any("ICA" in w for w in rep["warnings"])


def test_gap_vs_n_uses_parity_splitting_when_supercritical(tmp_path):
    path = tmp_path / "g.cfg"
    path.write_text("schema_version = 1\nkind = gap-vs-N\nn_values = 10, 14\nu_values = 0.0, -3.0\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(path), "--out", str(out), "--quiet"]) == 0
    rows = list(csv.DictReader(open(out / "gaps.csv")))
    methods = {(r["u"], r["n_particles"]): r["method"] for r in rows}
    assert methods[("0.0", "10")] == "scan"
    assert methods[("-3.0", "14")] == "parity"
    assert float(rows[0]["delta_min"]) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("kind, extra, expected", [
    ("dos", "delta = 0\n", "dos.csv"),
    ("sweep-map", "half_time = 10\nlevel = 0\nsnapshots = 3\n", "occupations.csv"),
    ("return-scan", "half_times = 20, 40\nmixture_size = 3\ncenter_level = 4\n", "return.csv"),
    ("ica-compare", "half_time = 50\nexact = true\n", "variants.json"),
    ("correspondence", "half_times = 100, 1000\nmixture_size = 3\ncenter_levels = 3\n",
     "correspondence.csv"),
    ("classical-ensemble", "half_times = 20\naction_fraction = 0.2\nsamples = 20\n", "ensemble.csv"),
])
def test_every_kind_runs(tmp_path, monkeypatch, kind, extra, expected):
    monkeypatch.setenv("BHDIMER_CACHE", str(tmp_path / "cache"))
    path = _cfg(tmp_path, f"kind = {kind}\n" + extra)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", path, "--out", str(out), "--quiet"]) == 0
    assert (out / expected).exists()
