import json
import subprocess
import sys

import pytest

from mulprobe import __version__
from mulprobe.artifacts import read_csv, read_header, read_json, read_jsonl
from mulprobe.cli import main

SMALL = {
    "suite_count": 8,
    "hds_count": 30,
    "trace_count": 10,
    "trap_count": 4,
    "perturbation_count": 3,
    "probe_limit": 4,
    "eval_representations": ["numeral_text", "numeral_image"],
}


def write_cfg(tmp_path, **extra):
    cfg = dict(SMALL, output_dir=str(tmp_path / "run"), **extra)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p), tmp_path / "run"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg, out = write_cfg(tmp)
    assert main(["pipeline", "--config", cfg]) == 0
    return cfg, out


def test_pipeline_layout(run_dir):
    _, out = run_dir
    for rel in ("config.json", "data/manifest.json", "data/hds.jsonl", "data/traps.jsonl", "data/suite.jsonl",
                "data/traces_rc.jsonl", "data/traces_style.jsonl", "data/contrastive.jsonl", "data/exclusions.json",
                "renders/index.jsonl", "eval/records.jsonl", "eval/accuracy.csv", "eval/fits.csv",
                "eval/error_rate.csv", "eval/plot_data.csv", "probe/results.jsonl", "probe/aggregate.csv",
                "contrast/aggregate.csv", "ablate/table.csv", "report/summary.json", "report/summary.md"):
        assert (out / rel).exists(), rel


def test_headers(run_dir):
    _, out = run_dir
    h = read_header(out / "probe" / "aggregate.csv")
    assert h["code_version"] == __version__ and len(h["config_hash"]) == 16
    hdr, recs = read_jsonl(out / "eval" / "records.jsonl")
    assert hdr["kind"] == "eval" and len(recs) == 16
    _, rows = read_csv(out / "eval" / "accuracy.csv")
    assert {r["representation"] for r in rows} == {"numeral_text", "numeral_image"}


def test_exclusions_respected(run_dir):
    _, out = run_dir
    excl = set(read_json(out / "data" / "exclusions.json")["keys"])
    for h in ("rc", "dd", "ot", "style"):
        _, recs = read_jsonl(out / "data" / f"traces_{h}.jsonl")
        for r in recs:
            a, b = r["prompt"][len("What is "):-1].split(" × ")
            key = "×".join(sorted((a, b), key=int))
            assert key not in excl


def test_verify_ok_and_tamper(run_dir, capsys):
    cfg, out = run_dir
    assert main(["verify", "--out", str(out)]) == 0
    assert "verify: ok" in capsys.readouterr().out
    p = out / "data" / "hds.jsonl"
    original = p.read_bytes()
    p.write_bytes(original.replace(b'"hds_000"', b'"hds_999"', 1))
    try:
        assert main(["verify", "--out", str(out)]) == 2
        assert "hash mismatch" in capsys.readouterr().err
    finally:
        p.write_bytes(original)


def test_stats_refit(run_dir, tmp_path):
    cfg, out = run_dir
    assert main(["stats", "--config", cfg, "--stats-out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "fits.csv").exists()


def test_validation_exit_code(tmp_path, capsys):
    cfg, _ = write_cfg(tmp_path)
    assert main(["gen", "--config", cfg, "--suite-count", "0"]) == 2
    assert "suite_count" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"suite_cuont": 3}))
    assert main(["gen", "--config", str(bad)]) == 2
    assert "suite_cuont: unknown field" in capsys.readouterr().err
    assert main(["gen", "--config", str(tmp_path / "missing.json")]) == 2


def test_capability_exit_code(tmp_path):
    cfg, out = write_cfg(tmp_path, probe_backend={"kind": "mock", "scoring": {"kind": "none"}})
    assert main(["gen", "--config", cfg]) == 0
    assert main(["probe", "--config", cfg]) == 3


def test_partial_failure_exit_code(tmp_path, capsys):
    # replay mode with an empty cache: every request misses
    cfg, out = write_cfg(tmp_path, backend={"kind": "http", "mode": "replay", "model": "m"})
    assert main(["gen", "--config", cfg]) == 0
    assert main(["eval", "--config", cfg]) == 4
    assert "failed" in capsys.readouterr().err
    _, recs = read_jsonl(out / "eval" / "records.jsonl")
    assert all(r["error"] for r in recs)


def test_env_interpolation_only_for_credentials(tmp_path, monkeypatch):
    cfg, _ = write_cfg(tmp_path, backend={"kind": "http", "endpoint": "${HOST}", "model": "m"})
    assert main(["gen", "--config", cfg]) == 2


def test_geometry_synthetic(tmp_path, capsys):
    assert main(["geometry", "--out", str(tmp_path / "g"), "--synthetic", str(tmp_path / "ads")]) == 0
    res = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert res["gap"] > 0
    adapters = sorted(str(p) for p in (tmp_path / "ads").iterdir())
    assert main(["geometry", "--out", str(tmp_path / "g2"), *adapters]) == 0
    assert (tmp_path / "g2" / "geometry" / "matrix.csv").exists()


def test_geometry_bad_adapter(tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "y").mkdir()
    assert main(["geometry", "--out", str(tmp_path / "g"), str(tmp_path / "x"), str(tmp_path / "y")]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mulprobe", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
