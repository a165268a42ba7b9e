import json

import pytest

from mulprobe.artifacts import (
    atomic_write_text,
    make_header,
    read_csv,
    read_header,
    read_json,
    read_jsonl,
    write_csv,
    write_json,
    write_jsonl,
)
from mulprobe.config import DEFAULTS, ConfigError, load_config


def test_defaults_valid():
    cfg = load_config()
    assert cfg.seed == 0 and cfg.suite_count == DEFAULTS["suite_count"]
    assert len(cfg.hash()) == 16


def test_hash_ignores_output_dir_and_key(tmp_path):
    a = load_config(overrides={"output_dir": "x"})
    b = load_config(overrides={"output_dir": "y"})
    assert a.hash() == b.hash()
    c = load_config(overrides={"seed": 1})
    assert c.hash() != a.hash()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"backend": {"kind": "http", "endpoint": "http://x", "api_key": "secret"}}))
    q = tmp_path / "d.json"
    q.write_text(json.dumps({"backend": {"kind": "http", "endpoint": "http://x", "api_key": "other"}}))
    assert load_config(p).hash() == load_config(q).hash()


@pytest.mark.parametrize("override,field", [
    ({"suite_count": 0}, "suite_count"),
    ({"hds_count": 2}, "hds_count"),
    ({"templates": ["V", "0V"]}, "templates[1]"),
    ({"eval_representations": ["smell"]}, "eval_representations[0]"),
    ({"probe_representations": ["audio"]}, "probe_representations[0]"),
    ({"probe_split": "dev"}, "probe_split"),
    ({"bank_profile": "odd"}, "bank_profile"),
    ({"image_format": "gif"}, "image_format"),
    ({"failure_threshold": 2}, "failure_threshold"),
    ({"cost_params": {"margin_min": 0}}, "cost_params.margin_min"),
    ({"cost_params": {"lambda_add": -1}}, "cost_params"),
    ({"backend": {"kind": "grpc"}}, "backend.kind"),
])
def test_validation_names_field(tmp_path, override, field):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(override))
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert str(ei.value).startswith(field)


def test_unknown_nested_field(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"cost_params": {"lambda_foo": 1}}))
    with pytest.raises(ConfigError, match="cost_params.lambda_foo: unknown field"):
        load_config(p)


def test_env_interpolation(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"backend": {"kind": "http", "endpoint": "http://x", "api_key": "${MP_KEY}"}}))
    cfg = load_config(p)
    monkeypatch.setenv("MP_KEY", "s3")
    assert cfg.backend_config()["api_key"] == "s3"
    assert "s3" not in json.dumps(cfg.to_dict())
    monkeypatch.delenv("MP_KEY")
    with pytest.raises(ConfigError, match="MP_KEY"):
        cfg.backend_config()


def test_max_retries_flows_to_http(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"max_retries": 7, "backend": {"kind": "http", "endpoint": "http://x"}}))
    assert load_config(p).backend_config()["max_retries"] == 7


def test_saved_header_ignored(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 4, "_header": {"config_hash": "x"}}))
    assert load_config(p).seed == 4


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_jsonl_roundtrip(tmp_path):
    h = make_header("abc", None, "t")
    write_jsonl(tmp_path / "a.jsonl", [{"x": 1}, {"y": "é"}], h)
    hdr, recs = read_jsonl(tmp_path / "a.jsonl")
    assert hdr == h and recs == [{"x": 1}, {"y": "é"}]
    assert read_header(tmp_path / "a.jsonl") == h


def test_csv_roundtrip_exact_floats(tmp_path):
    h = make_header("abc", "def", "t")
    v = 0.1 + 0.2
    write_csv(tmp_path / "a.csv", [{"m": "x", "v": v, "n": None}], h)
    hdr, rows = read_csv(tmp_path / "a.csv")
    assert hdr["config_hash"] == "abc" and float(rows[0]["v"]) == v and rows[0]["n"] == ""
    assert read_header(tmp_path / "a.csv")["manifest_hash"] == "def"


def test_json_header(tmp_path):
    write_json(tmp_path / "a.json", {"k": 1}, make_header("c", None, "t"))
    assert read_json(tmp_path / "a.json")["_header"]["config_hash"] == "c"
    assert read_header(tmp_path / "a.json")["kind"] == "t"


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "d" / "f.txt", "hi")
    atomic_write_text(tmp_path / "d" / "f.txt", "bye")
    assert [p.name for p in (tmp_path / "d").iterdir()] == ["f.txt"]
    assert (tmp_path / "d" / "f.txt").read_text() == "bye"
