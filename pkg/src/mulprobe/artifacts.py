"""Output files: atomic writes and provenance headers.

Every JSONL file starts with a ``{"_header": ...}`` line, every CSV with a
``# mulprobe ...`` comment line and every JSON document carries a ``_header``
key. The header names the config hash, dataset manifest hash and code version.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

from . import __version__


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def make_header(config_hash: str, manifest_hash: Optional[str], kind: str) -> dict:
    return {"config_hash": config_hash, "manifest_hash": manifest_hash, "code_version": __version__, "kind": kind}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path, records: Iterable[dict], header: dict) -> Path:
    lines = [_dumps({"_header": header})] + [_dumps(r) for r in records]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_jsonl(path) -> tuple:
    header, records = None, []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            if i == 0 and "_header" in rec:
                header = rec["_header"]
            else:
                records.append(rec)
    return header, records


def write_json(path, obj: dict, header: Optional[dict]) -> Path:
    doc = dict(obj)
    if header is not None:
        doc["_header"] = header
    return atomic_write_text(path, json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, dict)):
        return _dumps(v)
    return v


def write_csv(path, rows: list, header: dict, columns: Optional[list] = None) -> Path:
    columns = columns or (list(rows[0].keys()) if rows else [])
    buf = io.StringIO()
    buf.write("# mulprobe " + " ".join(f"{k}={header[k]}" for k in sorted(header)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple:
    text = Path(path).read_text(encoding="utf-8")
    header = {}
    lines = text.splitlines()
    if lines and lines[0].startswith("# mulprobe "):
        for part in lines[0][len("# mulprobe "):].split(" "):
            k, _, v = part.partition("=")
            header[k] = None if v == "None" else v
        lines = lines[1:]
    rows = list(csv.DictReader(lines))
    return header, rows


def read_header(path) -> Optional[dict]:
    """Provenance header of any output file written by this module, or None."""
    p = Path(path)
    if p.suffix == ".jsonl":
        with open(p, encoding="utf-8") as fh:
            first = fh.readline()
        try:
            return json.loads(first).get("_header")
        except (json.JSONDecodeError, AttributeError):
            return None
    if p.suffix == ".csv":
        return read_csv(p)[0] or None
    if p.suffix == ".json":
        try:
            return read_json(p).get("_header")
        except json.JSONDecodeError:
            return None
    return None
