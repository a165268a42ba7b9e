"""Regenerate the frozen mock run under tests/golden.

    python tests/make_golden.py

Only rerun this when an intended change alters aggregate outputs.
"""
import shutil
import sys
import tempfile
from pathlib import Path

from mulprobe.cli import main

GOLDEN = Path(__file__).parent / "golden"
FILES = {
    "probe/aggregate.csv": "probe_aggregate.csv",
    "contrast/aggregate.csv": "contrast_aggregate.csv",
    "ablate/table.csv": "ablation_table.csv",
}


def run(out: Path) -> None:
    cfg = str(GOLDEN / "golden_config.json")
    for cmd in ("gen", "probe", "contrast", "ablate"):
        if main([cmd, "--config", cfg, "--out", str(out)]) != 0:
            raise SystemExit(f"{cmd} failed")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        run(Path(tmp))
        for src, dst in FILES.items():
            shutil.copyfile(Path(tmp) / src, GOLDEN / dst)
            print(f"wrote {GOLDEN / dst}")
    sys.exit(0)
