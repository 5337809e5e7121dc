#!/usr/bin/env python3
"""Reproduce the two figure regimes: one path + overlay SVG and the ensemble
summaries for both families.  Outputs land in out/fig1 and out/fig2."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from resonance_lab.cli import run_command

FIG1 = """\
family = symmetric
eps = 0.01
sigma = 0.08
a0 = 0.02
n_paths = 2000
"""

FIG2 = """\
family = asymmetric
eps = 0.005
sigma = 0.08
a0 = 0.005
n_paths = 2000
"""


def main() -> int:
    root = Path("out")
    root.mkdir(exist_ok=True)
    for name, text in (("fig1", FIG1), ("fig2", FIG2)):
        cfg = root / f"{name}.cfg"
        cfg.write_text(text, encoding="utf-8")
        out = root / name
        for cmd in ("simulate", "ensemble"):
            rc = run_command([cmd, "--config", str(cfg), "--out", str(out)])
            if rc != 0:
                return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
