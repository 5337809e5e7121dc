#!/usr/bin/env python3
"""Critical-noise sweeps for both families at a0 = 0 and the power-law fits.

This is the expensive experiment ((a few minutes per family): sigma_c(eps)
over six eps values, fitted in log-log.  Expected slopes: 2/3 symmetric,
3/4 asymmetric."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from resonance_lab.cli import run_command

SWEEP = """\
family = {family}
a0 = 0.0
scan_paths = 400
seed = 7
"""


def main() -> int:
    root = Path("out")
    root.mkdir(exist_ok=True)
    for family in ("symmetric", "asymmetric"):
        cfg = root / f"sweep_{family}.cfg"
        cfg.write_text(SWEEP.format(family=family), encoding="utf-8")
        rc = run_command(["sweep", "--config", str(cfg), "--out", str(root / f"sweep_{family}")])
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
