"""Regenerate the frozen reference curve used by the regression tests.

Run from the repository root::

    python3 scripts/freeze_reference.py

The closed-form oscillator pipeline is evaluated at quadrature tolerance
1e-11 on a 40-point logarithmic damping grid and written to
``tests/data/reference_curve.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy

from qtur import oscillator

FIELDS = ("P_w", "P_W", "DeltaP_w", "DeltaI_w", "sigma_dot", "eta", "eta_Q", "eta_PS", "f_value", "tur_residual")
TOL = 1e-11


def main() -> None:
    base = dict(omega0=1.0, T_c=0.2, T_h=2.0, tau=100.0)
    rows = []
    for gamma in np.geomspace(0.05, 50.0, 40):
        rep = oscillator.evaluate(oscillator.OscillatorParams(Gamma=float(gamma), **base), tol=TOL)
        rows.append({"Gamma": float(gamma), **{k: getattr(rep, k) for k in FIELDS}})
    out = {
        "generator": "qtur.oscillator.evaluate",
        "quadrature_tol": TOL,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "parameters": base,
        "rows": rows,
    }
    path = Path(__file__).resolve().parent.parent / "tests" / "data" / "reference_curve.json"
    path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} rows to {path}")


if __name__ == "__main__":
    main()
