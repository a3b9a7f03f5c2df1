"""Calibrated theta(eta) for each built-in system."""

from repball.flows import make_system
from repball.reparam import CalibrationFailure, calibrate_theta

for name in ("shift2", "cat", "torus"):
    s = make_system(name)
    row = []
    for eta in (0.1, 0.25, 0.5):
        try:
            row.append(f"{calibrate_theta(s, eta, 50, 0):.4g}")
        except CalibrationFailure:
            row.append("none")
    print(name, "theta(0.1, 0.25, 0.5) =", ", ".join(row))
