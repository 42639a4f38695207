"""Bundled example problems: double integrator, battery ring, radiant slab.

Each generator returns the plain-dict problem file (the same structure the
CLI reads and writes), so generated examples round-trip through the parser
by construction.
"""

from __future__ import annotations

import numpy as np

EXAMPLE_NAMES = ("integrator", "battery", "slab")


def _box(lo, hi):
    return {"lo": list(np.atleast_1d(np.asarray(lo, dtype=float))),
            "hi": list(np.atleast_1d(np.asarray(hi, dtype=float)))}


def _mat(M):
    return np.asarray(M, dtype=float).tolist()


def integrator_file(horizon: int = 3) -> dict:
    """Planar double integrator with unit boxes and full dihedral symmetry.

    x+ = x + u + d on the box |x_i| <= 10, |u_i| <= 1, |d_i| <= 0.5, with
    identity quadratic costs.  The square's eight symmetries (quarter-turn
    rotation and an axis reflection as generators) act identically on states
    and inputs.
    """
    eye = np.eye(2)
    rot = [[0.0, -1.0], [1.0, 0.0]]
    ref = [[1.0, 0.0], [0.0, -1.0]]
    return {
        "name": "integrator",
        "dynamics": {"A": _mat(eye), "B": _mat(eye)},
        "horizon": int(horizon),
        "cost": {"Q": _mat(eye), "R": _mat(eye), "QN": _mat(eye)},
        "constraints": {
            "X": _box([-10, -10], [10, 10]),
            "U": _box([-1, -1], [1, 1]),
            "D": _box([-0.5, -0.5], [0.5, 0.5]),
        },
        "disturbance": {"mean": [0.0, 0.0]},
        "symmetry": {"generators": [
            {"Theta": rot, "Omega": rot},
            {"Theta": ref, "Omega": ref},
        ]},
    }


def ring_laplacian(n: int) -> np.ndarray:
    """Graph Laplacian of the n-cycle: 2I minus the two cyclic shifts."""
    P = np.roll(np.eye(n), 1, axis=0)
    return 2.0 * np.eye(n) - P - P.T


def battery_file(n: int = 5, horizon: int = 1,
                 i_max: float = 5.0, capacity: float = 3.6e5) -> dict:
    """Ring of n identical batteries balancing their states of charge.

    x+ = x + (i_max/capacity) L (u + d) with L the ring Laplacian, so total
    charge is conserved exactly.  The cost penalises charge imbalance
    (I - J/n) and, weakly, the exchanged currents.  The dihedral group of
    the ring (cyclic shift and reflection, acting the same way on node
    states and node inputs) is attached as the symmetry.
    """
    if n < 3:
        raise ValueError("a ring needs at least 3 nodes")
    c = i_max / capacity
    L = ring_laplacian(n)
    Q = np.eye(n) - np.ones((n, n)) / n
    shift = np.roll(np.eye(n), 1, axis=0)
    reverse = np.eye(n)[::-1].copy()
    return {
        "name": "battery",
        "dynamics": {"A": _mat(np.eye(n)), "B": _mat(c * L), "G": _mat(c * L)},
        "horizon": int(horizon),
        "cost": {"Q": _mat(Q), "R": _mat(1e-6 * np.eye(n)), "QN": _mat(Q)},
        "constraints": {
            "X": _box(np.zeros(n), np.ones(n)),
            "U": _box(-np.ones(n), np.ones(n)),
            "D": _box(-0.1 * np.ones(n), 0.1 * np.ones(n)),
        },
        "disturbance": {"mean": [0.0] * n},
        "symmetry": {"generators": [
            {"Theta": _mat(shift), "Omega": _mat(shift)},
            {"Theta": _mat(reverse), "Omega": _mat(reverse)},
        ]},
    }


def default_outside_profile() -> np.ndarray:
    """Synthetic 48-hour outside-air temperature profile (deg C).

    Placeholder summer diurnal cycle — NOT measured data: a sinusoid with
    its minimum near 06:00 and maximum near 15:00, plus a slow warming
    trend over the second day.
    """
    h = np.arange(48, dtype=float)
    base = 22.5 + 7.5 * np.sin(2.0 * np.pi * (h - 9.0) / 24.0)
    trend = 0.03 * h
    return base + trend


def slab_file(horizon: int = 24, window: int = 0, rho: float = 0.01,
              profile=None) -> dict:
    """Radiant-slab building zone tracking a 70 degF room setpoint.

    Two states (slab core temperature, room air temperature minus 70), one
    supply-water input (shifted by -70), and a scalar outside-air
    disturbance with a +-5 degree radius around the hourly forecast mean.
    The affine terms produced by shifting the coordinates are folded into a
    per-stage drift.  ``window`` selects the first hour of the forecast used.
    """
    A = np.array([[0.9579, 0.0406], [0.0093, 0.9883]])
    B = np.array([[0.0016], [0.0]])
    W = np.array([[0.0], [0.0025]])
    t0 = np.array([0.0, 70.0])
    drift = A @ t0 - t0 + 70.0 * B[:, 0]
    if profile is None:
        profile = default_outside_profile()
    profile = np.asarray(profile, dtype=float).ravel()
    if window < 0 or window + horizon > profile.size:
        raise ValueError(
            f"window [{window}, {window + horizon}) falls outside the "
            f"{profile.size}-hour profile")
    means = profile[window:window + horizon]
    return {
        "name": "slab",
        "profile_note": "synthetic outside-air profile, not measured data",
        "dynamics": {"A": _mat(A), "B": _mat(B), "G": _mat(W),
                     "drift": list(drift)},
        "horizon": int(horizon),
        "cost": {"Q": _mat(np.diag([0.0, 1.0])), "R": [[float(rho)]],
                 "QN": _mat(np.diag([0.0, 1.0]))},
        "constraints": {
            "X": _box([55.0, -10.0], [90.0, 10.0]),
            "U": _box([-15.0], [20.0]),
            "D": [_box([m - 5.0], [m + 5.0]) for m in means],
        },
        "disturbance": {"mean": [[float(m)] for m in means]},
    }


def example_file(name: str, **params) -> dict:
    if name == "integrator":
        return integrator_file(**params)
    if name == "battery":
        return battery_file(**params)
    if name == "slab":
        return slab_file(**params)
    raise ValueError(
        f"unknown example {name!r}; choose one of {', '.join(EXAMPLE_NAMES)}")
