"""Smoke test for the pyhamfd extension module.

Build and install:
    maturin build --release -m crates/python/Cargo.toml -o target/wheels
    pip install target/wheels/pyhamfd-*.whl
"""

import math
import tempfile
from pathlib import Path

import pyhamfd


def record(plant, bias=0.0, t_on=5.0, dt=0.01, steps=1000):
    """Simulate dx = -x + u with a sinusoidal input and an optional sensor bias."""
    x, u, y = 0.0, [], []
    for k in range(steps):
        t = k * dt
        uk = math.sin(2 * math.pi * 0.2 * t)
        u.append([uk])
        y.append([x + (bias if t >= t_on else 0.0)])
        for _ in range(10):
            x += dt / 10 * (-x + uk)
    return u, y


def main():
    plant = pyhamfd.Plant.scalar_lti()
    assert (plant.n, plant.p, plant.m) == (1, 1, 1), plant

    fac = pyhamfd.factorize([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    assert abs(fac["X"][0][0] - (math.sqrt(2) - 1)) < 1e-10, fac

    u, y = record(plant)
    proj = pyhamfd.project_sir(plant, u, y, dt=0.01)
    again = pyhamfd.project_sir(plant, [z[:1] for z in proj["zhat"]], [z[1:] for z in proj["zhat"]], dt=0.01)
    drift = max(abs(a - b) for za, zb in zip(proj["zhat"], again["zhat"]) for a, b in zip(za, zb))
    assert drift < 1e-8, drift

    nominal = pyhamfd.detect(plant, u[500:], y[500:], dt=0.01, t0=5.0, side="sir", level=0.95,
                             x0=[y[500][0]])
    u, y = record(plant, bias=0.5)
    faulty = pyhamfd.detect(plant, u[500:], y[500:], dt=0.01, t0=5.0, side="sir", level=0.95,
                            x0=[y[499][0]])
    assert faulty["J"] > nominal["J"], (nominal["J"], faulty["J"])
    assert faulty["verdict"] == "faulty", faulty

    kernel = pyhamfd.detect(pyhamfd.Plant.scalar_cubic(), u, y, dt=0.01, side="skr")
    assert kernel["J"] >= 0.0

    est = pyhamfd.estimate(plant, u, y, dt=0.01)
    assert est["relative_defect"] < 1e-3, est["relative_defect"]

    ok, checks = pyhamfd.verify("divergence")
    assert ok and checks, checks

    scenario = Path(__file__).resolve().parent.parent / "scenarios" / "lti_sensor_bias.toml"
    with tempfile.TemporaryDirectory() as out:
        status, report = pyhamfd.run_scenario("detect-sir", str(scenario), out)
    assert status == 2 and 'verdict = "faulty"' in report, status

    try:
        pyhamfd.verify("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown suite accepted")

    print("pyhamfd smoke test passed")


if __name__ == "__main__":
    main()
