"""Quick check that the extension imports and agrees with known values.

Build first:  pip install --no-build-isolation -e crates/py
"""

import math

import linsav_py as ls


def main():
    assert "cpd-constant" in ls.list_problems()
    assert set(ls.list_methods()) >= {"e2sav", "s2sav", "avf", "boris"}

    # circular and hyperbolic limits
    assert abs(ls.jacobi_sn(0.7, 0.0) - math.sin(0.7)) < 1e-15
    assert abs(ls.jacobi_sn(0.7, 1.0) - math.tanh(0.7)) < 1e-15

    run = ls.simulate("duffing", "e2sav", 1 / 64, 1.0, omega=20.0, error=True)
    assert run["steps"] == 64 and run["converged"]
    assert run["max_energy_error"] < 1e-12
    assert 0 < run["global_error"] < 1e-2

    series = ls.energy_series("cpd-general", "s4sav", 0.01, 10.0, eps=0.1)
    assert len(series) == 1000
    assert max(e for _, e in series) < 1e-12

    rows, slopes = ls.convergence("cpd-constant", ["s2sav"], 3, 8, eps=1.0)
    assert len(rows) == 6
    assert abs(slopes["s2sav"] - 2.0) < 0.2

    try:
        ls.simulate("nope", "e2sav", 0.1, 1.0)
    except ValueError as e:
        assert "valid:" in str(e)
    else:
        raise AssertionError("unknown problem accepted")

    try:
        ls.simulate("duffing", "avf", 0.5, 1.0, omega=20.0)
    except ls.NumericalError:
        pass
    else:
        raise AssertionError("divergent fixed point not reported")

    print("smoke test passed")


if __name__ == "__main__":
    main()
