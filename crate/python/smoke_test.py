"""Smoke test for the fibersat extension module.

Build first:
    cargo build -p fibersat-py --release
    cp target/release/libfibersat.so python/fibersat.so
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import fibersat  # noqa: E402


def main():
    spec = fibersat.FiberSpec("independence", [3, 3], [1, 1, 1, 1, 1, 1])
    tables, complete = fibersat.enumerate(spec)
    assert complete and len(tables) == 6
    assert all(spec.contains(t) for t in tables)

    with tempfile.TemporaryDirectory() as d:
        info = fibersat.encode(spec, Path(d) / "perm")
        assert Path(info["cnf"]).exists() and info["bit_width"] == 1

    draws = fibersat.sample(spec, 600, seed=3)
    assert len(draws) == 600 and len(set(map(tuple, (t.cells for t in draws)))) == 6

    observed = fibersat.Table([3, 3], [4, 1, 0, 1, 3, 1, 0, 1, 4])
    fiber = fibersat.FiberSpec.from_observation("independence", observed)
    fit = fibersat.mle(fiber, observed)
    assert fit["converged"] and math.isclose(sum(fit["pi"]), 1.0, abs_tol=1e-9)

    walk = fibersat.run_walk(fiber, observed, steps=50_000, seed=11, exact_cap=100_000)
    assert walk["aborted"] is None and walk["sat_steps"] == 5_000
    assert abs(walk["p_value"] - walk["exact_p"]) < 0.02, walk["p_value"]

    step = fibersat.convergence_step(walk["p_sequence"], walk["exact_p"], 0.02)
    assert step is not None and 1 <= step <= len(walk["p_sequence"])
    assert fibersat.convergence_step([0.4, 0.3, 0.2], 0.1, 0.005) is None

    try:
        fibersat.FiberSpec("independence", [2, 2], [1, -1, 0, 0])
    except ValueError:
        pass
    else:
        raise AssertionError("negative margin accepted")

    print(f"ok: statistic {fit['statistic']:.4f}, mcmc p {walk['p_value']:.4f}, exact p {walk['exact_p']:.4f}")


if __name__ == "__main__":
    main()
