"""Regenerate the long-run f* fixture for a desk-scale test problem.

    python3 tools/make_fixture.py phantom 4 0 3000
"""

import logging
import sys
import time

from vmila.fixtures import fixture_path
from vmila.imaging import make_test_problem
from vmila.oracle import config_hash, reference_optimum, write_fixture


def main(name="phantom", scale=4, seed=0, budget=3000):
    scale, seed, budget = int(scale), int(seed), int(budget)
    logging.basicConfig(level=logging.INFO)
    logging.getLogger("vmila.inner").setLevel(logging.ERROR)
    tp = make_test_problem(name, scale, seed)
    t0 = time.perf_counter()
    ref = reference_optimum(tp.problem, budget, x0=tp.initial_point(), eta=0.9,
                            inner_max=3000, fixed_alpha=1.0)
    settings = {"problem": name, "scale": scale, "seed": seed, "budget": budget,
                "eta": 0.9, "inner_max": 3000, "fixed_alpha": 1.0, "x0": "mean"}
    write_fixture(fixture_path(name, scale, seed), {
        "problem": f"{name}-{tp.shape[0]}",
        "f_star": ref.f_star,
        "seed": seed,
        "scale": scale,
        "budget": budget,
        "source": ref.source,
        "config_hash": config_hash(settings),
        "elapsed_s": round(time.perf_counter() - t0, 1),
    })
    print(fixture_path(name, scale, seed), ref.f_star)


if __name__ == "__main__":
    main(*sys.argv[1:])
