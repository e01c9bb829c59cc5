"""Smoke test for the hivpop extension module.

Build and install first:  pip install ./crates/py
"""

import math
import sys

import hivpop


def main() -> int:
    rates = [0.05, 0.004] + [0.002 * math.exp(0.07 * i) for i in range(20)]
    table = hivpop.life_table("female", rates)
    assert len(table["ex"]) == 22
    assert abs(table["ex"][0] - table["Tx"][0] / table["lx"][0]) < 1e-9
    q = hivpop.summary_indices("female", rates)
    assert 0 < q["q5_0"] < 1

    gain = hivpop.double_logistic(50.0, [15.77, 40.97, 0.21, 19.82, 2.93, 0.40])
    assert gain > 0

    start, path = hivpop.epp_prevalence(2015, 0.8, 0.1, 2100)
    assert start == 2015 and all(0 <= p < 100 for p in path)

    basis = hivpop.MltBasis.synthetic(seed=3)
    female, male = basis.generate(55.0, 15.0)
    e0 = hivpop.life_table("female", female)["ex"][0]
    assert abs(e0 - 55.0) <= 0.01, e0
    assert hivpop.life_table("male", male)["ex"][0] < e0
    assert basis.hump_excess(55.0, 20.0) >= basis.hump_excess(55.0, 0.0)

    counts = [1000.0] * 21
    pattern = [0.10, 0.22, 0.24, 0.20, 0.14, 0.07, 0.03]
    f_next, m_next = hivpop.project_step(counts, counts, female, male, 4.0, pattern)
    assert len(f_next) == 21 and f_next[0] > 0

    try:
        hivpop.life_table("female", [0.01] * 5)
    except hivpop.HivpopError:
        pass
    else:
        raise AssertionError("short schedule accepted")

    print(f"ok: e0 {e0:.2f}, gain {gain:.3f}, prevalence 2100 {path[-1]:.2f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
