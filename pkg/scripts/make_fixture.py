"""Write the bundled 6-bus, 3-zone fixture case.

Thermal capacities are drawn once from uniform ranges (fixed seed) and frozen
into the case file so every downstream label is reproducible.
"""

import argparse
from pathlib import Path

import numpy as np

from gridrisk.grid import Branch, Bus, Generator, PowerGrid, Zone, serialize_case, validate_grid

# Each zone has a cheap base unit (long minimum up time, costly start) and a
# small fast peaker, so zonal generation stays positive and varies smoothly.
# (id, bus, p_min, p_max range, cost, no-load, startup, shutdown, min_up, min_down, ramp)
THERMAL = [
    (1, 1, 12.0, (55.0, 65.0), 15.0, 20.0, 600.0, 60.0, 6, 4, 40.0),
    (2, 3, 12.0, (65.0, 75.0), 18.0, 20.0, 500.0, 50.0, 6, 4, 40.0),
    (3, 5, 8.0, (40.0, 50.0), 21.0, 15.0, 400.0, 40.0, 5, 3, 30.0),
    (4, 2, 2.0, (20.0, 30.0), 34.0, 2.0, 10.0, 0.0, 1, 1, 30.0),
    (5, 4, 2.0, (15.0, 25.0), 38.0, 2.0, 10.0, 0.0, 1, 1, 30.0),
    (6, 6, 2.0, (12.0, 18.0), 42.0, 2.0, 10.0, 0.0, 1, 1, 30.0),
]
# (id, bus, rated MW); one turbine rating across the grid
WIND = [(7, 2, 55.0), (8, 4, 55.0), (9, 6, 55.0)]


def build(seed: int) -> PowerGrid:
    rng = np.random.default_rng(seed)
    zones = (Zone(1, "I"), Zone(2, "II"), Zone(3, "III"))
    buses = (
        Bus(1, 1, 0.0, (0.0, 0.0)),
        Bus(2, 1, 40.0, (1.0, 0.0)),
        Bus(3, 2, 30.0, (0.0, 1.0)),
        Bus(4, 2, 45.0, (1.0, 1.0)),
        Bus(5, 3, 40.0, (0.0, 2.0)),
        Bus(6, 3, 60.0, (1.0, 2.0)),
    )
    gens = []
    for gid, bus, pmin, (lo, hi), c, nl, su, sd, ut, dt, ramp in THERMAL:
        pmax = float(np.round(rng.uniform(lo, hi), 1))
        gens.append(Generator(gid, bus, "thermal", pmin, pmax, c, nl, su, sd, ut, dt, ramp))
    for gid, bus, rated in WIND:
        gens.append(Generator(gid, bus, "wind", 0.0, rated, 0.0, 0.0, 0.0, 0.0, 0, 0, rated))
    branches = (
        Branch(1, 1, 2, 0.10, 60.0),
        Branch(2, 1, 3, 0.15, 60.0),
        Branch(3, 2, 4, 0.20, 40.0),
        Branch(4, 3, 4, 0.10, 50.0),
        Branch(5, 3, 5, 0.15, 40.0),
        Branch(6, 4, 6, 0.20, 35.0),
        Branch(7, 5, 6, 0.10, 40.0),
    )
    grid = PowerGrid(buses, tuple(gens), branches, zones, slack_bus=1, name="case6z")
    assert not validate_grid(grid)
    return grid


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1]
                                         / "src/gridrisk/data/case6z.txt"))
    args = ap.parse_args()
    Path(args.out).write_text(serialize_case(build(args.seed)), encoding="utf-8")
    print(f"wrote {args.out}")
