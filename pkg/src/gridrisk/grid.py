"""Grid data model, case-file parser/serializer and DC sensitivity (PTDF) matrix.

Case file layout (UTF-8 text, ``#`` starts a comment, columns whitespace separated)::

    [options]
    slack_bus 1                 # optional; default is the first bus of the first zone
    base_mva 100                # optional; fixed at 100

    [zone]
    # id  name
    1     I

    [bus]
    # id  zone  base_load_MW  [x  y]
    1     1     0.0

    [gen]
    # id bus kind p_min p_max cost_linear cost_noload startup shutdown min_up min_down ramp
    1    1   thermal 20 110 18.0 150 300 50 3 3 60

    [branch]
    # id from to reactance_pu flow_limit_MW
    1    1    2  0.1         80

Sections may appear in any order. ``kind`` is ``thermal`` or ``wind``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

BASE_MVA = 100.0

GEN_KINDS = ("thermal", "wind")


class CaseFormatError(ValueError):
    """Malformed case text. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GridValidationError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid grid: " + "; ".join(self.problems))


class SingularNetworkError(ValueError):
    def __init__(self, message: str, component: tuple[int, ...]):
        self.component = component
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    zone: int
    base_load: float = 0.0
    coords: tuple[float, float] | None = None


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    kind: str
    p_min: float
    p_max: float
    cost_linear: float = 0.0
    cost_noload: float = 0.0
    startup_cost: float = 0.0
    shutdown_cost: float = 0.0
    min_up: int = 0
    min_down: int = 0
    ramp_rate: float = math.inf

    @property
    def is_thermal(self) -> bool:
        return self.kind == "thermal"


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    flow_limit: float


@dataclass(frozen=True)
class Zone:
    id: int
    name: str


@dataclass(frozen=True)
class PowerGrid:
    """Static network: buses, generators, branches and the zonal partition.

    Instances are never mutated after construction; derived index maps are
    cached on first use.
    """

    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    zones: tuple[Zone, ...]
    slack_bus: int
    name: str = field(default="grid", compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_zone(self) -> int:
        return len(self.zones)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def zone_index(self) -> dict[int, int]:
        return {z.id: i for i, z in enumerate(self.zones)}

    @cached_property
    def thermal(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.kind == "thermal")

    @cached_property
    def wind(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.kind == "wind")

    @cached_property
    def bus_zone(self) -> np.ndarray:
        """Zone position (0-based) of every bus, in bus order."""
        return np.array([self.zone_index.get(b.zone, -1) for b in self.buses], dtype=int)

    def zone_members(self, zone_id: int) -> list[int]:
        return [b.id for b in self.buses if b.zone == zone_id]

    @cached_property
    def zone_masks(self) -> np.ndarray:
        """Boolean matrix (n_zone, n_bus)."""
        masks = np.zeros((self.n_zone, self.n_bus), dtype=bool)
        for j, zi in enumerate(self.bus_zone):
            if zi >= 0:
                masks[zi, j] = True
        return masks

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Neighbour positions per bus position (parallel branches collapsed)."""
        nbrs: list[set[int]] = [set() for _ in self.buses]
        for br in self.branches:
            f = self.bus_index.get(br.from_bus)
            t = self.bus_index.get(br.to_bus)
            if f is None or t is None or f == t:
                continue
            nbrs[f].add(t)
            nbrs[t].add(f)
        return tuple(tuple(sorted(s)) for s in nbrs)

    def incidence(self) -> np.ndarray:
        """Branch-bus incidence matrix (Q, n_bus), +1 at from bus, -1 at to bus."""
        A = np.zeros((self.n_branch, self.n_bus))
        for k, br in enumerate(self.branches):
            A[k, self.bus_index[br.from_bus]] = 1.0
            A[k, self.bus_index[br.to_bus]] = -1.0
        return A

    @cached_property
    def flow_limits(self) -> np.ndarray:
        return np.array([br.flow_limit for br in self.branches], dtype=float)

    def gen_bus_matrix(self, gens) -> np.ndarray:
        """(n_bus, len(gens)) 0/1 map from generators to their bus."""
        M = np.zeros((self.n_bus, len(gens)))
        for i, g in enumerate(gens):
            M[self.bus_index[g.bus], i] = 1.0
        return M

    @cached_property
    def base_loads(self) -> np.ndarray:
        return np.array([b.base_load for b in self.buses], dtype=float)


@dataclass(frozen=True)
class PtdfMatrix:
    """Slack-referenced DC sensitivities: ``flows = entries @ injections``."""

    entries: np.ndarray
    slack_bus: int
    bus_ids: tuple[int, ...]
    branch_ids: tuple[int, ...]

    def flows(self, injections: np.ndarray) -> np.ndarray:
        """Branch flows (MW) for injections shaped (..., n_bus)."""
        return np.asarray(injections) @ self.entries.T


# ----------------------------------------------------------------------------
# parsing


_GEN_COLUMNS = (
    "id", "bus", "kind", "p_min", "p_max", "cost_linear", "cost_noload",
    "startup_cost", "shutdown_cost", "min_up", "min_down", "ramp_rate",
)


def _num(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CaseFormatError(f"cannot parse {what} from {tok!r}", lineno) from None


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseFormatError(f"expected integer {what}, got {tok!r}", lineno) from None


def parse_case(text: str, *, name: str = "grid", validate: bool = True) -> PowerGrid:
    """Parse case text into a :class:`PowerGrid`.

    Raises :class:`CaseFormatError` on syntax problems and
    :class:`GridValidationError` if the parsed grid violates an invariant
    (dangling references, disconnected network, bad limits, ...).
    """
    section = None
    buses: list[Bus] = []
    gens: list[Generator] = []
    branches: list[Branch] = []
    zones: list[Zone] = []
    options: dict[str, str] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise CaseFormatError(f"unterminated section header {line!r}", lineno)
            section = line[1:-1].strip().lower()
            if section not in ("bus", "gen", "branch", "zone", "options"):
                raise CaseFormatError(f"unknown section [{section}]", lineno)
            continue
        tok = line.split()
        if section is None:
            raise CaseFormatError("data before any section header", lineno)
        if section == "options":
            if len(tok) != 2:
                raise CaseFormatError("options take exactly 'key value'", lineno)
            options[tok[0]] = tok[1]
        elif section == "zone":
            if len(tok) != 2:
                raise CaseFormatError("zone rows are 'id name'", lineno)
            zones.append(Zone(_int(tok[0], lineno, "zone id"), tok[1]))
        elif section == "bus":
            if len(tok) not in (3, 5):
                raise CaseFormatError(f"bus rows take 3 or 5 columns, got {len(tok)}", lineno)
            coords = None
            if len(tok) == 5:
                coords = (_num(tok[3], lineno, "x"), _num(tok[4], lineno, "y"))
            buses.append(
                Bus(
                    _int(tok[0], lineno, "bus id"),
                    _int(tok[1], lineno, "zone"),
                    _num(tok[2], lineno, "base_load"),
                    coords,
                )
            )
        elif section == "gen":
            if len(tok) != len(_GEN_COLUMNS):
                raise CaseFormatError(
                    f"gen rows take {len(_GEN_COLUMNS)} columns, got {len(tok)}", lineno
                )
            kind = tok[2].lower()
            if kind not in GEN_KINDS:
                raise CaseFormatError(f"generator kind must be thermal|wind, got {tok[2]!r}", lineno)
            gens.append(
                Generator(
                    id=_int(tok[0], lineno, "gen id"),
                    bus=_int(tok[1], lineno, "gen bus"),
                    kind=kind,
                    p_min=_num(tok[3], lineno, "p_min"),
                    p_max=_num(tok[4], lineno, "p_max"),
                    cost_linear=_num(tok[5], lineno, "cost_linear"),
                    cost_noload=_num(tok[6], lineno, "cost_noload"),
                    startup_cost=_num(tok[7], lineno, "startup"),
                    shutdown_cost=_num(tok[8], lineno, "shutdown"),
                    min_up=_int(tok[9], lineno, "min_up"),
                    min_down=_int(tok[10], lineno, "min_down"),
                    ramp_rate=_num(tok[11], lineno, "ramp"),
                )
            )
        elif section == "branch":
            if len(tok) != 5:
                raise CaseFormatError(f"branch rows take 5 columns, got {len(tok)}", lineno)
            branches.append(
                Branch(
                    _int(tok[0], lineno, "branch id"),
                    _int(tok[1], lineno, "from bus"),
                    _int(tok[2], lineno, "to bus"),
                    _num(tok[3], lineno, "reactance"),
                    _num(tok[4], lineno, "flow limit"),
                )
            )

    if not buses:
        raise CaseFormatError("case has no [bus] rows")
    if "base_mva" in options and float(options["base_mva"]) != BASE_MVA:
        raise CaseFormatError(f"only base_mva {BASE_MVA:g} is supported")

    if "slack_bus" in options:
        slack = int(options["slack_bus"])
    else:
        slack = _default_slack(buses, zones)

    grid = PowerGrid(tuple(buses), tuple(gens), tuple(branches), tuple(zones), slack, name=name)
    if validate:
        problems = validate_grid(grid)
        if problems:
            raise GridValidationError(problems)
    return grid


def _default_slack(buses: list[Bus], zones: list[Zone]) -> int:
    if zones:
        for b in buses:
            if b.zone == zones[0].id:
                return b.id
    return buses[0].id


def load_case(path: str | Path, **kw) -> PowerGrid:
    path = Path(path)
    kw.setdefault("name", path.stem)
    return parse_case(path.read_text(encoding="utf-8"), **kw)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return repr(float(x))


def serialize_case(grid: PowerGrid) -> str:
    """Deterministic text form; ``parse_case(serialize_case(g)) == g``."""
    out = [f"# case {grid.name}", "[options]", f"slack_bus {grid.slack_bus}", "", "[zone]", "# id name"]
    out += [f"{z.id} {z.name}" for z in grid.zones]
    out += ["", "[bus]", "# id zone base_load [x y]"]
    for b in grid.buses:
        row = f"{b.id} {b.zone} {_fmt(b.base_load)}"
        if b.coords is not None:
            row += f" {_fmt(b.coords[0])} {_fmt(b.coords[1])}"
        out.append(row)
    out += ["", "[gen]", "# " + " ".join(_GEN_COLUMNS)]
    for g in grid.generators:
        out.append(
            " ".join(
                [str(g.id), str(g.bus), g.kind]
                + [_fmt(v) for v in (g.p_min, g.p_max, g.cost_linear, g.cost_noload,
                                     g.startup_cost, g.shutdown_cost)]
                + [str(g.min_up), str(g.min_down), _fmt(g.ramp_rate)]
            )
        )
    out += ["", "[branch]", "# id from to reactance flow_limit"]
    for br in grid.branches:
        out.append(f"{br.id} {br.from_bus} {br.to_bus} {_fmt(br.reactance)} {_fmt(br.flow_limit)}")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------------------
# validation


def _components(grid: PowerGrid) -> list[list[int]]:
    seen = [False] * grid.n_bus
    comps = []
    for start in range(grid.n_bus):
        if seen[start]:
            continue
        comp = []
        queue = deque([start])
        seen[start] = True
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in grid.neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def validate_grid(grid: PowerGrid) -> list[str]:
    """Return one message per violated invariant; empty list means usable."""
    problems: list[str] = []
    bus_ids = [b.id for b in grid.buses]
    known = set(bus_ids)
    if len(known) != len(bus_ids):
        dup = sorted({i for i in bus_ids if bus_ids.count(i) > 1})
        problems.append(f"duplicate bus ids {dup}")
    zone_ids = {z.id for z in grid.zones}
    if len(zone_ids) != len(grid.zones):
        problems.append("duplicate zone ids")

    for b in grid.buses:
        if b.base_load < 0:
            problems.append(f"bus {b.id}: negative base_load {b.base_load}")
        if b.zone not in zone_ids:
            problems.append(f"bus {b.id}: unknown zone {b.zone}")
    for z in grid.zones:
        if not any(b.zone == z.id for b in grid.buses):
            problems.append(f"zone {z.id} ({z.name}) has no buses")

    gen_ids = [g.id for g in grid.generators]
    if len(set(gen_ids)) != len(gen_ids):
        problems.append("duplicate generator ids")
    for g in grid.generators:
        if g.bus not in known:
            problems.append(f"generator {g.id}: dangling reference to bus {g.bus}")
        if g.kind not in GEN_KINDS:
            problems.append(f"generator {g.id}: unknown kind {g.kind!r}")
        if not (0 <= g.p_min <= g.p_max):
            problems.append(f"generator {g.id}: limits must satisfy 0 <= p_min <= p_max "
                            f"(got {g.p_min}, {g.p_max})")
        if min(g.cost_linear, g.cost_noload, g.startup_cost, g.shutdown_cost) < 0:
            problems.append(f"generator {g.id}: negative cost")
        if g.min_up < 0 or g.min_down < 0 or g.ramp_rate < 0:
            problems.append(f"generator {g.id}: negative min_up/min_down/ramp")
        if g.kind == "wind" and (g.cost_linear != 0 or g.min_up != 0 or g.min_down != 0):
            problems.append(f"generator {g.id}: wind units need zero cost_linear and min up/down")

    br_ids = [br.id for br in grid.branches]
    if len(set(br_ids)) != len(br_ids):
        problems.append("duplicate branch ids")
    for br in grid.branches:
        if br.from_bus not in known:
            problems.append(f"branch {br.id}: dangling reference to bus {br.from_bus}")
        if br.to_bus not in known:
            problems.append(f"branch {br.id}: dangling reference to bus {br.to_bus}")
        if br.from_bus == br.to_bus:
            problems.append(f"branch {br.id}: from_bus equals to_bus")
        if not br.reactance > 0:
            problems.append(f"branch {br.id}: reactance must be > 0")
        if not br.flow_limit > 0:
            problems.append(f"branch {br.id}: flow limit must be > 0")

    if grid.slack_bus not in known:
        problems.append(f"slack bus {grid.slack_bus} does not exist")
    if len(known) == len(bus_ids) and grid.n_bus > 0:
        comps = _components(grid)
        if len(comps) > 1:
            islands = [[grid.buses[i].id for i in c] for c in comps]
            problems.append(f"network is disconnected: components {islands}")
    return problems


# ----------------------------------------------------------------------------
# PTDF


def compute_ptdf(grid: PowerGrid) -> PtdfMatrix:
    """Slack-referenced PTDF from branch reactances (lossless DC model).

    ``entries[k, j]`` is the MW flow on branch ``k`` (from -> to positive) per
    MW injected at bus ``j`` and withdrawn at the slack bus.
    """
    n, q = grid.n_bus, grid.n_branch
    A = grid.incidence()
    b = np.array([1.0 / br.reactance for br in grid.branches])
    if np.any(~np.isfinite(b)) or np.any(b <= 0):
        raise ValueError("branch reactances must be positive and finite")
    Bbus = A.T @ (b[:, None] * A)
    s = grid.bus_index[grid.slack_bus]
    keep = np.array([j for j in range(n) if j != s], dtype=int)
    Bred = Bbus[np.ix_(keep, keep)]

    comps = _components(grid)
    if len(comps) > 1:
        slack_comp = next(c for c in comps if s in c)
        other = tuple(grid.buses[i].id for c in comps if c is not slack_comp for i in c)
        raise SingularNetworkError(
            f"reduced susceptance matrix is singular: buses {list(other)} "
            f"are not connected to slack bus {grid.slack_bus}",
            other,
        )

    entries = np.zeros((q, n))
    if n > 1:
        Bf = b[:, None] * A[:, keep]
        # Bred is symmetric positive definite for a connected network
        X = np.linalg.solve(Bred, Bf.T)
        entries[:, keep] = X.T
    entries.setflags(write=False)
    return PtdfMatrix(
        entries=entries,
        slack_bus=grid.slack_bus,
        bus_ids=tuple(bu.id for bu in grid.buses),
        branch_ids=tuple(br.id for br in grid.branches),
    )
