"""Radial multilevel network: node/line parameters, builder, static checks.

Node ids are dense integers ``0..n-1``. Graphs produced by
:func:`build_multilevel` are numbered level-major (Level 5 first), so the
root is node 0, the Level-4 buses follow, then the Level-3 buses.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "NodeParams",
    "LineParams",
    "NetworkGraph",
    "LevelRanges",
    "MultilevelConfig",
    "ClauseResult",
    "ValidationReport",
    "build_multilevel",
    "validate_static",
    "aggregate_demand_bottom_up",
    "graph_to_dict",
    "graph_from_dict",
    "save_graph",
    "load_graph",
]

HIGH_LEVELS = (5, 4, 3)


@dataclass(frozen=True)
class NodeParams:
    id: int
    level: int
    m: float
    d: float
    tau: float
    k: float
    p_sol: float = 0.0
    p_wind: float = 0.0
    p_bm: float = 0.0
    p_nuclear: float = 0.0
    p_load: float = 0.0
    q_sol: float = 0.0
    q_wind: float = 0.0
    q_bm: float = 0.0
    q_load: float = 0.0

    @property
    def p_inj(self) -> float:
        return self.p_sol + self.p_wind + self.p_bm + self.p_nuclear - self.p_load

    @property
    def q_inj(self) -> float:
        return self.q_sol + self.q_wind + self.q_bm - self.q_load

    @classmethod
    def with_injections(cls, id, m, d, tau, k, p=0.0, q=0.0, level=3):
        """Toy-graph helper: positive net injection is booked as biomass
        supply, negative as load."""
        return cls(
            id=id, level=level, m=m, d=d, tau=tau, k=k,
            p_bm=max(p, 0.0), p_load=max(-p, 0.0),
            q_bm=max(q, 0.0), q_load=max(-q, 0.0),
        )


@dataclass(frozen=True)
class LineParams:
    from_id: int
    to_id: int
    b: float
    g: float = 0.0


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Immutable network. Per-node and per-line arrays are exposed as cached
    properties (``m``, ``d``, ``tau``, ``k``, ``p``, ``q``, ``line_from``, ...)."""

    nodes: tuple
    lines: tuple
    reference: int
    seed: int | None = None
    multilevel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "lines", tuple(self.lines))
        ids = [nd.id for nd in self.nodes]
        if ids != list(range(len(ids))):
            raise ConfigError("node ids must be dense 0..n-1 in order")
        if not 0 <= self.reference < len(ids):
            raise ConfigError(f"reference {self.reference} is not a node")
        for ln in self.lines:
            if not (0 <= ln.from_id < len(ids) and 0 <= ln.to_id < len(ids)):
                raise ConfigError(f"line {ln.from_id}-{ln.to_id} references a missing node")

    def __eq__(self, other):
        if not isinstance(other, NetworkGraph):
            return NotImplemented
        return (self.nodes, self.lines, self.reference, self.seed, self.multilevel) == (
            other.nodes, other.lines, other.reference, other.seed, other.multilevel)

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.nodes)

    def _node_array(self, name):
        return np.array([getattr(nd, name) for nd in self.nodes], dtype=float)

    @cached_property
    def m(self):
        return self._node_array("m")

    @cached_property
    def d(self):
        return self._node_array("d")

    @cached_property
    def tau(self):
        return self._node_array("tau")

    @cached_property
    def k(self):
        return self._node_array("k")

    @cached_property
    def p(self):
        return self._node_array("p_inj")

    @cached_property
    def q(self):
        return self._node_array("q_inj")

    @cached_property
    def levels(self):
        return np.array([nd.level for nd in self.nodes], dtype=int)

    @cached_property
    def line_from(self):
        return np.array([ln.from_id for ln in self.lines], dtype=int)

    @cached_property
    def line_to(self):
        return np.array([ln.to_id for ln in self.lines], dtype=int)

    @cached_property
    def line_b(self):
        return np.array([ln.b for ln in self.lines], dtype=float)

    @cached_property
    def line_g(self):
        return np.array([ln.g for ln in self.lines], dtype=float)

    @cached_property
    def level_sets(self) -> dict:
        out = {}
        for nd in self.nodes:
            out.setdefault(nd.level, []).append(nd.id)
        return out

    @cached_property
    def neighbors(self) -> list:
        nb = [[] for _ in range(self.n)]
        for ln in self.lines:
            nb[ln.from_id].append(ln.to_id)
            nb[ln.to_id].append(ln.from_id)
        return nb

    @cached_property
    def is_lossless(self) -> bool:
        return bool(np.all(self.line_g == 0.0))

    def root(self) -> int:
        """Highest-level node (lowest id on ties)."""
        return int(np.argmax(self.levels))

    def bfs_order(self, root=None):
        """Return ``(order, parent)`` of a BFS from ``root``; unreachable
        nodes are absent from ``order`` and have parent ``-2``."""
        root = self.root() if root is None else root
        parent = np.full(self.n, -2, dtype=int)
        parent[root] = -1
        order = [root]
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in self.neighbors[i]:
                if parent[j] == -2:
                    parent[j] = i
                    order.append(j)
                    queue.append(j)
        return order, parent


# --------------------------------------------------------------------------
# builder configuration
# --------------------------------------------------------------------------

@dataclass
class LevelRanges:
    """Uniform sampling ranges for one level.

    ``k`` is drawn as ``2 * (sum of incident susceptances) + k_margin``; the
    margin is what keeps the voltage Hessian diagonally dominant. ``b`` is
    the susceptance of the line to the parent bus (unused at Level 5).
    """

    m: tuple
    d: tuple
    tau: tuple = (0.5, 2.0)
    k_margin: tuple = (4.0, 8.0)
    b: tuple = (5.0, 15.0)
    p_sol: tuple = (0.0, 0.01)
    p_wind: tuple = (0.0, 0.01)
    p_bm: tuple = (0.0, 0.01)
    p_load: tuple = (0.012, 0.022)
    q_sol: tuple = (0.0, 0.01)
    q_wind: tuple = (0.0, 0.01)
    q_load: tuple = (0.01, 0.03)
    v_target: tuple = (0.98, 1.02)


def _default_ranges():
    return {
        5: LevelRanges(m=(8.0, 12.0), d=(10.0, 15.0)),
        4: LevelRanges(m=(3.0, 5.0), d=(4.0, 6.0)),
        3: LevelRanges(m=(0.5, 1.5), d=(1.0, 2.0)),
    }


@dataclass
class MultilevelConfig:
    """Counts per level (5/4/3), per-level ranges and the RNG seed.

    All numeric defaults are artifact choices; only the inertia ordering
    between levels is a modelling requirement.
    """

    counts: dict = field(default_factory=lambda: {5: 1, 4: 10, 3: 100})
    ranges: dict = field(default_factory=_default_ranges)
    seed: int = 0

    def validate(self):
        counts = {int(a): int(c) for a, c in self.counts.items()}
        if set(counts) != set(HIGH_LEVELS):
            raise ConfigError("counts must give Levels 5, 4 and 3")
        if any(c < 1 for c in counts.values()):
            raise ConfigError("every level count must be >= 1")
        if counts[5] != 1:
            raise ConfigError("the multilevel tree has exactly one Level-5 root")
        if set(int(a) for a in self.ranges) != set(HIGH_LEVELS):
            raise ConfigError("ranges must give Levels 5, 4 and 3")
        for lvl, rg in self.ranges.items():
            for name in ("m", "d", "tau", "b", "v_target"):
                lo, hi = getattr(rg, name)
                if not (0 < lo <= hi):
                    raise ConfigError(f"level {lvl} range {name}={lo, hi} must satisfy 0 < lo <= hi")
            for f in fields(LevelRanges):
                lo, hi = getattr(rg, f.name)
                if lo > hi:
                    raise ConfigError(f"level {lvl} range {f.name} has lo > hi")
                if f.name not in ("m", "d", "tau", "b", "v_target") and lo < 0:
                    raise ConfigError(f"level {lvl} range {f.name} must be nonnegative")
        r = {int(a): v for a, v in self.ranges.items()}
        if not (r[5].m[0] > r[4].m[1] and r[4].m[0] > r[3].m[1]):
            raise ConfigError("inertia ranges must be strictly ordered Level 5 > Level 4 > Level 3")
        return counts, r

    def to_dict(self):
        return {
            "counts": {str(a): c for a, c in self.counts.items()},
            "ranges": {str(a): {k: list(v) for k, v in asdict(rg).items()}
                       for a, rg in self.ranges.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        cfg = cls()
        if "counts" in data:
            cfg.counts = {int(a): int(c) for a, c in data["counts"].items()}
        if "ranges" in data:
            ranges = _default_ranges()
            for a, rg in data["ranges"].items():
                base = asdict(ranges[int(a)])
                base.update({k: tuple(v) for k, v in rg.items()})
                ranges[int(a)] = LevelRanges(**base)
            cfg.ranges = ranges
        if "seed" in data:
            cfg.seed = int(data["seed"])
        return cfg


def build_multilevel(config: MultilevelConfig | None = None) -> NetworkGraph:
    """Build the Level 5/4/3 tree and a consistent operating point.

    Active injections come from the drawn source/load breakdown; the
    Level-5 nuclear plant balances the total. Reactive injections are set so
    that the synchronous voltages land on a drawn target profile: the
    biomass/converter reactive supply ``q_bm`` absorbs the difference.
    """
    config = MultilevelConfig() if config is None else config
    counts, ranges = config.validate()
    rng = np.random.default_rng(config.seed)
    n5, n4, n3 = counts[5], counts[4], counts[3]
    n = n5 + n4 + n3
    levels = [5] * n5 + [4] * n4 + [3] * n3
    parent = np.full(n, -1, dtype=int)
    parent[1:1 + n4] = 0
    for c in range(n3):
        parent[1 + n4 + c] = 1 + (c * n4) // n3

    def draw(name, lvl, size=None):
        lo, hi = getattr(ranges[lvl], name)
        return rng.uniform(lo, hi, size)

    b = np.zeros(n)
    for i in range(1, n):
        b[i] = draw("b", levels[i])
    incident = b.copy()
    np.add.at(incident, parent[1:], b[1:])

    rows = []
    for i in range(n):
        lvl = levels[i]
        row = dict(
            m=draw("m", lvl), d=draw("d", lvl), tau=draw("tau", lvl),
            k=2.0 * incident[i] + draw("k_margin", lvl),
            p_sol=draw("p_sol", lvl), p_wind=draw("p_wind", lvl), p_bm=draw("p_bm", lvl),
            p_load=draw("p_load", lvl),
            q_sol=draw("q_sol", lvl), q_wind=draw("q_wind", lvl), q_load=draw("q_load", lvl),
            v=draw("v_target", lvl),
        )
        rows.append(row)

    p_net = np.array([r["p_sol"] + r["p_wind"] + r["p_bm"] - r["p_load"] for r in rows])
    nuclear = -p_net.sum()
    if nuclear <= 0:
        raise ConfigError("drawn injections leave no positive nuclear supply to balance Level 5")
    p_net[0] += nuclear

    # line flow child -> parent equals the net injection of the child's subtree
    subtree = p_net.copy()
    for i in range(n - 1, 0, -1):
        subtree[parent[i]] += subtree[i]
    v = np.array([r["v"] for r in rows])
    theta = np.zeros(n)
    for i in range(1, n):
        s = subtree[i] / (b[i] * v[i] * v[parent[i]])
        if abs(s) >= 1.0:
            raise ConfigError(f"line {parent[i]}-{i} cannot carry the drawn subtree injection")
        theta[i] = theta[parent[i]] + np.arcsin(s)
    reference = 1 + n4
    theta -= theta[reference]

    q_net = np.array([r["k"] * v[i] for i, r in enumerate(rows)])
    for i in range(1, n):
        j = parent[i]
        flow = b[i] * v[i] * v[j] * np.cos(theta[i] - theta[j])
        q_net[i] -= flow
        q_net[j] -= flow

    nodes = []
    for i, r in enumerate(rows):
        q_bm = q_net[i] - r["q_sol"] - r["q_wind"] + r["q_load"]
        nodes.append(NodeParams(
            id=i, level=levels[i], m=r["m"], d=r["d"], tau=r["tau"], k=r["k"],
            p_sol=r["p_sol"], p_wind=r["p_wind"], p_bm=r["p_bm"],
            p_nuclear=nuclear if i == 0 else 0.0, p_load=r["p_load"],
            q_sol=r["q_sol"], q_wind=r["q_wind"], q_bm=q_bm, q_load=r["q_load"],
        ))
    lines = [LineParams(int(parent[i]), i, float(b[i])) for i in range(1, n)]
    return NetworkGraph(nodes, lines, reference, seed=config.seed, multilevel=True)


# --------------------------------------------------------------------------
# static validation
# --------------------------------------------------------------------------

@dataclass
class ClauseResult:
    name: str
    status: str  # "pass" | "fail" | "skipped"
    offenders: list = field(default_factory=list)
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass
class ValidationReport:
    clauses: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def __getitem__(self, name) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self):
        return [c.name for c in self.clauses if not c.passed]

    def to_dict(self):
        return {c.name: {"status": c.status, "offenders": [list(o) if isinstance(o, tuple) else o
                                                           for o in c.offenders],
                         "detail": c.detail}
                for c in self.clauses}


def _clause(name, offenders, detail=""):
    return ClauseResult(name, "fail" if offenders else "pass", list(offenders), detail)


def validate_static(graph: NetworkGraph) -> ValidationReport:
    """Check the network and parameter clauses; failures are report
    entries, never exceptions."""
    out = []
    n = graph.n

    self_loops = [(ln.from_id, ln.to_id) for ln in graph.lines if ln.from_id == ln.to_id]
    seen, dupes = set(), []
    for ln in graph.lines:
        key = frozenset((ln.from_id, ln.to_id))
        if key in seen:
            dupes.append((ln.from_id, ln.to_id))
        seen.add(key)
    order, _ = graph.bfs_order(0 if n else None) if n else ([], None)
    unreachable = sorted(set(range(n)) - set(order))
    tree_bad = list(self_loops) + dupes + unreachable
    detail = ""
    if len(graph.lines) != n - 1:
        detail = f"{len(graph.lines)} lines for {n} nodes"
        tree_bad = tree_bad or [("edge_count", len(graph.lines))]
    out.append(_clause("tree", tree_bad, detail))
    out.append(_clause("susceptance_positive",
                       [(ln.from_id, ln.to_id) for ln in graph.lines if not ln.b > 0]))
    out.append(_clause("lossless",
                       [(ln.from_id, ln.to_id) for ln in graph.lines if ln.g != 0.0]))
    out.append(_clause("parameters_positive",
                       [nd.id for nd in graph.nodes
                        if not (nd.m > 0 and nd.d > 0 and nd.tau > 0 and nd.k > 0)]))
    out.append(_clause("levels", [nd.id for nd in graph.nodes if nd.level not in range(6)]))
    out.append(_clause("nuclear_level5",
                       [nd.id for nd in graph.nodes if nd.p_nuclear > 0 and nd.level != 5]))

    sets = graph.level_sets
    if all(a in sets for a in HIGH_LEVELS):
        m = graph.m
        m5 = m[sets[5]].min()
        m4_lo = m[sets[4]].min()
        bad = [i for i in sets[4] if not m[i] < m5] + [i for i in sets[3] if not m[i] < m4_lo]
        out.append(_clause("inertia_ordering", sorted(set(bad))))
    else:
        out.append(ClauseResult("inertia_ordering", "skipped", detail="Levels 3-5 not all present"))

    if graph.multilevel:
        out.append(_clause("reference_level3",
                           [] if graph.nodes[graph.reference].level == 3 else [graph.reference]))
    else:
        out.append(ClauseResult("reference_level3", "skipped", detail="custom graph"))

    total = graph.p.sum()
    scale = max(1.0, np.abs(graph.p).sum())
    out.append(_clause("active_balance", [] if abs(total) <= 1e-9 * scale else [("sum_p", total)],
                       f"sum of P_i = {total:.3e}"))
    return ValidationReport(out)


# --------------------------------------------------------------------------
# bottom-up demand aggregation
# --------------------------------------------------------------------------

def aggregate_demand_bottom_up(graph: NetworkGraph, leaf_demand: dict) -> dict:
    """Single upward pass: each node reports its own demand plus the
    aggregates of its children. Only Level-3 buses carry own demand."""
    level3 = set(graph.level_sets.get(3, []))
    for key in leaf_demand:
        if key not in level3:
            raise KeyError(f"demand key {key!r} is not a Level-3 node")
    order, parent = graph.bfs_order()
    agg = {i: float(leaf_demand.get(i, 0.0)) for i in order}
    for i in reversed(order[1:]):
        agg[int(parent[i])] += agg[i]
    return agg


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def graph_to_dict(graph: NetworkGraph) -> dict:
    return {
        "nodes": [asdict(nd) for nd in graph.nodes],
        "lines": [{"from": ln.from_id, "to": ln.to_id, "b": ln.b, "g": ln.g} for ln in graph.lines],
        "reference": graph.reference,
        "seed": graph.seed,
        "multilevel": graph.multilevel,
    }


def graph_from_dict(data: dict) -> NetworkGraph:
    try:
        nodes = [NodeParams(**nd) for nd in data["nodes"]]
        lines = [LineParams(ln["from"], ln["to"], ln["b"], ln.get("g", 0.0)) for ln in data["lines"]]
        return NetworkGraph(nodes, lines, data["reference"], seed=data.get("seed"),
                            multilevel=data.get("multilevel", False))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed graph document: {exc}") from exc


def save_graph(graph: NetworkGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph), indent=1))


def load_graph(path) -> NetworkGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))
