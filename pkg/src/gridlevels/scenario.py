"""Scenario runner: build, solve, certify, synthesize, simulate and report.

Configs and reports are JSON documents. A scenario looks like::

    {
      "network": {"multilevel": {"seed": 0}},      # or {"graph_file": "g.json"}
      "weights": {"c_theta": 1.0, "c_v": 1.0, "q_u_omega": 1.0, "q_u_v": 1.0},
      "perturbation": {"radius": 0.01, "seed": 1},  # or {"per_node": {...}}
      "sim": {"dt": 0.001, "T": 20.0, "controller": "distributed"},
      "certificate": {"lipschitz_samples": 64, "seed": 0},
      "outputs": "out"
    }

Every stage writes its artifact into the output directory (``graph.json``,
``steady.json``, ``certificate.json``, ``gains.json``, ``trace_<ctrl>.csv``)
and, when asked to reuse, reads an existing artifact instead of recomputing.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import control, dynamics, network, stability, steady_state
from .errors import (AssumptionViolation, ConfigError, ConvergenceError, DomainError,
                     GridLevelsError, IterationError, NumericalError, RangeError,
                     StabilityError, StructureError)

__all__ = ["Scenario", "Report", "Pipeline", "run_scenario", "run_batch", "load_scenario",
           "default_scenario", "variance_metrics", "exit_code"]

log = logging.getLogger(__name__)

CONTROLLERS = {"open": "open", "open-loop": "open", "distributed": "distributed",
               "central": "central", "centralized": "central"}


def exit_code(exc) -> int:
    """Process exit status for a pipeline error."""
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, (ConvergenceError, AssumptionViolation, IterationError)):
        return 3
    if isinstance(exc, (StabilityError, StructureError, NumericalError, DomainError, RangeError)):
        return 4
    return 1


# --------------------------------------------------------------------------
# scenario
# --------------------------------------------------------------------------

@dataclass
class Scenario:
    network: dict = field(default_factory=lambda: {"multilevel": {}})
    weights: dict = field(default_factory=dict)
    perturbation: dict = field(default_factory=lambda: {"radius": 0.01, "seed": 1})
    sim: dict = field(default_factory=dict)
    certificate: dict = field(default_factory=dict)
    outputs: str = "out"
    base_dir: str = "."

    def __post_init__(self):
        sim = {"dt": 1e-3, "T": 20.0, "controller": "distributed", "model": "pinned",
               "mode": "stage"}
        sim.update(self.sim)
        self.sim = sim
        if sim["controller"] not in CONTROLLERS:
            raise ConfigError(f"unknown controller {sim['controller']!r}")
        sim["controller"] = CONTROLLERS[sim["controller"]]
        if not (float(sim["dt"]) > 0 and float(sim["T"]) > 0):
            raise ConfigError("dt and T must be positive")
        if float(self.perturbation.get("radius", 0.0)) < 0:
            raise ConfigError("perturbation radius must be nonnegative")
        if not ("multilevel" in self.network or "graph_file" in self.network):
            raise ConfigError("network needs a 'multilevel' config or a 'graph_file'")

    @classmethod
    def from_dict(cls, data, base_dir="."):
        known = {"network", "weights", "perturbation", "sim", "certificate", "outputs"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**copy.deepcopy(data), base_dir=str(base_dir))

    def to_dict(self):
        return {"network": self.network, "weights": self.weights,
                "perturbation": self.perturbation, "sim": self.sim,
                "certificate": self.certificate, "outputs": self.outputs}

    @property
    def controller(self):
        return self.sim["controller"]


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return Scenario.from_dict(data, base_dir=path.parent)


def default_scenario() -> Scenario:
    text = resources.files("gridlevels").joinpath("data/default_scenario.json").read_text()
    return Scenario.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def _check_finite(obj, where="report"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise NumericalError(f"non-finite value in {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _check_finite(v, where)


class Report(dict):
    """Structured analysis report (a JSON-compatible dict).

    Sections: ``validation``, ``steady_state``, ``certificate``, ``gains``,
    ``simulation`` and ``errors``. A skipped section is ``{"status":
    "skipped"}``.
    """

    def to_json(self, path=None):
        _check_finite(self)
        text = json.dumps(self, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path):
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        return cls(json.loads(text))

    @property
    def ok(self):
        return not self.get("errors")


SKIPPED = {"status": "skipped"}


def _clean(x):
    """Convert numpy scalars/arrays into plain JSON types."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

def variance_metrics(graph, x_star, trace):
    """Time-averaged sample variance across nodes of ``omega`` and ``v - v*``."""
    w = trace.states[:, 1::3]
    dv = trace.states[:, 2::3] - x_star.v
    ddof = 1 if graph.n > 1 else 0
    return float(np.mean(np.var(w, axis=1, ddof=ddof))), float(np.mean(np.var(dv, axis=1, ddof=ddof)))


def trace_cost(graph, x_star, trace, Q_xx, Q_uu):
    """Trapezoidal integral of ``x~^T Q_xx x~ + u^T Q_uu u`` along a trace."""
    lay = steady_state.StateLayout.of(graph)
    dev = trace.states[:, lay.keep] - x_star.full()[lay.keep]
    run = np.einsum("ti,ij,tj->t", dev, Q_xx, dev)
    if trace.inputs is not None:
        run = run + np.einsum("ti,ij,tj->t", trace.inputs, Q_uu, trace.inputs)
    return float(trapezoid(run, trace.times))


class Pipeline:
    """Lazily evaluated stages of one scenario.

    With ``reuse=True`` an artifact already present in the output directory
    is loaded instead of being recomputed.
    """

    def __init__(self, scenario: Scenario, out=None, reuse=False, write=True):
        self.sc = scenario
        self.out = Path(out if out is not None else scenario.outputs)
        self.reuse = reuse
        self.write = write
        self._cache = {}
        if write:
            self.out.mkdir(parents=True, exist_ok=True)

    def _path(self, name):
        return self.out / name

    def _save(self, name, data):
        if self.write:
            _check_finite(data, name)
            self._path(name).write_text(json.dumps(data, indent=2, sort_keys=True))

    def _load(self, name):
        p = self._path(name)
        if self.reuse and p.exists():
            log.info("reusing %s", p)
            return json.loads(p.read_text())
        return None

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    # stages ---------------------------------------------------------------

    def graph(self):
        def make():
            data = self._load("graph.json")
            if data is not None:
                return network.graph_from_dict(data)
            net = self.sc.network
            if "graph_file" in net:
                path = Path(self.sc.base_dir) / net["graph_file"]
                try:
                    g = network.load_graph(path)
                except OSError as exc:
                    raise ConfigError(f"cannot read graph file {path}: {exc}") from exc
            else:
                g = network.build_multilevel(network.MultilevelConfig.from_dict(net["multilevel"]))
            self._save("graph.json", network.graph_to_dict(g))
            return g
        return self._memo("graph", make)

    def validation(self):
        def make():
            rep = network.validate_static(self.graph())
            self._save("validation.json", rep.to_dict())
            return rep
        return self._memo("validation", make)

    def steady(self):
        def make():
            data = self._load("steady.json")
            if data is not None:
                return steady_state.SynchronousState.from_dict(data)
            s = steady_state.solve_synchronous_state(self.graph())
            self._save("steady.json", s.to_dict(self.graph()))
            return s
        return self._memo("steady", make)

    def certificate(self):
        def make():
            data = self._load("certificate.json")
            if data is not None:
                return stability.StabilityCertificate.from_dict(data)
            g, s = self.graph(), self.steady()
            opts = dict(lipschitz_samples=64, seed=0)
            opts.update(self.sc.certificate)
            cert = stability.check_certificate(stability.build_hessian_blocks(g, s), g, s, **opts)
            self._save("certificate.json", cert.to_dict())
            return cert
        return self._memo("certificate", make)

    def weights(self):
        return self._memo("weights", lambda: control.LQRWeights.from_dict(self.sc.weights))

    def matrices(self):
        def make():
            w = self.weights()
            return dynamics.build_linearized(self.graph(), self.steady(), w.c_theta, w.c_v,
                                             w.c_omega_ref, w.reference_output)
        return self._memo("matrices", make)

    def x0(self, seed=None):
        """Initial deviation vector from the perturbation spec."""
        g = self.graph()
        lay = steady_state.StateLayout.of(g)
        pert = self.sc.perturbation
        x = np.zeros(lay.dim)
        if "per_node" in pert:
            for nid, comp in pert["per_node"].items():
                i = int(nid)
                if not 0 <= i < g.n:
                    raise ConfigError(f"perturbation names unknown node {i}")
                for name, val in comp.items():
                    idx = {"theta": lay.theta, "omega": lay.omega, "v": lay.v}.get(name)
                    if idx is None:
                        raise ConfigError(f"unknown perturbation component {name!r}")
                    if idx[i] >= 0:
                        x[idx[i]] += float(val)
        radius = float(pert.get("radius", 0.0))
        if radius > 0:
            rng = np.random.default_rng(pert.get("seed", 0) if seed is None else seed)
            z = rng.standard_normal(lay.dim)
            x += radius * z / np.linalg.norm(z)
        return x

    def gains(self):
        def make():
            data = self._load("gains.json")
            if data is not None:
                return data, np.asarray(data["F_d"]), np.asarray(data["F_c"])
            g, s = self.graph(), self.steady()
            gs = control.synthesize(g, s, self.x0(), self.weights(), self.matrices())
            info = gs.to_dict()
            info["F_d"] = gs.F_d.tolist()
            info["F_c"] = gs.F_c.tolist()
            info = _clean(info)
            self._save("gains.json", info)
            return info, gs.F_d, gs.F_c
        return self._memo("gains", make)

    def gain_for(self, controller):
        if controller == "open":
            return None
        _, F_d, F_c = self.gains()
        return F_d if controller == "distributed" else F_c

    def simulate(self, controller=None, seed=None, save=True):
        controller = CONTROLLERS[controller or self.sc.controller]
        g, s = self.graph(), self.steady()
        sim = self.sc.sim
        x0 = self.x0(seed)
        tr = dynamics.simulate(g, s, x0, self.gain_for(controller), float(sim["dt"]),
                               float(sim["T"]), model=sim["model"], mode=sim["mode"])
        fvar, vvar = variance_metrics(g, s, tr)
        final_dev = steady_state.to_deviation(
            g, steady_state.align_reference_angle(g, tr.final, s), s)
        summary = {"controller": controller, "dt": float(sim["dt"]), "T": float(sim["T"]),
                   "initial_norm": float(np.linalg.norm(x0)),
                   "final_norm": float(np.linalg.norm(final_dev)),
                   "frequency_variance": fvar, "voltage_variance": vvar}
        if controller != "open":
            Qxx, Quu = self.weights().matrices(g)
            summary["J_trace"] = trace_cost(g, s, tr, Qxx, Quu)
        if save and self.write:
            path = self._path(f"trace_{controller}.csv")
            tr.to_csv(path)
            summary["trace"] = str(path)
        return summary, tr

    # full run -------------------------------------------------------------

    def run(self) -> Report:
        rep = Report(scenario=self.sc.to_dict(), errors=[], validation=SKIPPED,
                     steady_state=SKIPPED, certificate=SKIPPED, gains=SKIPPED,
                     simulation=SKIPPED)
        ctrl = self.sc.controller
        stages = [
            ("build", lambda: self.graph()),
            ("validate", lambda: rep.__setitem__("validation", {
                "passed": self.validation().passed, "clauses": self.validation().to_dict()})),
            ("steady_state", lambda: rep.__setitem__(
                "steady_state", self.steady().to_dict(self.graph()))),
            ("certificate", lambda: rep.__setitem__("certificate", self.certificate().to_dict())),
            ("matrices", lambda: self.matrices()),
        ]
        if ctrl != "open":
            stages.append(("gains", lambda: rep.__setitem__("gains", self._gain_summary())))
        stages.append(("simulate", lambda: rep.__setitem__("simulation", self.simulate()[0])))
        for name, fn in stages:
            try:
                fn()
            except GridLevelsError as exc:
                exc.stage = name
                rep["errors"].append({"stage": name, "type": type(exc).__name__,
                                      "message": str(exc), "exit_code": exit_code(exc)})
                log.error("stage %s failed: %s", name, exc)
                break
        rep["reference_output"] = self.sc.weights.get("reference_output", "fixed")
        rep["verdicts"] = self._verdicts(rep)
        rep["status"] = "ok" if not rep["errors"] else "error"
        rep = Report(_clean(rep))
        if self.write:
            rep.to_json(self._path("report.json"))
        return rep

    @staticmethod
    def _verdicts(rep):
        def get(section, key):
            sec = rep[section]
            return sec.get("verdicts", {}).get(key, "skipped") if sec is not SKIPPED else "skipped"
        out = {
            "validation": "skipped" if rep["validation"] is SKIPPED
            else ("pass" if rep["validation"]["passed"] else "fail"),
            "paper_sufficient": get("certificate", "paper_sufficient"),
            "direct": get("certificate", "direct"),
            "region": get("certificate", "region"),
        }
        gains = rep["gains"]
        if gains is SKIPPED:
            out["closed_loop_stable"] = out["bound_holds"] = "skipped"
        else:
            out["closed_loop_stable"] = "pass" if gains["beta_d"] > 0 and gains["beta_c"] > 0 else "fail"
            out["bound_holds"] = "pass" if gains["holds"] else "fail"
        return out

    def _gain_summary(self):
        info, _, _ = self.gains()
        return {k: v for k, v in info.items() if k not in ("F_d", "F_c")}


def run_scenario(path_or_scenario, out=None) -> Report:
    """Run the full pipeline and write the report; never raises pipeline
    errors (they are recorded in ``report["errors"]`` with their stage)."""
    if isinstance(path_or_scenario, Scenario):
        sc = path_or_scenario
    else:
        sc = load_scenario(path_or_scenario)
    return Pipeline(sc, out).run()


# --------------------------------------------------------------------------
# batch
# --------------------------------------------------------------------------

_WORKER = {}


def _init_worker(scenario_dict, base_dir, graph_dict, steady_dict, F_d, F_c, weights, controllers):
    sc = Scenario.from_dict(scenario_dict, base_dir)
    pl = Pipeline(sc, write=False)
    pl._cache["graph"] = network.graph_from_dict(graph_dict)
    pl._cache["steady"] = steady_state.SynchronousState.from_dict(steady_dict)
    pl._cache["gains"] = ({}, None if F_d is None else np.asarray(F_d),
                          None if F_c is None else np.asarray(F_c))
    _WORKER.update(pl=pl, weights=weights, controllers=controllers)


def _batch_row(seed):
    pl = _WORKER["pl"]
    row = {"seed": int(seed)}
    try:
        for ctrl in _WORKER["controllers"]:
            summary, _ = pl.simulate(ctrl, seed=seed, save=False)
            for key in ("final_norm", "frequency_variance", "voltage_variance"):
                row[f"{ctrl}_{key}"] = summary[key]
        row.update(_costs(pl, pl.x0(seed)))
    except GridLevelsError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _costs(pl, x0):
    g = pl.graph()
    Qxx, Quu = pl.weights().matrices(g)
    sm = pl.matrices()
    out = {"J_open": control.evaluate_cost(sm.A_tilde, Qxx, x0)}
    _, F_d, F_c = pl.gains()
    if F_d is not None:
        out["J_d"] = control.evaluate_cost(sm.A_tilde + sm.B @ F_d, Qxx + F_d.T @ Quu @ F_d, x0)
        out["J_c"] = control.evaluate_cost(sm.A_tilde + sm.B @ F_c, Qxx + F_c.T @ Quu @ F_c, x0)
    return out


def run_batch(path_or_scenario, n_seeds, out=None, workers=1, master_seed=None,
              controllers=("open", "distributed", "central")):
    """Run the scenario over ``n_seeds`` perturbation seeds.

    Row ``k`` uses perturbation seed ``master_seed + k`` (the scenario's
    own perturbation seed by default), so a one-seed batch reproduces
    :func:`run_scenario`. Failed seeds are recorded and skipped in the
    means.

    Returns
    -------
    dict
        ``{"rows": [...], "mean": {...}, "failed": [...]}``
    """
    sc = path_or_scenario if isinstance(path_or_scenario, Scenario) \
        else load_scenario(path_or_scenario)
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    controllers = [CONTROLLERS[c] for c in controllers]
    pl = Pipeline(sc, out)
    g, s = pl.graph(), pl.steady()
    F_d = F_c = None
    if any(c != "open" for c in controllers):
        _, F_d, F_c = pl.gains()
    master = int(sc.perturbation.get("seed", 0) if master_seed is None else master_seed)
    seeds = [master + k for k in range(n_seeds)]
    init = (sc.to_dict(), sc.base_dir, network.graph_to_dict(g), s.to_dict(),
            None if F_d is None else F_d.tolist(), None if F_c is None else F_c.tolist(),
            sc.weights, controllers)
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=init) as ex:
            rows = list(ex.map(_batch_row, seeds))
    else:
        _init_worker(*init)
        rows = [_batch_row(sd) for sd in seeds]
    good = [r for r in rows if "error" not in r]
    keys = [k for k in (good[0] if good else {}) if k != "seed"]
    mean = {k: float(np.mean([r[k] for r in good])) for k in keys}
    result = _clean({"master_seed": master, "n_seeds": n_seeds, "rows": rows, "mean": mean,
                     "failed": [r["seed"] for r in rows if "error" in r]})
    if pl.write:
        _check_finite(result, "batch")
        (pl.out / "batch.json").write_text(json.dumps(result, indent=2, sort_keys=True))
        if good:
            header = ["seed"] + keys
            lines = [",".join(header)] + [",".join(repr(float(r.get(k, float("nan"))))
                                                   if k != "seed" else str(r["seed"])
                                                   for k in header) for r in rows]
            (pl.out / "batch.csv").write_text("\n".join(lines) + "\n")
    return result


def env_log_level():
    return os.environ.get("GRIDLEVELS_LOG", "WARNING").upper()
