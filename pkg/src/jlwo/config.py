"""JSON experiment configs and design files.

Config layout (all rates in requests/s, bandwidths in bits/s, delays in s)::

    {
      "topology":  {"num_racks": 10, "servers_per_rack": 10,
                    "aggregate_bandwidth": 96e9, "tor_bandwidth": 792e6,
                    "port_capacity": 1e9,
                    "connection_delay": {"intra_mean": 0.05, "intra_var": 0.0,
                                         "inter_mean": 0.1, "inter_var": 0.0},
                    "intra_residual": "as-written"},
      "workload":  {"service": {"family": "exponential", "mean": 0.5},
                    "files": [{"id": 0, "class": 0, "rates": [...]}, ...]
                    or "generator": {"files_per_class": 100, "total_rate": 0.25}},
      "classes":   {"weights": [1.0, 0.4]},
      "code":      {"n": 7, "k": 4},
      "optimizer": {"epsilon": 0.01, ...},
      "simulator": {"num_requests": 100000, ...},
      "sweep":     {"parameter": "arrival_rate_scale", "values": [0.5, 1, 1.5]}
    }

``connection_delay`` may instead give full ``mean``/``var`` matrices.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, fields, replace

import numpy as np

from .distributions import FAMILIES, ServiceDistribution
from .errors import ParseError, SchemaError
from .instances import make_files
from .model import (BandwidthWeights, ClusterTopology, DesignPoint, ErasureCode, FileSpec,
                    IntraResidualMode, PlacementAndSchedule, ServiceClassSet, WorkloadSpec,
                    check_instance)
from .optimizer import OptConfig
from .simulator import SOJOURN, WAITING, SimConfig

SWEEP_PARAMETERS = ("arrival_rate_scale", "file_size_scale", "class2_weight")
DESIGN_FORMAT = "jlwo-design/1"


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    topology: ClusterTopology
    workload: WorkloadSpec
    opt: OptConfig
    sim: SimConfig
    sweep: SweepSpec | None
    raw: dict                      # normalised config with defaults filled in

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    def with_overrides(self, seed=None, mode=None, intra_residual=None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["optimizer"]["seed"] = int(seed)
            raw["simulator"]["seed"] = int(seed)
        if mode is not None:
            raw["simulator"]["metrics_mode"] = mode
        if intra_residual is not None:
            raw["topology"]["intra_residual"] = intra_residual
        return build_config(raw)


def config_digest(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# schema helpers

def _obj(value, path):
    if not isinstance(value, dict):
        raise SchemaError("expected an object", path)
    return value


def _no_unknown(section, allowed, path):
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise SchemaError(f"unknown key(s) {extra}", path)


def _num(value, path, lo=None, hi=None, integer=False, strict_lo=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError("expected a number", path)
    if integer and (not float(value).is_integer()):
        raise SchemaError("expected an integer", path)
    if not math.isfinite(value):
        raise SchemaError("must be finite", path)
    if lo is not None and (value <= lo if strict_lo else value < lo):
        raise SchemaError(f"must be {'>' if strict_lo else '>='} {lo}", path)
    if hi is not None and value > hi:
        raise SchemaError(f"must be <= {hi}", path)
    return int(value) if integer else float(value)


def _fill(section, defaults, path, required=()):
    section = _obj(section if section is not None else {}, path)
    _no_unknown(section, defaults, path)
    for key in required:
        if key not in section:
            raise SchemaError("missing required key", f"{path}.{key}")
    out = dict(defaults)
    out.update(section)
    return out


_TOPOLOGY = {"num_racks": None, "servers_per_rack": 1, "aggregate_bandwidth": None,
             "tor_bandwidth": None, "port_capacity": None, "connection_delay": None,
             "intra_residual": "as-written"}
_DELAY_UNIFORM = {"intra_mean": 0.0, "intra_var": 0.0, "inter_mean": 0.0, "inter_var": 0.0}
_WORKLOAD = {"service": None, "files": None, "generator": None}
_GENERATOR = {"files_per_class": None, "total_rate": None, "class_shares": None,
              "pattern": "uniform", "seed": 0}
_OPT = {f.name: f.default for f in fields(OptConfig)}
_SIM = {f.name: f.default for f in fields(SimConfig)}
_TOP = ("topology", "workload", "classes", "code", "optimizer", "simulator", "sweep")


def _topology(sec):
    t = _fill(sec, _TOPOLOGY, "topology",
              required=("num_racks", "aggregate_bandwidth", "tor_bandwidth", "port_capacity"))
    N = _num(t["num_racks"], "topology.num_racks", 1, integer=True)
    t["num_racks"] = N
    t["servers_per_rack"] = _num(t["servers_per_rack"], "topology.servers_per_rack", 1, integer=True)
    for key in ("aggregate_bandwidth", "tor_bandwidth", "port_capacity"):
        t[key] = _num(t[key], f"topology.{key}", 0, strict_lo=True)
    try:
        t["intra_residual"] = IntraResidualMode(t["intra_residual"]).value
    except ValueError:
        raise SchemaError("must be 'as-written' or 'sum'", "topology.intra_residual") from None
    cd = t["connection_delay"]
    if cd is None:
        cd = dict(_DELAY_UNIFORM)
    cd = _obj(cd, "topology.connection_delay")
    if "mean" in cd or "var" in cd:
        _no_unknown(cd, ("mean", "var"), "topology.connection_delay")
        mats = {}
        for key in ("mean", "var"):
            p = f"topology.connection_delay.{key}"
            arr = np.asarray(cd.get(key, [[0.0] * N] * N), dtype=object)
            if arr.shape != (N, N):
                raise SchemaError(f"must be a {N}x{N} matrix", p)
            mats[key] = [[_num(v, p, 0) for v in row] for row in arr.tolist()]
        cd = mats
        eta, xi2 = np.array(cd["mean"]), np.array(cd["var"])
    else:
        cd = _fill(cd, _DELAY_UNIFORM, "topology.connection_delay")
        for key in _DELAY_UNIFORM:
            cd[key] = _num(cd[key], f"topology.connection_delay.{key}", 0)
        eta = np.full((N, N), cd["inter_mean"])
        xi2 = np.full((N, N), cd["inter_var"])
        np.fill_diagonal(eta, cd["intra_mean"])
        np.fill_diagonal(xi2, cd["intra_var"])
    t["connection_delay"] = cd
    topo = ClusterTopology(N, t["servers_per_rack"], t["aggregate_bandwidth"], t["tor_bandwidth"],
                           t["port_capacity"], eta, xi2, t["intra_residual"])
    return t, topo


def _service(sec):
    s = _obj(sec, "workload.service")
    fam = s.get("family")
    if fam not in FAMILIES:
        raise SchemaError(f"must be one of {sorted(FAMILIES)}", "workload.service.family")
    params = {k: v for k, v in s.items() if k != "family"}
    for k, v in params.items():
        params[k] = _num(v, f"workload.service.{k}", 0, strict_lo=True)
    try:
        dist = ServiceDistribution(fam, params)
    except ValueError as exc:
        raise SchemaError(str(exc), "workload.service") from None
    expected = {"deterministic": {"value"}, "exponential": {"mean"}, "gamma": {"shape", "scale"},
                "chunk-over-bandwidth": {"chunk_bits", "bandwidth"}}[fam]
    _no_unknown(params, expected, "workload.service")
    return {"family": fam, **params}, dist


def _workload(sec, N, D):
    w = _fill(sec, _WORKLOAD, "workload", required=("service",))
    w["service"], dist = _service(w["service"])
    if (w["files"] is None) == (w["generator"] is None):
        raise SchemaError("give exactly one of 'files' and 'generator'", "workload")
    if w["files"] is not None:
        if not isinstance(w["files"], list) or not w["files"]:
            raise SchemaError("expected a nonempty list", "workload.files")
        files, norm = [], []
        for idx, f in enumerate(w["files"]):
            p = f"workload.files[{idx}]"
            f = _fill(f, {"id": None, "class": 0, "rates": None}, p, required=("id", "rates"))
            if not isinstance(f["id"], (int, str)) or isinstance(f["id"], bool):
                raise SchemaError("file id must be an integer or string", f"{p}.id")
            d = _num(f["class"], f"{p}.class", 0, D - 1, integer=True)
            rates = f["rates"]
            if isinstance(rates, (int, float)) and not isinstance(rates, bool):
                rates = [rates / N] * N          # a scalar is the file's total rate
            if not isinstance(rates, list) or len(rates) != N:
                raise SchemaError(f"expected {N} per-rack rates", f"{p}.rates")
            rates = [_num(v, f"{p}.rates", 0) for v in rates]
            files.append(FileSpec(f["id"], d, tuple(rates)))
            norm.append({"id": f["id"], "class": d, "rates": rates})
        w["files"] = norm
    else:
        g = _fill(w["generator"], _GENERATOR, "workload.generator",
                  required=("files_per_class", "total_rate"))
        g["files_per_class"] = _num(g["files_per_class"], "workload.generator.files_per_class", 1,
                                    integer=True)
        g["total_rate"] = _num(g["total_rate"], "workload.generator.total_rate", 0)
        shares = g["class_shares"] if g["class_shares"] is not None else [1.0 / D] * D
        if not isinstance(shares, list) or len(shares) != D:
            raise SchemaError(f"expected {D} shares", "workload.generator.class_shares")
        shares = [_num(v, "workload.generator.class_shares", 0) for v in shares]
        if not math.isclose(sum(shares), 1.0, rel_tol=1e-9):
            raise SchemaError("shares must sum to 1", "workload.generator.class_shares")
        g["class_shares"] = shares
        if g["pattern"] not in ("uniform", "random"):
            raise SchemaError("must be 'uniform' or 'random'", "workload.generator.pattern")
        g["seed"] = _num(g["seed"], "workload.generator.seed", 0, integer=True)
        files = make_files(N, g["files_per_class"], [g["total_rate"] * s for s in shares],
                           np.random.default_rng(g["seed"]), g["pattern"])
        w["generator"] = g
    return w, files, dist


def _dataclass_section(sec, defaults, path, cls):
    s = _fill(sec, defaults, path)
    try:
        return s, cls(**s)
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), path) from None


def build_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed config dict, fill defaults and build the domain objects."""
    raw = _obj(copy.deepcopy(raw), "<root>")
    _no_unknown(raw, _TOP, "<root>")
    for key in ("topology", "workload"):
        if key not in raw:
            raise SchemaError("missing required section", key)
    norm = {}
    norm["topology"], topo = _topology(raw["topology"])
    N = topo.num_racks

    cls_sec = _fill(raw.get("classes"), {"weights": [1.0]}, "classes")
    wts = cls_sec["weights"]
    if not isinstance(wts, list) or not wts:
        raise SchemaError("expected a nonempty list", "classes.weights")
    cls_sec["weights"] = [_num(v, "classes.weights", 0) for v in wts]
    try:
        classes = ServiceClassSet(tuple(cls_sec["weights"]))
    except ValueError as exc:
        raise SchemaError(str(exc), "classes.weights") from None
    norm["classes"] = cls_sec

    code_sec = _fill(raw.get("code"), {"n": 1, "k": 1}, "code")
    n = _num(code_sec["n"], "code.n", 1, integer=True)
    k = _num(code_sec["k"], "code.k", 1, integer=True)
    if k > n:
        raise SchemaError(f"k={k} exceeds n={n}", "code.k")
    if n > N:
        raise SchemaError(f"n={n} exceeds the number of racks {N}", "code.n")
    norm["code"] = {"n": n, "k": k}

    norm["workload"], files, dist = _workload(raw["workload"], N, classes.num_classes)
    try:
        workload = WorkloadSpec(tuple(files), ErasureCode(n, k), dist, classes)
    except ValueError as exc:
        raise SchemaError(str(exc), "workload") from None
    for v in check_instance(topo, workload):
        raise SchemaError(str(v), "topology")

    norm["optimizer"], opt = _dataclass_section(raw.get("optimizer"), _OPT, "optimizer", OptConfig)
    sim_sec = raw.get("simulator") or {}
    sim_raw = _fill(sim_sec, _SIM, "simulator")
    if isinstance(sim_sec, dict) and "duration" in sim_sec and "num_requests" not in sim_sec:
        sim_raw["num_requests"] = None       # a duration alone sets the horizon
    if sim_raw["metrics_mode"] == "waiting-consistent":
        sim_raw["metrics_mode"] = WAITING
    if sim_raw["metrics_mode"] not in (WAITING, SOJOURN):
        raise SchemaError("must be 'waiting' or 'sojourn'", "simulator.metrics_mode")
    norm["simulator"], sim = _dataclass_section(sim_raw, _SIM, "simulator", SimConfig)

    sweep = None
    sw = raw.get("sweep")
    if sw is not None:
        sw = _fill(sw, {"parameter": None, "values": None}, "sweep", required=("parameter", "values"))
        if sw["parameter"] not in SWEEP_PARAMETERS:
            raise SchemaError(f"must be one of {list(SWEEP_PARAMETERS)}", "sweep.parameter")
        if not isinstance(sw["values"], list) or not sw["values"]:
            raise SchemaError("expected a nonempty list", "sweep.values")
        lo = 0.0
        sw["values"] = [_num(v, "sweep.values", lo, strict_lo=sw["parameter"] != "class2_weight")
                        for v in sw["values"]]
        if sw["parameter"] == "class2_weight" and classes.num_classes < 2:
            raise SchemaError("class2_weight needs at least two classes", "sweep.parameter")
        sweep = SweepSpec(sw["parameter"], tuple(sw["values"]))
    norm["sweep"] = sw
    return ExperimentConfig(topo, workload, opt, sim, sweep, norm)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return build_config(raw)


def apply_sweep_value(cfg: ExperimentConfig, parameter: str, value: float) -> ExperimentConfig:
    """Instance with one sweep parameter applied on top of the base config."""
    wl = cfg.workload
    if parameter == "arrival_rate_scale":
        files = tuple(FileSpec(f.file_id, f.class_id, tuple(value * r for r in f.arrival_rates))
                      for f in wl.files)
        wl = WorkloadSpec(files, wl.code, wl.service, wl.classes)
    elif parameter == "file_size_scale":
        wl = WorkloadSpec(wl.files, wl.code, wl.service.scaled(value), wl.classes)
    elif parameter == "class2_weight":
        weights = list(wl.classes.weights)
        weights[1] = value
        wl = WorkloadSpec(wl.files, wl.code, wl.service, ServiceClassSet(tuple(weights)))
    else:
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    return replace(cfg, workload=wl)


# ---------------------------------------------------------------------------
# design files

def design_to_dict(workload: WorkloadSpec, design: DesignPoint) -> dict:
    ids = [f.file_id for f in workload.files]
    pi = np.asarray(design.pi)
    return {
        "format": DESIGN_FORMAT,
        "dims": {"pi": ["source_rack", "host_rack", "file"], "W": ["source_rack", "host_rack", "class"],
                 "w": ["rack", "class"], "z": ["source_rack", "file"],
                 "shape": {"racks": int(pi.shape[0]), "files": int(pi.shape[2]),
                           "classes": int(design.weights.intra.shape[1])}},
        "file_ids": ids,
        "placements": {str(fid): [int(j) for j in racks]
                       for fid, racks in zip(ids, design.schedule.placements)},
        "pi": pi.tolist(),
        "W": np.asarray(design.weights.inter).tolist(),
        "w": np.asarray(design.weights.intra).tolist(),
        "z": np.asarray(design.z).tolist(),
    }


def design_from_dict(data: dict) -> DesignPoint:
    try:
        if data.get("format") != DESIGN_FORMAT:
            raise SchemaError(f"expected format {DESIGN_FORMAT!r}", "format")
        ids = data["file_ids"]
        placements = tuple(tuple(int(j) for j in data["placements"][str(fid)]) for fid in ids)
        pi = np.array(data["pi"], dtype=float)
        sched = PlacementAndSchedule(placements, pi)
        weights = BandwidthWeights(np.array(data["W"], dtype=float), np.array(data["w"], dtype=float))
        return DesignPoint(sched, weights, np.array(data["z"], dtype=float))
    except KeyError as exc:
        raise SchemaError("missing key", str(exc.args[0])) from None
    except ValueError as exc:
        raise SchemaError(str(exc), "design") from None


def save_design(path, workload: WorkloadSpec, design: DesignPoint) -> None:
    atomic_write_text(path, json.dumps(design_to_dict(workload, design), indent=1) + "\n")


def load_design(path) -> DesignPoint:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return design_from_dict(data)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
