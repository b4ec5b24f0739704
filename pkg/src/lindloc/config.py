"""Experiment configuration: schema validation and model construction."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .convex import ConvexBasisSpec
from .evolution import EvolutionMethod
from .lattice import Lattice, ReproducingFunction, build_lattice
from .lindblad import (
    ClassicalChain,
    Generator,
    GraphSpec,
    amplitude_damping,
    build_generator,
    dephasing,
    depolarizing,
    embed_classical,
    graph_term,
    LindbladTerm,
    hamiltonian_term,
    lindblad_term,
    random_term,
    swap_hopping,
    xx_hopping,
)
from .operators import OperatorSum

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Schema violation or unreadable configuration (CLI exit code 2)."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer"}
_SITES = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_SPLIT = {"enum": ["L0", "L1"]}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUM}}
_OPERATOR = {"type": "string"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_TIMES = _obj({"t_max": _NONNEG, "n": {"type": "integer", "minimum": 1}, "values": {"type": "array", "items": _NONNEG}})

SCHEMA = _obj(
    {
        "seed": _INT,
        "threads": {"type": "integer", "minimum": 1},
        "mu": _NONNEG,
        "lattice": _obj(
            {
                "dims": {"type": "array", "items": {"type": "integer"}},
                "metric": {"enum": ["manhattan", "graph"]},
                "boundary": {"enum": ["open", "periodic"]},
                "edges": {"type": "array", "items": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 2}},
            },
            ["dims"],
        ),
        "F": _obj({"form": {"enum": ["exponential", "power", "tabulated"]},
                   "parameters": {"type": "array", "items": _NUM}}, ["form", "parameters"]),
        "c_mu_convention": {"enum": ["standard", "literal"]},
        "convex": _obj({"default": {"type": "string"},
                        "per_site": {"type": "object", "additionalProperties": {"type": "string"}}}),
        "generator": _obj(
            {
                "terms": {"type": "array", "items": _obj(
                    {"support": _SITES, "jumps": {"type": "array", "items": _OPERATOR}, "q": _OPERATOR,
                     "hamiltonian": _OPERATOR, "rate": _NONNEG, "split": _SPLIT, "label": {"type": "string"}},
                    ["support"])},
                "families": {"type": "array", "items": _obj(
                    {"kind": {"enum": ["depolarizing", "dephasing", "amplitude_damping", "swap", "xx",
                                       "hamiltonian", "random"]},
                     "sites": {"oneOf": [_SITES, {"const": "all"}]},
                     "bonds": {"oneOf": [{"type": "array", "items": {"type": "array", "items": _INT}},
                                         {"const": "nearest"}]},
                     "operator": _OPERATOR, "rate": _NONNEG, "split": _SPLIT,
                     "n_jumps": {"type": "integer", "minimum": 0}, "hamiltonian": {"type": "boolean"}},
                    ["kind"])},
                "graph": _obj({"vertices": _SITES, "edges": {"type": "array", "items": {"type": "array", "items": _INT}},
                               "alpha": {"enum": ["x", "y", "z"]}, "rate": _POS, "split": _SPLIT}, ["vertices"]),
                "classical": {"type": "array", "items": _obj({"support": _SITES, "matrix": _MATRIX, "split": _SPLIT},
                                                             ["support", "matrix"])},
            }
        ),
        "observables": _obj({"A": _OPERATOR, "B": _OPERATOR, "placements": _SITES,
                             "evolve": {"type": "array", "items": _OPERATOR}}),
        "times": _TIMES,
        "method": _obj({"kind": {"enum": ["auto", "dense", "krylov", "adaptive"]}, "tolerance": _POS,
                        "max_sites_dense": {"type": "integer", "minimum": 0},
                        "krylov_dim": {"type": "integer", "minimum": 2}}),
        "bound": _obj({"form": {"enum": ["standard", "saturating", "dissipative", "localized"]}, "C_override": _POS, "xi": _POS,
                       "lambda_override": _NONNEG, "patch_sites": {"type": "integer", "minimum": 1}}),
        "decay": _obj({"times": _TIMES, "sites": _SITES}),
        "localization": _obj({"epsilon": _POS, "d_min": _NONNEG, "t_max": _NONNEG}),
        "path_series": _obj({"n_max": {"type": "integer", "minimum": 1}, "t": {"type": "array", "items": _NONNEG},
                             "A": _SITES, "Z": _SITES}),
        "substochastic": _obj({"blocks": {"type": "array", "items": _obj({"support": _SITES, "matrix": _MATRIX},
                                                                         ["support", "matrix"])}}),
        "graph_cases": _obj({"vertices": _SITES, "edges": {"type": "array", "items": {"type": "array", "items": _INT}},
                             "alpha": {"enum": ["x", "y", "z"]}, "rate": _POS, "t": _NONNEG}, ["vertices"]),
        "convexity_times": {"type": "array", "items": _NONNEG},
    },
    ["lattice"],
)


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            cfg = json.loads(raw)
        else:
            cfg = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc


# --- builders ------------------------------------------------------------------------


@dataclass
class Experiment:
    cfg: dict
    lattice: Lattice
    F: ReproducingFunction
    mu: float
    spec: ConvexBasisSpec
    method: EvolutionMethod
    seed: int

    @property
    def generator(self) -> Generator:
        if not hasattr(self, "_gen"):
            self._gen = build_model(self.cfg.get("generator", {}), self.lattice, self.seed)
        return self._gen


def time_grid(spec: dict | None, default_t_max: float = 1.0, default_n: int = 11) -> np.ndarray:
    spec = spec or {}
    if "values" in spec:
        return np.array(sorted(spec["values"]), dtype=float)
    return np.linspace(0.0, spec.get("t_max", default_t_max), spec.get("n", default_n))


def experiment(cfg: dict, seed: int | None = None, mu: float | None = None) -> Experiment:
    try:
        lat = build_lattice(cfg["lattice"]["dims"], cfg["lattice"].get("metric", "manhattan"),
                            cfg["lattice"].get("boundary", "open"), cfg["lattice"].get("edges"))
        fcfg = cfg.get("F", {"form": "exponential", "parameters": [1.0]})
        F = ReproducingFunction(fcfg["form"], tuple(fcfg["parameters"]))
        ccfg = cfg.get("convex", {})
        spec = ConvexBasisSpec(ccfg.get("default", "IXYZ"), ccfg.get("per_site", {}))
        method = EvolutionMethod(**cfg.get("method", {}))
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return Experiment(cfg, lat, F, cfg.get("mu", 0.5) if mu is None else mu, spec, method,
                      cfg.get("seed", 0) if seed is None else seed)


def _sites(value, lat):
    return list(lat.sites) if value in (None, "all") else list(value)


def _bonds(value, lat):
    if value in (None, "nearest"):
        return [tuple(b) for b in lat.nearest_neighbour_bonds()]
    return [tuple(b) for b in value]


def build_model(gcfg: dict, lat: Lattice, seed: int = 0) -> Generator:
    rng = np.random.default_rng(seed)
    terms: list[LindbladTerm] = []
    for t in gcfg.get("terms", []):
        jumps = [OperatorSum.parse(j) for j in t.get("jumps", [])]
        rate = t.get("rate", 1.0)
        split = t.get("split")
        if "q" in t:
            if "hamiltonian" in t:
                raise ConfigError("a term takes either q or hamiltonian, not both")
            terms.append(LindbladTerm(tuple(t["support"]), tuple(jumps), OperatorSum.parse(t["q"]), rate, split,
                                      t.get("label", "")))
        else:
            H = OperatorSum.parse(t["hamiltonian"]) if "hamiltonian" in t else None
            terms.append(lindblad_term(tuple(t["support"]), jumps, H, rate, split, t.get("label", "")))
    for fam in gcfg.get("families", []):
        kind, rate, split = fam["kind"], fam.get("rate", 1.0), fam.get("split")
        if kind in ("depolarizing", "dephasing", "amplitude_damping"):
            make = {"depolarizing": depolarizing, "dephasing": dephasing, "amplitude_damping": amplitude_damping}[kind]
            terms += [make(s, rate, split) for s in _sites(fam.get("sites"), lat)]
        elif kind in ("swap", "xx"):
            make = swap_hopping if kind == "swap" else xx_hopping
            terms += [make(i, j, rate, split) for i, j in _bonds(fam.get("bonds"), lat)]
        elif kind == "hamiltonian":
            if "operator" not in fam:
                raise ConfigError("hamiltonian family needs an operator")
            terms.append(hamiltonian_term(OperatorSum.parse(fam["operator"]), rate, split))
        elif kind == "random":
            for bond in _bonds(fam.get("bonds"), lat):
                terms.append(random_term(bond, rng, fam.get("n_jumps", 2), fam.get("hamiltonian", True), rate, split))
    if "graph" in gcfg:
        g = gcfg["graph"]
        spec = GraphSpec(tuple(g["vertices"]), tuple(map(tuple, g.get("edges", []))), g.get("alpha", "z"),
                         g.get("rate", 1.0))
        terms += [graph_term(spec, k, g.get("split")) for k in spec.vertices]
    for block in gcfg.get("classical", []):
        chain = ClassicalChain(((tuple(block["support"]), block["matrix"]),))
        terms += [t.with_split(block.get("split")) for t in embed_classical(chain).terms]
    n = lat.n_sites
    for t in terms:
        if any(s >= n for s in t.support):
            raise ConfigError(f"{t.describe()} acts outside the {n}-site lattice")
    return build_generator(terms)


def graph_spec(cfg: dict) -> GraphSpec:
    return GraphSpec(tuple(cfg["vertices"]), tuple(map(tuple, cfg.get("edges", []))), cfg.get("alpha", "z"),
                     cfg.get("rate", 1.0))
