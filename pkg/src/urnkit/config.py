"""Experiment configuration: strict parsing with positioned errors.

Configs are JSON documents with a fixed key tree.  Unknown keys are errors
(a typo in a tolerance name must not silently corrupt a verification run),
and every reported problem carries the path of the offending node.  The
canonical form round-trips: ``parse_config(serialize_config(cfg))`` equals
``cfg``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .model import (
    ReplacementDistribution,
    ReplacementStructure,
    UrnModelError,
    UrnSpec,
    cyclic,
    friedman,
    identity,
    matching,
)
from .simulate import EnsembleSpec


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid config: {lines}")


_PRESETS = {
    "friedman": ({"alpha": int, "gamma": int}, lambda kw: friedman(**kw)),
    "matching": ({"d": int}, lambda kw: matching(**kw)),
    "identity": ({"d": int, "S": int}, lambda kw: identity(**kw)),
    "cyclic": ({"alpha": int, "gamma": int, "d": int}, lambda kw: cyclic(**kw)),
}

_TOLERANCE_KEYS = {
    "quad_tol": 1e-9,
    "tol_jordan": 1e-8,
    "tol_class": None,        # default derived from lambda1
    "mc_tolerance": None,     # default per suite
    "z_cap": None,
    "cond_max": 1e12,
}

_TOP_KEYS = {"structure", "urn", "regime", "ensemble", "suite", "tolerances"}


class _Walker:
    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def fail(self, path: str, msg: str):
        self.errors.append((path, msg))

    def expect_keys(self, node: dict, allowed: set, required: set, path: str) -> bool:
        ok = True
        for k in node:
            if k not in allowed:
                self.fail(f"{path}.{k}", "unknown key")
                ok = False
        for k in required:
            if k not in node:
                self.fail(f"{path}.{k}", "missing required key")
                ok = False
        return ok

    def number(self, node: dict, key: str, path: str, kind=float, positive=False):
        if key not in node:
            return None
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
            return None
        if kind is int and int(v) != v:
            self.fail(f"{path}.{key}", "expected an integer")
            return None
        v = kind(v)
        if positive and v <= 0:
            self.fail(f"{path}.{key}", "must be positive")
            return None
        return v


def _parse_structure(node: Any, w: _Walker) -> Optional[ReplacementStructure]:
    path = "structure"
    if not isinstance(node, dict):
        w.fail(path, "expected an object")
        return None
    if "preset" in node:
        name = node["preset"]
        if name not in _PRESETS:
            w.fail(f"{path}.preset", f"unknown preset {name!r}; "
                   f"available: {sorted(_PRESETS)}")
            return None
        argspec, build = _PRESETS[name]
        allowed = {"preset", *argspec}
        w.expect_keys(node, allowed, {"preset"}, path)
        kwargs = {}
        for key, kind in argspec.items():
            if key in node:
                v = w.number(node, key, path, kind=kind)
                if v is not None:
                    kwargs[key] = v
        if w.errors:
            return None
        try:
            return build(kwargs)
        except (UrnModelError, TypeError) as exc:
            w.fail(path, str(exc))
            return None

    allowed = {"weights", "rules", "S", "jordan_basis"}
    if not w.expect_keys(node, allowed, {"weights", "rules"}, path):
        return None
    weights = node["weights"]
    if not isinstance(weights, list) or not weights:
        w.fail(f"{path}.weights", "expected a non-empty list of positive numbers")
        return None
    rules_node = node["rules"]
    if not isinstance(rules_node, list) or not rules_node:
        w.fail(f"{path}.rules", "expected a non-empty list (one rule per colour)")
        return None
    rules = []
    for i, rule in enumerate(rules_node):
        rpath = f"{path}.rules[{i}]"
        if not isinstance(rule, list) or not rule:
            w.fail(rpath, "expected a non-empty list of atoms")
            return None
        atoms = []
        for j, atom in enumerate(rule):
            apath = f"{rpath}[{j}]"
            if not isinstance(atom, dict):
                w.fail(apath, "expected an object {atom, p}")
                return None
            if not w.expect_keys(atom, {"atom", "p"}, {"atom", "p"}, apath):
                return None
            vec = atom["atom"]
            if not isinstance(vec, list) or len(vec) != len(weights):
                w.fail(f"{apath}.atom", f"expected a vector of length {len(weights)}")
                return None
            atoms.append((tuple(int(x) for x in vec), float(atom["p"])))
        try:
            rules.append(ReplacementDistribution(i, tuple(atoms)))
        except UrnModelError as exc:
            w.fail(rpath, str(exc))
            return None
    S = node.get("S")
    try:
        return ReplacementStructure(
            a=tuple(float(x) for x in weights), rules=tuple(rules),
            S=None if S is None else float(S),
        )
    except UrnModelError as exc:
        w.fail(path, str(exc))
        return None


def _parse_jordan_basis(node: Any, w: _Walker):
    if node is None:
        return None
    path = "structure.jordan_basis"
    if not isinstance(node, list) or not node:
        w.fail(path, "expected a non-empty list of blocks")
        return None
    out = []
    for i, blk in enumerate(node):
        bpath = f"{path}[{i}]"
        if not isinstance(blk, dict):
            w.fail(bpath, "expected an object {eigenvalue, vectors}")
            return None
        if not w.expect_keys(blk, {"eigenvalue", "vectors"}, {"eigenvalue", "vectors"}, bpath):
            return None
        ev = blk["eigenvalue"]
        lam = complex(ev[0], ev[1]) if isinstance(ev, list) else complex(ev)
        vecs = blk["vectors"]
        rows = []
        for v in vecs:
            rows.append([complex(x[0], x[1]) if isinstance(x, list) else complex(x) for x in v])
        out.append((lam, np.asarray(rows, dtype=complex)))
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed, validated configuration; ``data`` is the canonical tree."""

    data: dict

    def structure(self) -> ReplacementStructure:
        w = _Walker()
        s = _parse_structure(self.data["structure"], w)
        assert s is not None
        return s

    def jordan_basis(self):
        node = self.data.get("structure", {})
        if isinstance(node, dict) and "jordan_basis" in node:
            w = _Walker()
            return _parse_jordan_basis(node["jordan_basis"], w)
        return None

    def urn_spec(self) -> UrnSpec:
        urn = self.data["urn"]
        return UrnSpec(self.structure(), N=urn["N"], mu=urn["mu"], n=urn["n"])

    def regime(self) -> Optional[str]:
        return self.data.get("regime", {}).get("name")

    def subcase(self) -> Optional[str]:
        return self.data.get("regime", {}).get("subcase")

    def ensemble_spec(self, base_seed: Optional[int] = None) -> EnsembleSpec:
        if "ensemble" not in self.data or "urn" not in self.data:
            raise ConfigError([("ensemble", "section required for simulation")])
        ens = self.data["ensemble"]
        if self.regime() is None:
            raise ConfigError([("regime", "section required for simulation")])
        return EnsembleSpec(
            urn=self.urn_spec(),
            regime=self.regime(),
            subcase=self.subcase(),
            replicates=ens["replicates"],
            grid_times=tuple(ens["grid"]),
            base_seed=base_seed if base_seed is not None else ens.get("base_seed", 0),
        )

    def tolerances(self) -> dict:
        out = dict(_TOLERANCE_KEYS)
        out.update(self.data.get("tolerances", {}))
        return out

    def suite(self) -> Optional[dict]:
        return self.data.get("suite")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a config document.

    Raises ConfigError carrying every positioned problem found, not just
    the first one.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(f"line {exc.lineno}, col {exc.colno}", exc.msg)])
    w = _Walker()
    if not isinstance(raw, dict):
        raise ConfigError([("$", "top level must be an object")])
    w.expect_keys(raw, _TOP_KEYS, {"structure"}, "$")

    structure = None
    if "structure" in raw:
        node = raw["structure"]
        if isinstance(node, dict) and "jordan_basis" in node:
            basis_node = node["jordan_basis"]
            rest = {k: v for k, v in node.items() if k != "jordan_basis"}
            structure = _parse_structure(rest, w)
            _parse_jordan_basis(basis_node, w)
        else:
            structure = _parse_structure(node, w)

    if "urn" in raw:
        path = "urn"
        node = raw[path]
        if not isinstance(node, dict):
            w.fail(path, "expected an object")
        else:
            w.expect_keys(node, {"N", "mu", "n"}, {"N", "mu", "n"}, path)
            N = w.number(node, "N", path, kind=int, positive=True)
            n = w.number(node, "n", path, kind=int)
            mu = node.get("mu")
            if mu is not None and not isinstance(mu, list):
                w.fail(f"{path}.mu", "expected a list of rationals")
                mu = None
            if structure is not None and N is not None and mu is not None and n is not None:
                try:
                    UrnSpec(structure, N=N, mu=mu, n=n)
                except UrnModelError as exc:
                    w.fail(path, str(exc))

    if "regime" in raw:
        node = raw["regime"]
        path = "regime"
        if not isinstance(node, dict):
            w.fail(path, "expected an object")
        else:
            w.expect_keys(node, {"name", "subcase"}, {"name"}, path)
            if node.get("name") not in ("ibd", "tr", "tsd"):
                w.fail(f"{path}.name", "expected one of ibd, tr, tsd")
            if node.get("subcase") is not None and node["subcase"] not in (
                "small", "critical", "large",
            ):
                w.fail(f"{path}.subcase", "expected one of small, critical, large")

    if "ensemble" in raw:
        node = raw["ensemble"]
        path = "ensemble"
        if not isinstance(node, dict):
            w.fail(path, "expected an object")
        else:
            w.expect_keys(node, {"replicates", "grid", "base_seed"},
                          {"replicates", "grid"}, path)
            w.number(node, "replicates", path, kind=int, positive=True)
            w.number(node, "base_seed", path, kind=int)
            if not isinstance(node.get("grid"), list) or not node.get("grid"):
                w.fail(f"{path}.grid", "expected a non-empty list of times")

    if "suite" in raw:
        node = raw["suite"]
        if not isinstance(node, dict) or "name" not in node:
            w.fail("suite", "expected an object with a name")

    if "tolerances" in raw:
        node = raw["tolerances"]
        path = "tolerances"
        if not isinstance(node, dict):
            w.fail(path, "expected an object")
        else:
            for k in node:
                if k not in _TOLERANCE_KEYS:
                    w.fail(f"{path}.{k}", "unknown tolerance")

    if w.errors:
        raise ConfigError(w.errors)
    return ExperimentConfig(data=raw)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON form (sorted keys, two-space indent)."""
    return json.dumps(cfg.data, sort_keys=True, indent=2) + "\n"
