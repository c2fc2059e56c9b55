"""Scenario files: a YAML document declaring the plant, controller,
uncertainty sets, true parameters, signals and integration profiles.

Layout (every key is checked; unknown keys are rejected with their path and
line)::

    name: robotarm
    plant:      {A_m: [[..]], b: [..], c: [..]}
    controller: {k: 60, D: integrator | {num: [..], den: [..]}, Q: [[..]]}
    sets:       {theta_box: [[lo, hi], ..], delta0: .., delta: ..,
                 omega0: [lo, hi], omega: [lo, hi], d_sigma_per_s: ..}
    truth:      {theta: [..], omega: .., sigma: <signal name>}
    signals:    {<name>: {kind: sinusoid, amplitude: .., frequency_rad_s: ..,
                          phase_rad: ..}, ..}
    run:        {reference: <signal name>, tau_s: 0, loop_gain: 1, t_end_s: 10,
                 x0: [..], omega_hat0: 1}
    profiles:   {desk: {gamma_c: .., h_s: ..}, full: {..}}
    default_profile: desk

Numbers may also be written as short arithmetic strings over ``pi``, e.g.
``"pi/2"``.
"""
from __future__ import annotations

import ast
import copy
import math
import operator
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .l1ctrl import ControllerConfig, UncertaintySets, integrator
from .linsys import RationalTF
from .simulate import Scenario, Signal

__all__ = ["ScenarioError", "ScenarioFile", "load_scenario", "parse_scenario",
           "bundled_path", "PROFILE_ENV"]

PROFILE_ENV = "L1MARGIN_PROFILE"

_SCHEMA = {
    "name": str,
    "description": str,
    "plant": {"A_m": "matrix", "b": "vector", "c": "vector"},
    "controller": {"k": "number", "D": "filter", "Q": "matrix"},
    "sets": {"theta_box": "matrix", "delta0": "number", "delta": "number",
             "omega0": "vector", "omega": "vector", "d_sigma_per_s": "number"},
    "truth": {"theta": "vector", "omega": "number", "sigma": str},
    "signals": "signals",
    "run": {"reference": str, "tau_s": "number", "loop_gain": "number", "t_end_s": "number",
            "x0": "vector", "omega_hat0": "number", "record_every": "integer"},
    "profiles": "profiles",
    "default_profile": str,
}
_REQUIRED = {
    "": ["plant", "controller", "sets", "truth", "profiles"],
    "plant": ["A_m", "b", "c"],
    "controller": ["k"],
    "sets": ["theta_box", "delta0", "delta", "omega0", "omega"],
    "truth": ["theta", "omega"],
}
_SIGNAL_KEYS = {
    "zero": set(),
    "constant": {"amplitude"},
    "sinusoid": {"amplitude", "frequency_rad_s", "phase_rad"},
    "step": {"amplitude", "t0_s"},
}
_PROFILE_KEYS = {"gamma_c", "h_s", "t_end_s"}


class ScenarioError(ValueError):
    """Malformed scenario document; the message names the key path and line."""


# ---------------------------------------------------------------------------
# YAML with line tracking
# ---------------------------------------------------------------------------


def _line_map(node, path, lines):
    """Record the 1-based line of every key path; reject duplicate keys."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        seen = set()
        for knode, vnode in node.value:
            sub = f"{path}.{knode.value}" if path else str(knode.value)
            if knode.value in seen:
                raise ScenarioError(f"line {knode.start_mark.line + 1}: duplicate key '{sub}'")
            seen.add(knode.value)
            _line_map(vnode, sub, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, f"{path}[{i}]", lines)


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}


def _arith(text):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError
    return ev(ast.parse(text, mode="eval"))


class _Doc:
    def __init__(self, data, lines, source):
        self.data = data
        self.lines = lines
        self.source = source

    def fail(self, path, msg):
        line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        raise ScenarioError(f"{where}: key '{path}': {msg}")

    def number(self, value, path):
        if isinstance(value, bool):
            self.fail(path, "expected a number, got a boolean")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(_arith(value))
            except (ValueError, SyntaxError, ArithmeticError):
                pass
        self.fail(path, f"expected a number, got {value!r}")

    def vector(self, value, path):
        if not isinstance(value, list) or not value:
            self.fail(path, "expected a non-empty list of numbers")
        return np.array([self.number(v, f"{path}[{i}]") for i, v in enumerate(value)])

    def matrix(self, value, path):
        if not isinstance(value, list) or not value:
            self.fail(path, "expected a list of rows")
        rows = [self.vector(r, f"{path}[{i}]") for i, r in enumerate(value)]
        if len({r.size for r in rows}) != 1:
            self.fail(path, "rows have different lengths")
        return np.vstack(rows)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _check_keys(doc: _Doc, mapping, allowed, path):
    if not isinstance(mapping, dict):
        doc.fail(path, "expected a mapping")
    for key in mapping:
        if key not in allowed:
            sub = f"{path}.{key}" if path else key
            doc.fail(sub, f"unknown key (allowed: {', '.join(sorted(allowed))})")
    for key in _REQUIRED.get(path, []):
        if key not in mapping:
            doc.fail(path or "<root>", f"missing required key '{key}'")


def _signal(doc: _Doc, spec, path):
    if not isinstance(spec, dict) or "kind" not in spec:
        doc.fail(path, "signal needs a 'kind'")
    kind = spec["kind"]
    if kind not in _SIGNAL_KEYS:
        doc.fail(f"{path}.kind", f"unknown signal kind {kind!r}")
    allowed = _SIGNAL_KEYS[kind] | {"kind"}
    _check_keys(doc, spec, allowed, path)
    num = {k: doc.number(v, f"{path}.{k}") for k, v in spec.items() if k != "kind"}
    if kind == "zero":
        return Signal.zero()
    if kind == "constant":
        return Signal.constant(num.get("amplitude", 0.0))
    if kind == "step":
        return Signal.step(num.get("amplitude", 1.0), num.get("t0_s", 0.0))
    return Signal.sinusoid(num.get("amplitude", 1.0), num.get("frequency_rad_s", 0.0),
                           num.get("phase_rad", 0.0))


def _filter(doc: _Doc, value, path):
    if value == "integrator":
        return integrator()
    if isinstance(value, dict):
        _check_keys(doc, value, {"num", "den"}, path)
        if "num" not in value or "den" not in value:
            doc.fail(path, "filter needs 'num' and 'den' (ascending powers of s)")
        try:
            return RationalTF(doc.vector(value["num"], f"{path}.num"),
                              doc.vector(value["den"], f"{path}.den"))
        except ValueError as exc:
            doc.fail(path, str(exc))
    doc.fail(path, "expected 'integrator' or {num, den}")


@dataclass(frozen=True)
class ScenarioFile:
    """A validated scenario document with one profile selected."""

    document: dict
    profile: str
    source: str
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def build(self, tau=None, gain=None, gamma_c=None, t_end=None, h=None) -> Scenario:
        """Scenario with optional overrides of the delay, loop gain,
        adaptation gain, horizon and step."""
        return _build(self, tau, gain, gamma_c, t_end, h)

    @property
    def name(self):
        return self.document.get("name", "scenario")

    def resolved(self):
        """Document with only the selected profile, suitable for a manifest."""
        doc = copy.deepcopy(self.document)
        doc["profiles"] = {self.profile: doc["profiles"][self.profile]}
        doc["default_profile"] = self.profile
        return doc


def _validate(doc: _Doc, profile):
    data = doc.data
    _check_keys(doc, data, set(_SCHEMA), "")
    for section, spec in _SCHEMA.items():
        if isinstance(spec, dict) and section in data:
            _check_keys(doc, data[section], set(spec), section)
    signals = data.get("signals", {}) or {}
    if not isinstance(signals, dict):
        doc.fail("signals", "expected a mapping of named signals")
    for name, spec in signals.items():
        _signal(doc, spec, f"signals.{name}")
    profiles = data["profiles"]
    if not isinstance(profiles, dict) or not profiles:
        doc.fail("profiles", "expected a non-empty mapping of named profiles")
    for name, spec in profiles.items():
        _check_keys(doc, spec, _PROFILE_KEYS, f"profiles.{name}")
        for key in ("gamma_c", "h_s"):
            if key not in spec:
                doc.fail(f"profiles.{name}", f"missing required key '{key}'")
    if profile is None:
        profile = os.environ.get(PROFILE_ENV) or data.get("default_profile") or "desk"
    if profile not in profiles:
        doc.fail("profiles", f"profile {profile!r} not declared (have {sorted(profiles)})")
    for ref in (("truth", "sigma"), ("run", "reference")):
        name = data.get(ref[0], {}).get(ref[1])
        if name is not None and name not in signals:
            doc.fail(".".join(ref), f"signal {name!r} is not in the signal catalog")
    return profile


def parse_scenario(text, source="<string>", profile=None) -> ScenarioFile:
    """Parse and validate scenario text. ``profile`` overrides the
    environment variable and the document's ``default_profile``."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ScenarioError(f"{source}{line}: malformed YAML: {exc}") from None
    if node is None:
        raise ScenarioError(f"{source}: empty scenario document")
    lines = {}
    _line_map(node, "", lines)
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    doc = _Doc(data, lines, source)
    profile = _validate(doc, profile)
    sf = ScenarioFile(data, profile, source, lines)
    sf.build()
    return sf


def load_scenario(path, profile=None) -> ScenarioFile:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), str(path), profile)


def bundled_path(name="robotarm"):
    """Path of a scenario shipped with the package."""
    return str(resources.files("l1margin") / "data" / f"{name}.scenario")


def _build(sf: ScenarioFile, tau, gain, gamma_c, t_end, h) -> Scenario:
    doc = _Doc(sf.document, sf.lines, sf.source)
    d = sf.document
    prof = d["profiles"][sf.profile]
    pl, ct, st, tr = d["plant"], d["controller"], d["sets"], d["truth"]
    run = d.get("run", {}) or {}
    signals = {name: _signal(doc, spec, f"signals.{name}")
               for name, spec in (d.get("signals", {}) or {}).items()}
    try:
        sets = UncertaintySets(
            doc.matrix(st["theta_box"], "sets.theta_box"),
            doc.number(st["delta0"], "sets.delta0"),
            doc.number(st["delta"], "sets.delta"),
            tuple(doc.vector(st["omega0"], "sets.omega0")),
            tuple(doc.vector(st["omega"], "sets.omega")),
            doc.number(st.get("d_sigma_per_s", 0.0), "sets.d_sigma_per_s"),
        )
        D = _filter(doc, ct.get("D", "integrator"), "controller.D")
        Q = doc.matrix(ct["Q"], "controller.Q") if "Q" in ct else None
        gc = doc.number(prof["gamma_c"], f"profiles.{sf.profile}.gamma_c") \
            if gamma_c is None else float(gamma_c)
        cfg = ControllerConfig(doc.matrix(pl["A_m"], "plant.A_m"), doc.vector(pl["b"], "plant.b"),
                               doc.vector(pl["c"], "plant.c"), doc.number(ct["k"], "controller.k"),
                               gc, sets, Q, D)
        horizon = prof.get("t_end_s", run.get("t_end_s", 10.0))
        om0 = run.get("omega_hat0")
        return Scenario(
            cfg,
            doc.vector(tr["theta"], "truth.theta"),
            doc.number(tr["omega"], "truth.omega"),
            signals[tr["sigma"]] if "sigma" in tr else Signal.zero(),
            signals[run["reference"]] if "reference" in run else Signal.zero(),
            tau=doc.number(run.get("tau_s", 0.0), "run.tau_s") if tau is None else float(tau),
            gain=doc.number(run.get("loop_gain", 1.0), "run.loop_gain") if gain is None
            else float(gain),
            h=doc.number(prof["h_s"], f"profiles.{sf.profile}.h_s") if h is None else float(h),
            t_end=doc.number(horizon, "t_end_s") if t_end is None else float(t_end),
            x0=doc.vector(run["x0"], "run.x0") if "x0" in run else None,
            omega_hat0=None if om0 is None else doc.number(om0, "run.omega_hat0"),
            record_every=int(run.get("record_every", 1)),
        )
    except ScenarioError:
        raise
    except (ValueError, KeyError, np.linalg.LinAlgError) as exc:
        raise ScenarioError(f"{sf.source}: inconsistent scenario: {exc}") from None
