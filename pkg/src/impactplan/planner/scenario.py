"""Scenario files: systems, regions, specification and planner settings."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import Box, HPolytope, region_from_spec
from ..impact import BodyParams
from ..stl import Formula, STLError, bind_regions, horizon, parse_formula, systems_of

MODES = ("spatially_robust", "impact_robust")
_MODE_ALIASES = {"spatial": "spatially_robust", "spatially_robust": "spatially_robust",
                 "impact-robust": "impact_robust", "impact_robust": "impact_robust",
                 "robust": "impact_robust"}


class ScenarioError(ValueError):
    pass


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ScenarioError(f"unknown planning mode {mode!r}") from None


@dataclass
class SystemSpec:
    name: str
    kind: str                       # robot | object
    params: BodyParams
    initial: np.ndarray
    final: np.ndarray | None = None
    initial_velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    final_velocity: np.ndarray | None = None
    n_segments: int = 1
    initial_half_widths: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def is_robot(self) -> bool:
        return self.kind == "robot"


@dataclass
class Scenario:
    name: str
    t0: float
    tf: float
    mode: str
    robots: dict
    objects: dict
    workspace: HPolytope
    regions: dict
    obstacles: dict
    spec_text: str
    spec: Formula
    robot_velocity: Box
    object_velocity: Box | None
    attenuation: dict
    planner: dict
    mpc: dict
    geometry_source: str = "exact"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def systems(self) -> dict:
        return {**self.robots, **self.objects}

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    def body(self, name: str) -> BodyParams:
        return self.systems[name].params

    def with_budgets(self, robots: int | None = None, objects: int | None = None) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        b = raw.setdefault("budgets", {})
        if robots is not None:
            b["robots"] = int(robots)
            for s in raw["systems"].get("robots", {}).values():
                s.pop("segments", None)
        if objects is not None:
            b["objects"] = int(objects)
            for s in raw["systems"].get("objects", {}).values():
                s.pop("segments", None)
        return scenario_from_dict(raw)

    def with_mode(self, mode: str) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw["mode"] = normalize_mode(mode)
        return scenario_from_dict(raw)

    def with_bodies(self, mass_factor: float = 1.0, radius: float | None = None) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        for group in raw["systems"].values():
            for s in group.values():
                s["mass"] = s.get("mass", 14.0) * mass_factor
                if radius is not None:
                    s["radius"] = radius
        return scenario_from_dict(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _vec(x, name, dim=2):
    a = np.asarray(x, dtype=float)
    if a.shape != (dim,):
        raise ScenarioError(f"{name} must be a {dim}-vector, got {x!r}")
    return a


def _system(name, kind, d, default_n, defaults) -> SystemSpec:
    try:
        params = BodyParams(float(d.get("mass", defaults["mass"])),
                            float(d.get("radius", defaults["radius"])),
                            float(d.get("restitution", defaults["restitution"])))
    except Exception as exc:
        raise ScenarioError(f"{name}: {exc}") from exc
    if "initial" not in d:
        raise ScenarioError(f"{name}: missing initial position")
    hw = np.zeros(2)
    if "initial_box" in d:
        ib = d["initial_box"]
        if "half_widths" in ib:
            hw = _vec(ib["half_widths"], f"{name}.initial_box.half_widths")
        else:
            lo, hi = np.asarray(ib["box"][0], float), np.asarray(ib["box"][1], float)
            hw = 0.5 * (hi - lo)
        if np.any(hw < 0):
            raise ScenarioError(f"{name}: initial box half-widths must be non-negative")
    n = int(d.get("segments", default_n))
    if n < 1:
        raise ScenarioError(f"{name}: segment budget must be at least 1")
    return SystemSpec(
        name=name, kind=kind, params=params,
        initial=_vec(d["initial"], f"{name}.initial"),
        final=None if d.get("final") is None else _vec(d["final"], f"{name}.final"),
        initial_velocity=_vec(d.get("initial_velocity", [0.0, 0.0]), f"{name}.initial_velocity"),
        final_velocity=(None if d.get("final_velocity", [0.0, 0.0] if kind == "robot" else None) is None
                        else _vec(d.get("final_velocity", [0.0, 0.0]), f"{name}.final_velocity")),
        n_segments=n, initial_half_widths=hw)


def scenario_from_dict(d: dict) -> Scenario:
    d = copy.deepcopy(d)
    for key in ("systems", "workspace", "spec", "horizon"):
        if key not in d:
            raise ScenarioError(f"scenario is missing key {key!r}")
    t0, tf = (float(v) for v in d["horizon"])
    if not tf > t0:
        raise ScenarioError(f"horizon must satisfy t0 < tf, got [{t0}, {tf}]")
    mode = normalize_mode(d.get("mode", "spatially_robust"))
    budgets = d.get("budgets", {})
    nr, no = int(budgets.get("robots", 5)), int(budgets.get("objects", 4))
    defaults = {"mass": 14.0, "radius": 0.15, "restitution": 1.0, **d.get("defaults", {})}
    robots = {k: _system(k, "robot", v, nr, defaults) for k, v in d["systems"].get("robots", {}).items()}
    objects = {k: _system(k, "object", v, no, defaults) for k, v in d["systems"].get("objects", {}).items()}
    if not robots:
        raise ScenarioError("scenario needs at least one robot")
    if set(robots) & set(objects):
        raise ScenarioError("robot and object names must be distinct")
    try:
        workspace = region_from_spec(d["workspace"])
        regions = {k: region_from_spec(v) for k, v in d.get("regions", {}).items()}
        obstacles = {k: region_from_spec(v) for k, v in d.get("obstacles", {}).items()}
    except Exception as exc:
        raise ScenarioError(f"bad region: {exc}") from exc
    regions.setdefault("workspace", workspace)
    for k, v in obstacles.items():
        regions.setdefault(k, v)
    for s in list(robots.values()) + list(objects.values()):
        if not workspace.contains(s.initial[None, :], tol=1e-9)[0]:
            raise ScenarioError(f"{s.name}: initial position lies outside the workspace")
    spec_text = d["spec"]
    try:
        spec = parse_formula(spec_text, regions, list(robots) + list(objects))
    except STLError as exc:
        raise ScenarioError(f"spec: {exc}") from exc
    if t0 + horizon(spec) > tf + 1e-9:
        raise ScenarioError(f"spec horizon {horizon(spec)} exceeds the planning horizon [{t0}, {tf}]")
    vb = d.get("velocity_bounds", {})
    rv = vb.get("robots", [[-0.5, -0.5], [0.5, 0.5]])
    ov = vb.get("objects")
    planner = {"hdot_min": 1e-3, "delta_max": 0.5, "rho_max": None, "impact_hdot": None,
               "collision_eps": 1e-3, "robot_object_clearance": True, "knot_clearance": True, "time_limit": 600.0, "gap": 1e-6, "attenuate": True,
               **d.get("planner", {})}
    att = {"r_ddot": 1e-3, "h_ddot": 1e-6, **d.get("attenuation", {})}
    mpc = d.get("mpc", {})
    return Scenario(
        name=d.get("name", "scenario"), t0=t0, tf=tf, mode=mode, robots=robots, objects=objects,
        workspace=workspace, regions=regions, obstacles=obstacles, spec_text=spec_text, spec=spec,
        robot_velocity=Box(rv[0], rv[1]), object_velocity=None if ov is None else Box(ov[0], ov[1]),
        attenuation=att, planner=planner, mpc=mpc,
        geometry_source=d.get("geometry_source", "exact"), raw=d)


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scenario file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{p}: invalid JSON ({exc})") from exc
    return scenario_from_dict(d)
