"""JSON scenario files.

Top-level keys (all but ``emitters`` and ``coupling_points`` optional)::

    name             string
    emitters         [{"label": str, "kind": "qubit" | "boson", "cutoff": int}]
    coupling_points  [{"emitter": index or label, "tau": float, "phi": float, "leg": int}]
    gamma            float (default 1)
    gamma_prime      float (default 0)
    field            {"alpha", "N", "M", "alpha_p", "N_p", "M_p", "bin_cutoff"}
    initial_state    {"levels": [int per emitter]} or {"vector": [complex]}
    simulation       {"dt", "T", "dt_int", "update", "stride", "n_traj", "seed",
                      "threads", "compare_dts", "leakage_tol"}
    outputs          {"observables": ["pop[i]", "corr[i][j]", "purity"]}
    df_scan          {"free": [[coefficients per point]], "grid": int}

Complex numbers are written as ``[re, im]`` (plain numbers are accepted).
``alpha`` is a number, ``[re, im]`` or ``{"times": [...], "values": [...],
"kind": "linear" | "step"}``.  Emitter and point indices are 0-based.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .collision import CollisionConfig
from .errors import GiantCMError, ScenarioError
from .field import ConstantAmplitude, GaussianInput, TabulatedAmplitude
from .geometry import CouplingPoint, EmitterSpec, Layout
from .operators import StateDM

DEFAULT_DT = 1e-3
DEFAULT_BIN_CUTOFF = 3
DEFAULT_GAUSSIAN_CUTOFF = 4

TOP_KEYS = {"name", "emitters", "coupling_points", "gamma", "gamma_prime", "field", "initial_state",
            "simulation", "outputs", "df_scan"}
EMITTER_KEYS = {"label", "kind", "cutoff"}
POINT_KEYS = {"emitter", "tau", "phi", "leg"}
FIELD_KEYS = {"alpha", "N", "M", "alpha_p", "N_p", "M_p", "bin_cutoff"}
STATE_KEYS = {"levels", "vector"}
SIM_KEYS = {"dt", "T", "dt_int", "update", "stride", "n_traj", "seed", "threads", "compare_dts", "leakage_tol"}
OUT_KEYS = {"observables"}
SCAN_KEYS = {"free", "grid"}

_OBS = re.compile(r"^(pop\[(\d+)\]|corr\[(\d+)\]\[(\d+)\]|purity)$")


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _complex(x, where, problems):
    if _is_num(x):
        return complex(x)
    if isinstance(x, list) and len(x) == 2 and all(_is_num(v) for v in x):
        return complex(x[0], x[1])
    problems.append(f"{where}: expected a number or [re, im], got {x!r}")
    return 0j


def _cjson(z: complex):
    z = complex(z)
    return [z.real, z.imag]


def _unknown(d: dict, allowed: set, where: str, problems: list):
    for k in d:
        if k not in allowed:
            problems.append(f"{where}: unknown key {k!r}")


def _num(d, key, default, where, problems, positive=False, integer=False):
    v = d.get(key, default)
    if v is None:
        return None
    ok = (isinstance(v, int) and not isinstance(v, bool)) if integer else _is_num(v)
    if not ok:
        problems.append(f"{where}.{key}: expected {'an integer' if integer else 'a number'}, got {v!r}")
        return default
    if positive and v <= 0:
        problems.append(f"{where}.{key}: must be positive, got {v!r}")
    return v


def _amplitude(x, where, problems):
    if isinstance(x, dict):
        _unknown(x, {"times", "values", "kind"}, where, problems)
        times = x.get("times")
        values = x.get("values")
        if not isinstance(times, list) or not isinstance(values, list) or len(times) != len(values) or not times:
            problems.append(f"{where}: tabulated amplitude needs equal-length 'times' and 'values' lists")
            return {"times": [0.0], "values": [[0.0, 0.0]], "kind": "linear"}
        kind = x.get("kind", "linear")
        if kind not in ("linear", "step"):
            problems.append(f"{where}.kind: must be 'linear' or 'step'")
        vals = [_cjson(_complex(v, f"{where}.values[{i}]", problems)) for i, v in enumerate(values)]
        return {"times": [float(t) if _is_num(t) else 0.0 for t in times], "values": vals, "kind": kind}
    return _cjson(_complex(x, where, problems))


def normalize(raw: dict) -> dict:
    """Validate a scenario dict and fill defaults; raises ScenarioError listing every problem."""
    problems = []
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object", ["<root>: not an object"])
    _unknown(raw, TOP_KEYS, "<root>", problems)
    out = {"name": str(raw.get("name", "scenario"))}

    ems = raw.get("emitters")
    if not isinstance(ems, list) or not ems:
        problems.append("emitters: required non-empty list")
        ems = []
    emitters = []
    for i, e in enumerate(ems):
        w = f"emitters[{i}]"
        if not isinstance(e, dict):
            problems.append(f"{w}: expected an object")
            continue
        _unknown(e, EMITTER_KEYS, w, problems)
        kind = e.get("kind", "qubit")
        if kind not in ("qubit", "boson"):
            problems.append(f"{w}.kind: must be 'qubit' or 'boson', got {kind!r}")
        cutoff = _num(e, "cutoff", 2 if kind == "qubit" else 3, w, problems, integer=True)
        if kind == "qubit":
            cutoff = 2
        elif cutoff is not None and cutoff < 2:
            problems.append(f"{w}.cutoff: boson cutoff must be >= 2")
        emitters.append({"label": str(e.get("label", f"e{i}")), "kind": kind, "cutoff": cutoff})
    labels = [e["label"] for e in emitters]
    if len(set(labels)) != len(labels):
        problems.append(f"emitters: labels must be unique, got {labels}")
    out["emitters"] = emitters

    pts = raw.get("coupling_points")
    if not isinstance(pts, list) or not pts:
        problems.append("coupling_points: required non-empty list")
        pts = []
    points = []
    for i, p in enumerate(pts):
        w = f"coupling_points[{i}]"
        if not isinstance(p, dict):
            problems.append(f"{w}: expected an object")
            continue
        _unknown(p, POINT_KEYS, w, problems)
        em = p.get("emitter")
        if isinstance(em, str):
            if em not in labels:
                problems.append(f"{w}.emitter: unknown label {em!r}")
                em = 0
            else:
                em = labels.index(em)
        elif not (isinstance(em, int) and not isinstance(em, bool)) or not 0 <= em < max(len(emitters), 1):
            problems.append(f"{w}.emitter: expected an emitter index or label, got {em!r}")
            em = 0
        tau = _num(p, "tau", None, w, problems)
        if tau is None:
            problems.append(f"{w}.tau: required")
            tau = 0.0
        phi = _num(p, "phi", 0.0, w, problems)
        entry = {"emitter": em, "tau": float(tau), "phi": float(phi)}
        if p.get("leg") is not None:
            entry["leg"] = _num(p, "leg", None, w, problems, integer=True)
        points.append(entry)
    out["coupling_points"] = points

    out["gamma"] = float(_num(raw, "gamma", 1.0, "<root>", problems))
    out["gamma_prime"] = float(_num(raw, "gamma_prime", 0.0, "<root>", problems))

    f = raw.get("field", {})
    if not isinstance(f, dict):
        problems.append("field: expected an object")
        f = {}
    _unknown(f, FIELD_KEYS, "field", problems)
    fld = {
        "alpha": _amplitude(f.get("alpha", 0.0), "field.alpha", problems),
        "N": float(_num(f, "N", 0.0, "field", problems)),
        "M": _cjson(_complex(f.get("M", 0.0), "field.M", problems)),
        "alpha_p": _amplitude(f.get("alpha_p", 0.0), "field.alpha_p", problems),
        "N_p": float(_num(f, "N_p", 0.0, "field", problems)),
        "M_p": _cjson(_complex(f.get("M_p", 0.0), "field.M_p", problems)),
    }
    gaussian = fld["N"] != 0 or fld["M"] != [0.0, 0.0] or fld["N_p"] != 0 or fld["M_p"] != [0.0, 0.0]
    fld["bin_cutoff"] = _num(f, "bin_cutoff", DEFAULT_GAUSSIAN_CUTOFF if gaussian else DEFAULT_BIN_CUTOFF,
                             "field", problems, integer=True)
    out["field"] = fld

    st = raw.get("initial_state", {"levels": [0] * len(emitters)})
    if not isinstance(st, dict):
        problems.append("initial_state: expected an object")
        st = {"levels": [0] * len(emitters)}
    _unknown(st, STATE_KEYS, "initial_state", problems)
    if "vector" in st and "levels" in st:
        problems.append("initial_state: give either 'levels' or 'vector', not both")
    if "vector" in st:
        vec = st["vector"]
        if not isinstance(vec, list):
            problems.append("initial_state.vector: expected a list")
            vec = []
        out["initial_state"] = {"vector": [_cjson(_complex(v, f"initial_state.vector[{i}]", problems))
                                           for i, v in enumerate(vec)]}
    else:
        lv = st.get("levels", [0] * len(emitters))
        if not isinstance(lv, list) or len(lv) != len(emitters) or not all(isinstance(x, int) for x in lv):
            problems.append("initial_state.levels: expected one integer level per emitter")
            lv = [0] * len(emitters)
        for j, (x, e) in enumerate(zip(lv, emitters)):
            if not 0 <= x < (e["cutoff"] or 2):
                problems.append(f"initial_state.levels[{j}]: level {x} outside emitter space")
        out["initial_state"] = {"levels": lv}

    s = raw.get("simulation", {})
    if not isinstance(s, dict):
        problems.append("simulation: expected an object")
        s = {}
    _unknown(s, SIM_KEYS, "simulation", problems)
    sim = {
        "dt": float(_num(s, "dt", DEFAULT_DT, "simulation", problems, positive=True)),
        "T": float(_num(s, "T", 1.0, "simulation", problems, positive=True)),
        "dt_int": _num(s, "dt_int", None, "simulation", problems, positive=True),
        "update": s.get("update", "exact_unitary"),
        "stride": _num(s, "stride", 1, "simulation", problems, positive=True, integer=True),
        "n_traj": _num(s, "n_traj", 100, "simulation", problems, positive=True, integer=True),
        "seed": _num(s, "seed", 0, "simulation", problems, integer=True),
        "threads": _num(s, "threads", 1, "simulation", problems, positive=True, integer=True),
        "compare_dts": s.get("compare_dts", [4e-3, 2e-3, 1e-3]),
        "leakage_tol": float(_num(s, "leakage_tol", 1e-6, "simulation", problems, positive=True)),
    }
    if sim["update"] not in ("exact_unitary", "second_order"):
        problems.append(f"simulation.update: must be 'exact_unitary' or 'second_order', got {sim['update']!r}")
    if not isinstance(sim["compare_dts"], list) or not all(_is_num(x) and x > 0 for x in sim["compare_dts"]):
        problems.append("simulation.compare_dts: expected a list of positive numbers")
        sim["compare_dts"] = [4e-3, 2e-3, 1e-3]
    sim["compare_dts"] = [float(x) for x in sim["compare_dts"]]
    out["simulation"] = sim

    o = raw.get("outputs", {})
    if not isinstance(o, dict):
        problems.append("outputs: expected an object")
        o = {}
    _unknown(o, OUT_KEYS, "outputs", problems)
    obs = o.get("observables", [f"pop[{j}]" for j in range(len(emitters))] + ["purity"])
    if not isinstance(obs, list):
        problems.append("outputs.observables: expected a list")
        obs = []
    for name in obs:
        m = _OBS.match(name) if isinstance(name, str) else None
        if m is None:
            problems.append(f"outputs.observables: unknown observable {name!r}")
            continue
        idx = [int(g) for g in m.groups()[1:] if g is not None]
        if any(i >= len(emitters) for i in idx):
            problems.append(f"outputs.observables: {name!r} references a missing emitter")
    out["outputs"] = {"observables": list(obs)}

    if "df_scan" in raw:
        d = raw["df_scan"]
        if not isinstance(d, dict):
            problems.append("df_scan: expected an object")
            d = {}
        _unknown(d, SCAN_KEYS, "df_scan", problems)
        scan = {"grid": _num(d, "grid", 64, "df_scan", problems, integer=True)}
        if "free" in d:
            scan["free"] = d["free"]
        out["df_scan"] = scan

    if not problems:
        try:
            sc = Scenario(out)
            sc.layout()
            sc.gaussian_input()
            sc.initial_state()
        except ScenarioError:
            raise
        except GiantCMError as exc:
            problems.append(str(exc))
    if problems:
        raise ScenarioError(f"scenario has {len(problems)} problem(s): " + "; ".join(problems), problems)
    return out


@dataclass(frozen=True)
class Scenario:
    data: dict

    def __eq__(self, other):
        return isinstance(other, Scenario) and json.dumps(self.data, sort_keys=True) == json.dumps(
            other.data, sort_keys=True)

    def __hash__(self):
        return hash(json.dumps(self.data, sort_keys=True))

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def sim(self) -> dict:
        return self.data["simulation"]

    @property
    def bin_cutoff(self) -> int:
        return self.data["field"]["bin_cutoff"]

    def layout(self) -> Layout:
        ems = tuple(EmitterSpec(e["kind"], e["cutoff"], e["label"]) for e in self.data["emitters"])
        pts = tuple(CouplingPoint(p["emitter"], p["tau"], p["phi"], p.get("leg")) for p in self.data["coupling_points"])
        return Layout(ems, pts, self.data["gamma"], self.data["gamma_prime"])

    def gaussian_input(self) -> GaussianInput:
        f = self.data["field"]
        return GaussianInput(_amp(f["alpha"]), f["N"], complex(*f["M"]), _amp(f["alpha_p"]), f["N_p"],
                             complex(*f["M_p"]))

    def initial_state(self) -> np.ndarray:
        """Initial pure state vector of the emitters."""
        st = self.data["initial_state"]
        dims = [e["cutoff"] for e in self.data["emitters"]]
        if "vector" in st:
            v = np.array([complex(*x) for x in st["vector"]])
            if len(v) != int(np.prod(dims)):
                raise ScenarioError("initial_state.vector has the wrong length",
                                    [f"initial_state.vector: expected {int(np.prod(dims))} amplitudes"])
            n = np.linalg.norm(v)
            if n == 0:
                raise ScenarioError("initial_state.vector is zero", ["initial_state.vector: zero norm"])
            return v / n
        v = np.array([1.0 + 0j])
        for lvl, d in zip(st["levels"], dims):
            e = np.zeros(d, dtype=complex)
            e[lvl] = 1.0
            v = np.kron(v, e)
        return v

    def initial_dm(self) -> StateDM:
        return StateDM.from_pure(self.initial_state(), self.layout().dims)

    def collision_config(self, dt: float | None = None, stride: int | None = None) -> CollisionConfig:
        dt = self.sim["dt"] if dt is None else dt
        n = int(round(self.sim["T"] / dt))
        return CollisionConfig(dt=dt, n_steps=max(n, 1), bin_cutoff=self.bin_cutoff, update=self.sim["update"],
                               stride=self.sim["stride"] if stride is None else stride,
                               leakage_tol=self.sim["leakage_tol"])

    def observables(self) -> list:
        """[(column name, matrix, complex?)] on the emitter space."""
        from .geometry import build_collective_ops

        loc = [a.data for a in build_collective_ops(self.layout()).local]
        out = []
        for name in self.data["outputs"]["observables"]:
            m = _OBS.match(name)
            if name == "purity":
                out.append((name, None, False))
            elif m.group(2) is not None:
                j = int(m.group(2))
                out.append((name, loc[j].conj().T @ loc[j], False))
            else:
                i, j = int(m.group(3)), int(m.group(4))
                out.append((name, loc[i].conj().T @ loc[j], True))
        return out

    def to_json(self) -> dict:
        return copy.deepcopy(self.data)


def _amp(a):
    if isinstance(a, dict):
        return TabulatedAmplitude(a["times"], [complex(*v) for v in a["values"]], a["kind"])
    return ConstantAmplitude(complex(*a))


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        where = f"{source}:{exc.lineno}:{exc.colno}"
        raise ScenarioError(f"{where}: invalid JSON: {exc.msg}", [f"{where}: {exc.msg}"]) from None
    return Scenario(normalize(raw))


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}", [f"{path}: not found"]) from None
    except UnicodeDecodeError as exc:
        raise ScenarioError(f"{path}: not valid UTF-8", [f"{path}: byte {exc.start} is not UTF-8"]) from None
    return parse_scenario_text(text, str(path))


def serialize_scenario(sc: Scenario) -> str:
    return json.dumps(sc.to_json(), indent=2) + "\n"
