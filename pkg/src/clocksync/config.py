"""Scenario files: a YAML document describing one run or sweep.

Grammar (every section except ``scenario`` is optional)::

    scenario:
      builtin: eddington            # eddington | einstein | entangled | postselected_eddington
      params: {omega: 1.0, transit: 1.0, measure_delay: 3.0}
    # or an inline timeline
    #   subsystems: [{id: clock, owner: Alice, levels: [[0, 1], [1, 1]]}]
    #   events:                       # rows of [actor, proper_time, action, params]
    #     - [Alice, 0, prepare, {targets: [clock], state: plus}]
    #     - [Alice, 0, send, {subsystem: clock, transit: 1}]
    #     - [Bob, 0, receive, {subsystem: clock}]
    #     - [Bob, 3, measure, {target: clock, bases: [X, Y], label: clock}]
    #   horizon_A: 0
    #   horizon_B: 3
    channel: {model: mixture, epsilon: 0.5}   # noiseless | mixture | random_delay | fully_random
    frame: {delta: 0.3}                       # or delta_grid: [..] / {start, stop, num}; t0_A
    run: {mode: sampled, shots: 10000}        # or {mode: exact}
    sweep: {parameter: epsilon, values: [0, 0.5, 1]}
    estimate: {grid: {start: -1, stop: 1, num: 201}}
    observer: Bob
    output: {format: csv}                     # csv | json
    seed: 7

Complex arrays (states, unitaries, ``chi``) are written as
``{re: [...], im: [...]}``; a plain list is read as real.
"""
from __future__ import annotations

import inspect
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import yaml

from .channel import MODELS, ModelError, model_from_dict
from .hilbert import EnergySpec, Owner, StateError
from .protocols import (
    BUILTINS,
    ApplyLocal,
    ClockFrame,
    Event,
    Measure,
    PostSelect,
    Prepare,
    Receive,
    ScenarioError,
    Send,
    SubsystemDecl,
    Timeline,
)

SECTIONS = ("scenario", "channel", "frame", "run", "sweep", "estimate", "observer", "output", "seed")
DURATIONS = {"transit", "measure_delay", "transit_out", "transit_back", "send_at", "dwell", "readout"}
FORMATS = ("csv", "json")
MODEL_PARAMS = {"noiseless": {"fixed_delay"}, "mixture": {"epsilon"}, "random_delay": {"sigma", "distribution"},
                "fully_random": set()}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass
class ScenarioConfig:
    scenario: dict
    channel: dict = field(default_factory=lambda: {"model": "noiseless"})
    delta: float | None = None
    delta_grid: tuple | None = None
    t0_A: float = 0.0
    mode: str = "exact"
    shots: int | None = None
    sweep_parameter: str | None = None
    sweep_values: tuple | None = None
    estimate_grid: tuple | None = None
    observer: str = "Bob"
    output_format: str = "csv"
    seed: int | None = None

    @property
    def sampled(self) -> bool:
        return self.mode == "sampled"

    def noise_parameter(self) -> str | None:
        keys = sorted(MODEL_PARAMS.get(self.channel.get("model"), set()) - {"distribution"})
        return keys[0] if keys else None

    def true_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        return (min(self.delta_grid) + max(self.delta_grid)) / 2

    def fit_grid(self) -> tuple:
        return self.estimate_grid if self.estimate_grid is not None else self.delta_grid


# -- decoding helpers ---------------------------------------------------------

def complex_array(value):
    if isinstance(value, dict):
        extra = set(value) - {"re", "im"}
        if extra or "re" not in value:
            raise ValueError("complex arrays are written as {re: [...], im: [...]}")
        re = np.asarray(value["re"], dtype=float)
        im = np.asarray(value.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != im.shape:
            raise ValueError(f"re and im shapes differ: {re.shape} vs {im.shape}")
        return re + 1j * im
    return np.asarray(value, dtype=float).astype(complex)


def encode_complex(value):
    """Inverse of :func:`complex_array` for YAML output."""
    a = np.asarray(value)
    if np.iscomplexobj(a):
        return {"re": a.real.tolist(), "im": a.imag.tolist()}
    return a.tolist()


def _grid(value, where, errors):
    if isinstance(value, dict):
        try:
            num = int(value["num"])
            if num < 1:
                raise ValueError
            return tuple(float(x) for x in np.linspace(float(value["start"]), float(value["stop"]), num))
        except (KeyError, TypeError, ValueError):
            errors.append(f"{where}: a grid mapping needs start, stop and num >= 1")
            return None
    if isinstance(value, (list, tuple)) and value:
        try:
            return tuple(float(x) for x in value)
        except (TypeError, ValueError):
            errors.append(f"{where}: grid entries must be numbers")
            return None
    errors.append(f"{where}: expected a nonempty list or {{start, stop, num}}")
    return None


def _number(value, where, errors, kind=float):
    if isinstance(value, bool):
        errors.append(f"{where}: expected a number, got {value!r}")
        return None
    try:
        return kind(value)
    except (TypeError, ValueError):
        errors.append(f"{where}: expected a number, got {value!r}")
        return None


def _levels(value) -> EnergySpec:
    if isinstance(value, (int, float)):
        return EnergySpec.qubit(float(value))
    return EnergySpec(tuple((float(w), int(g)) for w, g in value))


# -- channel ----------------------------------------------------------------

def check_channel(ch: dict, errors: list, where: str = "channel") -> None:
    if not isinstance(ch, dict):
        errors.append(f"{where}: expected a mapping with a 'model' key")
        return
    name = ch.get("model")
    if name not in MODELS:
        errors.append(f"{where}.model: unknown model {name!r}; expected one of {sorted(MODELS)}")
        return
    for key in set(ch) - {"model"} - MODEL_PARAMS[name]:
        errors.append(f"{where}.{key}: not a parameter of {name} (allowed: {sorted(MODEL_PARAMS[name])})")
    if "epsilon" in ch:
        eps = _number(ch["epsilon"], f"{where}.epsilon", errors)
        if eps is not None and not 0.0 <= eps <= 1.0:
            errors.append(f"{where}.epsilon = {ch['epsilon']!r} is outside the legal range [0, 1]")
    if name == "mixture" and "epsilon" not in ch:
        errors.append(f"{where}.epsilon: required for the mixture model")
    if "sigma" in ch:
        sig = _number(ch["sigma"], f"{where}.sigma", errors)
        if sig is not None and sig < 0:
            errors.append(f"{where}.sigma = {ch['sigma']!r} must be >= 0")
    if name == "random_delay" and "sigma" not in ch:
        errors.append(f"{where}.sigma: required for the random_delay model")
    if "fixed_delay" in ch:
        _number(ch["fixed_delay"], f"{where}.fixed_delay", errors)
    if ch.get("distribution", "gaussian") not in ("gaussian", "uniform"):
        errors.append(f"{where}.distribution: expected gaussian or uniform, got {ch['distribution']!r}")


def build_channel(ch: dict):
    data = {k: (float(v) if k != "distribution" and k != "model" else v) for k, v in ch.items()}
    return model_from_dict(data)


# -- scenario ---------------------------------------------------------------

def _builtin_signature(name):
    return inspect.signature(BUILTINS[name]).parameters


def check_builtin(sc: dict, errors: list) -> None:
    name = sc.get("builtin")
    if name not in BUILTINS:
        errors.append(f"scenario.builtin: unknown scenario {name!r}; expected one of {sorted(BUILTINS)}")
        return
    params = sc.get("params") or {}
    if not isinstance(params, dict):
        errors.append("scenario.params: expected a mapping")
        return
    sig = _builtin_signature(name)
    allowed = {k for k in sig if k not in ("channel", "delta")}
    for key in params:
        if key not in allowed:
            errors.append(f"scenario.params.{key}: unknown parameter for {name} (allowed: {sorted(allowed)})")
    for key, p in sig.items():
        if key in allowed and p.default is inspect.Parameter.empty and key not in params:
            errors.append(f"scenario.params.{key}: required by {name}")
    for key in DURATIONS & set(params):
        if params[key] is None and key == "readout":
            continue
        v = _number(params[key], f"scenario.params.{key}", errors)
        if v is not None and v < 0:
            errors.append(f"scenario.params.{key} = {params[key]!r}: durations must be >= 0")
    if "omega" in params:
        v = _number(params["omega"], "scenario.params.omega", errors)
        if v is not None and v <= 0:
            errors.append(f"scenario.params.omega = {params['omega']!r} must be > 0")


def _builtin_kwargs(name: str, params: dict) -> dict:
    out = {}
    for key, v in params.items():
        if key == "chi":
            out[key] = complex_array(v)
        elif key in ("a_levels", "b_levels"):
            out[key] = _levels(v)
        elif key in ("basis",) or v is None:
            out[key] = v
        elif key == "outcome":
            out[key] = int(v)
        else:
            out[key] = float(v)
    return out


_ACTIONS = {
    "prepare": ({"targets"}, {"state"}),
    "apply": ({"targets", "unitary"}, {"condition"}),
    "send": ({"subsystem", "transit"}, {"abandon"}),
    "receive": ({"subsystem"}, set()),
    "measure": ({"target"}, {"bases", "label"}),
    "postselect": ({"target", "outcome"}, {"basis", "label"}),
}
_PLACEMENT = {"after", "occurrence"}


def _matrix_or_name(v):
    return v if isinstance(v, str) else complex_array(v)


def _action(kind: str, p: dict):
    if kind == "prepare":
        return Prepare(tuple(p["targets"]), _matrix_or_name(p.get("state", "ground")))
    if kind == "apply":
        cond = p.get("condition")
        return ApplyLocal(tuple(p["targets"]), _matrix_or_name(p["unitary"]),
                          None if cond is None else (str(cond[0]), str(cond[1])))
    if kind == "send":
        return Send(str(p["subsystem"]), float(p["transit"]), bool(p.get("abandon", False)))
    if kind == "receive":
        return Receive(str(p["subsystem"]))
    if kind == "measure":
        bases = p.get("bases", ["Z"])
        bases = (bases,) if isinstance(bases, str) else tuple(_matrix_or_name(b) for b in bases)
        return Measure(str(p["target"]), bases, str(p.get("label", "m")))
    return PostSelect(str(p["target"]), int(p["outcome"]), _matrix_or_name(p.get("basis", "Z")),
                      str(p.get("label", "postselect")))


def _custom_parts(sc: dict, errors: list):
    subs, events = [], []
    for i, row in enumerate(sc.get("subsystems") or []):
        where = f"scenario.subsystems[{i}]"
        try:
            spec = _levels(row["levels"] if "levels" in row else row["qubit"])
            subs.append(SubsystemDecl(str(row["id"]), spec, Owner(row.get("owner", "Alice"))))
        except (KeyError, TypeError) as exc:
            errors.append(f"{where}: needs id, owner and levels (or qubit: omega) ({exc})")
        except (ValueError, StateError) as exc:
            errors.append(f"{where}: {exc}")
    if not subs:
        errors.append("scenario.subsystems: at least one subsystem is required")
    rows = sc.get("events")
    if not isinstance(rows, list) or not rows:
        errors.append("scenario.events: expected a nonempty list of [actor, proper_time, action, params] rows")
        return subs, events
    for i, row in enumerate(rows):
        where = f"scenario.events[{i}]"
        if not isinstance(row, (list, tuple)) or len(row) not in (3, 4):
            errors.append(f"{where}: expected [actor, proper_time, action, params]")
            continue
        actor, t, kind = row[:3]
        params = dict(row[3]) if len(row) == 4 and row[3] else {}
        if actor not in ("Alice", "Bob"):
            errors.append(f"{where}: actor must be Alice or Bob, got {actor!r}")
            continue
        t = _number(t, f"{where}.proper_time", errors)
        if t is None:
            continue
        if t < 0:
            errors.append(f"{where}.proper_time = {row[1]!r}: durations must be >= 0")
        if kind not in _ACTIONS:
            errors.append(f"{where}: unknown action {kind!r}; expected one of {sorted(_ACTIONS)}")
            continue
        need, opt = _ACTIONS[kind]
        missing = need - set(params)
        extra = set(params) - need - opt - _PLACEMENT
        if missing:
            errors.append(f"{where}: {kind} needs {sorted(missing)}")
        if extra:
            errors.append(f"{where}: unknown fields {sorted(extra)} for {kind}")
        if missing or extra:
            continue
        if kind == "send" and float(params["transit"]) < 0:
            errors.append(f"{where}.transit = {params['transit']!r}: durations must be >= 0")
        try:
            events.append(Event(Owner(actor), t, _action(kind, params), params.get("after"),
                                int(params.get("occurrence", 0))))
        except (TypeError, ValueError, ScenarioError) as exc:
            errors.append(f"{where}: {exc}")
    return subs, events


def build_timeline(cfg: ScenarioConfig, sweep_value: float | None = None) -> Timeline:
    """Timeline for one sweep row; the frame is set from ``cfg.true_delta()``."""
    channel = dict(cfg.channel)
    params = dict(cfg.scenario.get("params") or {})
    if sweep_value is not None:
        if cfg.sweep_parameter in MODEL_PARAMS.get(channel["model"], ()):
            channel[cfg.sweep_parameter] = sweep_value
        else:
            params[cfg.sweep_parameter] = sweep_value
    model = build_channel(channel)
    sc = cfg.scenario
    if "builtin" in sc:
        tl = BUILTINS[sc["builtin"]](**_builtin_kwargs(sc["builtin"], params), channel=model)
    else:
        errors: list = []
        subs, events = _custom_parts(sc, errors)
        if errors:
            raise ConfigError(errors)
        tl = Timeline(subs, events, model, ClockFrame(), sc.get("horizon_A"), sc.get("horizon_B"))
    return tl.with_frame(ClockFrame.from_delta(cfg.true_delta(), cfg.t0_A))


# -- parse / serialize ---------------------------------------------------------

def parse_config(text: str, *, seed: int | None = None, output_format: str | None = None) -> ScenarioConfig:
    """Validate a YAML scenario file; raise :class:`ConfigError` listing every problem."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"not valid YAML: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"])
    return from_dict(data, seed=seed, output_format=output_format)


def from_dict(data: dict, *, seed: int | None = None, output_format: str | None = None) -> ScenarioConfig:
    errors: list[str] = []
    for key in data:
        if key not in SECTIONS:
            errors.append(f"{key}: unknown section (expected {', '.join(SECTIONS)})")

    sc = data.get("scenario")
    if not isinstance(sc, dict):
        errors.append("scenario: required mapping with 'builtin' or 'subsystems' + 'events'")
        sc = {}
    elif ("builtin" in sc) == ("events" in sc or "subsystems" in sc):
        errors.append("scenario: give either 'builtin' (with params) or inline 'subsystems' + 'events'")
    elif "builtin" in sc:
        extra = set(sc) - {"builtin", "params"}
        if extra:
            errors.append(f"scenario: unknown keys {sorted(extra)} next to builtin")
        check_builtin(sc, errors)
    else:
        extra = set(sc) - {"subsystems", "events", "horizon_A", "horizon_B"}
        if extra:
            errors.append(f"scenario: unknown keys {sorted(extra)}")
        for h in ("horizon_A", "horizon_B"):
            if sc.get(h) is not None:
                v = _number(sc[h], f"scenario.{h}", errors)
                if v is not None and v < 0:
                    errors.append(f"scenario.{h} = {sc[h]!r}: durations must be >= 0")
        _custom_parts(sc, errors)

    channel = data.get("channel", {"model": "noiseless"})
    check_channel(channel, errors)

    frame = data.get("frame") or {}
    delta = delta_grid = None
    t0_A = 0.0
    if not isinstance(frame, dict):
        errors.append("frame: expected a mapping")
    else:
        for key in set(frame) - {"delta", "delta_grid", "t0_A"}:
            errors.append(f"frame.{key}: unknown key")
        if "delta" in frame:
            delta = _number(frame["delta"], "frame.delta", errors)
        if "delta_grid" in frame:
            delta_grid = _grid(frame["delta_grid"], "frame.delta_grid", errors)
        if "delta" not in frame and "delta_grid" not in frame:
            delta = 0.0
        t0_A = _number(frame.get("t0_A", 0.0), "frame.t0_A", errors) or 0.0

    run = data.get("run") or {"mode": "exact"}
    mode, shots = "exact", None
    if not isinstance(run, dict) or run.get("mode") not in ("exact", "sampled"):
        errors.append("run.mode: exactly one of exact | sampled is required")
    else:
        mode = run["mode"]
        for key in set(run) - {"mode", "shots"}:
            errors.append(f"run.{key}: unknown key")
        if mode == "sampled":
            shots = _number(run.get("shots"), "run.shots", errors, int)
            if shots is not None and shots < 1:
                errors.append(f"run.shots = {run['shots']!r} must be >= 1")
        elif "shots" in run:
            errors.append("run.shots: only meaningful in sampled mode")

    sweep = data.get("sweep")
    sweep_parameter = sweep_values = None
    if sweep is not None:
        if not isinstance(sweep, dict) or set(sweep) != {"parameter", "values"}:
            errors.append("sweep: expected {parameter, values}")
        else:
            sweep_parameter = sweep["parameter"]
            sweep_values = _grid(sweep["values"], "sweep.values", errors)
            in_channel = isinstance(channel, dict) and sweep_parameter in MODEL_PARAMS.get(channel.get("model"), ())
            in_scenario = sweep_parameter in (sc.get("params") or {}) if isinstance(sc, dict) else False
            if sweep_parameter == "distribution" or not (in_channel or in_scenario):
                errors.append(f"sweep.parameter: {sweep_parameter!r} does not appear in the channel or scenario params")
            elif sweep_parameter == "epsilon" and sweep_values:
                bad = [v for v in sweep_values if not 0 <= v <= 1]
                if bad:
                    errors.append(f"sweep.values: epsilon values {bad} are outside the legal range [0, 1]")
            elif sweep_parameter in DURATIONS | {"sigma"} and sweep_values:
                if any(v < 0 for v in sweep_values):
                    errors.append(f"sweep.values: {sweep_parameter} values must be >= 0")

    estimate_grid = None
    est = data.get("estimate")
    if est is not None:
        if not isinstance(est, dict) or set(est) != {"grid"}:
            errors.append("estimate: expected {grid: ...}")
        else:
            estimate_grid = _grid(est["grid"], "estimate.grid", errors)

    observer = data.get("observer", "Bob")
    if observer not in ("Alice", "Bob"):
        errors.append(f"observer: expected Alice or Bob, got {observer!r}")

    out = data.get("output") or {}
    fmt = output_format or (out.get("format", "csv") if isinstance(out, dict) else None)
    if fmt not in FORMATS:
        errors.append(f"output.format: expected one of {FORMATS}, got {fmt!r}")

    if seed is None and data.get("seed") is not None:
        seed = _number(data["seed"], "seed", errors, int)
    if mode == "sampled":
        if seed is None:
            errors.append("seed: required in sampled mode")
        if delta_grid is None and estimate_grid is None:
            errors.append("estimate.grid: sampled mode needs estimate.grid or frame.delta_grid to fit on")

    if errors:
        raise ConfigError(errors)
    cfg = ScenarioConfig(sc, dict(channel), delta, delta_grid, t0_A, mode, shots, sweep_parameter, sweep_values,
                         estimate_grid, observer, fmt, seed)
    try:
        for v in (sweep_values or (None,)):
            build_timeline(cfg, v).validate()
    except ConfigError:
        raise
    except (ScenarioError, ValueError, TypeError) as exc:
        raise ConfigError([f"scenario: {exc}"]) from None
    return cfg


def to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    frame = {"t0_A": cfg.t0_A}
    if cfg.delta is not None:
        frame["delta"] = cfg.delta
    if cfg.delta_grid is not None:
        frame["delta_grid"] = list(cfg.delta_grid)
    out: dict[str, Any] = {
        "scenario": d["scenario"],
        "channel": d["channel"],
        "frame": frame,
        "run": {"mode": cfg.mode, **({"shots": cfg.shots} if cfg.sampled else {})},
        "observer": cfg.observer,
        "output": {"format": cfg.output_format},
    }
    if cfg.sweep_parameter is not None:
        out["sweep"] = {"parameter": cfg.sweep_parameter, "values": list(cfg.sweep_values)}
    if cfg.estimate_grid is not None:
        out["estimate"] = {"grid": list(cfg.estimate_grid)}
    if cfg.seed is not None:
        out["seed"] = cfg.seed
    return out


def serialize(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)
