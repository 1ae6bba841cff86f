"""
Configuration objects for the grounding laboratory.

Every object is a frozen dataclass; experiment configurations are read from
and written to JSON with `load_config` / `dump_config`.
"""

import hashlib
import json
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from .models import ConfigError

METHODS = ("direct", "centralized", "decentralized", "jl-pattern", "jl-prob", "jl-uq")
UQ_BASES = ("pattern", "prob")

Node = Tuple[int, int]


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    link_length: float = 300.0
    speed_limit: float = 15.0

    @property
    def num_intersections(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class VehicleDynamics:
    """
    Vehicle behavior record selecting E_sim versus E_real behavior.
    """
    accel: float
    decel: float
    emergency_decel: float
    startup_delay: float = 0.0


DYNAMICS_PRESETS: Dict[str, VehicleDynamics] = {
    "default": VehicleDynamics(accel=2.0, decel=4.5, emergency_decel=9.0, startup_delay=0.0),
    "rainy": VehicleDynamics(accel=0.75, decel=3.5, emergency_decel=4.0, startup_delay=0.25),
    "snowy": VehicleDynamics(accel=0.5, decel=1.5, emergency_decel=2.0, startup_delay=0.5),
}


@dataclass(frozen=True)
class FlowEntry:
    route: Tuple[Node, ...]
    start: float
    headway: float
    count: int
    poisson: bool = False


@dataclass(frozen=True)
class FlowSpec:
    entries: Tuple[FlowEntry, ...] = ()
    seed: int = 0


@dataclass(frozen=True)
class TimingConfig:
    dt: float = 1.0
    action_interval: float = 10.0
    yellow: float = 3.0
    horizon: float = 600.0


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.95
    learning_rate: float = 1e-3
    hidden: Tuple[int, ...] = (64, 64)
    buffer_capacity: int = 10000
    batch_size: int = 64
    sync_every: int = 100
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    gat_epsilon: float = 0.05
    observation_scale: float = 0.1


@dataclass(frozen=True)
class ModelConfig:
    """
    Forward and inverse model settings.

    Observations enter the models multiplied by `observation_scale`. Each GAT
    epoch adds `explore_episodes` simulator rollouts at `explore_epsilon` to
    D_sim so the inverse models see actions other than the policy's own.
    """
    hidden: Tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    train_steps: int = 200
    batch_size: int = 64
    ensemble_size: int = 3
    observation_scale: float = 0.1
    explore_episodes: int = 1
    explore_epsilon: float = 0.5


@dataclass(frozen=True)
class InformationChannels:
    """Switches for the neighbor information fed to the grounding models."""
    forward_neighbor_states: bool = True
    forward_neighbor_actions: bool = True
    inverse_neighbor_states: bool = True
    inverse_neighbor_actions: bool = True
    inverse_self_action: bool = False


ABLATIONS: Dict[str, InformationChannels] = {
    "none": InformationChannels(),
    "forward-states": InformationChannels(forward_neighbor_states=False),
    "forward-actions": InformationChannels(forward_neighbor_actions=False),
    "inverse-states": InformationChannels(inverse_neighbor_states=False),
    "inverse-actions": InformationChannels(inverse_neighbor_actions=False),
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec
    flow: FlowSpec
    sim_dynamics: VehicleDynamics
    real_dynamics: VehicleDynamics
    method: str = "direct"
    radius: int = 1
    p_ground: Optional[float] = None
    pretrain_episodes: int = 50
    gat_epochs: int = 30
    policy_episodes: int = 1
    trials: int = 3
    base_seed: int = 0
    dataset_cap: int = 20000
    timing: TimingConfig = field(default_factory=TimingConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    models: ModelConfig = field(default_factory=ModelConfig)
    channels: InformationChannels = field(default_factory=InformationChannels)
    uq_base: str = "pattern"
    uq_threshold_override: Optional[float] = None
    persist_datasets: bool = False

    @property
    def effective_p_ground(self) -> float:
        if self.p_ground is not None:
            return self.p_ground
        return 1.0 / self.grid.num_intersections

    @property
    def effective_radius(self) -> int:
        # Decentralized GAT is the r = 0 reduction of the joint-local layout
        if self.method in ("decentralized", "centralized", "direct"):
            return 0
        return self.radius


def resolve_dynamics(value: Any, key: str = "dynamics") -> VehicleDynamics:
    if isinstance(value, VehicleDynamics):
        return value
    if isinstance(value, str):
        name = value.lower()
        if name not in DYNAMICS_PRESETS:
            raise ConfigError(
                f"Unknown dynamics name: {value!r}. Known: {sorted(DYNAMICS_PRESETS)}",
                offending_keys=[key],
            )
        return DYNAMICS_PRESETS[name]
    if isinstance(value, dict):
        return VehicleDynamics(**_typed_fields(VehicleDynamics, value, key))
    raise ConfigError(f"Cannot interpret dynamics: {value!r}", offending_keys=[key])


def validate_dynamics(dyn: VehicleDynamics, key: str = "dynamics") -> List[str]:
    problems = []
    if not dyn.accel > 0:
        problems.append(f"{key}.accel")
    if not 0 < dyn.decel <= dyn.emergency_decel:
        problems.append(f"{key}.decel")
    if dyn.startup_delay < 0:
        problems.append(f"{key}.startup_delay")
    return problems


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    """
    Check counts, ranges and method-specific fields.

    Raises:
        ConfigError: listing every offending key
    """
    bad: List[str] = []
    if config.grid.rows < 1 or config.grid.cols < 1:
        bad.append("grid.rows/cols")
    if config.grid.link_length <= 0:
        bad.append("grid.link_length")
    if config.grid.speed_limit <= 0:
        bad.append("grid.speed_limit")
    bad.extend(validate_dynamics(config.sim_dynamics, "sim_dynamics"))
    bad.extend(validate_dynamics(config.real_dynamics, "real_dynamics"))
    if config.method not in METHODS:
        bad.append("method")
    if config.radius < 0:
        bad.append("radius")
    if config.method == "jl-pattern" and config.radius < 1:
        bad.append("radius")
    if config.p_ground is not None and not 0.0 <= config.p_ground <= 1.0:
        bad.append("p_ground")
    if config.uq_base not in UQ_BASES:
        bad.append("uq_base")
    if config.method == "jl-uq" and config.uq_base == "pattern" and config.radius < 1:
        bad.append("radius")
    if config.uq_threshold_override is not None and config.uq_threshold_override < 0:
        bad.append("uq_threshold_override")
    for name in ("pretrain_episodes", "gat_epochs", "base_seed"):
        if getattr(config, name) < 0:
            bad.append(name)
    for name in ("policy_episodes", "trials", "dataset_cap"):
        if getattr(config, name) < 1:
            bad.append(name)
    t = config.timing
    if t.dt <= 0:
        bad.append("timing.dt")
    if t.action_interval < t.dt:
        bad.append("timing.action_interval")
    if t.yellow < 0:
        bad.append("timing.yellow")
    if t.horizon < 0:
        bad.append("timing.horizon")
    if not 0.0 <= config.dqn.gamma < 1.0:
        bad.append("dqn.gamma")
    if config.dqn.batch_size < 1 or config.dqn.buffer_capacity < 1:
        bad.append("dqn.batch_size/buffer_capacity")
    if config.method == "jl-uq" and config.models.ensemble_size < 2:
        bad.append("models.ensemble_size")
    m = config.models
    if m.train_steps < 0:
        bad.append("models.train_steps")
    if m.batch_size < 1:
        bad.append("models.batch_size")
    if m.observation_scale <= 0:
        bad.append("models.observation_scale")
    if m.explore_episodes < 0:
        bad.append("models.explore_episodes")
    if not 0.0 <= m.explore_epsilon <= 1.0:
        bad.append("models.explore_epsilon")
    for entry_index, entry in enumerate(config.flow.entries):
        if entry.headway <= 0:
            bad.append(f"flow.entries[{entry_index}].headway")
        if entry.count < 0:
            bad.append(f"flow.entries[{entry_index}].count")
    if bad:
        # dedupe but keep order
        seen: List[str] = []
        for key in bad:
            if key not in seen:
                seen.append(key)
        raise ConfigError(f"Invalid configuration fields: {seen}", offending_keys=seen)
    return config


# ============================================================
# JSON (DE)SERIALIZATION
# ============================================================

def _tuple_of_ints(value: Any) -> Tuple[int, ...]:
    return tuple(int(v) for v in value)


_INVALID = object()


def _coerce(value: Any, expected: Any) -> Any:
    """Check one JSON value against a field annotation; _INVALID on mismatch."""
    if get_origin(expected) is Union:
        options = [t for t in get_args(expected) if t is not type(None)]
        if value is None:
            return None
        return _coerce(value, options[0])
    if expected is bool:
        return value if isinstance(value, bool) else _INVALID
    if isinstance(value, bool):
        return _INVALID
    if expected is float:
        return float(value) if isinstance(value, (int, float)) else _INVALID
    if expected is int:
        return value if isinstance(value, int) else _INVALID
    if expected is str:
        return value if isinstance(value, str) else _INVALID
    if get_origin(expected) is tuple:
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            return _INVALID
        return _tuple_of_ints(value)
    return value


def _typed_fields(cls, data: Any, key: str, skip: Tuple[str, ...] = ()) -> Dict[str, Any]:
    """
    Type-check a JSON object against a dataclass schema.

    Raises:
        ConfigError: on unknown keys, missing required fields or mistyped values
    """
    if not isinstance(data, dict):
        raise ConfigError(f"Expected an object for {key}, got {type(data).__name__}", offending_keys=[key])
    prefix = f"{key}." if key else ""
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(
            f"Unknown keys in {key or 'configuration'}: {unknown}",
            offending_keys=[f"{prefix}{k}" for k in unknown],
        )
    missing = [
        f.name for f in fields(cls)
        if f.name not in data and f.name not in skip
        and f.default is MISSING and f.default_factory is MISSING
    ]
    if missing:
        raise ConfigError(
            f"Missing keys in {key or 'configuration'}: {missing}",
            offending_keys=[f"{prefix}{k}" for k in missing],
        )
    values: Dict[str, Any] = {}
    bad: List[str] = []
    for name, value in data.items():
        if name in skip:
            continue
        coerced = _coerce(value, hints[name])
        if coerced is _INVALID:
            bad.append(f"{prefix}{name}")
        else:
            values[name] = coerced
    if bad:
        raise ConfigError(f"Mistyped configuration values: {bad}", offending_keys=bad)
    return values


def _section(cls, data: Optional[Dict[str, Any]], key: str):
    if data is None:
        return cls()
    return cls(**_typed_fields(cls, data, key))


def flow_from_dict(data: Dict[str, Any]) -> FlowSpec:
    if not isinstance(data, dict):
        raise ConfigError("Expected an object for flow", offending_keys=["flow"])
    entries = []
    for i, raw in enumerate(data.get("entries", [])):
        key = f"flow.entries[{i}]"
        if isinstance(raw, dict):
            raw = {"start": 0.0, **raw}
        values = _typed_fields(FlowEntry, raw, key, skip=("route",))
        try:
            route = tuple((int(x), int(y)) for x, y in raw["route"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"Malformed route in {key}", offending_keys=[f"{key}.route"])
        entries.append(FlowEntry(route=route, **values))
    seed = _coerce(data.get("seed", 0), int)
    if seed is _INVALID:
        raise ConfigError("Mistyped configuration values: ['flow.seed']", offending_keys=["flow.seed"])
    return FlowSpec(entries=tuple(entries), seed=seed)


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    nested = ("grid", "flow", "sim_dynamics", "real_dynamics", "timing", "dqn", "models", "channels")
    scalars = _typed_fields(ExperimentConfig, data, "", skip=nested)
    for required in ("grid", "sim_dynamics", "real_dynamics"):
        if required not in data:
            raise ConfigError(f"Missing configuration key: {required}", offending_keys=[required])
    config = ExperimentConfig(
        grid=GridSpec(**_typed_fields(GridSpec, data["grid"], "grid")),
        flow=flow_from_dict(data.get("flow", {})),
        sim_dynamics=resolve_dynamics(data["sim_dynamics"], "sim_dynamics"),
        real_dynamics=resolve_dynamics(data["real_dynamics"], "real_dynamics"),
        timing=_section(TimingConfig, data.get("timing"), "timing"),
        dqn=_section(DqnConfig, data.get("dqn"), "dqn"),
        models=_section(ModelConfig, data.get("models"), "models"),
        channels=_section(InformationChannels, data.get("channels"), "channels"),
        **scalars,
    )
    return validate_config(config)


def _plain(obj: Any) -> Any:
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return _plain(config)


def dump_config(config: ExperimentConfig, path: Optional[str] = None) -> str:
    # json writes floats with repr(), which round-trips exactly
    text = json.dumps(config_to_dict(config), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def load_config(path: str) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}", offending_keys=["config"])
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file is not valid JSON: {e}", offending_keys=["config"])
    return config_from_dict(data)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ============================================================
# OVERRIDES
# ============================================================

OVERRIDE_TYPES: Dict[str, type] = {
    "method": str,
    "radius": int,
    "p_ground": float,
    "trials": int,
    "gat_epochs": int,
    "pretrain_episodes": int,
    "base_seed": int,
    "uq_base": str,
    "uq_threshold_override": float,
}


def apply_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """
    Apply CLI overrides after type-checking them against the schema.

    Overrides with value None are ignored. The special key "ablation" selects
    one of the ABLATIONS channel presets.
    """
    bad: List[str] = []
    changes: Dict[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "ablation":
            if value not in ABLATIONS:
                bad.append("ablation")
            else:
                changes["channels"] = ABLATIONS[value]
            continue
        expected = OVERRIDE_TYPES.get(key)
        if expected is None:
            bad.append(key)
            continue
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or isinstance(value, bool):
            bad.append(key)
            continue
        changes[key] = value
    if bad:
        raise ConfigError(f"Invalid overrides: {bad}", offending_keys=bad)
    return validate_config(replace(config, **changes))


# ============================================================
# REFERENCE EXPERIMENTS
# ============================================================

def _row_route(grid: GridSpec, y: int, eastbound: bool) -> Tuple[Node, ...]:
    xs = list(range(-1, grid.cols + 1))
    if not eastbound:
        xs.reverse()
    return tuple((x, y) for x in xs)


def _column_route(grid: GridSpec, x: int, southbound: bool) -> Tuple[Node, ...]:
    ys = list(range(-1, grid.rows + 1))
    if not southbound:
        ys.reverse()
    return tuple((x, y) for y in ys)


def reference_flow(
    grid: GridSpec,
    horizon: float = 600.0,
    arterial_headway: float = 8.0,
    side_headway: float = 14.0,
    turn_headway: float = 40.0,
    seed: int = 0,
) -> FlowSpec:
    """
    Desk-scale demand: through traffic on every row and column in both
    directions plus one turning stream per column (north entry, left turn,
    leaving eastward).
    """
    entries: List[FlowEntry] = []

    def add(route, headway):
        count = int(horizon // headway)
        entries.append(FlowEntry(route=route, start=0.0, headway=headway, count=count))

    for y in range(grid.rows):
        add(_row_route(grid, y, eastbound=True), arterial_headway)
        add(_row_route(grid, y, eastbound=False), arterial_headway)
    for x in range(grid.cols):
        add(_column_route(grid, x, southbound=True), side_headway)
        add(_column_route(grid, x, southbound=False), side_headway)
        # north terminal -> (x, 0), then east along row 0
        turn = ((x, -1),) + tuple((xx, 0) for xx in range(x, grid.cols + 1))
        add(turn, turn_headway)
    return FlowSpec(entries=tuple(entries), seed=seed)


def reference_config(
    rows: int = 1,
    cols: int = 3,
    real: str = "rainy",
    method: str = "direct",
    **kwargs: Any,
) -> ExperimentConfig:
    grid = GridSpec(rows=rows, cols=cols)
    timing = kwargs.pop("timing", TimingConfig())
    config = ExperimentConfig(
        grid=grid,
        flow=reference_flow(grid, horizon=timing.horizon),
        sim_dynamics=DYNAMICS_PRESETS["default"],
        real_dynamics=resolve_dynamics(real),
        method=method,
        timing=timing,
        **kwargs,
    )
    return validate_config(config)
