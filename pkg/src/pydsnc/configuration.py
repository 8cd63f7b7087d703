# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Experiment configuration, scenario presets and their resolution.

Values are layered, lowest first: built-in defaults, environment variables
(``PYDSNC_SEED``, ``PYDSNC_OUTPUT_DIR``, ``PYDSNC_JOBS``, read after loading a
``.env`` file), a named preset, a JSON config file, then explicit overrides
such as command-line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dotenv import load_dotenv

from pydsnc.coding import DEFAULT_SEGMENT_CAP
from pydsnc.gf import MAX_Q, MIN_Q
from pydsnc.metrics import _JSONEncoder
from pydsnc.overlay import CapacityTier, ChurnModel, DeparturePolicy
from pydsnc.protocols import ProtocolKind, TnncMode
from pydsnc.simulator import KIB, MIB, RunConfig

load_dotenv()


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.line = line


class Arrangement(str, Enum):
    HOMOGENEOUS = "homogeneous"
    HOMOGENEOUS_LINKFAIL = "homogeneous-linkfail"
    DYNAMIC_STAY = "dynamic-stay"
    DYNAMIC_LEAVE = "dynamic-leave"

    @property
    def dynamic(self) -> bool:
        return self in (Arrangement.DYNAMIC_STAY, Arrangement.DYNAMIC_LEAVE)


DEFAULT_TIERS: List[List[float]] = [
    [32.0 * KIB, 128.0 * KIB, 1.0],
    [64.0 * KIB, 256.0 * KIB, 2.0],
    [128.0 * KIB, 512.0 * KIB, 1.0],
]


@dataclass
class ExperimentConfig:
    seeds: List[int] = field(default_factory=list)
    protocols: List[ProtocolKind] = field(default_factory=lambda: list(ProtocolKind))
    peers: List[int] = field(default_factory=lambda: [100])
    content_size: int = 1 * MIB
    chunk_size: int = 16 * KIB
    chunks_per_segment: int = 32
    group_size: int = 8
    q: int = 8
    arrangement: Arrangement = Arrangement.HOMOGENEOUS
    link_failure: float = 0.1
    arrival_rate: float = 0.5
    initial_fraction: float = 0.5
    mean_lifetime: Optional[float] = None
    campus_fraction: float = 0.3
    access_capacity: float = 1.0 * MIB
    upload_capacity: float = 64.0 * KIB
    download_capacity: float = 256.0 * KIB
    capacity_tiers: List[List[float]] = field(default_factory=lambda: [list(t) for t in DEFAULT_TIERS])
    overlay_degree: int = 4
    server_upload: float = 256.0 * KIB
    server_degree: int = 4
    max_group_size: int = 8
    score_threshold: float = 0.0
    retry_cap: int = 10
    retry_backoff: float = 0.0
    tnnc_mode: TnncMode = TnncMode.MESH
    nptp_packets: Optional[int] = None
    verify_content: bool = False
    horizon: float = 86400.0
    jobs: int = 1
    output_dir: str = "results"
    trace: bool = False
    topology_dump: bool = False
    preset: Optional[str] = None

    @property
    def seed(self) -> int:
        return self.seeds[0]

    def to_json(self) -> str:
        return json.dumps(asdict(self), cls=_JSONEncoder, sort_keys=True)

    @staticmethod
    def from_json(json_str: str) -> ExperimentConfig:
        return parse_config(json_str)

    def tiers(self) -> Tuple[CapacityTier, ...]:
        return tuple(CapacityTier(*values) for values in self.capacity_tiers)

    def churn_model(self) -> ChurnModel:
        if not self.arrangement.dynamic:
            return ChurnModel()
        departure = (
            DeparturePolicy.LEAVE
            if self.arrangement is Arrangement.DYNAMIC_LEAVE
            else DeparturePolicy.STAY
        )
        return ChurnModel(
            arrival_rate=self.arrival_rate,
            initial_fraction=self.initial_fraction,
            departure=departure,
            mean_lifetime=self.mean_lifetime,
        )

    def run_config(self, protocol: ProtocolKind, peers: int, seed: int) -> RunConfig:
        return RunConfig(
            protocol=ProtocolKind(protocol),
            peers=peers,
            seed=seed,
            content_size=self.content_size,
            chunk_size=self.chunk_size,
            chunks_per_segment=self.chunks_per_segment,
            segment_cap=DEFAULT_SEGMENT_CAP,
            group_size=self.group_size,
            q=self.q,
            overlay_degree=self.overlay_degree,
            server_degree=self.server_degree,
            campus_fraction=self.campus_fraction,
            upload_capacity=self.upload_capacity,
            download_capacity=self.download_capacity,
            server_upload=self.server_upload,
            access_capacity=self.access_capacity,
            capacity_tiers=self.tiers() if self.arrangement.dynamic else (),
            link_failure=(
                self.link_failure if self.arrangement is Arrangement.HOMOGENEOUS_LINKFAIL else 0.0
            ),
            churn=self.churn_model(),
            horizon=self.horizon,
            max_group_size=self.max_group_size,
            score_threshold=self.score_threshold,
            retry_cap=self.retry_cap,
            retry_backoff=self.retry_backoff,
            tnnc_mode=self.tnnc_mode,
            nptp_packets=self.nptp_packets,
            verify_content=self.verify_content,
        )

    def run_configs(self) -> List[RunConfig]:
        """One run per (peer count, protocol, seed), in that nesting order."""
        return [
            self.run_config(protocol, peers, seed)
            for peers in self.peers
            for protocol in self.protocols
            for seed in self.seeds
        ]


@dataclass(frozen=True)
class Preset:
    """A named scenario.

    Figure presets are named after the figure they reproduce; test-only presets
    exercise the pipeline quickly and reproduce nothing.
    """

    name: str
    summary: str
    values: Mapping[str, Any]
    test_only: bool = False


_SWEEP = [100, 200, 400]

PRESETS: Dict[str, Preset] = {
    p.name: p
    for p in (
        Preset(
            "smoke",
            "test-only: tiny end-to-end run of all three protocols",
            {
                "peers": [8],
                "content_size": 64 * KIB,
                "chunk_size": 4 * KIB,
                "chunks_per_segment": 8,
                "group_size": 4,
                "horizon": 3600.0,
            },
            test_only=True,
        ),
        Preset(
            "fig4",
            "average finish time under equal capacities; DSNC at least 10% below TNNC",
            {"arrangement": "homogeneous", "peers": _SWEEP},
        ),
        Preset(
            "fig5",
            "finish time with independent per-transmission link failures (p=0.1)",
            {"arrangement": "homogeneous-linkfail", "peers": _SWEEP, "link_failure": 0.1},
        ),
        Preset(
            "fig6",
            "mean link stress on a lossless network; DSNC <= FNCM",
            {"arrangement": "homogeneous", "peers": _SWEEP},
        ),
        Preset(
            "fig7",
            "heterogeneous capacities with arrivals; peers stay after downloading",
            {"arrangement": "dynamic-stay", "peers": _SWEEP},
        ),
        Preset(
            "fig8",
            "heterogeneous capacities with arrivals; peers leave after downloading",
            {"arrangement": "dynamic-leave", "peers": _SWEEP},
        ),
        Preset(
            "fig9",
            "per-segment share of download time over a multi-segment file",
            {"arrangement": "homogeneous", "peers": [100], "content_size": 4 * MIB},
        ),
        Preset(
            "fig10",
            "coding-vector overhead per protocol; TNNC carries none",
            {"arrangement": "homogeneous", "peers": [100], "content_size": 4 * MIB, "q": 8},
        ),
    )
}

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_OPTIONAL_NUMBERS = {"mean_lifetime": float, "nptp_packets": int}


def _as_int(key: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
    return int(value)


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
    return float(value)


def _as_list(value: Any) -> List[Any]:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _coerce(key: str, value: Any) -> Any:
    try:
        if key == "protocols":
            return [ProtocolKind(str(v).lower()) for v in _as_list(value)]
        if key == "arrangement":
            return Arrangement(value)
        if key == "tnnc_mode":
            return TnncMode(value)
    except ValueError as e:
        raise ConfigError(f"invalid value for {key}: {value!r}", key=key) from e

    if key in ("peers", "seeds"):
        return [_as_int(key, v) for v in _as_list(value)]
    if key == "capacity_tiers":
        tiers = []
        for tier in _as_list(value):
            if not isinstance(tier, (list, tuple)) or len(tier) not in (2, 3):
                raise ConfigError(f"capacity tier must be [upload, download, weight], got {tier!r}", key=key)
            tiers.append([_as_float(key, v) for v in tier] + ([1.0] if len(tier) == 2 else []))
        return tiers
    if key in _OPTIONAL_NUMBERS:
        if value is None:
            return None
        return _as_int(key, value) if _OPTIONAL_NUMBERS[key] is int else _as_float(key, value)
    if key == "preset":
        return None if value is None else str(value)

    default = _FIELDS[key].default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}", key=key)
        return value
    if isinstance(default, int):
        return _as_int(key, value)
    if isinstance(default, float):
        return _as_float(key, value)
    return str(value)


def _layer(values: Dict[str, Any], updates: Mapping[str, Any]) -> None:
    for key, value in updates.items():
        if key == "seed":
            key = "seeds"
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key: {key}", key=key)
        values[key] = _coerce(key, value)


def _environment() -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    seed = os.getenv("PYDSNC_SEED")
    if seed:
        try:
            values["seeds"] = [int(s) for s in seed.replace(",", " ").split()]
        except ValueError as e:
            raise ConfigError(f"PYDSNC_SEED must hold integers, got {seed!r}", key="seed") from e
    output_dir = os.getenv("PYDSNC_OUTPUT_DIR")
    if output_dir:
        values["output_dir"] = output_dir
    jobs = os.getenv("PYDSNC_JOBS")
    if jobs:
        try:
            values["jobs"] = int(jobs)
        except ValueError as e:
            raise ConfigError(f"PYDSNC_JOBS must be an integer, got {jobs!r}", key="jobs") from e
    return values


def validate(config: ExperimentConfig) -> ExperimentConfig:
    """Checks cross-field consistency.

    Raises:
        ConfigError: Naming the first offending key
    """
    if not config.seeds:
        raise ConfigError("a seed is required (--seed, config file or PYDSNC_SEED)", key="seed")
    if any(s < 0 for s in config.seeds):
        raise ConfigError("seeds must be non-negative", key="seed")
    if not config.protocols:
        raise ConfigError("at least one protocol is required", key="protocols")
    if not config.peers or any(p < 1 for p in config.peers):
        raise ConfigError(f"peer counts must be at least 1, got {config.peers}", key="peers")

    for key in ("content_size", "chunk_size", "group_size", "overlay_degree", "server_degree",
                "max_group_size", "retry_cap", "jobs"):
        if getattr(config, key) < 1:
            raise ConfigError(f"{key} must be at least 1, got {getattr(config, key)}", key=key)
    if not 1 <= config.chunks_per_segment < DEFAULT_SEGMENT_CAP:
        raise ConfigError(
            f"chunks_per_segment must be in [1, {DEFAULT_SEGMENT_CAP}), got {config.chunks_per_segment}",
            key="chunks_per_segment",
        )
    if not MIN_Q <= config.q <= MAX_Q:
        raise ConfigError(f"q must be in [{MIN_Q}, {MAX_Q}], got {config.q}", key="q")
    if ProtocolKind.DSNC in config.protocols and (1 << config.q) < config.group_size:
        raise ConfigError(f"GF(2^{config.q}) is too small for groups of {config.group_size}", key="group_size")
    if config.verify_content:
        if config.q not in (8, 16):
            raise ConfigError("verify_content needs q = 8 or q = 16", key="verify_content")
        if config.chunk_size % (config.q // 8):
            raise ConfigError("chunk_size must be a whole number of symbols", key="chunk_size")

    for key in ("access_capacity", "upload_capacity", "download_capacity", "server_upload", "horizon"):
        if getattr(config, key) <= 0:
            raise ConfigError(f"{key} must be positive, got {getattr(config, key)}", key=key)
    for key in ("campus_fraction", "link_failure", "initial_fraction"):
        if not 0.0 <= getattr(config, key) <= 1.0:
            raise ConfigError(f"{key} must be in [0, 1], got {getattr(config, key)}", key=key)
    for key in ("arrival_rate", "retry_backoff", "score_threshold"):
        if getattr(config, key) < 0:
            raise ConfigError(f"{key} must be non-negative, got {getattr(config, key)}", key=key)
    if config.mean_lifetime is not None and config.mean_lifetime <= 0:
        raise ConfigError("mean_lifetime must be positive", key="mean_lifetime")
    if config.nptp_packets is not None and config.nptp_packets < 0:
        raise ConfigError("nptp_packets must be non-negative", key="nptp_packets")
    if any(t[0] <= 0 or t[1] <= 0 or t[2] <= 0 for t in config.capacity_tiers):
        raise ConfigError("capacity tiers need positive values", key="capacity_tiers")
    return config


def parse_config(
    text: Optional[str] = None,
    preset: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Resolves a validated config from its layers.

    Args:
        text: JSON object text of a config file, if any
        preset: Name of a scenario preset, if any
        overrides: Explicit values; ``None`` entries are ignored

    Raises:
        ConfigError: On malformed JSON (with ``line``), unknown keys or presets
            (with ``key``), or values that fail validation
    """
    values: Dict[str, Any] = {}
    _layer(values, _environment())

    document: Dict[str, Any] = {}
    if text is not None and text.strip():
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config at line {e.lineno}: {e.msg}", line=e.lineno) from e
        if not isinstance(document, dict):
            raise ConfigError("config must be a JSON object")

    preset = preset or document.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset: {preset}", key="preset")
        _layer(values, PRESETS[preset].values)
        values["preset"] = preset

    _layer(values, document)
    _layer(values, {k: v for k, v in (overrides or {}).items() if v is not None})
    return validate(ExperimentConfig(**values))


def load_configuration(
    path: Optional[str] = None,
    preset: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Reads an optional config file and resolves it with :func:`parse_config`."""
    text = None
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}", key="config") from e
    return parse_config(text, preset=preset, overrides=overrides)
