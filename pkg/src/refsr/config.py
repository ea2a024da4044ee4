"""Run configuration: `key = value` files with dotted sections.

Lines are UTF-8, `#` starts a comment, keys are dotted lowercase paths
(`partition.n_r = 16`).  Parsing is total: any byte stream either yields
a valid RunConfig or a ConfigError naming the offending key or line.
Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .features import ExtractorConfig
from .matching import MatchParams
from .oracle import DEFAULT_CAP
from .partition import PartitionSpec
from .synthesis import SynthesisConfig


def _to_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {raw!r}") from None


def _to_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {raw!r}") from None


def _to_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected boolean, got {raw!r}")


def _to_str(key: str, raw: str) -> str:
    return raw


_SCHEMA = {
    "partition.n_m": _to_int,
    "partition.n_i": _to_int,
    "partition.n_r": _to_int,
    "partition.n_c": _to_int,
    "partition.n_l": _to_int,
    "match.patch_size": _to_int,
    "match.stride": _to_int,
    "match.norm_epsilon": _to_float,
    "match.normalize_input": _to_bool,
    "synth.upscale": _to_int,
    "synth.paste_patch": _to_int,
    "synth.tau": _to_float,
    "synth.base_mix": _to_str,       # "auto" or a float in [0, 1]
    "extractor.channels": _to_str,   # three comma-separated ints
    "extractor.kernel_size": _to_int,
    "extractor.weights": _to_str,    # seeded | gabor | external
    "extractor.seed": _to_int,
    "extractor.weights_dir": _to_str,
    "oracle.cap": _to_int,
    "oracle.height": _to_int,
    "oracle.width": _to_int,
    "oracle.channels": _to_int,
    "oracle.refs": _to_int,
    "threads": _to_str,              # "auto" or a positive integer
}


@dataclass
class RunConfig:
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    match: MatchParams = field(default_factory=MatchParams)
    synth: SynthesisConfig = field(default_factory=SynthesisConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    threads: int = 1
    oracle_cap: int = DEFAULT_CAP
    # synthetic trial dims for oracle-check runs without images
    oracle_height: int = 12
    oracle_width: int = 12
    oracle_channels: int = 8
    oracle_refs: int = 2


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key/value pairs from config text; unknown keys are rejected."""
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        values[key] = value
    return values


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read, merge and validate a configuration.

    ``overrides`` uses the same dotted keys as the file and wins over it.
    """
    raw: dict[str, str] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except UnicodeDecodeError as exc:
            raise ConfigError(f"{path}: not valid UTF-8: {exc}") from None
        raw.update(parse_config_text(text))
    for key, value in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    typed = {key: _SCHEMA[key](key, value) for key, value in raw.items()}
    return _build(typed)


def _build(vals: dict) -> RunConfig:
    def take(key: str, default):
        return vals.get(key, default)

    channels_raw = take("extractor.channels", "64,128,256")
    parts = [p.strip() for p in str(channels_raw).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"extractor.channels: need three comma-separated values, got {channels_raw!r}")
    try:
        channels = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"extractor.channels: non-integer in {channels_raw!r}") from None

    try:
        extractor = ExtractorConfig(
            stage_channels=channels,
            kernel_size=take("extractor.kernel_size", 3),
            weight_source=take("extractor.weights", "seeded"),
            seed=take("extractor.seed", 0),
            weights_dir=vals.get("extractor.weights_dir"),
        )
    except ValueError as exc:
        raise ConfigError(f"extractor: {exc}") from None

    try:
        partition = PartitionSpec(
            n_m=take("partition.n_m", 1),
            n_i=take("partition.n_i", 1),
            n_r=take("partition.n_r", 1),
            n_c=take("partition.n_c", 0),
            n_l=take("partition.n_l", 3),
        )
    except ValueError as exc:
        raise ConfigError(f"partition: {exc}") from None
    if partition.n_c > 0 and channels[2] % partition.n_c != 0:
        raise ConfigError(
            f"partition.n_c: {partition.n_c} does not divide stage-3 channels {channels[2]}")

    try:
        match = MatchParams(
            patch_size=take("match.patch_size", 3),
            stride=take("match.stride", 1),
            norm_epsilon=take("match.norm_epsilon", 1e-8),
            normalize_input=take("match.normalize_input", False),
        )
    except ValueError as exc:
        raise ConfigError(f"match: {exc}") from None

    base_mix_raw = str(take("synth.base_mix", "auto"))
    if base_mix_raw.lower() == "auto":
        base_mix = None
    else:
        base_mix = _to_float("synth.base_mix", base_mix_raw)
    try:
        synth = SynthesisConfig(
            upscale=take("synth.upscale", 4),
            paste_patch=take("synth.paste_patch", 4 * match.patch_size),
            tau=take("synth.tau", 1.0),
            base_mix=base_mix,
        )
    except ValueError as exc:
        raise ConfigError(f"synth: {exc}") from None

    threads_raw = str(take("threads", "1"))
    if threads_raw.lower() == "auto":
        import os
        threads = os.cpu_count() or 1
    else:
        threads = _to_int("threads", threads_raw)
        if threads < 1:
            raise ConfigError(f"threads: must be >= 1, got {threads}")

    cfg = RunConfig(
        partition=partition,
        match=match,
        synth=synth,
        extractor=extractor,
        threads=threads,
        oracle_cap=take("oracle.cap", DEFAULT_CAP),
        oracle_height=take("oracle.height", 12),
        oracle_width=take("oracle.width", 12),
        oracle_channels=take("oracle.channels", 8),
        oracle_refs=take("oracle.refs", 2),
    )
    if cfg.oracle_cap < 1:
        raise ConfigError(f"oracle.cap: must be >= 1, got {cfg.oracle_cap}")
    for key in ("oracle_height", "oracle_width", "oracle_channels", "oracle_refs"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"oracle.{key.split('_', 1)[1]}: must be >= 1")
    return cfg
