"""Experiment configuration: a sectioned ``key = value`` file plus
``--section.key=value`` command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ..errors import ConfigError
from ..neural import TrainConfig
from ..scene import TAGS, ClutterConfig, ScenarioConfig
from ..subspace import RankRule, parse_rank_rule


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _tags(text):
    return tuple(v.strip().upper() for v in text.split(",") if v.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default as text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {
        "platform_east": (float, "0"),
        "platform_north": (float, "0"),
        "platform_height": (float, "1000"),
        "r_min": (float, "14553"),
        "r_max": (float, "14673"),
        "theta_min": (float, "20"),
        "theta_max": (float, "30"),
        "phi_min": (float, "-4.1"),
        "phi_max": (float, "-3.9"),
        "dr": (float, "30"),
        "dtheta": (float, "0.4"),
        "dphi": (float, "0.01"),
        "first_bin_index": (int, "100"),
        "rcs_range_fraction": (float, "1"),
        "noise_power": (float, "1"),
        "clutter_seed": (int, "0"),
        "realizations": (int, "100"),
    },
    "clutter": {
        "cnr_db": (float, "30"),
        "texture_db": (float, "6"),
        "correlation_length": (float, "150"),
        "patch_spacing": (float, "10"),
        "region_half_width": (float, "3000"),
        "sector_margin": (float, "2"),
        "density": (float, "1"),
        "coast_bearing": (float, "0"),
        "coast_offset": (float, "-1500"),
        "sea_db": (float, "20"),
    },
    "experiment": {
        "seed": (int, "0"),
        "scnr_db": (_floats, "-20, -15, -10, -5, 0, 5, 10, 15, 20"),
        "displacement": (float, "1000"),
        "directions": (_tags, ",".join(TAGS[1:])),
        "train_count": (int, "4096"),
        "test_count": (int, "512"),
        "fsl_count": (int, "64"),
        "calibration_count": (int, "256"),
        "rank_rule": (parse_rank_rule, "noise_floor:10"),
        "bin_policy": (str, "mean"),
        "shared_covariance": (_bool, "false"),
    },
    "train": {
        "learning_rate": (float, "1e-3"),
        "batch_size": (int, "64"),
        "epochs": (int, "16"),
        "seed": (int, "1"),
    },
    "fsl": {
        "learning_rate": (float, "5e-4"),
        "batch_size": (int, "64"),
        "epochs": (int, "5"),
        "seed": (int, "2"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    seed: int = 0
    scnr_db: tuple = (-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    displacement: float = 1000.0
    directions: tuple = TAGS[1:]
    train_count: int = 4096
    test_count: int = 512
    fsl_count: int = 64
    calibration_count: int = 256
    rank_rule: RankRule = field(default_factory=lambda: parse_rank_rule("noise_floor:10"))
    bin_policy: str = "mean"
    shared_covariance: bool = False
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=16, rng_seed=1))
    fsl: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=5e-4, batch_size=64, epochs=5, rng_seed=2))

    def __post_init__(self):
        if not self.scnr_db:
            raise ConfigError("experiment.scnr_db", "sweep must be nonempty")
        for name in ("train_count", "test_count", "fsl_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"experiment.{name}", "must be at least 1")
        if self.calibration_count < 32:
            raise ConfigError("experiment.calibration_count", "must be at least 32")
        bad = [d for d in self.directions if d not in TAGS[1:]]
        if bad:
            raise ConfigError("experiment.directions", f"unknown directions {bad}")
        if len(set(self.directions)) != len(self.directions):
            raise ConfigError("experiment.directions", "directions repeat")
        if self.bin_policy not in ("mean", "center"):
            raise ConfigError("experiment.bin_policy", "must be 'mean' or 'center'")
        if not self.displacement > 0 and self.directions:
            raise ConfigError("experiment.displacement", "must be positive")


def default_values() -> dict[str, dict[str, str]]:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def read_config_file(path) -> dict[str, dict[str, str]]:
    """Raw section/key/value text from a config file; unknown names are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(str(path), f"cannot parse: {e}") from e
    raw = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(sec, "unknown section")
        for k, v in parser.items(sec):
            if k not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{k}", "unknown key")
            raw.setdefault(sec, {})[k] = v
    return raw


def parse_overrides(args: Sequence[str]) -> dict[str, dict[str, str]]:
    """``["--train.epochs=5", "--experiment.seed", "3"]`` -> nested dict."""
    out: dict[str, dict[str, str]] = {}
    i = 0
    args = list(args)
    while i < len(args):
        a = args[i]
        if not a.startswith("--") or "." not in a.split("=", 1)[0]:
            raise ConfigError(a, "expected --section.key=value")
        name, eq, value = a[2:].partition("=")
        if not eq:
            if i + 1 >= len(args):
                raise ConfigError(name, "missing value")
            i += 1
            value = args[i]
        sec, _, key = name.partition(".")
        if sec not in SCHEMA:
            raise ConfigError(name, "unknown section")
        if key not in SCHEMA[sec]:
            raise ConfigError(name, "unknown key")
        out.setdefault(sec, {})[key] = value
        i += 1
    return out


def merge(*layers: dict) -> dict[str, dict[str, str]]:
    out = default_values()
    for layer in layers:
        for sec, kv in layer.items():
            out[sec].update(kv)
    return out


def _typed(raw):
    typed = {}
    for sec, keys in SCHEMA.items():
        typed[sec] = {}
        for k, (conv, _) in keys.items():
            text = raw[sec][k]
            try:
                typed[sec][k] = conv(text)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{sec}.{k}", f"bad value {text!r}: {e}") from e
    return typed


def build_config(raw: dict[str, dict[str, str]]) -> ExperimentConfig:
    t = _typed(raw)
    sc, cl, ex = t["scenario"], t["clutter"], t["experiment"]
    try:
        clutter = ClutterConfig(**cl)
        scenario = ScenarioConfig.for_range(
            sc["r_min"],
            sc["r_max"],
            dr=sc["dr"],
            first_bin_index=sc["first_bin_index"],
            resolution=(sc["dr"], sc["dtheta"], sc["dphi"]),
            platform_position=(sc["platform_east"], sc["platform_north"]),
            platform_height=sc["platform_height"],
            azimuth_bounds=(sc["theta_min"], sc["theta_max"]),
            elevation_bounds=(sc["phi_min"], sc["phi_max"]),
            rcs_mean=1.0,
            rcs_range=sc["rcs_range_fraction"],
            noise_power=sc["noise_power"],
            clutter_seed=sc["clutter_seed"],
            num_realizations=sc["realizations"],
            clutter=clutter,
        )
        train = TrainConfig(
            learning_rate=t["train"]["learning_rate"],
            batch_size=t["train"]["batch_size"],
            epochs=t["train"]["epochs"],
            rng_seed=t["train"]["seed"],
        )
        fsl = TrainConfig(
            learning_rate=t["fsl"]["learning_rate"],
            batch_size=t["fsl"]["batch_size"],
            epochs=t["fsl"]["epochs"],
            rng_seed=t["fsl"]["seed"],
            freeze_features=True,
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("config", str(e)) from e
    return ExperimentConfig(scenario=scenario, train=train, fsl=fsl, **ex)


def load_config(path: Optional[str] = None, overrides: Sequence[str] = (), seed: Optional[int] = None) -> ExperimentConfig:
    layers = []
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(str(path), "config file not found")
        layers.append(read_config_file(path))
    layers.append(parse_overrides(overrides))
    if seed is not None:
        layers.append({"experiment": {"seed": str(seed)}})
    return build_config(merge(*layers))


def render_config(raw: dict[str, dict[str, str]]) -> str:
    """Config file text for a raw value dict, in schema order."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for k in keys:
            lines.append(f"{k} = {raw[sec][k]}")
        lines.append("")
    return "\n".join(lines)
