"""Run configuration files (YAML, versioned schema).

Example::

    schema_version: 1
    run:
      eval_budget: 100000
      batch_size: 64
      init_fraction: 0.1
      mutation_sigma_pos: 0.005
      mutation_sigma_rot: 0.1
      standoff: [0.005, 0.03]
      tilt_cone: 0.35
      bins_per_axis: 25
    gripper:
      max_opening: 0.08
      ...
    domain_randomization:
      sigma_pos: 0.003
      ...

Every key is optional; missing keys keep their defaults. The run seed is
not part of the file, it is always given explicitly.
"""
import dataclasses

import yaml

from .grasp import DomainRandomizationSpec, GripperSpec
from .qd import RunConfig

SCHEMA_VERSION = 1
_RUN_KEYS = [f.name for f in dataclasses.fields(RunConfig) if f.name not in ("gripper", "dr", "rng_seed")]


class ConfigError(ValueError):
    pass


def _section(tree, name, cls, exclude=()):
    data = tree.get(name)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    return data


def config_from_dict(tree, rng_seed=0) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError("configuration must be a mapping")
    version = tree.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    unknown = sorted(set(tree) - {"schema_version", "run", "gripper", "domain_randomization"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    try:
        gripper = GripperSpec(**_section(tree, "gripper", GripperSpec))
        dr = DomainRandomizationSpec(**_section(tree, "domain_randomization", DomainRandomizationSpec))
        run = _section(tree, "run", RunConfig, exclude=("gripper", "dr", "rng_seed"))
        return RunConfig(**run, rng_seed=int(rng_seed), gripper=gripper, dr=dr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, rng_seed=0) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            tree = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(tree or {}, rng_seed)


def config_to_dict(config: RunConfig):
    run = {k: getattr(config, k) for k in _RUN_KEYS}
    run["standoff"] = list(config.standoff)
    gripper = dataclasses.asdict(config.gripper)
    gripper["finger_pad"] = list(config.gripper.finger_pad)
    gripper["palm_box"] = list(config.gripper.palm_box)
    dr = dataclasses.asdict(config.dr)
    dr["friction_range"] = list(config.dr.friction_range)
    return {"schema_version": SCHEMA_VERSION, "run": run, "gripper": gripper, "domain_randomization": dr}


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)
