"""End-to-end routing: classify an utterance, then mimic or generate."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .bvh import DEFAULT_FACTOR, BvhDocument, JointMapping, default_mapping, load_mapping, retarget_bvh
from .errors import ConfigError, RoutingError
from .gsd import ClassificationResult, Label, PromptTemplate, classify, default_template, gesture_trigger, load_template
from .io import load_yaml
from .llm import DEFAULT_CONCURRENCY, Backend, BackendConfig
from .motion import JointTrajectory, RobotProfile, default_profile, load_profile
from .pose import DEFAULT_SPEED_SCALE, PoseSequence, retarget_pose


@dataclass(frozen=True)
class PipelineConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    template_path: Path | None = None
    profile_path: Path | None = None
    mapping_path: Path | None = None
    speed_scale: float = DEFAULT_SPEED_SCALE
    downsample_factor: int = DEFAULT_FACTOR
    pose_factor: int = 1
    concurrency: int = DEFAULT_CONCURRENCY
    output_dir: Path = Path("out")

    def __post_init__(self) -> None:
        if not self.speed_scale > 0:
            raise ConfigError("speed_scale must be > 0")
        for name in ("downsample_factor", "pose_factor", "concurrency"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("template_path", "profile_path", "mapping_path"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name}: {p} does not exist")

    def template(self) -> PromptTemplate:
        return load_template(self.template_path) if self.template_path else default_template()

    def profile(self) -> RobotProfile:
        return load_profile(self.profile_path) if self.profile_path else default_profile()

    def mapping(self) -> JointMapping:
        return load_mapping(self.mapping_path) if self.mapping_path else default_mapping()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], env: Mapping[str, str] | None = None, base: Path | None = None) -> PipelineConfig:
        """Relative paths resolve against ``base`` (the config file's directory)."""
        data = dict(data or {})
        backend = BackendConfig.from_dict(data.pop("backend", None) or {}, env=env)
        kwargs: dict[str, Any] = {}
        for key in ("template", "profile", "mapping"):
            if data.get(key):
                p = Path(data.pop(key))
                kwargs[f"{key}_path"] = p if p.is_absolute() or base is None else base / p
            else:
                data.pop(key, None)
        if "output_dir" in data:
            kwargs["output_dir"] = Path(data.pop("output_dir"))
        for key in ("speed_scale", "downsample_factor", "pose_factor", "concurrency"):
            if key in data:
                kwargs[key] = data.pop(key)
        if data:
            raise ConfigError(f"unknown pipeline config keys {sorted(data)}")
        return cls(backend=backend, **kwargs)

    def with_overrides(self, **overrides: Any) -> PipelineConfig:
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_pipeline_config(path: str | Path | None, env: Mapping[str, str] | None = None) -> PipelineConfig:
    env = os.environ if env is None else env
    if path is None:
        return PipelineConfig.from_dict({}, env=env)
    data = load_yaml(path) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: pipeline config must be a mapping")
    return PipelineConfig.from_dict(data, env=env, base=Path(path).parent)


@dataclass(frozen=True)
class RouteResult:
    label: Label
    trajectory: JointTrajectory
    provenance: str
    classification: ClassificationResult


def route(
    sentence: str,
    backend: Backend,
    config: PipelineConfig,
    landmarks: PoseSequence | None = None,
    bvh: BvhDocument | None = None,
) -> RouteResult:
    """Consent/Instruction -> mimic the speaker's pose; otherwise the generated BVH.

    Raises:
        RoutingError: the input for the path that fired is missing.
        SafetyError: the retargeted trajectory cannot be made safe.
    """
    result = classify(sentence, backend, config.template())
    profile = config.profile()
    if gesture_trigger(result.label):
        if landmarks is None:
            raise RoutingError(
                f"sentence classified {result.label.value}: mimic path fired but no landmark sequence was given"
            )
        traj = retarget_pose(landmarks, profile, config.speed_scale, config.pose_factor)
        return RouteResult(result.label, traj, "mimic", result)
    if bvh is None:
        raise RoutingError(
            f"sentence classified {result.label.value}: generated path fired but no BVH motion was given"
        )
    traj = retarget_bvh(bvh, config.mapping(), profile, config.downsample_factor)
    return RouteResult(result.label, traj, "generated", result)
