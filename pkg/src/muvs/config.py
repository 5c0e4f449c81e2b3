"""Fit configuration with documented defaults."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument

# pelvis, hips, spine, neck, collars, shoulders
TORSO_JOINTS = (0, 1, 2, 3, 6, 9, 12, 13, 14, 16, 17)


@dataclass(frozen=True)
class FitConfig:
    sigma1: float = 100.0  # pixels
    sigma2: float = 0.05  # meters
    # (lambda_theta, lambda_beta) per Stage One annealing step
    schedule: tuple = ((10.0, 1e-3), (1.0, 1e-3), (0.05, 1e-5))
    lambda_theta: float = 0.05
    lambda_beta: float = 1e-5
    lambda_t: float = 0.01
    lambda_t_axis: tuple = (1.0, 1.0, 1.0)
    silhouette_weight: float = 1e-4
    silhouette_stride: int = 2
    silhouette_clamp: float = 64.0
    use_silhouette: bool = True
    use_temporal: bool = True
    stage2_silhouette: bool = False
    window: int = 30
    dct_k: int = 10
    max_iterations: int = 100
    pass_iterations: int = 40
    silhouette_iterations: int = 15
    stage2_iterations: int = 30
    gtol: float = 1e-8
    xtol: float = 1e-10
    workers: int = 1
    torso_joints: tuple = TORSO_JOINTS
    yaw_starts: int = 4
    joint_map: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lambda_theta", "lambda_beta", "lambda_t", "silhouette_weight"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be nonnegative")
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise InvalidArgument("sigma1 and sigma2 must be positive")
        if self.silhouette_stride < 1:
            raise InvalidArgument("silhouette_stride must be a positive integer")
        if any(a < 0 or b < 0 for a, b in self.schedule) or not self.schedule:
            raise InvalidArgument("schedule must be a nonempty list of nonnegative weight pairs")
        if self.window < 1 or self.dct_k < 1:
            raise InvalidArgument("window and dct_k must be positive")
        if len(self.lambda_t_axis) != 3 or min(self.lambda_t_axis) < 0:
            raise InvalidArgument("lambda_t_axis needs three nonnegative multipliers")

    def replace(self, **kw) -> "FitConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schedule"] = [list(p) for p in self.schedule]
        d["lambda_t_axis"] = list(self.lambda_t_axis)
        d["torso_joints"] = list(self.torso_joints)
        d["joint_map"] = None if self.joint_map is None else list(self.joint_map)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = tuple(tuple(float(v) for v in p) for p in d["schedule"])
        for key in ("lambda_t_axis", "torso_joints"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("joint_map") is not None:
            d["joint_map"] = tuple(d["joint_map"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "FitConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
