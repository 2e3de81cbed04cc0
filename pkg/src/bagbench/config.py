"""Configuration dataclasses shared by the solver, renderer, policies and bench.

Every tunable the benchmark exposes lives here so that a single text config
file (``key = value`` per line, dotted section prefixes) can override any of
them reproducibly.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field


@dataclass
class SolverConfig:
    """Position-based-dynamics solver parameters."""

    dt: float = 0.01                 # outer step, seconds
    substeps: int = 2
    iterations: int = 12             # Gauss-Seidel sweeps per substep
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    friction: float = 0.4            # single Coulomb coefficient, ground + contacts
    contact_tolerance: float = 1e-3  # max allowed penetration below ground, meters
    energy_epsilon: float = 1e-6     # settle threshold, joules per particle
    velocity_damping: float = 1.0    # multiplier applied once per substep; kept
                                     # at 1 so free flight conserves momentum

    contact_margin: float = 4e-3     # broad-phase slop added to radius sums


@dataclass
class RenderConfig:
    """Top-down orthographic camera and palette."""

    resolution: int = 224
    workspace: float = 1.0           # square side length, meters, centered on origin
    camera_height: float = 2.0
    background_rgb: tuple[float, float, float] = (0.25, 0.25, 0.25)
    # The bag keeps a fixed, documented color so mask-free policies can tell it
    # apart from task objects (object HSV has V >= 0.5, so max channel >= 0.5;
    # both reserved colors stay strictly below the 0.45 classifier threshold).
    bag_rgb: tuple[float, float, float] = (0.35, 0.28, 0.18)
    # splat disks are inflated so lattice interstices do not leak background
    # through otherwise continuous surfaces
    splat_scale: float = 1.6

    @property
    def pixel_scale(self) -> float:
        return self.workspace / self.resolution


@dataclass
class PolicyConfig:
    """Action parameterization, primitive motion and fused-decision constants."""

    d_base: float = 40.0             # base place displacement, pixels
    lift_threshold: float = 0.95     # simulation value; 0.5 mirrors the real-robot setting
    d_min: float = 0.10              # lift point separation limits, meters
    d_max: float = 0.45
    grasp_radius: float = 0.03
    ground_epsilon: float = 0.005    # object counts as touching below this height
    lift_height: float = 0.6
    lift_seconds: float = 1.5
    # 0.05 m amplitude ejects even well-bagged objects at 2 Hz; 0.02 m keeps
    # settled contents in while still shaking loose ones off
    shake_amplitude: float = 0.02
    shake_hz: float = 2.0
    shake_seconds: float = 2.0
    post_lift_settle: float = 1.0
    move_speed: float = 0.8          # end-effector speed for pick-and-place, m/s
    raise_height: float = 0.15       # lift above grasp point before translating
    lower_height: float = 0.05       # release height above ground
    settle_after_action: float = 1.5 # settle budget after release, seconds
    max_steps: int = 10              # rearrangement interaction cap
    object_color_threshold: float = 0.45  # max-RGB cutoff separating objects from bag/floor
    lift_candidates: int = 256       # argmax candidates scanned for a feasible lift


@dataclass
class BenchConfig:
    """Everything an episode runner needs, bundled."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    opening_iou: float | None = None  # perturb the opening masks to this IoU when set
    perturb_seed: int = 0


def _coerce(current, text: str):
    if isinstance(current, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        return tuple(float(p) for p in parts)
    if current is None:
        return float(text)
    return text


def apply_overrides(cfg: BenchConfig, lines) -> BenchConfig:
    """Apply ``section.key = value`` overrides to a copy of *cfg*.

    Unknown keys raise ValueError so typos in config files fail loudly.
    """
    cfg = dataclasses.replace(
        cfg,
        solver=dataclasses.replace(cfg.solver),
        render=dataclasses.replace(cfg.render),
        policy=dataclasses.replace(cfg.policy),
    )
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            target = getattr(cfg, section, None)
            if target is None or not hasattr(target, name):
                raise ValueError(f"unknown config key: {key}")
            setattr(target, name, _coerce(getattr(target, name), value))
        else:
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key: {key}")
            setattr(cfg, key, _coerce(getattr(cfg, key), value))
    return cfg


def load_config(path, base: BenchConfig | None = None) -> BenchConfig:
    cfg = base if base is not None else BenchConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return apply_overrides(cfg, fh.readlines())


# Fixed action grids. Rearrangement sweeps a full turn in 12 steps of 30 deg
# and 8 place-distance scales; lifting sweeps undirected line slopes in 12
# steps of 15 deg. Radian values are derived once with math.cos/math.sin so
# that every consumer (including out-of-process policy implementations)
# shares bit-identical constants.
REARRANGE_ANGLES_DEG = tuple(-180.0 + 30.0 * i for i in range(12))
LIFT_ANGLES_DEG = tuple(-90.0 + 15.0 * i for i in range(12))
REARRANGE_SCALES = tuple(1.0 + 0.25 * j for j in range(8))

REARRANGE_ANGLES = tuple(d * math.pi / 180.0 for d in REARRANGE_ANGLES_DEG)
LIFT_ANGLES = tuple(d * math.pi / 180.0 for d in LIFT_ANGLES_DEG)
