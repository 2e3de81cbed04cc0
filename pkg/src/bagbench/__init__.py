"""Desk-scale heterogeneous bagging simulation benchmark and policy harness."""

from .assets import (BagAsset, ClothAsset, RigidAsset, Scene, TaskInfeasibleError,
                     TaskSpec, build_scene, load_task, sample_task, save_task)
from .bench import (BenchmarkReport, EpisodeTrace, collect_epsilon_greedy,
                    evaluate, run_episode)
from .config import BenchConfig, PolicyConfig, RenderConfig, SolverConfig
from .masks import (MaskGeometryError, boundary_from_filled, fill_from_boundary,
                    fill_polygon, iou, perturb_polygon)
from .physics import (BodyKind, InvalidGraspError, SimulationDivergedError,
                      World, nearest_particle, settle, step)
from .policy import (Decision, DecisionKind, EpisodeState, HeuristicLiftVF,
                     HeuristicRearrangeVF, LiftAction, Mode, RearrangeAction,
                     TransformBatch, ValueMapBatch, decode_lift, decode_rearrange,
                     fused_step, heuristic_lift, heuristic_rearrange,
                     make_transform_batch, make_value_function, max_width_lift,
                     rearrange_reward)
from .primitives import LiftOutcome, execute_lift, execute_rearrange
from .render import MaskSet, Observation, ground_truth_opening, render
from .tensorio import EpisodeSample, StepSample, export_dataset, read_dataset, read_tensor, write_tensor

__version__ = "0.1.0"
