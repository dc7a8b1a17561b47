"""
Anonymizer Service - end-to-end reverse-personalization pipeline

extract identity -> invert under the null identity -> regenerate with
reverse guidance, optionally swapping the attribute.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from config import RunConfig, SandboxConfig, load_run_config
from core.attribute_control import attribute_swap
from core.generation import sample_with_trajectory
from core.inversion import ddim_invert, ddpm_invert, inversion_config
from core.schedule import NoiseSchedule
from core.world import (
    GmmWorld,
    as_batch,
    encode_identity,
    extract_attribute,
    extract_identity,
    posterior_attribute,
    posterior_identity,
)
from sandbox_types import Condition, GuidanceConfig, LatentTrajectory, MetricsRecord, SolverKind
from sandbox_types.errors import UnknownConditionError
from services.metrics_service import chance_level, evaluate_batch
from utils.helpers import log_debug, log_info, log_warning, relative_error


@dataclass
class AnonymizationResult:
    """Single-sample anonymization output"""
    output: np.ndarray
    trajectory: LatentTrajectory
    report: MetricsRecord


@dataclass
class TrajectoryGroup:
    """Samples that shared one inversion and one generation condition"""
    indices: np.ndarray
    trajectory: LatentTrajectory
    generation_condition: Condition


@dataclass
class BatchResult:
    """Per-sample results of a batch anonymization, in input order"""
    inputs: np.ndarray
    outputs: np.ndarray
    input_identities: np.ndarray
    output_identities: np.ndarray
    input_attributes: np.ndarray
    output_attributes: np.ndarray
    target_attributes: np.ndarray
    reid: np.ndarray
    attr_match: np.ndarray
    reconstruction_errors: np.ndarray
    metrics: MetricsRecord
    groups: List[TrajectoryGroup] = field(default_factory=list)

    def trajectory_for(self, index: int) -> LatentTrajectory:
        for group in self.groups:
            position = np.flatnonzero(group.indices == index)
            if position.size:
                return group.trajectory.select(int(position[0]))
        raise IndexError(f"no trajectory recorded for sample {index}")


@dataclass
class RecoveryReport:
    """Outcome of re-anonymizing anonymized outputs"""
    anonymized_reid_rate: float
    recovered_reid_rate: float
    unconditional_attack_reid_rate: float
    chance_level: float
    identities: int
    single_identity_world: bool
    recovered: np.ndarray
    reid: np.ndarray

    @property
    def recovery_gain(self) -> float:
        return self.recovered_reid_rate - self.anonymized_reid_rate

    def to_dict(self) -> Dict:
        return {
            "anonymized_reid_rate": self.anonymized_reid_rate,
            "recovered_reid_rate": self.recovered_reid_rate,
            "unconditional_attack_reid_rate": self.unconditional_attack_reid_rate,
            "chance_level": self.chance_level,
            "identities": self.identities,
            "single_identity_world": self.single_identity_world,
            "recovery_gain": self.recovery_gain,
        }


def _invert(points: np.ndarray, w: GmmWorld, s: NoiseSchedule, c: Condition, g: GuidanceConfig,
            seed: int, indices: Sequence[int]) -> LatentTrajectory:
    if g.solver is SolverKind.DDIM:
        return ddim_invert(points, w, s, c)
    return ddpm_invert(points, w, s, c, solver=g.solver, seed=seed, indices=indices)


def _generate(traj: LatentTrajectory, w: GmmWorld, s: NoiseSchedule, c_gen: Condition,
              new_attr: Optional[int], g: GuidanceConfig) -> np.ndarray:
    if new_attr is not None:
        return attribute_swap(traj, w, s, c_gen, new_attr, g)
    return sample_with_trajectory(traj, w, s, c_gen, g)


def _check_new_attr(w: GmmWorld, new_attr: Optional[int]):
    if new_attr is not None and new_attr not in w.attributes:
        raise UnknownConditionError(f"unknown attribute label {new_attr} (world has {list(w.attributes)})")


def anonymize(x0, w: GmmWorld, s: NoiseSchedule, g: GuidanceConfig, keep_attr: bool = True,
              new_attr: Optional[int] = None, seed: int = SandboxConfig.SEED,
              index: int = 0) -> AnonymizationResult:
    """
    Anonymize one point.

    Args:
        x0: Input point (d,)
        w: World
        s: Noise schedule
        g: Guidance settings (lambda_cfg typically negative)
        keep_attr: Invert and generate under the input's attribute
        new_attr: Attribute to swap to (implies attribute conditioning)
        seed: Base seed
        index: Sample index selecting the forward-noise stream

    Returns:
        AnonymizationResult with output, trajectory and single-sample report
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _check_new_attr(w, new_attr)

    # Step 1: Extract identity embedding (and attribute, when controlled)
    c_id = extract_identity(w, x0)
    attribute = extract_attribute(w, x0) if (keep_attr or new_attr is not None) else None

    # Step 2: Invert under the null identity
    traj = _invert(x0, w, s, Condition(identity=None, attribute=attribute), g, seed, [index])

    # Step 3: Regenerate with reverse guidance
    output = _generate(traj, w, s, Condition(identity=c_id.identity, attribute=attribute), new_attr, g)

    # Step 4: Single-sample report
    target = new_attr if new_attr is not None else extract_attribute(w, x0)
    report = evaluate_batch(x0[None, :], output[None, :], w, g, target_attributes=[target], seed=seed)
    return AnonymizationResult(output=output, trajectory=traj, report=report)


def anonymize_batch(points, w: GmmWorld, s: NoiseSchedule, g: GuidanceConfig, keep_attr: bool = True,
                    new_attr: Optional[int] = None, seed: int = SandboxConfig.SEED,
                    progress: bool = False) -> BatchResult:
    """
    Anonymize a batch of points.

    Samples are grouped by their extracted (identity, attribute) condition
    and each group is inverted and regenerated together. Sample i always
    uses the forward-noise stream (seed, i), so results do not depend on
    grouping. Outputs come back in input order.
    """
    batch, _ = as_batch(w, points)
    _check_new_attr(w, new_attr)
    n = batch.shape[0]
    controlled = keep_attr or new_attr is not None

    identities_in, _ = posterior_identity(w, batch)
    attributes_in, _ = posterior_attribute(w, batch)

    outputs = np.empty_like(batch)
    errors = np.empty(n, dtype=np.float64)
    groups: List[TrajectoryGroup] = []
    g_inv = inversion_config(s, g.solver)

    keys: Dict[Tuple[int, Optional[int]], List[int]] = {}
    for i in range(n):
        attribute = int(attributes_in[i]) if controlled else None
        keys.setdefault((int(identities_in[i]), attribute), []).append(i)
    ordered = sorted(keys.items(), key=lambda item: (item[0][0], -1 if item[0][1] is None else item[0][1]))

    for (identity, attribute), members in tqdm(ordered, desc="anonymize", disable=not progress, leave=False):
        indices = np.asarray(members, dtype=np.int64)
        c_inv = Condition(identity=None, attribute=attribute)
        c_gen = Condition(identity=encode_identity(w, identity), attribute=attribute)

        traj = _invert(batch[indices], w, s, c_inv, g, seed, indices.tolist())
        outputs[indices] = _generate(traj, w, s, c_gen, new_attr, g)
        replay = sample_with_trajectory(traj, w, s, c_inv, g_inv)
        errors[indices] = relative_error(replay, batch[indices])
        groups.append(TrajectoryGroup(indices=indices, trajectory=traj, generation_condition=c_gen))
        log_debug(f"group identity={identity} attribute={attribute}: {indices.size} samples")

    if g.solver is not SolverKind.DDIM and errors.max() > SandboxConfig.RECONSTRUCTION_TOLERANCE:
        log_warning(f"DDPM reconstruction error {errors.max():.3e} exceeds "
                    f"{SandboxConfig.RECONSTRUCTION_TOLERANCE:g}")

    targets = np.full(n, new_attr, dtype=np.int64) if new_attr is not None else attributes_in.astype(np.int64)
    identities_out, _ = posterior_identity(w, outputs)
    attributes_out, _ = posterior_attribute(w, outputs)
    metrics = evaluate_batch(batch, outputs, w, g, target_attributes=targets, seed=seed,
                             extras={"max_reconstruction_error": float(errors.max())})

    return BatchResult(
        inputs=batch,
        outputs=outputs,
        input_identities=identities_in,
        output_identities=identities_out,
        input_attributes=attributes_in,
        output_attributes=attributes_out,
        target_attributes=targets,
        reid=identities_out == identities_in,
        attr_match=attributes_out == targets,
        reconstruction_errors=errors,
        metrics=metrics,
        groups=groups,
    )


def recovery_attack(anonymized, w: GmmWorld, s: NoiseSchedule, g: GuidanceConfig, seed: int,
                    original_identity: int, index: int = 0) -> Tuple[np.ndarray, bool]:
    """
    Re-anonymize an anonymized point and test whether the original identity reappears.

    original_identity is used for the final comparison only.
    """
    recovered = anonymize(anonymized, w, s, g, keep_attr=True, seed=seed, index=index).output
    label, _ = posterior_identity(w, recovered)
    return recovered, label == int(original_identity)


def recovery_batch(anonymized, originals, w: GmmWorld, s: NoiseSchedule, g: GuidanceConfig,
                   seed: int = SandboxConfig.SEED, progress: bool = False) -> RecoveryReport:
    """
    Batch recovery test.

    Runs the pipeline again on the anonymized outputs (extracting their
    identity afresh) and, as a second attack, a pure unconditional replay at
    lambda_cfg = 0; both are scored against the originals' identities.
    """
    anonymized, _ = as_batch(w, anonymized)
    originals, _ = as_batch(w, originals)
    original_identities, _ = posterior_identity(w, originals)
    anonymized_identities, _ = posterior_identity(w, anonymized)

    attack = anonymize_batch(anonymized, w, s, g, keep_attr=True, seed=seed, progress=progress)
    unconditional = anonymize_batch(anonymized, w, s, g.with_overrides(lambda_cfg=0.0), keep_attr=True,
                                    seed=seed, progress=progress)
    reid = attack.output_identities == original_identities

    report = RecoveryReport(
        anonymized_reid_rate=float(np.mean(anonymized_identities == original_identities)),
        recovered_reid_rate=float(np.mean(reid)),
        unconditional_attack_reid_rate=float(np.mean(unconditional.output_identities == original_identities)),
        chance_level=chance_level(w),
        identities=len(w.identities),
        single_identity_world=len(w.identities) == 1,
        recovered=attack.outputs,
        reid=reid,
    )
    log_info(f"Recovery: anonymized re-ID {report.anonymized_reid_rate:.3f}, "
             f"recovered re-ID {report.recovered_reid_rate:.3f}")
    return report


class AnonymizerService:
    """Service layer bundling world, schedule and guidance for the command line"""

    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or load_run_config(None)
        self.world = self.config.build_world()
        self.schedule = self.config.build_schedule()
        self.guidance = self.config.guidance_config(steps=self.schedule.T)
        log_debug(f"World: {self.world.size} components, dim {self.world.dim}; "
                  f"schedule: {self.schedule.kind.value} T={self.schedule.T}")

    def anonymize_points(self, points, keep_attr: bool = True, new_attr: Optional[int] = None,
                         seed: Optional[int] = None, guidance: Optional[GuidanceConfig] = None,
                         progress: bool = True) -> BatchResult:
        """
        Anonymize a batch with the configured (or overridden) guidance

        Args:
            points: Input points (n, d)
            keep_attr: Keep the input attribute
            new_attr: Attribute to swap to
            seed: Base seed; defaults to the run seed
            guidance: Guidance override

        Returns:
            BatchResult
        """
        seed = self.config.run.seed if seed is None else seed
        g = guidance or self.guidance
        log_info(f"Anonymizing {len(points)} samples (lambda_cfg={g.lambda_cfg}, "
                 f"lambda_ipa={g.lambda_ipa}, solver={g.solver.value})")
        return anonymize_batch(points, self.world, self.schedule, g, keep_attr=keep_attr,
                               new_attr=new_attr, seed=seed, progress=progress)

    def recover(self, anonymized, originals, seed: Optional[int] = None,
                guidance: Optional[GuidanceConfig] = None) -> RecoveryReport:
        seed = self.config.run.seed if seed is None else seed
        return recovery_batch(anonymized, originals, self.world, self.schedule, guidance or self.guidance,
                              seed=seed, progress=True)
