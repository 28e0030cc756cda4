"""The feedback loop: white-balance, render, ask the oracle, rotate, repeat."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .chroma import (
    NEUTRAL,
    Cast,
    DomainError,
    StepSchedule,
    geo_mean,
    is_canonical,
    normalize,
    rotate_toward,
    step_angle,
    tangent_toward,
)
from .imaging import (
    ORACLE_SHORT_SIDE,
    LinearImage,
    check_ccm,
    gray_edge,
    gray_world,
    resize_shorter_side,
    shades_of_gray,
    to_pseudo_srgb,
    white_balance,
)
from .oracle import AssessContext, CastOracle, OracleError

COARSE = "coarse"
REFINEMENT = "refinement"
TRIANGLE = "triangle"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class InitMethod:
    """How the first estimate is produced.

    ``kind`` is one of ``gray_world``, ``shades_of_gray``, ``gray_edge``,
    ``neutral`` or ``fixed``.
    """

    kind: str = "gray_world"
    p: float = 6.0
    order: int = 1
    sigma: float = 2.0
    value: tuple | None = None

    @classmethod
    def parse(cls, spec) -> "InitMethod":
        """Accepts an :class:`InitMethod`, an RGB triple, or a string like
        ``shades_of_gray:6`` / ``gray_edge:2:6:2``."""
        if isinstance(spec, InitMethod):
            return spec
        if not isinstance(spec, str):
            value = np.asarray(spec, dtype=np.float64)
            if not is_canonical(value):
                value = normalize(value)
            return cls("fixed", value=tuple(float(v) for v in value))
        name, *args = spec.split(":")
        try:
            if name == "gray_world" and not args:
                return cls("gray_world")
            if name == "neutral" and not args:
                return cls("neutral")
            if name == "shades_of_gray" and len(args) <= 1:
                return cls("shades_of_gray", p=float(args[0]) if args else 6.0)
            if name == "gray_edge" and len(args) <= 3:
                defaults = ["1", "6", "2"]
                order, p, sigma = args + defaults[len(args) :]
                return cls("gray_edge", order=int(order), p=float(p), sigma=float(sigma))
        except ValueError:
            pass
        raise DomainError(f"unknown initialization {spec!r}")

    def __str__(self) -> str:
        if self.kind == "shades_of_gray":
            return f"shades_of_gray:{self.p:g}"
        if self.kind == "gray_edge":
            return f"gray_edge:{self.order}:{self.p:g}:{self.sigma:g}"
        if self.kind == "fixed":
            return "fixed:" + ",".join(repr(v) for v in self.value)
        return self.kind


@dataclass(frozen=True)
class SolverConfig:
    t_max: int = 20
    a_start: float = 3.0
    a_end: float = 0.1
    init: InitMethod = field(default_factory=InitMethod)
    reflection_interval: int | None = 6
    gamma: bool = True
    oracle_size: int = ORACLE_SHORT_SIDE

    def __post_init__(self):
        object.__setattr__(self, "init", InitMethod.parse(self.init))
        StepSchedule(self.a_start, self.a_end, self.t_max)
        if self.reflection_interval is not None and self.reflection_interval < 2:
            raise DomainError("reflection_interval must be >= 2 or None")

    @property
    def schedule(self) -> StepSchedule:
        return StepSchedule(self.a_start, self.a_end, self.t_max)

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Step:
    t: int
    estimate: np.ndarray
    label: Cast
    step_deg: float
    phase: str

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "estimate": [float(v) for v in self.estimate],
            "label": self.label.value,
            "step_deg": float(self.step_deg),
            "phase": self.phase,
        }


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    final_estimate: np.ndarray | None
    stop_reason: str | None

    @property
    def iterations(self) -> int:
        return len(self.steps)

    @property
    def labels(self) -> list[Cast]:
        return [s.label for s in self.steps]

    def to_json(self) -> dict:
        return {
            "steps": [s.to_json() for s in self.steps],
            "final_estimate": None if self.final_estimate is None else [float(v) for v in self.final_estimate],
            "stop_reason": self.stop_reason,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "Trajectory":
        steps = tuple(
            Step(
                int(s["t"]),
                np.asarray(s["estimate"], dtype=np.float64),
                Cast.parse(s["label"]),
                float(s["step_deg"]),
                s["phase"],
            )
            for s in doc["steps"]
        )
        final = doc.get("final_estimate")
        return cls(steps, None if final is None else np.asarray(final, dtype=np.float64), doc.get("stop_reason"))


class SolveError(Exception):
    """A scene was aborted; ``trajectory`` holds the steps completed so far."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def initialize(img: LinearImage, cfg: SolverConfig) -> np.ndarray:
    init = cfg.init
    if init.kind == "gray_world":
        return gray_world(img)
    if init.kind == "shades_of_gray":
        return shades_of_gray(img, init.p)
    if init.kind == "gray_edge":
        return gray_edge(img, init.order, init.p, init.sigma)
    if init.kind == "neutral":
        return NEUTRAL.copy()
    if init.kind == "fixed":
        value = np.asarray(init.value, dtype=np.float64)
        return value.copy() if is_canonical(value) else normalize(value)
    raise DomainError(f"unknown initialization {init.kind!r}")


def phase_transition_index(labels) -> int | None:
    """1-based position at which three distinct labels have first been seen."""
    seen = set()
    for i, label in enumerate(labels, start=1):
        seen.add(label)
        if len(seen) == 3:
            return i
    return None


def detect_phase_transition(labels) -> bool:
    """True iff the last label is the one that completes the set of three."""
    labels = list(labels)
    return bool(labels) and phase_transition_index(labels) == len(labels)


def detect_triangle_stop(refinement_labels) -> bool:
    """True when the last three refinement labels are pairwise distinct."""
    tail = list(refinement_labels)[-3:]
    return len(tail) == 3 and len(set(tail)) == 3


def render_for_oracle(img: LinearImage, estimate, meta_ccm, cfg: SolverConfig):
    srgb = to_pseudo_srgb(white_balance(img, estimate), meta_ccm, gamma=cfg.gamma)
    if cfg.oracle_size:
        srgb = resize_shorter_side(srgb, cfg.oracle_size)
    return srgb


class _Machine:
    """Phase and stopping bookkeeping shared by :func:`solve` and :func:`replay`."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        self.schedule = cfg.schedule
        self.labels: list[Cast] = []
        self.refinement_labels: list[Cast] = []
        self.refining = False

    def observe(self, t: int, label: Cast) -> str | None:
        """Record a label; return a stop reason or ``None`` to keep going."""
        self.labels.append(label)
        if not self.refining:
            if detect_phase_transition(self.labels):
                self.refining = True
        else:
            self.refinement_labels.append(label)
            if detect_triangle_stop(self.refinement_labels):
                return TRIANGLE
        if t == self.schedule.t_max:
            return ITERATION_LIMIT
        return None

    @property
    def phase(self) -> str:
        return REFINEMENT if self.refining else COARSE

    def advance(self, t: int, estimate: np.ndarray, label: Cast) -> tuple[np.ndarray, float]:
        angle = step_angle(self.schedule, t, self.refining)
        if tangent_toward(estimate, label) is None:
            return estimate, 0.0
        return rotate_toward(estimate, label, angle), angle


def _final(estimates) -> np.ndarray:
    return geo_mean(*estimates[-3:])


def solve(
    img: LinearImage,
    meta,
    oracle: CastOracle,
    cfg: SolverConfig | None = None,
    scene_id: str | None = None,
) -> Trajectory:
    """Run the feedback loop on one scene.

    Labels are judged on the image balanced with estimate ``t``; the update
    then yields estimate ``t + 1``. The final estimate is the normalized
    geometric mean of the last three recorded estimates (fewer if the run
    stopped earlier).
    """
    cfg = cfg or SolverConfig()
    ccm = check_ccm(meta.ccm_cam_to_xyz)
    machine = _Machine(cfg)
    estimate = initialize(img, cfg)
    steps: list[Step] = []
    priors = ()
    for t in range(1, cfg.t_max + 1):
        ctx = AssessContext(iteration=t, estimate=estimate, scene_id=scene_id)
        try:
            view = render_for_oracle(img, estimate, ccm, cfg)
            if oracle.supports_priors and (
                t == 1 or (cfg.reflection_interval and t % cfg.reflection_interval == 0)
            ):
                priors = oracle.extract_priors(view, ctx)
            label = Cast.parse(oracle.assess(view, priors, ctx))
        except OracleError as exc:
            partial = Trajectory(tuple(steps), None, None)
            raise SolveError(f"oracle failed at iteration {t}: {exc}", partial) from exc
        stop = machine.observe(t, label)
        if stop is not None:
            steps.append(Step(t, estimate, label, 0.0, machine.phase))
            break
        nxt, applied = machine.advance(t, estimate, label)
        steps.append(Step(t, estimate, label, applied, machine.phase))
        estimate = nxt
    return Trajectory(tuple(steps), _final([s.estimate for s in steps]), stop)


@dataclass(frozen=True)
class ReplayReport:
    ok: bool
    first_divergent_step: int | None = None
    detail: str = ""


def replay(
    trajectory: Trajectory,
    img: LinearImage,
    meta,
    cfg: SolverConfig | None = None,
    oracle: CastOracle | None = None,
    scene_id: str | None = None,
    atol: float = 1e-12,
) -> ReplayReport:
    """Recompute a trajectory from its recorded labels and compare.

    Without an oracle, a step diverges when its recorded estimate differs
    from the one recomputed from earlier labels. With an oracle, each
    recorded label is also re-queried, so a tampered label is caught at its
    own step.
    """
    cfg = cfg or SolverConfig()
    ccm = check_ccm(meta.ccm_cam_to_xyz)
    machine = _Machine(cfg)
    estimate = initialize(img, cfg)
    priors = ()
    steps = trajectory.steps
    if not steps:
        return ReplayReport(False, None, "trajectory has no steps")
    angle_mismatch = None
    for i, step in enumerate(steps):
        t = i + 1
        if step.t != t:
            return ReplayReport(False, step.t, f"step numbering breaks at position {t}")
        if not is_canonical(step.estimate) or np.max(np.abs(step.estimate - estimate)) > atol:
            return ReplayReport(False, t, f"estimate differs at step {t}")
        if angle_mismatch is not None:
            return ReplayReport(False, angle_mismatch, f"step angle differs at step {angle_mismatch}")
        if oracle is not None:
            ctx = AssessContext(iteration=t, estimate=estimate, scene_id=scene_id)
            view = render_for_oracle(img, estimate, ccm, cfg)
            if oracle.supports_priors and (
                t == 1 or (cfg.reflection_interval and t % cfg.reflection_interval == 0)
            ):
                priors = oracle.extract_priors(view, ctx)
            again = Cast.parse(oracle.assess(view, priors, ctx))
            if again is not step.label:
                return ReplayReport(False, t, f"label at step {t} is {step.label}, oracle says {again}")
        stop = machine.observe(t, step.label)
        if step.phase != machine.phase:
            return ReplayReport(False, t, f"phase differs at step {t}")
        if stop is not None:
            if t != len(steps):
                return ReplayReport(False, t + 1, f"run should have stopped at step {t}")
            if stop != trajectory.stop_reason:
                return ReplayReport(False, t, f"stop reason {trajectory.stop_reason!r}, expected {stop!r}")
            if step.step_deg != 0.0:
                return ReplayReport(False, t, "terminal step records a rotation")
            break
        estimate, applied = machine.advance(t, estimate, step.label)
        if abs(applied - step.step_deg) > atol:
            angle_mismatch = t
    else:
        return ReplayReport(False, len(steps), "trajectory ends before the stopping rule fires")
    final = _final([s.estimate for s in steps])
    if trajectory.final_estimate is None or np.max(np.abs(final - trajectory.final_estimate)) > atol:
        return ReplayReport(False, len(steps), "final estimate differs")
    return ReplayReport(True)
