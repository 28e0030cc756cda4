"""Dataset-level evaluation: angular-error statistics, protocol runs, plots."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .chroma import DomainError, angular_error_deg, chromaticity_point, normalize
from .oracle import CastOracle
from .scene import Scene, SceneError, list_scene_dirs, read_scene
from .solver import SolveError, SolverConfig, Trajectory, solve

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scene_id", "error_deg", "iterations", "stop_reason")
STAT_COLUMNS = (("mean", "Mean"), ("median", "Med."), ("trimean", "Tri."), ("best25_mean", "B.25%"), ("worst25_mean", "W.25%"))


def _sorted(errors) -> np.ndarray:
    arr = np.sort(np.asarray(list(errors), dtype=np.float64))
    if arr.size == 0:
        raise DomainError("no errors to summarize")
    if not np.all(np.isfinite(arr)):
        raise DomainError("errors must be finite")
    return arr


def quantile(sorted_errors: np.ndarray, q: float) -> float:
    """Linear interpolation at rank ``q * (n - 1)`` of a sorted array."""
    n = sorted_errors.size
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(sorted_errors[lo] + frac * (sorted_errors[hi] - sorted_errors[lo]))


def trimean(errors) -> float:
    s = _sorted(errors)
    return (quantile(s, 0.25) + 2.0 * quantile(s, 0.5) + quantile(s, 0.75)) / 4.0


@dataclass
class EvalReport:
    n_scenes: int
    mean: float
    median: float
    trimean: float
    best25_mean: float
    worst25_mean: float
    per_scene: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        head = "".join(f"{label:>9}" for _, label in STAT_COLUMNS)
        row = "".join(f"{getattr(self, key):9.2f}" for key, _ in STAT_COLUMNS)
        return f"{'n':>6}{head}\n{self.n_scenes:>6}{row}"


def summarize(errors, per_scene=None) -> EvalReport:
    """The five standard statistics; best/worst use ``max(1, n // 4)`` values."""
    s = _sorted(errors)
    k = max(1, s.size // 4)
    return EvalReport(
        n_scenes=int(s.size),
        mean=float(s.mean()),
        median=quantile(s, 0.5),
        trimean=trimean(s),
        best25_mean=float(s[:k].mean()),
        worst25_mean=float(s[-k:].mean()),
        per_scene=list(per_scene or []),
    )


class RunError(SceneError):
    """Every scene of a run failed; ``failures`` maps scene id to reason."""

    def __init__(self, failures: dict):
        super().__init__(f"all {len(failures)} scenes failed")
        self.failures = failures

    @property
    def oracle_failures_only(self) -> bool:
        return all(why.startswith("SolveError") for why in self.failures.values())


@dataclass
class RunResult:
    report: EvalReport
    trajectories: dict
    failures: dict


OracleFactory = Callable[[Scene], CastOracle]


def _scene_sources(source) -> list:
    if isinstance(source, (str, os.PathLike)):
        dirs = list_scene_dirs(source)
        if not dirs:
            raise SceneError(f"no scenes under {source}")
        return dirs
    scenes = list(source)
    if not scenes:
        raise SceneError("no scenes to evaluate")
    return scenes


def _run_one(item, oracle_factory: OracleFactory, cfg: SolverConfig):
    scene_id = item.scene_id if isinstance(item, Scene) else Path(item).name
    try:
        scene = item if isinstance(item, Scene) else read_scene(item)
        traj = solve(scene.image, scene.meta, oracle_factory(scene), cfg, scene_id=scene.scene_id)
    except (SceneError, SolveError, DomainError) as exc:
        return scene_id, None, f"{type(exc).__name__}: {exc}"
    err = angular_error_deg(traj.final_estimate, scene.meta.illuminant_gt)
    return scene_id, (traj, err), None


def format_csv(per_scene: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in sorted(per_scene, key=lambda r: r["scene_id"]):
        writer.writerow([row["scene_id"], repr(row["error_deg"]), row["iterations"], row["stop_reason"]])
    return buf.getvalue()


def run_protocol(
    source,
    oracle_factory: OracleFactory,
    cfg: SolverConfig | None = None,
    jobs: int = 1,
    out_dir=None,
) -> RunResult:
    """Solve every scene and summarize the angular errors.

    ``source`` is a dataset root or an iterable of :class:`Scene`. With
    ``out_dir``, writes ``results.csv``, ``summary.json`` and
    ``trajectories/<scene_id>.json`` (plus ``failures.json`` when any scene
    failed). Results are folded in scene-id order, so ``jobs`` never changes
    the output.
    """
    cfg = cfg or SolverConfig()
    items = _scene_sources(source)
    if jobs <= 1:
        results = [_run_one(it, oracle_factory, cfg) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda it: _run_one(it, oracle_factory, cfg), items))
    results.sort(key=lambda r: r[0])
    trajectories, failures, per_scene = {}, {}, []
    for scene_id, ok, why in results:
        if ok is None:
            failures[scene_id] = why
            continue
        traj, err = ok
        trajectories[scene_id] = traj
        per_scene.append(
            {"scene_id": scene_id, "error_deg": err, "stop_reason": traj.stop_reason, "iterations": traj.iterations}
        )
    if failures:
        log.warning("%d of %d scenes failed", len(failures), len(results))
    if not per_scene:
        raise RunError(failures)
    report = summarize([r["error_deg"] for r in per_scene], per_scene)
    if out_dir is not None:
        write_artifacts(out_dir, report, trajectories, failures)
    return RunResult(report, trajectories, failures)


def write_artifacts(out_dir, report: EvalReport, trajectories: dict, failures: dict):
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(format_csv(report.per_scene))
    (out / "summary.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    for scene_id, traj in trajectories.items():
        (out / "trajectories" / f"{scene_id}.json").write_text(traj.dumps())
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- SVG

SVG_SIZE = 480
SVG_MARGIN = 56


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def export_trajectory_svg(trajectory: Trajectory, gt, path) -> Path:
    """Plot the estimates in (r, g) chromaticity with the ground truth marked."""
    points = [chromaticity_point(s.estimate) for s in trajectory.steps]
    gt_pt = chromaticity_point(normalize(gt))
    final_pt = chromaticity_point(trajectory.final_estimate) if trajectory.final_estimate is not None else None
    allpts = points + [gt_pt] + ([final_pt] if final_pt else [])
    rs = [p[0] for p in allpts]
    gs = [p[1] for p in allpts]
    span = max(max(rs) - min(rs), max(gs) - min(gs), 0.01) * 1.2
    rc = 0.5 * (max(rs) + min(rs))
    gc = 0.5 * (max(gs) + min(gs))
    r0, g0 = rc - span / 2, gc - span / 2
    inner = SVG_SIZE - 2 * SVG_MARGIN

    def xy(p):
        x = SVG_MARGIN + (p[0] - r0) / span * inner
        y = SVG_SIZE - SVG_MARGIN - (p[1] - g0) / span * inner
        return _fmt(x), _fmt(y)

    lo, hi = SVG_MARGIN, SVG_SIZE - SVG_MARGIN
    poly = " ".join(",".join(xy(p)) for p in points)
    gx, gy = xy(gt_pt)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
        f'<line id="axis-r" x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}" stroke="black"/>',
        f'<line id="axis-g" x1="{lo}" y1="{hi}" x2="{lo}" y2="{lo}" stroke="black"/>',
        f'<text x="{SVG_SIZE // 2}" y="{SVG_SIZE - 16}" text-anchor="middle" font-size="14">r</text>',
        f'<text x="16" y="{SVG_SIZE // 2}" text-anchor="middle" font-size="14">g</text>',
        f'<text x="{lo}" y="{hi + 18}" font-size="10">{r0:.4f}</text>',
        f'<text x="{hi}" y="{hi + 18}" text-anchor="end" font-size="10">{r0 + span:.4f}</text>',
        f'<text x="{lo - 4}" y="{hi}" text-anchor="end" font-size="10">{g0:.4f}</text>',
        f'<text x="{lo - 4}" y="{lo + 10}" text-anchor="end" font-size="10">{g0 + span:.4f}</text>',
        f'<polyline id="trajectory" points="{poly}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>',
    ]
    for i, p in enumerate(points, start=1):
        x, y = xy(p)
        lines.append(f'<circle class="estimate" data-t="{i}" cx="{x}" cy="{y}" r="2.5" fill="#1f5fbf"/>')
    if final_pt is not None:
        fx, fy = xy(final_pt)
        lines.append(f'<circle id="final" cx="{fx}" cy="{fy}" r="4" fill="none" stroke="#d08000" stroke-width="1.5"/>')
    lines.append(f'<path id="gt" d="M {gx} {gy} m -6 -6 l 12 12 m 0 -12 l -12 12" stroke="#c00000" stroke-width="2"/>')
    lines.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
