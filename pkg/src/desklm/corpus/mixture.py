"""Phased data-mixture schedules.

A schedule maps each source name to a piecewise-linear weight trajectory
over the run fraction [0, 1].  Phase switches (for a late-run mixture
change) are encoded as two control points sharing one x: evaluation is
right-continuous there, so the later phase's weights take effect from the
boundary step inclusive.  ``weights_at`` renormalizes the evaluated weights
to a probability vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear y(x) on [0, 1] with clamped ends."""

    points: tuple  # ((x, y), ...) sorted by x; duplicate x = right-continuous step

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if not pts:
            raise ValueError("trajectory needs at least one control point")
        for (x0, _), (x1, _) in zip(pts, pts[1:]):
            if x1 < x0:
                raise ValueError("trajectory points must be sorted by x")
        for x, y in pts:
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"control point x={x} outside [0, 1]")
            if y < 0.0:
                raise ValueError(f"negative weight {y}")
        object.__setattr__(self, "points", pts)

    def at(self, x: float) -> float:
        pts = self.points
        if x < pts[0][0]:
            return pts[0][1]
        if x >= pts[-1][0]:
            return pts[-1][1]
        # rightmost segment whose half-open span [x0, x1) contains x, so a
        # duplicated x is a right-continuous step (later phase wins at x)
        for i in range(len(pts) - 1, 0, -1):
            x0, y0 = pts[i - 1]
            x1, y1 = pts[i]
            if x0 <= x < x1:
                t = (x - x0) / (x1 - x0)
                return (1.0 - t) * y0 + t * y1
        return pts[-1][1]  # unreachable: spans cover [first, last)


@dataclass(frozen=True)
class MixtureSchedule:
    sources: tuple  # ((name, Trajectory), ...)

    def __post_init__(self):
        pairs = tuple(self.sources)
        names = [n for n, _ in pairs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate source names in schedule")
        if not pairs:
            raise ValueError("schedule needs at least one source")
        object.__setattr__(self, "sources", pairs)

    @property
    def names(self):
        return [n for n, _ in self.sources]

    def to_json(self) -> dict:
        return {"sources": [{"name": n, "points": [list(p) for p in t.points]}
                            for n, t in self.sources]}

    @classmethod
    def from_json(cls, obj: dict) -> "MixtureSchedule":
        if not isinstance(obj, dict) or "sources" not in obj:
            raise ValueError("mixture schedule JSON needs a 'sources' list")
        extra_top = set(obj) - {"sources", "_comment"}
        if extra_top:
            raise ValueError(f"unknown mixture schedule keys: "
                             f"{sorted(extra_top)}")
        pairs = []
        for i, entry in enumerate(obj["sources"]):
            extra = set(entry) - {"name", "points", "weight"}
            if extra:
                raise ValueError(
                    f"sources[{i}]: unknown keys {sorted(extra)}")
            name = entry.get("name")
            if not isinstance(name, str) or not name:
                raise ValueError(f"sources[{i}].name must be a non-empty string")
            if "points" in entry:
                traj = Trajectory(tuple((p[0], p[1]) for p in entry["points"]))
            elif "weight" in entry:
                w = float(entry["weight"])
                traj = Trajectory(((0.0, w), (1.0, w)))
            else:
                raise ValueError(f"sources[{i}] needs 'points' or 'weight'")
            pairs.append((name, traj))
        return cls(tuple(pairs))

    @classmethod
    def constant(cls, weights: dict) -> "MixtureSchedule":
        return cls(tuple((n, Trajectory(((0.0, w), (1.0, w))))
                         for n, w in weights.items()))


def weights_at(schedule: MixtureSchedule, step: int, total_steps: int) -> dict:
    """Normalized source weights at ``step`` of ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps if total_steps else 0.0
    raw = {name: traj.at(frac) for name, traj in schedule.sources}
    total = math.fsum(raw.values())
    if total <= 0.0:
        raise ValueError(f"mixture weights sum to {total} at step {step}")
    out = {name: w / total for name, w in raw.items()}
    assert abs(math.fsum(out.values()) - 1.0) < 1e-9
    return out


def load_preset(name: str) -> MixtureSchedule:
    """Loads a named mixture preset shipped with the package."""
    ref = resources.files("desklm.presets").joinpath(f"mixture-{name}.json")
    try:
        payload = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValueError(f"unknown mixture preset {name!r}") from None
    obj = json.loads(payload)
    obj.pop("_comment", None)
    return MixtureSchedule.from_json(obj)
