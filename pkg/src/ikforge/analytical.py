"""Closed-form IK for the two shipped geometries that admit one.

``solve_planar3`` handles the planar three-link arm (two elbow branches) and
``solve_wrist6`` the six-joint arm with a spherical wrist (shoulder x elbow x
wrist = up to eight branches). Both return every branch; joint-limit
filtering is opt-in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ikforge import quaternion as quat
from ikforge.chain import ChainSpec, Pose, is_feasible

Z = np.array([0.0, 0.0, 1.0])
Y = np.array([0.0, 1.0, 0.0])

# |cos| overshoot tolerated at the workspace boundary before a branch is dropped
_COS_SLACK = 1e-10
_WRIST_SINGULAR = 1e-9
_DUPLICATE = 1e-9


class GeometryError(ValueError):
    """The chain does not have the structure a closed-form solver needs."""


@dataclass
class AnalyticalSolutionSet:
    solutions: list = field(default_factory=list)
    reachable: bool = False

    def __len__(self):
        return len(self.solutions)


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi if not -math.pi < a <= math.pi else a


def _dedupe(configs):
    out = []
    for c in configs:
        if not out or np.min(np.max(np.abs(np.asarray(out) - c), axis=1)) > _DUPLICATE:
            out.append(c)
    return out


def _finish(chain, configs, filter_limits):
    configs = _dedupe(configs)
    if filter_limits:
        configs = [c for c in configs if is_feasible(chain, c)]
    return AnalyticalSolutionSet(configs, reachable=bool(configs))


def _is_pure(t, along=None):
    if not np.allclose(t.rotation, quat.IDENTITY, atol=1e-12):
        return False
    if along is None:
        return True
    off = t.translation - np.dot(t.translation, along) * along
    return bool(np.all(np.abs(off) < 1e-12))


# -- planar three-link arm ----------------------------------------------------

@lru_cache(maxsize=64)
def _geometry(chain, kind):
    try:
        return (planar3_links if kind == "planar3" else wrist6_lengths)(chain), None
    except GeometryError as err:
        return None, str(err)


def _cached(chain, kind):
    dims, err = _geometry(chain, kind)
    if err is not None:
        raise GeometryError(err)
    return dims


def planar3_links(chain: ChainSpec):
    """Link lengths ``(a1, a2, a3)`` of a planar 3R chain laid out along x."""
    x = np.array([1.0, 0.0, 0.0])
    if chain.dof != 3 or not all(np.allclose(j.axis, Z) for j in chain.joints):
        raise GeometryError("planar solver needs three joints with z axes")
    j1, j2, j3 = chain.joints
    ok = (np.allclose(j1.pre_transform.translation, 0.0) and _is_pure(j1.pre_transform)
          and _is_pure(j2.pre_transform, x) and _is_pure(j3.pre_transform, x)
          and _is_pure(chain.tool, x))
    if not ok:
        raise GeometryError("planar solver needs links laid out along x without offsets")
    return (float(j2.pre_transform.translation[0]), float(j3.pre_transform.translation[0]),
            float(chain.tool.translation[0]))


def _two_link(x, y, a1, a2):
    """Both elbow solutions ``(t1, t2)`` reaching ``(x, y)``, elbow-down first."""
    c2 = (x * x + y * y - a1 * a1 - a2 * a2) / (2.0 * a1 * a2)
    if abs(c2) > 1.0 + _COS_SLACK:
        return []
    c2 = min(1.0, max(-1.0, c2))
    base = math.atan2(y, x)
    out = []
    for t2 in (math.acos(c2), -math.acos(c2)):
        t1 = base - math.atan2(a2 * math.sin(t2), a1 + a2 * math.cos(t2))
        out.append((t1, t2))
    return out


def solve_planar3(chain: ChainSpec, target: Pose, filter_limits=False) -> AnalyticalSolutionSet:
    a1, a2, a3 = _cached(chain, "planar3")
    q = target.orientation
    if abs(target.position[2]) > 1e-9 or abs(q[1]) > 1e-9 or abs(q[2]) > 1e-9:
        raise ValueError("planar solver needs a target in the z = 0 plane rotating about z")
    phi = 2.0 * math.atan2(q[3], q[0])
    x = target.position[0] - a3 * math.cos(phi)
    y = target.position[1] - a3 * math.sin(phi)
    configs = []
    for t1, t2 in _two_link(x, y, a1, a2):
        t1 = _wrap(t1)
        configs.append(np.array([t1, t2, _wrap(phi - t1 - t2)]))
    return _finish(chain, configs, filter_limits)


# -- six-joint arm with spherical wrist ---------------------------------------

def wrist6_lengths(chain: ChainSpec):
    """``(d1, a2, d4, d6)``: shoulder height, upper arm, forearm, flange offset.

    Requires the axis pattern z, y, y, z, y, z with all offsets along local z
    and joints 5 and 6 at the same point (spherical wrist).
    """
    if chain.dof != 6:
        raise GeometryError("wrist solver needs six joints")
    pattern = (Z, Y, Y, Z, Y, Z)
    if not all(np.allclose(j.axis, a) for j, a in zip(chain.joints, pattern)):
        raise GeometryError("wrist solver needs the axis pattern z, y, y, z, y, z")
    tfs = [j.pre_transform for j in chain.joints] + [chain.tool]
    if not all(_is_pure(t, Z) for t in tfs):
        raise GeometryError("wrist solver needs all link offsets along local z")
    d = [float(t.translation[2]) for t in tfs]
    if abs(d[5]) > 1e-12:
        raise GeometryError("wrist axes are not concurrent (not a spherical wrist)")
    return d[0] + d[1], d[2], d[3] + d[4], d[6]


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _zyz(m):
    """Solutions ``(t4, t5, t6)`` of ``Rz(t4) Ry(t5) Rz(t6) = m``, ``t5 >= 0`` first."""
    sb = math.hypot(m[0, 2], m[1, 2])
    if sb < _WRIST_SINGULAR:
        # axes 4 and 6 collinear: only t4 + t6 (or t6 - t4) is determined
        if m[2, 2] > 0.0:
            return [(0.0, 0.0, math.atan2(m[1, 0], m[0, 0]))]
        return [(0.0, math.pi, math.atan2(m[1, 0], -m[0, 0]))]
    t5 = math.atan2(sb, m[2, 2])
    t4 = math.atan2(m[1, 2], m[0, 2])
    t6 = math.atan2(m[2, 1], -m[2, 0])
    return [(t4, t5, t6), (_wrap(t4 + math.pi), -t5, _wrap(t6 + math.pi))]


def solve_wrist6(chain: ChainSpec, target: Pose, filter_limits=False) -> AnalyticalSolutionSet:
    d1, a2, d4, d6 = _cached(chain, "wrist6")
    r_target = target.rotation_matrix()
    center = target.position - d6 * r_target[:, 2]
    radial = math.hypot(center[0], center[1])
    height = center[2] - d1
    t1_front = math.atan2(center[1], center[0]) if radial > 1e-12 else 0.0

    configs = []
    # shoulder front (reach forward) then back (reach over the base axis)
    for t1, u in ((t1_front, radial), (_wrap(t1_front + math.pi), -radial)):
        # elbow branches in the arm plane; angles measured from +z toward +x
        for t2, t3 in _two_link(height, u, a2, d4):
            r03 = _rz(t1) @ _ry(t2 + t3)
            for t4, t5, t6 in _zyz(r03.T @ r_target):
                configs.append(np.array([t1, _wrap(t2), t3, t4, t5, t6]))
    return _finish(chain, configs, filter_limits)


def solve(chain: ChainSpec, target: Pose, filter_limits=False) -> AnalyticalSolutionSet:
    """Dispatch to the closed-form solver matching the chain's structure."""
    if _geometry(chain, "planar3")[1] is None:
        return solve_planar3(chain, target, filter_limits)
    return solve_wrist6(chain, target, filter_limits)
