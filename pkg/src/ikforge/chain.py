"""Serial revolute chains: description, forward kinematics and Jacobians.

A chain is a list of joints. Each joint carries a fixed transform from the
parent frame, a local rotation axis and a pair of limits. The world pose of
the tool is::

    prod_i [Trans(xyz_i) Rot(rpy_i) Rot(axis_i, theta_i)] Trans(xyz_tool) Rot(rpy_tool)

The kinematic routines accept joint vectors with arbitrary leading batch
dimensions, ``(..., n)``, and the single-query wrappers are thin views on the
batched code.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ikforge import quaternion as quat

BUILTIN_CHAINS = ("planar3", "arm6", "chain15")

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-\.]*$")
_PI_RE = re.compile(r"^(-)?pi(?:/([0-9]+(?:\.[0-9]*)?))?$")


class ChainSpecError(ValueError):
    """Raised for malformed or invalid chain descriptions."""

    def __init__(self, reason, line=None):
        self.reason = reason
        self.line = line
        super().__init__(f"line {line}: {reason}" if line is not None else reason)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform: translation (m) and unit quaternion (w, x, y, z)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float)
        q = np.asarray(self.rotation, dtype=float)
        if t.shape != (3,) or q.shape != (4,):
            raise ValueError("transform needs a 3-vector and a quaternion")
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("zero-norm rotation quaternion")
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "rotation", _frozen(q / n))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy=(0.0, 0.0, 0.0)):
        return cls(np.asarray(xyz, dtype=float), quat.from_rpy(*rpy))

    def compose(self, other: Transform) -> Transform:
        """``self * other``: apply ``other`` in the frame of ``self``."""
        r = quat.to_matrix(self.rotation)
        return Transform(self.translation + r @ other.translation,
                         quat.mul(self.rotation, other.rotation))

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = quat.to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: Transform, atol=1e-12):
        return (np.allclose(self.translation, other.translation, atol=atol)
                and np.allclose(self.matrix(), other.matrix(), atol=atol))


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    pre_transform: Transform
    axis: np.ndarray
    limit_lo: float
    limit_hi: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ChainSpecError(f"joint {self.name!r}: non-unit axis")
        if not self.limit_lo < self.limit_hi:
            raise ChainSpecError(f"joint {self.name!r}: inverted limits")
        if self.limit_lo < -math.pi - 1e-12 or self.limit_hi > math.pi + 1e-12:
            raise ChainSpecError(f"joint {self.name!r}: limits outside [-pi, pi]")
        object.__setattr__(self, "axis", _frozen(axis))
        object.__setattr__(self, "limit_lo", float(self.limit_lo))
        object.__setattr__(self, "limit_hi", float(self.limit_hi))


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Immutable serial revolute chain.

    Precomputed arrays (``lower``, ``upper`` and the per-joint rotation
    tables used by the kinematics) are read-only.
    """

    name: str
    joints: tuple
    tool: Transform = field(default_factory=Transform)

    def __post_init__(self):
        joints = tuple(self.joints)
        if not joints:
            raise ChainSpecError("chain has no joints (n = 0)")
        names = [j.name for j in joints]
        if len(set(names)) != len(names):
            raise ChainSpecError("duplicate joint names")
        object.__setattr__(self, "joints", joints)

        length = math.fsum([float(np.linalg.norm(j.pre_transform.translation)) for j in joints]
                           + [float(np.linalg.norm(self.tool.translation))])
        object.__setattr__(self, "total_length", length)

        axes = np.array([j.axis for j in joints])
        k = np.zeros((len(joints), 3, 3))
        k[:, 0, 1], k[:, 0, 2] = -axes[:, 2], axes[:, 1]
        k[:, 1, 0], k[:, 1, 2] = axes[:, 2], -axes[:, 0]
        k[:, 2, 0], k[:, 2, 1] = -axes[:, 1], axes[:, 0]
        tables = {
            "lower": np.array([j.limit_lo for j in joints]),
            "upper": np.array([j.limit_hi for j in joints]),
            "_axes": axes,
            "_pre_t": np.array([j.pre_transform.translation for j in joints]),
            "_pre_r": np.array([quat.to_matrix(j.pre_transform.rotation) for j in joints]),
            "_skew": k,
            "_skew2": k @ k,
            "_tool_t": np.array(self.tool.translation),
            "_tool_r": quat.to_matrix(self.tool.rotation),
        }
        for key, value in tables.items():
            object.__setattr__(self, key, _frozen(value))

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self):
        return [j.name for j in self.joints]

    @property
    def is_planar(self) -> bool:
        """True when every joint rotates about world z inside the z = 0 plane."""
        tfs = [j.pre_transform for j in self.joints] + [self.tool]
        return (all(np.allclose(j.axis, [0.0, 0.0, 1.0]) for j in self.joints)
                and all(abs(t.translation[2]) < 1e-12 and np.allclose(t.rotation[1:3], 0.0)
                        for t in tfs))

    def midpoint(self):
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True, eq=False)
class Pose:
    """End-effector pose; the orientation is stored with ``w >= 0``."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: quat.IDENTITY.copy())

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or q.shape != (4,):
            raise ValueError("pose needs a 3-vector position and a 4-vector quaternion")
        object.__setattr__(self, "position", _frozen(p))
        object.__setattr__(self, "orientation", _frozen(quat.canonical(quat.normalize(q))))

    @classmethod
    def from_array(cls, values):
        """Build from ``(px, py, pz, qw, qx, qy, qz)``."""
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError("pose array must have 7 entries")
        return cls(values[:3], values[3:])

    def as_array(self):
        return np.concatenate([self.position, self.orientation])

    def rotation_matrix(self):
        return quat.to_matrix(self.orientation)


# -- chain files --------------------------------------------------------------

def _number(tok, lineno):
    m = _PI_RE.match(tok)
    if m:
        value = math.pi / (float(m.group(2)) if m.group(2) else 1.0)
        return -value if m.group(1) else value
    try:
        value = float(tok)
    except ValueError:
        raise ChainSpecError(f"expected a number, got {tok!r}", lineno) from None
    if not math.isfinite(value):
        raise ChainSpecError(f"non-finite number {tok!r}", lineno)
    return value


def _keyed(tokens, lineno, keys):
    """Parse ``key v1 v2 ... key v1 ...`` groups with fixed arity."""
    out = {}
    i = 0
    while i < len(tokens):
        key = tokens[i]
        if key not in keys:
            raise ChainSpecError(f"unexpected token {key!r}", lineno)
        if key in out:
            raise ChainSpecError(f"repeated key {key!r}", lineno)
        arity = keys[key]
        vals = tokens[i + 1:i + 1 + arity]
        if len(vals) != arity:
            raise ChainSpecError(f"{key!r} needs {arity} values", lineno)
        out[key] = [_number(v, lineno) for v in vals]
        i += 1 + arity
    return out


def parse_chain_spec(text: str) -> ChainSpec:
    """Parse a chain description document into a validated :class:`ChainSpec`."""
    name = None
    joints = []
    tool = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "name":
            if len(tokens) != 2 or not _NAME_RE.match(tokens[1]):
                raise ChainSpecError("'name' takes one identifier", lineno)
            name = tokens[1]
        elif head == "joint":
            if len(tokens) < 2 or not _NAME_RE.match(tokens[1]):
                raise ChainSpecError("joint needs an identifier", lineno)
            kv = _keyed(tokens[2:], lineno, {"xyz": 3, "rpy": 3, "axis": 3, "limits": 2})
            for req in ("axis", "limits"):
                if req not in kv:
                    raise ChainSpecError(f"joint missing {req!r}", lineno)
            axis = np.array(kv["axis"])
            if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
                raise ChainSpecError("non-unit axis", lineno)
            lo, hi = kv["limits"]
            if not lo < hi:
                raise ChainSpecError("inverted limits", lineno)
            try:
                joints.append(JointSpec(
                    tokens[1],
                    Transform.from_xyz_rpy(kv.get("xyz", [0.0] * 3), kv.get("rpy", [0.0] * 3)),
                    axis, lo, hi))
            except ChainSpecError as err:
                raise ChainSpecError(err.reason, lineno) from None
        elif head == "tool":
            if tool is not None:
                raise ChainSpecError("repeated 'tool' line", lineno)
            kv = _keyed(tokens[1:], lineno, {"xyz": 3, "rpy": 3})
            tool = Transform.from_xyz_rpy(kv.get("xyz", [0.0] * 3), kv.get("rpy", [0.0] * 3))
        else:
            raise ChainSpecError(f"unknown directive {head!r}", lineno)
    if name is None:
        raise ChainSpecError("missing 'name' line")
    return ChainSpec(name, tuple(joints), tool if tool is not None else Transform())


def format_chain_spec(chain: ChainSpec) -> str:
    """Serialize a chain back to the line format (rpy recovered from quaternions)."""

    def rpy(q):
        r = quat.to_matrix(q)
        pitch = math.asin(max(-1.0, min(1.0, r[0, 2])))
        roll = math.atan2(-r[1, 2], r[2, 2])
        yaw = math.atan2(-r[0, 1], r[0, 0])
        return roll, pitch, yaw

    def nums(vals):
        return " ".join(repr(float(v)) for v in vals)

    lines = [f"name {chain.name}"]
    for j in chain.joints:
        t = j.pre_transform
        lines.append(f"joint {j.name} xyz {nums(t.translation)} rpy {nums(rpy(t.rotation))} "
                     f"axis {nums(j.axis)} limits {nums([j.limit_lo, j.limit_hi])}")
    lines.append(f"tool xyz {nums(chain.tool.translation)} rpy {nums(rpy(chain.tool.rotation))}")
    return "\n".join(lines) + "\n"


def builtin_chain(name: str) -> ChainSpec:
    if name not in BUILTIN_CHAINS:
        raise ValueError(f"unknown builtin chain {name!r}; expected one of {BUILTIN_CHAINS}")
    text = resources.files("ikforge.data").joinpath(f"{name}.chain").read_text(encoding="utf-8")
    return parse_chain_spec(text)


def load_chain(name_or_path: str) -> ChainSpec:
    """Resolve a builtin chain name or read a chain file from disk."""
    if name_or_path in BUILTIN_CHAINS:
        return builtin_chain(name_or_path)
    with open(name_or_path, encoding="utf-8") as fh:
        return parse_chain_spec(fh.read())


# -- kinematics ---------------------------------------------------------------

def check_config(chain: ChainSpec, config):
    config = np.asarray(config, dtype=float)
    if config.ndim == 0 or config.shape[-1] != chain.dof:
        raise ValueError(f"expected {chain.dof} joint values for chain {chain.name!r}, "
                         f"got shape {config.shape}")
    return config


def frames(chain: ChainSpec, config):
    """World-frame kinematic quantities for a (batch of) configuration(s).

    Returns ``(p, r, origins, axes)``: tool position ``(..., 3)``, tool
    rotation ``(..., 3, 3)``, joint origins ``(..., n, 3)`` and world joint
    axes ``(..., n, 3)``.
    """
    theta = check_config(chain, config)
    batch = theta.shape[:-1]
    s = np.sin(theta)
    c = np.cos(theta)
    r = np.broadcast_to(np.eye(3), batch + (3, 3))
    p = np.zeros(batch + (3,))
    origins = np.empty(batch + (chain.dof, 3))
    axes = np.empty(batch + (chain.dof, 3))
    for i in range(chain.dof):
        p = p + r @ chain._pre_t[i]
        r = r @ chain._pre_r[i]
        origins[..., i, :] = p
        axes[..., i, :] = r @ chain._axes[i]
        rot = (np.eye(3) + s[..., i, None, None] * chain._skew[i]
               + (1.0 - c[..., i, None, None]) * chain._skew2[i])
        r = r @ rot
    p = p + r @ chain._tool_t
    r = r @ chain._tool_r
    return p, r, origins, axes


def fk_batch(chain: ChainSpec, configs):
    """Tool positions ``(..., 3)`` and canonical quaternions ``(..., 4)``."""
    p, r, _, _ = frames(chain, configs)
    return p, quat.canonical(quat.from_matrix(r))


def forward_kinematics(chain: ChainSpec, config) -> Pose:
    config = check_config(chain, config)
    if config.ndim != 1:
        raise ValueError("forward_kinematics takes a single configuration; use fk_batch")
    p, q = fk_batch(chain, config)
    return Pose(p, q)


def _jacobian_from_frames(p, origins, axes):
    lin = np.cross(axes, p[..., None, :] - origins)
    return np.concatenate([np.swapaxes(lin, -1, -2), np.swapaxes(axes, -1, -2)], axis=-2)


def geometric_jacobian(chain: ChainSpec, config):
    """6 x n Jacobian; rows are linear (m/rad) then angular (rad/rad) velocity."""
    p, _, origins, axes = frames(chain, config)
    return _jacobian_from_frames(p, origins, axes)


def pose_and_jacobian(chain: ChainSpec, config):
    """FK pose plus geometric Jacobian from a single kinematic pass."""
    p, r, origins, axes = frames(chain, config)
    return p, r, _jacobian_from_frames(p, origins, axes)


def quaternion_jacobian(chain: ChainSpec, config):
    """4 x n derivative of the (canonical) tool quaternion w.r.t. the joints.

    Column ``i`` is ``0.5 * (0, z_i) * q`` with ``z_i`` the world joint axis.
    """
    config = check_config(chain, config)
    p, r, _, axes = frames(chain, config)
    q = quat.canonical(quat.from_matrix(r))
    pure = np.concatenate([np.zeros(axes.shape[:-1] + (1,)), axes], axis=-1)
    cols = 0.5 * quat.mul(pure, q[..., None, :])
    return np.swapaxes(cols, -1, -2)


def task_jacobian(chain: ChainSpec, config):
    """Jacobian restricted to the task-relevant rows (x, y, yaw for planar chains)."""
    jac = geometric_jacobian(chain, config)
    if chain.is_planar:
        return jac[..., [0, 1, 5], :]
    return jac


def min_singular_value(chain: ChainSpec, config) -> float:
    """Smallest singular value of :func:`task_jacobian` (singularity proximity)."""
    sv = np.linalg.svd(task_jacobian(chain, config), compute_uv=False)
    return sv[..., -1]


def limit_violations(chain: ChainSpec, config):
    """Per-joint distance beyond the limits (rad, zero when inside)."""
    theta = check_config(chain, config)
    return np.maximum(0.0, np.maximum(chain.lower - theta, theta - chain.upper))


def is_feasible(chain: ChainSpec, config) -> bool:
    return not np.any(limit_violations(chain, config) > 0.0)


def random_config(chain: ChainSpec, rng, size=None):
    """Uniform draw inside the joint limits."""
    shape = (chain.dof,) if size is None else (size, chain.dof)
    return rng.uniform(chain.lower, chain.upper, size=shape)
