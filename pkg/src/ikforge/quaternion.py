"""Quaternion and rotation helpers.

Quaternions are scalar-first ``(w, x, y, z)`` numpy arrays. Functions that
take a trailing axis of length 4 (or 3x3 matrices) broadcast over leading
axes so they can be used on batches.
"""

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize a zero-norm quaternion")
    return q / n


def canonical(q):
    """Return ``q`` mapped into the ``w >= 0`` hemisphere.

    When ``w == 0`` exactly, the first nonzero vector component is made
    positive so that ``q`` and ``-q`` always map to the same array.
    """
    q = np.array(q, dtype=float)
    nonzero = q != 0.0
    first = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)
    return np.where(lead < 0.0, -q, q)


def mul(a, b):
    """Hamilton product ``a * b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    half = 0.5 * np.asarray(angle, dtype=float)
    return np.concatenate([np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1)


def from_rpy(roll, pitch, yaw):
    """Intrinsic X-Y-Z rotation: ``Rx(roll) * Ry(pitch) * Rz(yaw)``."""
    qx = from_axis_angle([1.0, 0.0, 0.0], roll)
    qy = from_axis_angle([0.0, 1.0, 0.0], pitch)
    qz = from_axis_angle([0.0, 0.0, 1.0], yaw)
    return mul(mul(qx, qy), qz)


def to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_matrix(m):
    """Rotation matrix to unit quaternion (Shepperd's method), batched."""
    m = np.asarray(m, dtype=float)
    shape = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    cand = np.stack([tr, m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=1)
    pick = np.argmax(cand, axis=1)
    q = np.empty((m.shape[0], 4))

    i = pick == 0
    s = 2.0 * np.sqrt(1.0 + tr[i])
    q[i] = np.stack([0.25 * s,
                     (m[i, 2, 1] - m[i, 1, 2]) / s,
                     (m[i, 0, 2] - m[i, 2, 0]) / s,
                     (m[i, 1, 0] - m[i, 0, 1]) / s], axis=1)
    i = pick == 1
    s = 2.0 * np.sqrt(1.0 + m[i, 0, 0] - m[i, 1, 1] - m[i, 2, 2])
    q[i] = np.stack([(m[i, 2, 1] - m[i, 1, 2]) / s,
                     0.25 * s,
                     (m[i, 0, 1] + m[i, 1, 0]) / s,
                     (m[i, 0, 2] + m[i, 2, 0]) / s], axis=1)
    i = pick == 2
    s = 2.0 * np.sqrt(1.0 + m[i, 1, 1] - m[i, 0, 0] - m[i, 2, 2])
    q[i] = np.stack([(m[i, 0, 2] - m[i, 2, 0]) / s,
                     (m[i, 0, 1] + m[i, 1, 0]) / s,
                     0.25 * s,
                     (m[i, 1, 2] + m[i, 2, 1]) / s], axis=1)
    i = pick == 3
    s = 2.0 * np.sqrt(1.0 + m[i, 2, 2] - m[i, 0, 0] - m[i, 1, 1])
    q[i] = np.stack([(m[i, 1, 0] - m[i, 0, 1]) / s,
                     (m[i, 0, 2] + m[i, 2, 0]) / s,
                     (m[i, 1, 2] + m[i, 2, 1]) / s,
                     0.25 * s], axis=1)

    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(shape + (4,))


def log(q):
    """Rotation vector (axis * angle) of ``q``, angle in ``[0, pi]``."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(s, q[..., 0])
    # angle / sin(angle/2) -> 2 as s -> 0
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return v * scale[..., None]


def angle_between(a, b):
    """Geodesic angle ``2 acos(|<a, b>|)`` between two unit quaternions.

    Evaluated as ``2 atan2(|vec(a^-1 b)|, |<a, b>|)``, which equals the acos
    form but keeps full precision near alignment.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rel = mul(conjugate(a), b)
    return 2.0 * np.arctan2(np.linalg.norm(rel[..., 1:], axis=-1), np.abs(rel[..., 0]))


def slerp(a, b, t):
    """Spherical interpolation along the shorter arc.

    Raises ``ValueError`` for antipodal rotations, where the shorter arc is
    not unique.
    """
    a = normalize(a)
    b = normalize(b)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d < 1e-12:
        raise ValueError("antipodal orientations: interpolation is ill-defined")
    t = np.asarray(t, dtype=float)
    if d > 1.0 - 1e-15:
        return np.broadcast_to(a, t.shape + (4,)).copy()
    omega = np.arccos(min(d, 1.0))
    so = np.sin(omega)
    wa = np.sin((1.0 - t) * omega) / so
    wb = np.sin(t * omega) / so
    return normalize(wa[..., None] * a + wb[..., None] * b)
