"""Lie-group types for SO(3), SE(3) and SE(2).

Tangent vectors are always ordered rotation first:

* SE(3): ``[wx, wy, wz, vx, vy, vz]``
* SE(2): ``[theta, vx, vy]``

Retractions use the right (local) convention ``x <- x * Exp(delta)``.
All objects are immutable; their numpy buffers are read-only.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import BranchAmbiguityError, InvalidArgumentError

# below this angle the closed forms switch to Taylor series
_SMALL_ANGLE = 1e-4
# closed forms that subtract nearly equal terms switch to series below this angle
_SERIES_ANGLE = 1e-2
# log is refused this close to pi
_PI_MARGIN = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _check_finite(a, what="input"):
    if not all(map(math.isfinite, a.ravel().tolist())):
        raise InvalidArgumentError(f"non-finite {what}: {a!r}")


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


# --------------------------------------------------------------------------
# SO(3)
# --------------------------------------------------------------------------

def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


class Rot3:
    """Unit quaternion ``(w, x, y, z)`` kept in canonical form ``w >= 0``."""

    # _q is a float tuple; the array view is built on demand
    __slots__ = ("_q", "_qa", "_R")

    def __init__(self, q):
        q = np.asarray(q, dtype=float).reshape(4)
        _check_finite(q, "quaternion")
        n = math.sqrt(float(q @ q))
        if n == 0.0:
            raise InvalidArgumentError("zero quaternion")
        # skip renormalizing already-unit inputs so round trips stay bit-exact
        if abs(n - 1.0) > 1e-15:
            q = q / n
        if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q[1:])):
            q = -q
        self._q = tuple(q.tolist())
        self._qa = None
        self._R = None

    @classmethod
    def _trusted(cls, q) -> Rot3:
        """Build from a finite, nonzero 4-tuple computed internally; skips input validation."""
        w, x, y, z = q
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if abs(n - 1.0) > 1e-15:
            w, x, y, z = w / n, x / n, y / n, z / n
        if w < 0.0 or (w == 0.0 and _first_nonzero_negative((x, y, z))):
            w, x, y, z = -w, -x, -y, -z
        obj = cls.__new__(cls)
        obj._q = (w, x, y, z)
        obj._qa = None
        obj._R = None
        return obj

    @classmethod
    def identity(cls) -> Rot3:
        return cls((1.0, 0.0, 0.0, 0.0))

    @property
    def quaternion(self) -> np.ndarray:
        if self._qa is None:
            self._qa = _frozen(self._q)
        return self._qa

    @property
    def w(self) -> float:
        return self._q[0]

    def matrix(self) -> np.ndarray:
        if self._R is None:
            w, x, y, z = self._q
            R = np.array([
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ])
            R.flags.writeable = False
            self._R = R
        return self._R

    @classmethod
    def from_matrix(cls, R) -> Rot3:
        R = np.asarray(R, dtype=float)
        _check_finite(R, "rotation matrix")
        tr = R[0, 0] + R[1, 1] + R[2, 2]
        if tr > 0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s)
        return cls(q)

    @classmethod
    def from_yaw(cls, yaw: float) -> Rot3:
        return cls((math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)))

    def compose(self, other: Rot3) -> Rot3:
        return Rot3._trusted(_quat_mul(self._q, other._q))

    def inverse(self) -> Rot3:
        w, x, y, z = self._q
        return Rot3._trusted((w, -x, -y, -z))

    def rotate(self, v) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=float)

    def angle(self) -> float:
        """Geodesic angle in [0, pi]."""
        _, x, y, z = self._q
        n = math.sqrt(x * x + y * y + z * z)
        return 2.0 * math.atan2(n, self.w)

    @classmethod
    def exp(cls, omega) -> Rot3:
        omega = np.asarray(omega, dtype=float)
        _check_finite(omega, "rotation vector")
        theta = math.sqrt(float(omega @ omega))
        if theta < _SMALL_ANGLE:
            t2 = theta * theta
            w = 1.0 - t2 / 8.0
            s = 0.5 - t2 / 48.0
        else:
            w = math.cos(0.5 * theta)
            s = math.sin(0.5 * theta) / theta
        ox, oy, oz = omega.tolist()
        return cls._trusted((w, s * ox, s * oy, s * oz))

    def log(self) -> np.ndarray:
        w, x, y, z = self._q
        n = math.sqrt(x * x + y * y + z * z)
        theta = 2.0 * math.atan2(n, w)
        if theta >= math.pi - _PI_MARGIN:
            raise BranchAmbiguityError(f"rotation angle {theta!r} at the pi boundary")
        if n < 1e-8:
            # 2*atan(n/w)/n series
            r = n / w
            scale = (2.0 / w) * (1.0 - r * r / 3.0)
        else:
            scale = theta / n
        return np.array([scale * x, scale * y, scale * z])

    def __repr__(self):
        return f"Rot3(q={list(self._q)})"


def _first_nonzero_negative(v) -> bool:
    for c in v:
        if c != 0.0:
            return c < 0.0
    return False


def _so3_jl_coeffs(theta: float) -> tuple[float, float]:
    """(1 - cos(t))/t^2 and (t - sin(t))/t^3."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    return 2.0 * math.sin(0.5 * theta) ** 2 / (theta * theta), (theta - math.sin(theta)) / theta ** 3


def _so3_jl_inv_coeff(theta: float) -> float:
    """(1 - (t/2) cot(t/2))/t^2."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    # half-angle cotangent form; 1 - cos(theta) cancels for small theta
    h = 0.5 * theta
    return (1.0 - h / math.tan(h)) / (theta * theta)


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _apply_quadratic(w, v, a: float, b: float) -> np.ndarray:
    """``(I + a W + b W^2) v`` with ``W = skew(w)``, on 3-sequences of floats."""
    wv = _cross(w, v)
    wwv = _cross(w, wv)
    return np.array([v[k] + a * wv[k] + b * wwv[k] for k in range(3)])


def so3_left_jacobian(omega) -> np.ndarray:
    theta = math.sqrt(float(omega @ omega))
    W = skew(omega)
    a, b = _so3_jl_coeffs(theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_left_jacobian_inverse(omega) -> np.ndarray:
    theta = math.sqrt(float(omega @ omega))
    W = skew(omega)
    return np.eye(3) - 0.5 * W + _so3_jl_inv_coeff(theta) * (W @ W)


def so3_right_jacobian(omega) -> np.ndarray:
    return so3_left_jacobian(-np.asarray(omega, dtype=float))


def so3_right_jacobian_inverse(omega) -> np.ndarray:
    return so3_left_jacobian_inverse(-np.asarray(omega, dtype=float))


def _se3_q_block(rho, phi) -> np.ndarray:
    """Coupling block of the SE(3) left Jacobian (translation rows, rotation columns)."""
    theta = math.sqrt(float(phi @ phi))
    P = skew(phi)
    Rh = skew(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    if theta < 1e-2:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0
        c2 = 1.0 / 24.0 - t2 / 720.0
        c3 = 1.0 / 120.0 - t2 / 2520.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        c1 = (theta - s) / theta ** 3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta ** 4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta ** 5)
    return (0.5 * Rh
            + c1 * (PR + RP + PRP)
            + c2 * (P @ PR + RP @ P - 3.0 * PRP)
            + c3 * (PRP @ P + P @ PRP))


def se3_right_jacobian(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    phi, rho = -xi[:3], -xi[3:]
    J = so3_left_jacobian(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[3:, :3] = _se3_q_block(rho, phi)
    return out


def se3_right_jacobian_inverse(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    phi, rho = -xi[:3], -xi[3:]
    Ji = so3_left_jacobian_inverse(phi)
    Q = _se3_q_block(rho, phi)
    out = np.zeros((6, 6))
    out[:3, :3] = Ji
    out[3:, 3:] = Ji
    out[3:, :3] = -Ji @ Q @ Ji
    return out


# --------------------------------------------------------------------------
# SE(3)
# --------------------------------------------------------------------------

class Pose3:
    """Rigid transform in 3D: ``x -> R x + t``."""

    __slots__ = ("_rot", "_t")
    dim = 6

    def __init__(self, rotation: Rot3 | None = None, translation=(0.0, 0.0, 0.0)):
        if rotation is None:
            rotation = Rot3.identity()
        elif not isinstance(rotation, Rot3):
            rotation = Rot3.from_matrix(rotation)
        t = np.asarray(translation, dtype=float).reshape(3)
        _check_finite(t, "translation")
        self._rot = rotation
        self._t = _frozen(t)

    @classmethod
    def _trusted(cls, rotation: Rot3, t: np.ndarray) -> Pose3:
        """Build from an internal Rot3 and a fresh finite float array of shape (3,)."""
        obj = cls.__new__(cls)
        obj._rot = rotation
        t.flags.writeable = False
        obj._t = t
        return obj

    @classmethod
    def identity(cls) -> Pose3:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose3:
        T = np.asarray(T, dtype=float)
        return cls(Rot3.from_matrix(T[:3, :3]), T[:3, 3])

    @property
    def rotation(self) -> Rot3:
        return self._rot

    @property
    def translation(self) -> np.ndarray:
        return self._t

    def matrix(self) -> np.ndarray:
        T = np.empty((4, 4))
        T[:3, :3] = self._rot.matrix()
        T[:3, 3] = self._t
        T[3] = (0.0, 0.0, 0.0, 1.0)
        return T

    def compose(self, other: Pose3) -> Pose3:
        return Pose3._trusted(self._rot.compose(other._rot), self._t + self._rot.matrix() @ other._t)

    __matmul__ = compose

    def inverse(self) -> Pose3:
        rinv = self._rot.inverse()
        return Pose3._trusted(rinv, -(self._rot.matrix().T @ self._t))

    def between(self, other: Pose3) -> Pose3:
        R = self._rot.matrix()
        return Pose3._trusted(self._rot.inverse().compose(other._rot), R.T @ (other._t - self._t))

    def transform_point(self, p) -> np.ndarray:
        return self._rot.matrix() @ np.asarray(p, dtype=float) + self._t

    @classmethod
    def exp(cls, xi) -> Pose3:
        xi = np.asarray(xi, dtype=float).reshape(6)
        _check_finite(xi, "tangent vector")
        omega, v = xi[:3], xi[3:]
        w = omega.tolist()
        a, b = _so3_jl_coeffs(math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]))
        return cls._trusted(Rot3.exp(omega), _apply_quadratic(w, v.tolist(), a, b))

    def log(self) -> np.ndarray:
        omega = self._rot.log()
        w = omega.tolist()
        c = _so3_jl_inv_coeff(math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]))
        v = _apply_quadratic(w, self._t.tolist(), -0.5, c)
        return np.concatenate([omega, v])

    def adjoint(self) -> np.ndarray:
        R = self._rot.matrix()
        A = np.zeros((6, 6))
        A[:3, :3] = R
        A[3:, 3:] = R
        A[3:, :3] = skew(self._t) @ R
        return A

    @staticmethod
    def right_jacobian(xi) -> np.ndarray:
        return se3_right_jacobian(xi)

    @staticmethod
    def right_jacobian_inverse(xi) -> np.ndarray:
        return se3_right_jacobian_inverse(xi)

    def retract(self, delta) -> Pose3:
        return self.compose(Pose3.exp(delta))

    def params(self) -> tuple:
        """``(x, y, z, qw, qx, qy, qz)``."""
        return tuple(float(c) for c in self._t) + tuple(float(c) for c in self._rot.quaternion)

    def __repr__(self):
        return f"Pose3(t={self._t.tolist()}, q={self._rot.quaternion.tolist()})"


# --------------------------------------------------------------------------
# SE(2)
# --------------------------------------------------------------------------

def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]; values already in range pass through unchanged."""
    if -math.pi < theta <= math.pi:
        return theta
    theta = math.fmod(theta + math.pi, 2.0 * math.pi)
    if theta <= 0.0:
        theta += 2.0 * math.pi
    return theta - math.pi


def _se2_v_coeffs(theta: float) -> tuple[float, float]:
    """A = sin(t)/t, B = (1 - cos(t))/t."""
    if abs(theta) < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0
    return math.sin(theta) / theta, 2.0 * math.sin(0.5 * theta) ** 2 / theta


def _se2_jr_coeffs(theta: float) -> tuple[float, float, float]:
    """sin(t)/t, (t - sin(t))/t^2 and (1 - cos(t))/t^2."""
    t2 = theta * theta
    if abs(theta) < _SERIES_ANGLE:
        return (1.0 - t2 / 6.0 + t2 * t2 / 120.0,
                theta * (1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0),
                0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    s = math.sin(theta)
    return s / theta, (theta - s) / t2, 2.0 * math.sin(0.5 * theta) ** 2 / t2


class Pose2:
    """Rigid transform in the plane, stored as ``(x, y, theta)``."""

    __slots__ = ("x", "y", "theta", "_c", "_s")
    dim = 3

    def __init__(self, x: float = 0.0, y: float = 0.0, theta: float = 0.0):
        x, y, theta = float(x), float(y), float(theta)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(theta)):
            raise InvalidArgumentError(f"non-finite pose ({x}, {y}, {theta})")
        theta = wrap_angle(theta)
        setter = object.__setattr__
        setter(self, "x", x)
        setter(self, "y", y)
        setter(self, "theta", theta)
        setter(self, "_c", math.cos(theta))
        setter(self, "_s", math.sin(theta))

    def __setattr__(self, name, value):
        raise AttributeError("Pose2 is immutable")

    @classmethod
    def identity(cls) -> Pose2:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose2:
        T = np.asarray(T, dtype=float)
        return cls(T[0, 2], T[1, 2], math.atan2(T[1, 0], T[0, 0]))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation_matrix(self) -> np.ndarray:
        return np.array([[self._c, -self._s], [self._s, self._c]])

    def matrix(self) -> np.ndarray:
        c, s = self._c, self._s
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def compose(self, other: Pose2) -> Pose2:
        c, s = self._c, self._s
        return Pose2(self.x + c * other.x - s * other.y,
                     self.y + s * other.x + c * other.y,
                     self.theta + other.theta)

    __matmul__ = compose

    def inverse(self) -> Pose2:
        c, s = self._c, self._s
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def between(self, other: Pose2) -> Pose2:
        c, s = self._c, self._s
        dx, dy = other.x - self.x, other.y - self.y
        return Pose2(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)

    def transform_point(self, p) -> np.ndarray:
        return self.rotation_matrix() @ np.asarray(p, dtype=float) + self.translation

    @classmethod
    def exp(cls, xi) -> Pose2:
        xi = np.asarray(xi, dtype=float).reshape(3)
        _check_finite(xi, "tangent vector")
        theta, vx, vy = xi
        a, b = _se2_v_coeffs(theta)
        return cls(a * vx - b * vy, b * vx + a * vy, theta)

    def log(self) -> np.ndarray:
        theta = self.theta
        a, b = _se2_v_coeffs(theta)
        d = a * a + b * b
        vx = (a * self.x + b * self.y) / d
        vy = (-b * self.x + a * self.y) / d
        return np.array([theta, vx, vy])

    def adjoint(self) -> np.ndarray:
        c, s = self._c, self._s
        return np.array([[1.0, 0.0, 0.0],
                         [self.y, c, -s],
                         [-self.x, s, c]])

    @staticmethod
    def right_jacobian(xi) -> np.ndarray:
        theta, r1, r2 = (float(c) for c in xi)
        a, A, B = _se2_jr_coeffs(theta)
        b = theta * B
        g1 = r1 * A - r2 * B
        g2 = r1 * B + r2 * A
        return np.array([[1.0, 0.0, 0.0],
                         [g1, a, b],
                         [g2, -b, a]])

    @staticmethod
    def right_jacobian_inverse(xi) -> np.ndarray:
        # block lower triangular: [[1, 0], [g, M]] with M = [[a, b], [-b, a]]
        Jr = Pose2.right_jacobian(xi)
        a, b = Jr[1, 1], Jr[1, 2]
        d = a * a + b * b
        Mi = np.array([[a, -b], [b, a]]) / d
        out = np.zeros((3, 3))
        out[0, 0] = 1.0
        out[1:, 1:] = Mi
        out[1:, 0] = -Mi @ Jr[1:, 0]
        return out

    def retract(self, delta) -> Pose2:
        return self.compose(Pose2.exp(delta))

    def params(self) -> tuple:
        return (self.x, self.y, self.theta)

    def to_pose3(self) -> Pose3:
        return Pose3(Rot3.from_yaw(self.theta), (self.x, self.y, 0.0))

    def __repr__(self):
        return f"Pose2(x={self.x!r}, y={self.y!r}, theta={self.theta!r})"

    def __reduce__(self):
        return (Pose2, (self.x, self.y, self.theta))


# --------------------------------------------------------------------------
# functional interface
# --------------------------------------------------------------------------

def exp_map(xi) -> Pose3 | Pose2:
    """Exponential map; a 6-vector gives a Pose3, a 3-vector a Pose2."""
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size == 6:
        return Pose3.exp(xi)
    if xi.size == 3:
        return Pose2.exp(xi)
    raise InvalidArgumentError(f"tangent vector must have 3 or 6 entries, got {xi.size}")


def log_map(p: Pose3 | Pose2) -> np.ndarray:
    return p.log()


def compose(a, b):
    return a.compose(b)


def inverse(p):
    return p.inverse()


def between(a, b):
    """``inverse(a) * b``."""
    return a.between(b)


def interpolate(a, b, t: float):
    """Geodesic interpolation ``a * Exp(t * Log(between(a, b)))``."""
    if not (0.0 <= t <= 1.0):
        raise InvalidArgumentError(f"interpolation fraction {t!r} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    xi = a.between(b).log()
    return a.compose(type(a).exp(t * xi))


def pose_to_pose3(p) -> Pose3:
    return p if isinstance(p, Pose3) else p.to_pose3()
