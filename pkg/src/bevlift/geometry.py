"""Homogeneous projection machinery between the radar frame and the image plane."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_points
from .exceptions import ConfigError, DataError, InvalidCalibrationError

EPS_DEPTH = 1e-6
ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    """3x4 pinhole projection plus the image size in pixels."""

    matrix: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 4):
            raise InvalidCalibrationError(f"intrinsic matrix must be 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidCalibrationError("intrinsic matrix has non-finite entries")
        if not np.allclose(m[2, :3], (0.0, 0.0, 1.0)):
            raise InvalidCalibrationError("intrinsic third row must start with (0, 0, 1)")
        if m[0, 0] <= 0 or m[1, 1] <= 0:
            raise InvalidCalibrationError("focal lengths must be positive")
        if int(self.image_width) <= 0 or int(self.image_height) <= 0:
            raise InvalidCalibrationError("image size must be positive")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))

    @classmethod
    def from_pinhole(cls, fx, fy, cx, cy, width, height):
        m = np.array([[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
        return cls(m, width, height)

    @property
    def size(self):
        return self.image_width, self.image_height


@dataclass(frozen=True)
class RigidTransform:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidCalibrationError(f"rigid transform must be 4x4, got {m.shape}")
        if not np.allclose(m[3], (0.0, 0.0, 0.0, 1.0), rtol=0.0, atol=1e-12):
            raise InvalidCalibrationError("rigid transform bottom row must be (0, 0, 0, 1)")
        _check_rotation(m[:3, :3])
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self):
        return self.matrix[:3, :3]

    @property
    def translation(self):
        return self.matrix[:3, 3]

    def apply(self, points):
        pts = check_points(points)
        return pts @ self.rotation.T + self.translation

    def inverse(self):
        r = self.rotation.T
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = -r @ self.translation
        return RigidTransform(m)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.matrix @ other.matrix)


@dataclass(frozen=True)
class CalibrationSet:
    intrinsics: CameraIntrinsics
    radar_to_camera: RigidTransform = field(default_factory=lambda: RigidTransform(np.eye(4)))

    @property
    def image_size(self):
        return self.intrinsics.size

    def projection_matrix(self):
        """``I · T̄`` as one 3x4 matrix acting on homogeneous radar points."""
        return self.intrinsics.matrix @ self.radar_to_camera.matrix

    def with_intrinsics(self, intrinsics):
        return CalibrationSet(intrinsics, self.radar_to_camera)


@dataclass(frozen=True)
class ImageProjection:
    """Per-point projection result; arrays of equal length."""

    u: np.ndarray
    v: np.ndarray
    d: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.d)


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    cell_x: float
    cell_y: float
    cell_z: float

    def __post_init__(self):
        for axis in "xyz":
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            cell = getattr(self, f"cell_{axis}")
            if not (hi > lo and cell > 0):
                raise ConfigError(f"grid axis {axis}: need max > min and cell > 0")
            n = (hi - lo) / cell
            if abs(n - round(n)) > 1e-6 * max(1.0, n) or round(n) < 1:
                raise ConfigError(f"grid axis {axis}: extent {hi - lo} is not a multiple of cell {cell}")

    @property
    def shape(self):
        return (
            int(round((self.x_max - self.x_min) / self.cell_x)),
            int(round((self.y_max - self.y_min) / self.cell_y)),
            int(round((self.z_max - self.z_min) / self.cell_z)),
        )

    @property
    def X(self):
        return self.shape[0]

    @property
    def Y(self):
        return self.shape[1]

    @property
    def Z(self):
        return self.shape[2]

    @property
    def lower(self):
        return np.array([self.x_min, self.y_min, self.z_min])

    @property
    def upper(self):
        return np.array([self.x_max, self.y_max, self.z_max])

    @property
    def cell(self):
        return np.array([self.cell_x, self.cell_y, self.cell_z])

    def with_cells(self, cell_x=None, cell_y=None, cell_z=None):
        return GridSpec(
            self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max,
            self.cell_x if cell_x is None else cell_x,
            self.cell_y if cell_y is None else cell_y,
            self.cell_z if cell_z is None else cell_z,
        )


def _check_rotation(rotation):
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise InvalidCalibrationError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
        raise InvalidCalibrationError("rotation is not orthonormal (|RᵀR - I| or |det - 1| > 1e-6)")
    return r


def extend_transform(rotation, translation=None):
    """Embed a rotation (and optional translation) into a 4x4 homogeneous transform.

    With ``translation=None`` the result is the block matrix ``[[R, 0], [0, 1]]``.
    """
    r = _check_rotation(rotation)
    m = np.eye(4)
    m[:3, :3] = r
    if translation is not None:
        t = np.asarray(translation, dtype=np.float64).reshape(-1)
        if t.shape != (3,):
            raise InvalidCalibrationError("translation must be a 3-vector")
        m[:3, 3] = t
    return RigidTransform(m)


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def project_points(points, calib):
    """Project radar-frame points to ``(u, v, d)`` pixel coordinates and depth.

    ``valid`` holds iff ``d > EPS_DEPTH`` and the pixel lies in ``[0, W) x [0, H)``.
    """
    pts = check_points(points)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    img = hom @ calib.projection_matrix().T
    d = img[:, 2]
    ahead = d > EPS_DEPTH
    safe = np.where(ahead, d, 1.0)
    u = np.where(ahead, img[:, 0] / safe, np.nan)
    v = np.where(ahead, img[:, 1] / safe, np.nan)
    w, h = calib.image_size
    with np.errstate(invalid="ignore"):
        valid = ahead & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    return ImageProjection(u, v, d, valid)


def back_project(u, v, d, calib):
    """Inverse of :func:`project_points` for points with known depth."""
    u, v, d = (np.asarray(a, dtype=np.float64) for a in (u, v, d))
    m = calib.intrinsics.matrix
    rhs = np.stack([u * d, v * d, d], axis=-1) - m[:, 3]
    cam = np.linalg.solve(m[:, :3], rhs.reshape(-1, 3).T).T
    radar = calib.radar_to_camera.inverse().apply(cam)
    return radar.reshape(np.shape(u) + (3,))


def in_view(projection, intrinsics):
    """Elementwise view test on projections with fields ``u, v, d``.

    Accepts an :class:`ImageProjection` or a plain ``(u, v, d)`` tuple.
    """
    if isinstance(projection, ImageProjection):
        u, v, d = projection.u, projection.v, projection.d
    else:
        u, v, d = projection
    u, v, d = (np.asarray(a, dtype=np.float64) for a in (u, v, d))
    w, h = intrinsics.size
    with np.errstate(invalid="ignore"):
        out = (d > EPS_DEPTH) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    return bool(out) if out.ndim == 0 else out


def voxel_centers(spec):
    """``(X, Y, Z, 3)`` array of voxel-centre coordinates."""
    nx, ny, nz = spec.shape
    xs = spec.x_min + (np.arange(nx) + 0.5) * spec.cell_x
    ys = spec.y_min + (np.arange(ny) + 0.5) * spec.cell_y
    zs = spec.z_min + (np.arange(nz) + 0.5) * spec.cell_z
    return np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)


# -- calibration text files -------------------------------------------------

_CALIB_KEYS = {"intrinsic": 12, "radar_to_camera": 16, "image_size": 2}


def parse_calibration(text, source="<calibration>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or key not in _CALIB_KEYS:
            raise DataError(f"{source}:{lineno}: unknown or malformed key {key!r}")
        if key in values:
            raise DataError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            nums = [float(tok) for tok in rest.split()]
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if len(nums) != _CALIB_KEYS[key]:
            raise DataError(f"{source}:{lineno}: {key} needs {_CALIB_KEYS[key]} numbers, got {len(nums)}")
        values[key] = nums
    missing = set(_CALIB_KEYS) - set(values)
    if missing:
        raise DataError(f"{source}: missing keys {sorted(missing)}")
    w, h = values["image_size"]
    if w != int(w) or h != int(h):
        raise DataError(f"{source}: image_size must be integers")
    intr = CameraIntrinsics(np.reshape(values["intrinsic"], (3, 4)), int(w), int(h))
    extr = RigidTransform(np.reshape(values["radar_to_camera"], (4, 4)))
    return CalibrationSet(intr, extr)


def load_calibration(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read calibration {path}: {exc}") from None
    return parse_calibration(text, str(path))


def format_calibration(calib):
    fmt = lambda arr: " ".join(repr(float(x)) for x in np.ravel(arr))
    w, h = calib.image_size
    return (
        f"intrinsic: {fmt(calib.intrinsics.matrix)}\n"
        f"radar_to_camera: {fmt(calib.radar_to_camera.matrix)}\n"
        f"image_size: {w} {h}\n"
    )


def save_calibration(path, calib):
    Path(path).write_text(format_calibration(calib))
