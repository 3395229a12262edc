"""Pinhole camera, EWA-style splat rasterizer and analytic gate masks.

Camera frame: +z forward, +x right, +y down. Pixel (row, col) has its center
at continuous image coordinates (u=col, v=row). All rendering is float64 and
fully deterministic: gaussians composite front to back in depth order with
index as the tie-break.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, mat_to_quat
from .scene import GaussianScene
from .tracks import Gate, gate_axes

ZNEAR = 0.05
COV2D_DILATION = 0.3         # px^2, keeps sub-pixel splats visible
ALPHA_CAP = 0.99
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_FLOOR = 1e-4
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class PinholeCamera:
    width: int = 160
    height: int = 120
    # wide FPV-style lens (106 x 90 degrees): close gates stay in frame until
    # just before the crossing, which vision policies depend on
    fx: float = 60.0
    fy: float = 60.0
    cx: float = 80.0
    cy: float = 60.0

    def scaled(self, factor: float) -> "PinholeCamera":
        """Same field of view at factor x the resolution."""
        return PinholeCamera(
            int(round(self.width * factor)),
            int(round(self.height * factor)),
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
        )


DEFAULT_CAMERA = PinholeCamera()


def camera_pose(position, yaw: float, pitch: float = 0.0) -> RigidTransform:
    """World-from-camera pose for a forward-looking camera at (yaw, pitch).

    The optical axis points along the vehicle heading; roll stays zero.
    """
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    forward = np.array([cy * cp, sy * cp, sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    r = np.column_stack([right, down, forward])
    return RigidTransform(mat_to_quat(r), np.asarray(position, dtype=np.float64))


def world_to_camera(pose: RigidTransform, points: np.ndarray) -> np.ndarray:
    r = pose.rotation_matrix()
    return (np.atleast_2d(points) - pose.translation) @ r


def project(camera: PinholeCamera, pose: RigidTransform, points) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns ((n,2) pixel coords, (n,) camera depth)."""
    pc = world_to_camera(pose, np.asarray(points, dtype=np.float64))
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * pc[:, 0] / z + camera.cx
        v = camera.fy * pc[:, 1] / z + camera.cy
    return np.stack([u, v], axis=1), z


def point_in_view(camera: PinholeCamera, pose: RigidTransform, point) -> bool:
    """Positive depth and projection inside the closed image rectangle."""
    uv, z = project(camera, pose, np.asarray(point, dtype=np.float64)[None, :])
    if not z[0] > ZNEAR:
        return False
    u, v = uv[0]
    return 0.0 <= u <= camera.width and 0.0 <= v <= camera.height


@dataclass
class RenderResult:
    rgb: np.ndarray        # (H, W, 3) in [0, 1]
    alpha: np.ndarray      # (H, W) accumulated opacity
    skipped: int           # gaussians dropped for ill-conditioned projection

    def to_u8(self) -> np.ndarray:
        return np.clip(np.rint(self.rgb * 255.0), 0, 255).astype(np.uint8)


def render_scene(
    scene: GaussianScene,
    camera: PinholeCamera = DEFAULT_CAMERA,
    pose: RigidTransform | None = None,
    background=(0.0, 0.0, 0.0),
) -> RenderResult:
    """Depth-sorted front-to-back alpha compositing of projected gaussians.

    Per gaussian the 3D covariance is pushed through the projection jacobian,
    dilated by COV2D_DILATION px^2, and splatted over its 3 sigma bounding
    box. Pixels whose transmittance falls below TRANSMITTANCE_FLOOR stop
    accumulating.
    """
    pose = pose if pose is not None else RigidTransform.identity()
    h, w = camera.height, camera.width
    rgb = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    skipped = 0

    if len(scene):
        r_wc = pose.rotation_matrix()
        pc = (scene.means - pose.translation) @ r_wc
        visible = pc[:, 2] > ZNEAR
        order = np.flatnonzero(visible)[np.argsort(pc[visible, 2], kind="stable")]
    else:
        order = np.array([], dtype=np.int64)

    if len(order):
        covs = scene.covariances()[order]
        w_mat = r_wc.T
        cov_cam = np.einsum("ij,njk,lk->nil", w_mat, covs, w_mat)
        x, y, z = pc[order, 0], pc[order, 1], pc[order, 2]
        u0 = camera.fx * x / z + camera.cx
        v0 = camera.fy * y / z + camera.cy
        # jacobian rows of the pinhole map at each mean
        j = np.zeros((len(order), 2, 3))
        j[:, 0, 0] = camera.fx / z
        j[:, 0, 2] = -camera.fx * x / z**2
        j[:, 1, 1] = camera.fy / z
        j[:, 1, 2] = -camera.fy * y / z**2
        cov2d = np.einsum("nij,njk,nlk->nil", j, cov_cam, j)
        cov2d[:, 0, 0] += COV2D_DILATION
        cov2d[:, 1, 1] += COV2D_DILATION

        colors = scene.colors[order]
        opac = scene.opacities[order]

        for k in range(len(order)):
            a, b, c = cov2d[k, 0, 0], cov2d[k, 0, 1], cov2d[k, 1, 1]
            det = a * c - b * b
            if det <= 0.0:
                skipped += 1
                continue
            mid = 0.5 * (a + c)
            half = math.sqrt(max(mid * mid - det, 0.0))
            lmax, lmin = mid + half, mid - half
            if lmin <= 0.0 or lmax / lmin > CONDITION_LIMIT:
                skipped += 1
                continue
            radius = 3.0 * math.sqrt(lmax)
            x0 = max(0, int(math.floor(u0[k] - radius)))
            x1 = min(w - 1, int(math.ceil(u0[k] + radius)))
            y0 = max(0, int(math.floor(v0[k] - radius)))
            y1 = min(h - 1, int(math.ceil(v0[k] + radius)))
            if x0 > x1 or y0 > y1:
                continue
            tile = trans[y0 : y1 + 1, x0 : x1 + 1]
            live = tile > TRANSMITTANCE_FLOOR
            if not live.any():
                continue
            us = np.arange(x0, x1 + 1) - u0[k]
            vs = np.arange(y0, y1 + 1) - v0[k]
            du, dv = np.meshgrid(us, vs)
            # inverse of [[a, b], [b, c]] scaled by det
            power = -0.5 * (c * du * du - 2.0 * b * du * dv + a * dv * dv) / det
            alpha = np.minimum(opac[k] * np.exp(power), ALPHA_CAP)
            alpha[(alpha < ALPHA_MIN) | ~live] = 0.0
            weight = tile * alpha
            rgb[y0 : y1 + 1, x0 : x1 + 1] += weight[:, :, None] * colors[k]
            tile *= 1.0 - alpha

    alpha_img = 1.0 - trans
    rgb += trans[:, :, None] * np.asarray(background, dtype=np.float64)
    return RenderResult(np.clip(rgb, 0.0, 1.0), alpha_img, skipped)


def render_mask(
    scene: GaussianScene,
    camera: PinholeCamera = DEFAULT_CAMERA,
    pose: RigidTransform | None = None,
    threshold: float = 0.5,
) -> np.ndarray:
    """Binary occupancy of rendered splats: accumulated opacity >= threshold."""
    return render_scene(scene, camera, pose).alpha >= threshold


def gate_mask(
    gates,
    camera: PinholeCamera = DEFAULT_CAMERA,
    pose: RigidTransform | None = None,
    t: float = 0.0,
) -> np.ndarray:
    """Exact gate-ring mask by ray casting through every pixel center.

    A pixel is set when its ray hits any gate's ring solid (between the inner
    and outer boundary, both inclusive) at positive depth. Square rings use
    the max-norm in the gate plane, circular rings the euclidean norm.
    """
    pose = pose if pose is not None else RigidTransform.identity()
    if isinstance(gates, Gate):
        gates = [gates]
    h, w = camera.height, camera.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [(uu - camera.cx) / camera.fx, (vv - camera.cy) / camera.fy, np.ones_like(uu)], axis=-1
    )
    r_wc = pose.rotation_matrix()
    dirs = dirs_cam @ r_wc.T
    origin = pose.translation

    mask = np.zeros((h, w), dtype=bool)
    for gate in gates:
        center, yaw = gate.pose_at(t)
        normal, lateral, up = gate_axes(yaw)
        denom = dirs @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = (normal @ (center - origin)) / denom
        ok = (np.abs(denom) > 1e-12) & (t_hit > 0.0)
        hit = origin + t_hit[:, :, None] * dirs
        q = hit - center
        a = q @ lateral
        b = q @ up
        if gate.shape == "square":
            d = np.maximum(np.abs(a), np.abs(b))
        else:
            d = np.hypot(a, b)
        mask |= ok & (d >= gate.inner_half) & (d <= gate.outer_half)
    return mask


# ---------------------------------------------------------------------------
# Netpbm image I/O (binary PPM/PGM, canonical headers, byte-stable)
# ---------------------------------------------------------------------------


def _to_u8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    if img.dtype == np.bool_:
        return img.astype(np.uint8) * 255
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def ppm_bytes(img) -> bytes:
    """Encode an (H, W, 3) image (uint8 or floats in [0,1]) as binary PPM."""
    u8 = _to_u8(img)
    if u8.ndim != 3 or u8.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got {u8.shape}")
    h, w = u8.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + u8.tobytes()


def pgm_bytes(img) -> bytes:
    """Encode an (H, W) grayscale image (uint8, bool, or floats) as binary PGM."""
    u8 = _to_u8(img)
    if u8.ndim != 2:
        raise ValueError(f"expected (H, W), got {u8.shape}")
    h, w = u8.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + u8.tobytes()


def _parse_netpbm(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    if not data.startswith(magic):
        raise ValueError(f"expected {magic.decode()} header")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise ValueError("truncated netpbm header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            fields.append(int(data[pos:end]))
            pos = end
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    need = w * h * channels
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise ValueError(f"expected {need} pixel bytes, got {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def read_ppm(data: bytes) -> np.ndarray:
    return _parse_netpbm(data, b"P6", 3)


def read_pgm(data: bytes) -> np.ndarray:
    return _parse_netpbm(data, b"P5", 1)
