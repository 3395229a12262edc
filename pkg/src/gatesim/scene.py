"""Gaussian-splat scene model: storage, validation, PLY I/O and world alignment.

A scene is a struct-of-arrays collection of anisotropic 3D gaussians
(mean, rotation quaternion, per-axis scales, RGB color, opacity) plus named
object selections (index sets). Covariances are always derived from
(rotation, scales) as Sigma = R diag(s^2) R^T and never stored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    RigidTransform,
    UNIT_NORM_TOL,
    quat_mul,
    quat_normalize,
    quat_to_mat,
    umeyama_alignment,
)

# DC coefficient of the zeroth spherical harmonic, 1 / (2 sqrt(pi)).
SH_DC_COEFF = 0.28209479177387814


class ScenePLYError(ValueError):
    """Malformed PLY input; the message names the offending element."""


class SceneValidationError(ValueError):
    """Scene data violates a gaussian invariant; the message carries the index."""


@dataclass
class Gaussian:
    """A single anisotropic gaussian in world coordinates."""

    mean: np.ndarray       # (3,) meters
    rotation: np.ndarray   # (4,) unit quaternion, wxyz
    scale: np.ndarray      # (3,) meters, > 0
    color: np.ndarray      # (3,) RGB in [0, 1]
    opacity: float         # [0, 1]

    def covariance(self) -> np.ndarray:
        r = quat_to_mat(self.rotation)
        return r @ np.diag(np.asarray(self.scale) ** 2) @ r.T


class GaussianScene:
    """Ordered gaussians stored as float64 arrays, with named object index sets.

    Object sets may overlap; deletion re-indexes every set consistently.
    Scenes are treated as plain values: share read-only, copy before mutating.
    """

    def __init__(self, means, rotations, scales, colors, opacities, objects=None):
        self.means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 4)
        self.scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        self.opacities = np.asarray(opacities, dtype=np.float64).reshape(-1)
        self.objects: dict[str, np.ndarray] = {
            k: np.asarray(v, dtype=np.int64) for k, v in (objects or {}).items()
        }
        n = len(self.means)
        for arr, name in (
            (self.rotations, "rotations"),
            (self.scales, "scales"),
            (self.colors, "colors"),
            (self.opacities, "opacities"),
        ):
            if len(arr) != n:
                raise SceneValidationError(f"{name} length {len(arr)} != {n} means")

    @staticmethod
    def empty() -> "GaussianScene":
        return GaussianScene(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
        )

    @staticmethod
    def from_gaussians(gaussians, objects=None) -> "GaussianScene":
        if not gaussians:
            scene = GaussianScene.empty()
            scene.objects = {k: np.asarray(v, dtype=np.int64) for k, v in (objects or {}).items()}
            return scene
        return GaussianScene(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.color for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            objects,
        )

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            self.means[i].copy(),
            self.rotations[i].copy(),
            self.scales[i].copy(),
            self.colors[i].copy(),
            float(self.opacities[i]),
        )

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            self.means.copy(),
            self.rotations.copy(),
            self.scales.copy(),
            self.colors.copy(),
            self.opacities.copy(),
            {k: v.copy() for k, v in self.objects.items()},
        )

    def add_object(self, name: str, indices) -> None:
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if len(idx) and (idx[0] < 0 or idx[-1] >= len(self)):
            raise SceneValidationError(f"object '{name}' references out-of-range indices")
        self.objects[name] = idx

    def validate(self) -> None:
        """Raise SceneValidationError on the first gaussian violating an invariant."""
        fields = (self.means, self.rotations, self.scales, self.colors)
        for arr in fields:
            bad = ~np.isfinite(arr).all(axis=1)
            if bad.any():
                raise SceneValidationError(f"non-finite field at gaussian {int(np.argmax(bad))}")
        bad = ~np.isfinite(self.opacities)
        if bad.any():
            raise SceneValidationError(f"non-finite opacity at gaussian {int(np.argmax(bad))}")

        norms = np.linalg.norm(self.rotations, axis=1)
        bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
        if bad.any():
            raise SceneValidationError(f"non-unit quaternion at gaussian {int(np.argmax(bad))}")
        bad = (self.scales <= 0.0).any(axis=1)
        if bad.any():
            raise SceneValidationError(f"non-positive scale at gaussian {int(np.argmax(bad))}")
        bad = (self.colors < 0.0).any(axis=1) | (self.colors > 1.0).any(axis=1)
        if bad.any():
            raise SceneValidationError(f"color out of [0,1] at gaussian {int(np.argmax(bad))}")
        bad = (self.opacities < 0.0) | (self.opacities > 1.0)
        if bad.any():
            raise SceneValidationError(f"opacity out of [0,1] at gaussian {int(np.argmax(bad))}")
        for name, idx in self.objects.items():
            if len(idx) and (idx.min() < 0 or idx.max() >= len(self)):
                raise SceneValidationError(f"object '{name}' references out-of-range indices")

    def covariances(self) -> np.ndarray:
        """All covariances R diag(s^2) R^T, shape (n, 3, 3)."""
        r = quat_to_mat(self.rotations)
        d = self.scales**2
        return np.einsum("nij,nj,nkj->nik", r, d, r)


@dataclass(frozen=True)
class Selection:
    """Either a named object or a closed axis-aligned box over gaussian means."""

    object_id: str | None = None
    box_min: np.ndarray | None = None
    box_max: np.ndarray | None = None

    @staticmethod
    def of_object(object_id: str) -> "Selection":
        return Selection(object_id=object_id)

    @staticmethod
    def of_box(box_min, box_max) -> "Selection":
        lo = np.asarray(box_min, dtype=np.float64)
        hi = np.asarray(box_max, dtype=np.float64)
        if np.any(lo > hi):
            raise ValueError("box min must be <= box max componentwise")
        return Selection(box_min=lo, box_max=hi)


def as_selection(selection) -> Selection:
    """Coerce a str (object id) or (min, max) pair into a Selection."""
    if isinstance(selection, Selection):
        return selection
    if isinstance(selection, str):
        return Selection.of_object(selection)
    if isinstance(selection, (tuple, list)) and len(selection) == 2:
        return Selection.of_box(selection[0], selection[1])
    raise TypeError(f"cannot interpret {selection!r} as a selection")


def resolve_selection(scene: GaussianScene, selection) -> np.ndarray:
    """Indices selected by an object id or a closed bounding box over means."""
    sel = as_selection(selection)
    if sel.object_id is not None:
        if sel.object_id not in scene.objects:
            raise KeyError(f"unknown object id: {sel.object_id!r}")
        return np.sort(scene.objects[sel.object_id])
    inside = np.all(scene.means >= sel.box_min, axis=1) & np.all(
        scene.means <= sel.box_max, axis=1
    )
    return np.flatnonzero(inside)


# ---------------------------------------------------------------------------
# PLY I/O
#
# Native layout (lossless, all doubles): x y z scale_0..2 rot_0..3 (wxyz)
# opacity red green blue. Also accepted: the common 3DGS training export with
# log-scales, logit opacities and SH DC color terms f_dc_0..2.
# ---------------------------------------------------------------------------

_NATIVE_PROPS = [
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "red", "green", "blue",
]

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ScenePLYError("not a PLY file: missing 'ply' magic or 'end_header'")
    header = data[: end + len(b"end_header\n")]
    body = data[len(header):]

    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for raw in header.decode("ascii", errors="replace").splitlines():
        parts = raw.strip().split()
        if not parts or parts[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ScenePLYError(f"unsupported PLY format line: {raw.strip()!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ScenePLYError(f"malformed element line: {raw.strip()!r}")
            if parts[1] == "vertex":
                count = int(parts[2])
                in_vertex = True
            else:
                if int(parts[2]) != 0:
                    raise ScenePLYError(f"unsupported non-empty element '{parts[1]}'")
                in_vertex = False
        elif parts[0] == "property":
            if not in_vertex:
                continue
            if parts[1] == "list":
                raise ScenePLYError(f"unsupported list property '{parts[-1]}'")
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise ScenePLYError(f"malformed property line: {raw.strip()!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ScenePLYError(f"unrecognized header line: {raw.strip()!r}")
    if fmt is None:
        raise ScenePLYError("missing 'format' line")
    if count is None:
        raise ScenePLYError("missing 'element vertex' line")
    return fmt, count, props, body


def _read_columns(fmt, count, props, body) -> dict[str, np.ndarray]:
    names = [p[0] for p in props]
    if len(set(names)) != len(names):
        raise ScenePLYError("duplicate property names in vertex element")
    if fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        need = dtype.itemsize * count
        if len(body) < need:
            raise ScenePLYError(
                f"element vertex: expected {need} payload bytes, got {len(body)}"
            )
        rows = np.frombuffer(body[:need], dtype=dtype)
        return {n: rows[n].astype(np.float64) for n in names}
    tokens = body.split()
    need = len(props) * count
    if len(tokens) < need:
        raise ScenePLYError(
            f"element vertex: expected {need} ascii values, got {len(tokens)}"
        )
    try:
        flat = np.array(tokens[:need], dtype=np.float64)
    except ValueError as e:
        raise ScenePLYError(f"element vertex: non-numeric ascii payload ({e})") from None
    table = flat.reshape(count, len(props))
    return {n: table[:, i] for i, n in enumerate(names)}


def load_scene(data: bytes) -> GaussianScene:
    """Parse PLY bytes (native layout or 3DGS training export) into a scene.

    3DGS-layout fields are converted on load: scales exp(), opacities
    sigmoid(), colors 0.5 + SH_DC_COEFF * f_dc clamped to [0, 1], rotations
    normalized.
    """
    fmt, count, props, body = _parse_ply_header(data)
    cols = _read_columns(fmt, count, props, body)

    def need(name: str) -> np.ndarray:
        if name not in cols:
            raise ScenePLYError(f"element vertex: missing property '{name}'")
        return cols[name]

    means = np.stack([need("x"), need("y"), need("z")], axis=1) if count else np.zeros((0, 3))
    if count == 0:
        return GaussianScene.empty()

    scales = np.stack([need(f"scale_{i}") for i in range(3)], axis=1)
    rots = np.stack([need(f"rot_{i}") for i in range(4)], axis=1)
    opac = need("opacity")

    if "f_dc_0" in cols:
        # 3DGS export layout
        f_dc = np.stack([need(f"f_dc_{i}") for i in range(3)], axis=1)
        colors = np.clip(0.5 + SH_DC_COEFF * f_dc, 0.0, 1.0)
        scales = np.exp(scales)
        opac = 1.0 / (1.0 + np.exp(-opac))
        norms = np.linalg.norm(rots, axis=1)
        if np.any(norms == 0.0):
            raise SceneValidationError(
                f"zero-norm quaternion at gaussian {int(np.argmax(norms == 0.0))}"
            )
        rots = rots / norms[:, None]
    elif "red" in cols:
        colors = np.stack([need("red"), need("green"), need("blue")], axis=1)
    else:
        raise ScenePLYError("element vertex: missing property 'red' (or 'f_dc_0')")

    scene = GaussianScene(means, rots, scales, colors, opac)
    scene.validate()
    return scene


def save_scene(scene: GaussianScene, ascii_format: bool = False) -> bytes:
    """Serialize to the native PLY layout (doubles; lossless round-trip)."""
    n = len(scene)
    fmt = "ascii" if ascii_format else "binary_little_endian"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property double {p}" for p in _NATIVE_PROPS]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    table = np.concatenate(
        [scene.means, scene.scales, scene.rotations, scene.opacities[:, None], scene.colors],
        axis=1,
    )
    if ascii_format:
        lines = [" ".join(repr(float(v)) for v in row) for row in table]
        body = ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")
    else:
        body = np.ascontiguousarray(table, dtype="<f8").tobytes()
    return head + body


def save_objects_json(scene: GaussianScene) -> str:
    """Object-label sidecar: JSON map {object-id: [indices]}."""
    return json.dumps(
        {k: [int(i) for i in v] for k, v in sorted(scene.objects.items())},
        indent=2,
        sort_keys=True,
    )


def load_objects_json(scene: GaussianScene, text: str) -> None:
    for name, idx in json.loads(text).items():
        scene.add_object(name, idx)


def write_scene(path, scene: GaussianScene, ascii_format: bool = False) -> None:
    """Write PLY plus the `<stem>.objects.json` sidecar when objects exist."""
    path = Path(path)
    path.write_bytes(save_scene(scene, ascii_format=ascii_format))
    sidecar = path.with_suffix(".objects.json")
    if scene.objects:
        sidecar.write_text(save_objects_json(scene) + "\n")


def read_scene(path) -> GaussianScene:
    path = Path(path)
    scene = load_scene(path.read_bytes())
    sidecar = path.with_suffix(".objects.json")
    if sidecar.exists():
        load_objects_json(scene, sidecar.read_text())
    return scene


def align_to_world(
    scene: GaussianScene, correspondences, with_scale: bool = False
) -> tuple[GaussianScene, RigidTransform]:
    """Map a scene into the world frame from (source-point, world-point) pairs.

    Returns the aligned scene and the recovered transform. Means are mapped by
    the transform, rotations are left-composed with its rotation; scales are
    multiplied by the uniform scale only when scale estimation is enabled.
    """
    src = np.asarray([c[0] for c in correspondences], dtype=np.float64)
    dst = np.asarray([c[1] for c in correspondences], dtype=np.float64)
    transform = umeyama_alignment(src, dst, with_scale=with_scale)

    out = scene.copy()
    out.means = transform.apply(scene.means)
    if len(scene):
        out.rotations = quat_normalize(quat_mul(transform.rotation, scene.rotations))
    out.scales = scene.scales * transform.scale
    return out, transform
