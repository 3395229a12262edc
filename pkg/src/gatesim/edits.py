"""Composable world-frame edits over gaussian scenes.

Every edit takes a scene plus a selection (object id, closed box, or
Selection) and returns a new scene; input scenes are never mutated. Arrays a
given edit does not touch are shared with the input, so unselected gaussians
stay bit-identical and large-scene edits only pay for the fields they change.
"""

from __future__ import annotations

import warnings

import numpy as np

from .geometry import (
    RigidTransform,
    quat_from_axis_angle,
    quat_from_yaw,
    quat_mul,
    quat_normalize,
    quat_rotate,
)
from .scene import GaussianScene, resolve_selection


class EmptySelectionWarning(UserWarning):
    """A selection matched no gaussians; the edit was a no-op."""


def _shared(scene: GaussianScene) -> GaussianScene:
    out = GaussianScene.__new__(GaussianScene)
    out.means = scene.means
    out.rotations = scene.rotations
    out.scales = scene.scales
    out.colors = scene.colors
    out.opacities = scene.opacities
    out.objects = dict(scene.objects)
    return out


def _select(scene: GaussianScene, selection, op: str) -> np.ndarray | None:
    idx = resolve_selection(scene, selection)
    if len(idx) == 0:
        warnings.warn(f"{op}: empty selection, no gaussians affected", EmptySelectionWarning)
        return None
    return idx


def _pivot(scene: GaussianScene, idx: np.ndarray, pivot) -> np.ndarray:
    if pivot is not None:
        return np.asarray(pivot, dtype=np.float64)
    return scene.means[idx].mean(axis=0)


def fresh_object_id(scene: GaussianScene, base: str) -> str:
    """'base' if free, otherwise the first free 'base_2', 'base_3', ..."""
    if base not in scene.objects:
        return base
    k = 2
    while f"{base}_{k}" in scene.objects:
        k += 1
    return f"{base}_{k}"


def add(
    scene: GaussianScene,
    foreign: GaussianScene,
    foreign_selection=None,
    pose: RigidTransform | None = None,
    object_id: str | None = None,
) -> tuple[GaussianScene, str]:
    """Insert gaussians from another scene, posed, under a fresh object id.

    foreign_selection defaults to the whole donor scene; pose defaults to the
    identity. Donor means are mapped by the pose, rotations left-composed
    with its rotation and scales multiplied by its uniform scale. A colliding
    object id gets a deterministic numeric suffix. Returns (scene, id).
    """
    if foreign_selection is None:
        idx = np.arange(len(foreign), dtype=np.int64)
    else:
        idx = resolve_selection(foreign, foreign_selection)
    if len(idx) == 0:
        raise ValueError("add: empty foreign selection")
    pose = pose if pose is not None else RigidTransform.identity()

    means = pose.apply(foreign.means[idx])
    rots = quat_normalize(quat_mul(pose.rotation, foreign.rotations[idx]))
    scales = foreign.scales[idx] * pose.scale

    base_name = object_id
    if base_name is None:
        base_name = foreign_selection if isinstance(foreign_selection, str) else "object"
    new_id = fresh_object_id(scene, base_name)

    n = len(scene)
    out = _shared(scene)
    out.means = np.concatenate([scene.means, means])
    out.rotations = np.concatenate([scene.rotations, rots])
    out.scales = np.concatenate([scene.scales, scales])
    out.colors = np.concatenate([scene.colors, foreign.colors[idx]])
    out.opacities = np.concatenate([scene.opacities, foreign.opacities[idx]])
    out.objects[new_id] = np.arange(n, n + len(idx), dtype=np.int64)
    return out, new_id


def translate(scene: GaussianScene, selection, offset) -> GaussianScene:
    """Rigid translation of the selected gaussians by a world-frame offset."""
    idx = _select(scene, selection, "translate")
    if idx is None:
        return scene
    out = _shared(scene)
    out.means = scene.means.copy()
    out.means[idx] += np.asarray(offset, dtype=np.float64)
    return out


def rotate(scene: GaussianScene, selection, rotation, pivot=None) -> GaussianScene:
    """Rotate the selection by a unit quaternion about a pivot point.

    The pivot defaults to the centroid of the selected means. Gaussian
    orientations are left-composed with the rotation.
    """
    idx = _select(scene, selection, "rotate")
    if idx is None:
        return scene
    q = quat_normalize(rotation)
    p = _pivot(scene, idx, pivot)
    out = _shared(scene)
    out.means = scene.means.copy()
    out.rotations = scene.rotations.copy()
    out.means[idx] = p + quat_rotate(q, scene.means[idx] - p)
    out.rotations[idx] = quat_normalize(quat_mul(q, scene.rotations[idx]))
    return out


def scale(scene: GaussianScene, selection, factor, pivot=None) -> GaussianScene:
    """Scale the selection about a pivot (default: centroid); geometry only.

    factor is a positive scalar or a per-world-axis 3-vector. Means move
    radially from the pivot; per-gaussian extents multiply componentwise,
    which is exact for uniform factors and an axis-aligned approximation for
    anisotropic ones. Color and opacity are untouched.
    """
    k = np.asarray(factor, dtype=np.float64).reshape(-1)
    if k.shape not in ((1,), (3,)):
        raise ValueError("scale factor must be a scalar or a 3-vector")
    if np.any(k <= 0.0):
        raise ValueError(f"scale factors must be > 0, got {factor}")
    idx = _select(scene, selection, "scale")
    if idx is None:
        return scene
    p = _pivot(scene, idx, pivot)
    out = _shared(scene)
    out.means = scene.means.copy()
    out.scales = scene.scales.copy()
    out.means[idx] = p + k * (scene.means[idx] - p)
    out.scales[idx] *= k if k.shape == (1,) else k[None, :]
    return out


def duplicate(
    scene: GaussianScene, selection, offset=(0.0, 0.0, 0.0), object_id: str | None = None
) -> tuple[GaussianScene, str]:
    """Copy the selection, shift the copy by offset, tag it as a new object.

    Returns (scene, id-of-the-copy). The id is object_id when given (must be
    free), otherwise derived from the selection with a numeric suffix.
    """
    idx = resolve_selection(scene, selection)
    if len(idx) == 0:
        raise ValueError("duplicate: empty selection")
    base = object_id
    if base is None:
        base = (selection if isinstance(selection, str) else "selection") + "_copy"
    new_id = fresh_object_id(scene, base)

    n = len(scene)
    out = _shared(scene)
    out.means = np.concatenate([scene.means, scene.means[idx] + np.asarray(offset, float)])
    out.rotations = np.concatenate([scene.rotations, scene.rotations[idx]])
    out.scales = np.concatenate([scene.scales, scene.scales[idx]])
    out.colors = np.concatenate([scene.colors, scene.colors[idx]])
    out.opacities = np.concatenate([scene.opacities, scene.opacities[idx]])
    out.objects[new_id] = np.arange(n, n + len(idx), dtype=np.int64)
    return out, new_id


def delete(scene: GaussianScene, selection) -> GaussianScene:
    """Remove the selection and re-index every object set consistently.

    Object entries whose members were all deleted are kept as empty sets so
    ids remain stable for later edits.
    """
    idx = _select(scene, selection, "delete")
    if idx is None:
        return scene
    keep = np.ones(len(scene), dtype=bool)
    keep[idx] = False
    # old index -> new index for survivors
    remap = np.cumsum(keep) - 1
    out = _shared(scene)
    out.means = scene.means[keep]
    out.rotations = scene.rotations[keep]
    out.scales = scene.scales[keep]
    out.colors = scene.colors[keep]
    out.opacities = scene.opacities[keep]
    out.objects = {
        name: remap[members[keep[members]]].astype(np.int64)
        for name, members in scene.objects.items()
    }
    return out


def lighting(scene: GaussianScene, selection, mode: str, rgb) -> GaussianScene:
    """Color edit of the selection: multiply by rgb (clamped) or replace with it.

    Multiply gains must be >= 0 (results clamp to [0, 1]); replacement colors
    must already be in [0, 1]. Geometry and opacity are untouched.
    """
    rgb = np.asarray(rgb, dtype=np.float64).reshape(3)
    if mode not in ("multiply", "replace"):
        raise ValueError(f"lighting mode must be 'multiply' or 'replace', got {mode!r}")
    if np.any(rgb < 0.0) or (mode == "replace" and np.any(rgb > 1.0)):
        raise ValueError(f"rgb out of range for {mode}: {rgb.tolist()}")
    idx = _select(scene, selection, "lighting")
    if idx is None:
        return scene
    out = _shared(scene)
    out.colors = scene.colors.copy()
    if mode == "multiply":
        out.colors[idx] = np.clip(scene.colors[idx] * rgb, 0.0, 1.0)
    else:
        out.colors[idx] = rgb
    return out


# ---------------------------------------------------------------------------
# Scripted edits: a JSON-friendly list of op records applied in order
# ---------------------------------------------------------------------------


def _script_selection(record):
    sel = record.get("selection")
    if isinstance(sel, dict) and "box" in sel:
        return tuple(sel["box"])
    return sel


def _script_rotation(record) -> np.ndarray:
    if "quaternion" in record:
        return quat_normalize(record["quaternion"])
    return quat_from_axis_angle(record["axis"], float(record["angle"]))


def apply_edit_script(scene: GaussianScene, ops, donor_loader=None) -> GaussianScene:
    """Apply a list of edit records (dicts with an 'op' key) in order.

    Record shapes:
      translate: {op, selection, delta}
      rotate:    {op, selection, quaternion | (axis, angle), pivot?}
      scale:     {op, selection, factor, pivot?}
      duplicate: {op, selection, offset?, object_id?}
      delete:    {op, selection}
      lighting:  {op, selection, mode, rgb}
      add:       {op, scene, selection?, translation?, yaw?, object_id?}
    'add' resolves its donor through donor_loader(path); selections are
    object-id strings or {"box": [min, max]}.
    """
    for record in ops:
        op = record.get("op")
        sel = _script_selection(record)
        if op == "translate":
            scene = translate(scene, sel, record["delta"])
        elif op == "rotate":
            scene = rotate(scene, sel, _script_rotation(record), record.get("pivot"))
        elif op == "scale":
            scene = scale(scene, sel, record["factor"], record.get("pivot"))
        elif op == "duplicate":
            scene, _ = duplicate(
                scene, sel, record.get("offset", (0.0, 0.0, 0.0)), record.get("object_id")
            )
        elif op == "delete":
            scene = delete(scene, sel)
        elif op == "lighting":
            scene = lighting(scene, sel, record["mode"], record["rgb"])
        elif op == "add":
            if donor_loader is None:
                raise ValueError("edit script uses 'add' but no donor loader was given")
            donor = donor_loader(record["scene"])
            pose = RigidTransform(
                quat_from_yaw(float(record.get("yaw", 0.0))),
                np.asarray(record.get("translation", (0.0, 0.0, 0.0)), dtype=np.float64),
            )
            scene, _ = add(scene, donor, sel, pose, record.get("object_id"))
        else:
            raise ValueError(f"unknown edit op: {op!r}")
    return scene
