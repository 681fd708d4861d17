"""JSON scene/camera files.

Floats are written with ``repr`` precision by the json module, so a
save/load round trip reproduces every value bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Camera, Gaussian4D, Scene, TaylorCoeffs
from .remainder_field import ControlPointSet, DeformNet, NeighborTable

SCENE_VERSION = "taylorgs-scene/1"


def _list(a):
    return np.asarray(a, dtype=np.float64).tolist()


def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "version": SCENE_VERSION,
        "time_range": list(scene.time_range),
        "background": _list(scene.background),
        "gaussians": [
            {
                "pos_coeffs": _list(g.pos_coeffs.coeffs),
                "scale_coeffs": _list(g.scale_coeffs.coeffs),
                "rot_coeffs": _list(g.rot_coeffs.coeffs),
                "color": _list(g.color),
                "sigma_s": float(g.sigma_s),
                "mu_tau": float(g.mu_tau),
                "s_tau": float(g.s_tau),
                "t_center": float(g.t_center),
            }
            for g in scene.gaussians
        ],
        "controls": None,
        "neighbors": None,
    }
    if scene.controls is not None:
        c = scene.controls
        doc["controls"] = {
            "positions": _list(c.positions),
            "radii": _list(c.radii),
            "seed_index": int(c.seed_index),
            "net": {
                "shapes": {k: list(v) for k, v in DeformNet.shapes(c.count).items()},
                "weights": _list(c.net.flat()),
            },
        }
    if scene.neighbors is not None:
        nb = scene.neighbors
        doc["neighbors"] = {
            "k": int(nb.k),
            "indices": np.asarray(nb.indices).tolist(),
            "distances": _list(nb.distances),
        }
    return doc


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("version") != SCENE_VERSION:
        raise ValueError(f"unsupported scene version {doc.get('version')!r}")
    gaussians = [
        Gaussian4D(
            TaylorCoeffs(g["pos_coeffs"]),
            TaylorCoeffs(g["scale_coeffs"]),
            TaylorCoeffs(g["rot_coeffs"]),
            color=g["color"],
            sigma_s=g["sigma_s"],
            mu_tau=g["mu_tau"],
            s_tau=g["s_tau"],
            t_center=g["t_center"],
        )
        for g in doc["gaussians"]
    ]
    controls = neighbors = None
    if doc.get("controls"):
        c = doc["controls"]
        n = len(c["radii"])
        declared = {k: tuple(v) for k, v in c["net"]["shapes"].items()}
        if declared != DeformNet.shapes(n):
            raise ValueError("network shapes in scene file do not match the control point count")
        net = DeformNet.zeros(n).with_flat(c["net"]["weights"])
        controls = ControlPointSet(np.array(c["positions"], dtype=np.float64).reshape(-1, 3),
                                   np.array(c["radii"], dtype=np.float64), net, int(c.get("seed_index", 0)))
    if doc.get("neighbors"):
        nb = doc["neighbors"]
        neighbors = NeighborTable(np.array(nb["indices"], dtype=np.int64).reshape(-1, nb["k"]),
                                  np.array(nb["distances"], dtype=np.float64).reshape(-1, nb["k"]))
    if (controls is None) != (neighbors is None):
        raise ValueError("controls and neighbors must both be present or both absent")
    return Scene(gaussians, controls, neighbors, doc["background"], tuple(doc["time_range"]))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene)))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))


def camera_to_dict(cam: Camera) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "rot": _list(cam.rot), "trans": _list(cam.trans),
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
                  width=int(d["width"]), height=int(d["height"]), rot=d["rot"], trans=d["trans"])


def save_cameras(cams, path) -> None:
    Path(path).write_text(json.dumps([camera_to_dict(c) for c in cams], indent=1))


def load_cameras(path) -> list:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc.get("cameras", [doc])
    return [camera_from_dict(d) for d in doc]


def frame_name(frame: int, camera: int) -> str:
    return f"t{frame:03d}_cam{camera:02d}.ppm"
