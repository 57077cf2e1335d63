"""Graph bundles and model checkpoints on disk.

Both are directories holding a ``manifest.json`` and one flat little-endian
row-major binary per array. Every file carries a 64-bit FNV-1a checksum in the
manifest; loads verify sizes, checksums and graph invariants.
"""
from __future__ import annotations

import json
from pathlib import Path

import numba
import numpy as np

from .flownorm import NormStats
from .meshgraph import GraphInvariantError, MeshGraph

FORMAT_VERSION = 1
CHECKPOINT_VERSION = 1


class StoreError(Exception):
    pass


class ChecksumError(StoreError):
    pass


class TruncatedFileError(StoreError):
    pass


class FormatVersionError(StoreError):
    pass


class InvariantViolation(StoreError):
    pass


class ShapeMismatchError(StoreError):
    pass


@numba.njit(cache=True)
def _fnv1a64(data):
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h


def fnv1a64(data: bytes) -> str:
    return f"{int(_fnv1a64(np.frombuffer(data, dtype=np.uint8))):016x}"


_BUNDLE_FIELDS = {
    # name: (file, dtype)
    "pos": ("pos.f32", "<f4"),
    "node_type": ("node_type.u8", "u1"),
    "sdf": ("sdf.f32", "<f4"),
    "edge_index": ("edge_index.u32", "<u4"),
    "edge_feat": ("edge_feat.f32", "<f4"),
    "p_obs": ("p_obs.f32", "<f4"),
    "target": ("target.f32", "<f4"),
    "sense_mask": ("sense_mask.u8", "u1"),
}


def _write_arrays(path: Path, arrays: dict[str, tuple[str, np.ndarray]]) -> list[dict]:
    descs = []
    for name, (fname, arr) in arrays.items():
        raw = np.ascontiguousarray(arr).tobytes()
        (path / fname).write_bytes(raw)
        descs.append({"name": name, "file": fname, "shape": list(arr.shape),
                      "dtype": arr.dtype.str, "nbytes": len(raw), "fnv1a64": fnv1a64(raw)})
    return descs


def _read_array(path: Path, desc: dict) -> np.ndarray:
    f = path / desc["file"]
    if not f.exists():
        raise TruncatedFileError(f"missing file {f}")
    raw = f.read_bytes()
    if len(raw) != desc["nbytes"]:
        raise TruncatedFileError(f"{f}: {len(raw)} bytes, manifest says {desc['nbytes']}")
    if fnv1a64(raw) != desc["fnv1a64"]:
        raise ChecksumError(f"{f}: checksum mismatch")
    return np.frombuffer(raw, dtype=np.dtype(desc["dtype"])).reshape(desc["shape"]).copy()


def _read_manifest(path: Path, version: int) -> dict:
    mf = path / "manifest.json"
    if not mf.exists():
        raise TruncatedFileError(f"missing {mf}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise TruncatedFileError(f"unreadable manifest {mf}: {exc}") from exc
    if manifest.get("format_version") != version:
        raise FormatVersionError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    return manifest


def graph_to_float32(graph: MeshGraph) -> MeshGraph:
    """The exact in-memory image of what a bundle stores."""
    f = np.float32
    return graph.replace(
        positions=graph.positions.astype(f), sdf=graph.sdf.astype(f),
        edge_feat=graph.edge_feat.astype(f), pressure_obs=graph.pressure_obs.astype(f),
        target=graph.target.astype(f), node_type=graph.node_type.astype(np.uint8),
        edges=graph.edges.astype(np.int64), sense_mask=graph.sense_mask.astype(bool))


def save_bundle(graph: MeshGraph, stats: NormStats | None, meta: dict | None, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    g = graph_to_float32(graph)
    arrays = {
        "pos": g.positions, "node_type": g.node_type, "sdf": g.sdf,
        "edge_index": g.edges.T.astype("<u4"), "edge_feat": g.edge_feat,
        "p_obs": g.pressure_obs, "target": g.target,
        "sense_mask": g.sense_mask.astype(np.uint8),
    }
    arrays = {k: (_BUNDLE_FIELDS[k][0], np.asarray(v).astype(_BUNDLE_FIELDS[k][1])) for k, v in arrays.items()}
    manifest = {
        "format_version": FORMAT_VERSION,
        "n": g.n_nodes,
        "m": g.n_edges,
        "chord": float(graph.chord),
        "rho": float(graph.rho),
        "stats": stats.to_dict() if stats is not None else None,
        "meta": meta or {},
        "graph_meta": graph.meta,
        "arrays": _write_arrays(path, arrays),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_bundle(path, validate: bool = True) -> tuple[MeshGraph, NormStats | None]:
    path = Path(path)
    manifest = _read_manifest(path, FORMAT_VERSION)
    arrays = {d["name"]: _read_array(path, d) for d in manifest["arrays"]}
    missing = set(_BUNDLE_FIELDS) - set(arrays)
    if missing:
        raise TruncatedFileError(f"{path}: missing arrays {sorted(missing)}")
    n, m = manifest["n"], manifest["m"]
    graph = MeshGraph(
        positions=arrays["pos"].reshape(n, 2),
        node_type=arrays["node_type"].reshape(n),
        edges=arrays["edge_index"].reshape(2, m).T.astype(np.int64),
        edge_feat=arrays["edge_feat"].reshape(m, 4),
        sdf=arrays["sdf"].reshape(n),
        pressure_obs=arrays["p_obs"].reshape(n),
        target=arrays["target"].reshape(n, 3),
        sense_mask=arrays["sense_mask"].reshape(n).astype(bool),
        chord=manifest["chord"],
        rho=manifest["rho"],
        meta={**manifest.get("graph_meta", {}), **manifest.get("meta", {})},
    )
    if validate:
        try:
            graph.validate(rtol=1e-5)
        except GraphInvariantError as exc:
            raise InvariantViolation(f"{path}: {exc}") from exc
    stats = NormStats.from_dict(manifest["stats"]) if manifest.get("stats") else None
    return graph, stats


# --------------------------------------------------------------------------
# checkpoints

def _tensor_file(name: str) -> str:
    return f"{name}.f32"


def save_checkpoint(params: dict, config, path, seed: int = 0, extra: dict | None = None,
                    opt_state: dict | None = None) -> Path:
    """Parameters (and optional AdamW moments) as float32 files plus a manifest.

    ``params`` maps names to arrays or tensors.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, t in params.items():
        arrays[name] = (_tensor_file(name), np.asarray(getattr(t, "data", t)).astype("<f4"))
    if opt_state is not None:
        for name in params:
            arrays[f"adam.m.{name}"] = (_tensor_file(f"adam.m.{name}"), opt_state["m"][name].astype("<f4"))
            arrays[f"adam.v.{name}"] = (_tensor_file(f"adam.v.{name}"), opt_state["v"][name].astype("<f4"))
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "param_names": list(params),
        "dtype": "<f4",
        "seed": seed,
        "opt_step": opt_state["t"] if opt_state is not None else None,
        "training": extra or {},
        "arrays": _write_arrays(path, arrays),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path, config_cls=None):
    """Returns ``(params, config, manifest, opt_state)``; params are float32 arrays."""
    from .model import FrgtConfig, param_shapes

    config_cls = config_cls or FrgtConfig
    path = Path(path)
    manifest = _read_manifest(path, CHECKPOINT_VERSION)
    config = config_cls.from_dict(manifest["config"])
    descs = {d["name"]: d for d in manifest["arrays"]}
    expected = param_shapes(config)
    if set(manifest["param_names"]) != set(expected):
        raise ShapeMismatchError(f"{path}: parameter names do not match the config")
    params = {}
    for name in manifest["param_names"]:
        if name not in descs:
            raise TruncatedFileError(f"{path}: no array for {name}")
        arr = _read_array(path, descs[name])
        if tuple(arr.shape) != tuple(expected[name]):
            raise ShapeMismatchError(f"{name}: stored shape {arr.shape}, config expects {expected[name]}")
        params[name] = arr.astype(np.float32)
    opt_state = None
    if manifest.get("opt_step") is not None:
        opt_state = {"t": manifest["opt_step"],
                     "m": {k: _read_array(path, descs[f"adam.m.{k}"]).astype(np.float32) for k in params},
                     "v": {k: _read_array(path, descs[f"adam.v.{k}"]).astype(np.float32) for k in params}}
    return params, config, manifest, opt_state
