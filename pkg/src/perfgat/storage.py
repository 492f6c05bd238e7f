"""On-disk cohorts, graphs and checkpoints, all built on the array container."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .container import SCHEMA_VERSION, ArtifactContainer
from .errors import CompatibilityError, DataError
from .graphgen import SpatioTemporalGraph
from .synthdata import LabeledVolume
from .trainer import AdamState, TrainState

COHORT_MANIFEST = "cohort.json"
GRAPH_MANIFEST = "graphs.json"


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_json(path: Path) -> dict:
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# cohorts

def volume_container(v: LabeledVolume) -> ArtifactContainer:
    arrays = {
        "region_series": v.region_series,
        "centroids": v.region_centroids,
        "tumor_series": v.tumor_series,
        "tumor_patch": v.tumor_patch,
        "tumor_centroid": v.tumor_centroid,
        "label": np.array(float(v.label)),
    }
    if v.region_kinetics is not None:
        arrays["region_kinetics"] = v.region_kinetics
    meta = {"kind": "subject", "subject_id": v.subject_id, "seed": v.seed, "label": v.label}
    return ArtifactContainer(arrays, meta)


def volume_from_container(c: ArtifactContainer, source: str = "") -> LabeledVolume:
    missing = [k for k in ("region_series", "centroids", "tumor_series", "tumor_patch",
                           "tumor_centroid", "label") if k not in c.arrays]
    if missing:
        raise DataError(f"{source}: missing arrays {', '.join(missing)}")
    a = c.arrays
    return LabeledVolume(
        region_series=a["region_series"], region_centroids=a["centroids"],
        tumor_series=a["tumor_series"], tumor_patch=a["tumor_patch"],
        tumor_centroid=a["tumor_centroid"], label=int(a["label"]),
        subject_id=int(c.metadata.get("subject_id", 0)), seed=int(c.metadata.get("seed", 0)),
        region_kinetics=a.get("region_kinetics"))


def subject_file(i: int) -> str:
    return f"subject_{i:04d}.pgc"


def save_cohort(out_dir, volumes: Sequence[LabeledVolume], config: Mapping) -> Path:
    """One container per subject plus a JSON manifest of labels and seeds."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subjects = []
    for v in volumes:
        name = subject_file(v.subject_id)
        volume_container(v).write(out / name)
        subjects.append({"file": name, "subject_id": v.subject_id, "label": v.label,
                         "seed": v.seed})
    manifest = {"schema_version": SCHEMA_VERSION, "kind": "cohort", "config": dict(config),
                "n_subjects": len(volumes), "n_minority": sum(v.label for v in volumes),
                "subjects": subjects}
    _dump_json(out / COHORT_MANIFEST, manifest)
    return out


def load_cohort(cohort_dir) -> tuple[list[LabeledVolume], dict]:
    d = Path(cohort_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: cohort directory not found")
    manifest = _load_json(d / COHORT_MANIFEST)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise CompatibilityError(f"{d / COHORT_MANIFEST}: schema_version "
                                 f"{manifest.get('schema_version')}, expected {SCHEMA_VERSION}")
    vols = []
    for entry in manifest["subjects"]:
        path = d / entry["file"]
        v = volume_from_container(ArtifactContainer.read(path), str(path))
        if v.label != entry["label"]:
            raise DataError(f"{path}: label {v.label} disagrees with manifest {entry['label']}")
        vols.append(v)
    return vols, manifest


def cohort_dims(volumes: Sequence[LabeledVolume]) -> dict:
    if not volumes:
        raise DataError("empty cohort")
    v = volumes[0]
    dims = {"n_regions": v.n_regions, "n_timepoints": v.n_timepoints,
            "patch_size": int(v.tumor_patch.shape[0])}
    for w in volumes[1:]:
        other = {"n_regions": w.n_regions, "n_timepoints": w.n_timepoints,
                 "patch_size": int(w.tumor_patch.shape[0])}
        if other != dims:
            raise DataError(f"subject {w.subject_id} has dims {other}, cohort has {dims}")
    return dims


# ---------------------------------------------------------------------------
# graphs

def graph_container(g: SpatioTemporalGraph, subject_id: int, tau: float, k: int
                    ) -> ArtifactContainer:
    arrays = {"x": g.x, "a_temporal": g.a_temporal, "a_spatial": g.a_spatial,
              "centroids": g.centroids, "label": np.array(float(g.label))}
    return ArtifactContainer(arrays, {"kind": "graph", "subject_id": subject_id,
                                      "tau": tau, "k": k, "label": g.label})


def graph_from_container(c: ArtifactContainer) -> SpatioTemporalGraph:
    a = c.arrays
    return SpatioTemporalGraph(x=a["x"], a_temporal=a["a_temporal"], a_spatial=a["a_spatial"],
                               centroids=a["centroids"], label=int(a["label"]))


def save_graphs(out_dir, graphs: Sequence[tuple[int, SpatioTemporalGraph]], tau: float,
                k: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for sid, g in graphs:
        name = f"graph_{sid:04d}.pgc"
        graph_container(g, sid, tau, k).write(out / name)
        entries.append({"file": name, "subject_id": sid, "label": g.label,
                        "temporal_edges": int(g.a_temporal.sum() // 2),
                        "spatial_edges": int(g.a_spatial.sum() // 2)})
    _dump_json(out / GRAPH_MANIFEST, {"schema_version": SCHEMA_VERSION, "kind": "graphs",
                                      "tau": tau, "k": k, "graphs": entries})
    return out


# ---------------------------------------------------------------------------
# checkpoints

def _finite_or_none(x: float):
    return None if not math.isfinite(x) else x


def save_checkpoint(path, params: Mapping[str, np.ndarray], *, config: Mapping, dims: Mapping,
                    stage: str, state: TrainState | None = None,
                    extra: Mapping | None = None) -> None:
    """Write parameters, and when given the full training state, to one container.

    ``param/*`` holds the parameters to use for inference. With ``state``
    the current and best parameters, Adam moments and loop counters are
    stored too, which is enough to resume training exactly.
    """
    arrays = {f"param/{k}": v for k, v in params.items()}
    meta = {"kind": "checkpoint", "stage": stage, "config": dict(config), "dims": dict(dims)}
    if state is not None:
        arrays.update({f"state/params/{k}": v for k, v in state.params.items()})
        arrays.update({f"state/best/{k}": v for k, v in state.best_params.items()})
        arrays.update({f"adam/m/{k}": v for k, v in state.opt.m.items()})
        arrays.update({f"adam/v/{k}": v for k, v in state.opt.v.items()})
        meta["state"] = {"epoch": state.epoch, "best_val": _finite_or_none(state.best_val),
                         "best_epoch": state.best_epoch, "bad_epochs": state.bad_epochs,
                         "stopped": state.stopped, "adam_step": state.opt.step,
                         "history": state.history}
    if extra:
        meta["extra"] = dict(extra)
    ArtifactContainer(arrays, meta).write(path)


def _group(arrays: Mapping, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def load_checkpoint(path) -> tuple[dict, dict, TrainState | None]:
    """``(params, metadata, state)``; ``state`` is ``None`` when none was stored."""
    c = ArtifactContainer.read(path)
    if c.metadata.get("kind") != "checkpoint":
        raise DataError(f"{path}: not a checkpoint")
    params = _group(c.arrays, "param/")
    state = None
    st = c.metadata.get("state")
    if st is not None:
        best_val = st["best_val"]
        state = TrainState(
            params=_group(c.arrays, "state/params/"),
            best_params=_group(c.arrays, "state/best/"),
            opt=AdamState(step=st["adam_step"], m=_group(c.arrays, "adam/m/"),
                          v=_group(c.arrays, "adam/v/")),
            epoch=st["epoch"], best_val=float("inf") if best_val is None else best_val,
            best_epoch=st["best_epoch"], bad_epochs=st["bad_epochs"], stopped=st["stopped"],
            history=list(st["history"]))
    return params, c.metadata, state


def check_compatible(meta: Mapping, dims: Mapping, source: str = "checkpoint") -> None:
    want = meta.get("dims", {})
    bad = [f"{k} (checkpoint {want.get(k)}, cohort {dims[k]})"
           for k in sorted(dims) if want.get(k) != dims[k]]
    if bad:
        raise CompatibilityError(f"{source} does not match cohort: {'; '.join(bad)}")
