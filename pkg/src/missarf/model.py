"""Fitted ARF model (forest + leaf densities) and its file format.

A model file is an uncompressed ``.npz`` archive. The entry ``meta`` holds
UTF-8 JSON with ``format`` / ``format_version``, the schema, forest
hyperparameters and the fit report; every other entry is one array of the
forest (``forest.*``) or of the density model (``density.*``). Loading
reproduces every array bit for bit.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .arf import ArfFitReport, adversarial_fit, extract_leaves
from .density import SIGMA_REL_FLOOR, DensityModel, fit_leaf_densities
from .forest import Forest, ForestParams
from .tabular import ColumnSchema, Dataset

FORMAT_NAME = "missarf-model"
FORMAT_VERSION = 1

_FOREST_ARRAYS = [f.name for f in fields(Forest) if f.name not in ("params", "schema", "n_real", "n_synth")]
_DENSITY_ARRAYS = [f.name for f in fields(DensityModel) if f.name not in ("forest", "smoothing")]


class ModelFormatError(ValueError):
    pass


@dataclass
class ArfModel:
    forest: Forest
    density: DensityModel
    report: ArfFitReport

    @property
    def schema(self):
        return self.forest.schema

    def fingerprint(self) -> str:
        """SHA-256 over the model's arrays and metadata."""
        h = hashlib.sha256()
        h.update(json.dumps(_meta(self), sort_keys=True).encode())
        for name, arr in sorted(_arrays(self).items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def fit_arf(
    data: Dataset,
    params: ForestParams = ForestParams(),
    delta: float = 0.0,
    max_iters: int = 10,
    smoothing: float = 0.0,
    rng=None,
    threads: Optional[int] = None,
    sigma_floor: float = SIGMA_REL_FLOOR,
) -> ArfModel:
    """Adversarial forest plus leaf densities, fitted once on ``data``."""
    forest, report = adversarial_fit(data, params, delta=delta, max_iters=max_iters,
                                     rng=rng, threads=threads)
    leaves = extract_leaves(forest, data)
    density = fit_leaf_densities(forest, leaves, data, smoothing=smoothing, sigma_floor=sigma_floor)
    return ArfModel(forest, density, report)


def _meta(model: ArfModel) -> dict:
    f = model.forest
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "schema": [{"name": c.name, "kind": c.kind, "categories": list(c.categories)} for c in f.schema],
        "params": asdict(f.params),
        "n_real": f.n_real,
        "n_synth": f.n_synth,
        "smoothing": model.density.smoothing,
        "report": asdict(model.report),
    }


def _arrays(model: ArfModel) -> dict:
    out = {f"forest.{k}": getattr(model.forest, k) for k in _FOREST_ARRAYS}
    out.update({f"density.{k}": getattr(model.density, k) for k in _DENSITY_ARRAYS})
    return out


def save_model(model: ArfModel, path) -> None:
    meta = json.dumps(_meta(model), sort_keys=True).encode("utf-8")
    arrays = _arrays(model)
    arrays["meta"] = np.frombuffer(meta, dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> ArfModel:
    try:
        archive = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ModelFormatError(f"{path}: not a model file ({exc})") from exc
    with archive:
        if "meta" not in archive.files:
            raise ModelFormatError(f"{path}: missing metadata")
        meta = json.loads(archive["meta"].tobytes().decode("utf-8"))
        if meta.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"{path}: not a {FORMAT_NAME} file")
        if meta.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(
                f"{path}: unsupported format version {meta.get('format_version')}"
            )
        arrays = {k: archive[k] for k in archive.files if k != "meta"}
    schema = tuple(ColumnSchema(c["name"], c["kind"], tuple(c["categories"])) for c in meta["schema"])
    forest = Forest(
        params=ForestParams(**meta["params"]),
        schema=schema,
        n_real=int(meta["n_real"]),
        n_synth=int(meta["n_synth"]),
        **{k: arrays[f"forest.{k}"] for k in _FOREST_ARRAYS},
    )
    density = DensityModel(
        forest=forest,
        smoothing=float(meta["smoothing"]),
        **{k: arrays[f"density.{k}"] for k in _DENSITY_ARRAYS},
    )
    report = ArfFitReport(**meta["report"])
    return ArfModel(forest, density, report)
