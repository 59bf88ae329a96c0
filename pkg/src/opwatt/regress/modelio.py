"""JSON model files.

Floats are written with Python's shortest round-trip repr, so a loaded
model predicts bit-identically to the saved one. A SHA-256 checksum over
the canonical body catches edited or truncated files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .linear import LinearModel
from .svr import Standardizer, SvrModel

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


class SchemaMismatchError(ModelFormatError):
    pass


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def _checksum(body: dict) -> str:
    return "sha256:" + hashlib.sha256(_canonical(body).encode()).hexdigest()


def model_document(model: LinearModel | SvrModel) -> dict:
    if isinstance(model, LinearModel):
        params = {"intercept": model.intercept, "coefficients": dict(model.coefficients)}
        standardization = None
    elif isinstance(model, SvrModel):
        params = {
            "kernel": model.kernel,
            "gamma": model.gamma,
            "C": model.C,
            "epsilon": model.epsilon,
            "bias": model.bias,
            "support_vectors": model.support_vectors,
            "dual_coef": model.dual_coef,
        }
        st = model.standardization
        standardization = {"used": list(st.used), "mean": st.mean, "std": st.std}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    body = _plain({
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "schema": list(model.schema),
        "params": params,
        "standardization": standardization,
        "metadata": model.metadata,
    })
    body["checksum"] = _checksum(body)
    return body


def save_model(model: LinearModel | SvrModel) -> str:
    return json.dumps(model_document(model), sort_keys=True, indent=1) + "\n"


def write_model(model, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(save_model(model))
    return path


def load_model(document: str | dict, expected_schema: Sequence[str] | None = None) -> LinearModel | SvrModel:
    """Rebuild a model; raises :class:`ModelFormatError` on any inconsistency."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
    stored = doc.pop("checksum", None)
    if stored is None:
        raise ModelFormatError("model document has no checksum")
    if stored != _checksum(doc):
        raise ModelFormatError("model checksum mismatch: file was modified or corrupted")
    try:
        schema = [str(k) for k in doc["schema"]]
        family, params, meta = doc["family"], doc["params"], doc["metadata"]
        if family == "linear":
            model = LinearModel(float(params["intercept"]),
                                {k: float(params["coefficients"][k]) for k in schema}, schema, dict(meta))
            if set(params["coefficients"]) != set(schema):
                raise ModelFormatError("coefficient keys do not match the schema")
        elif family == "svr":
            st = doc["standardization"]
            used = [int(i) for i in st["used"]]
            sv = np.asarray(params["support_vectors"], dtype=float).reshape(-1, len(used))
            model = SvrModel(
                kernel=params["kernel"],
                gamma=None if params["gamma"] is None else float(params["gamma"]),
                C=float(params["C"]),
                epsilon=float(params["epsilon"]),
                support_vectors=sv,
                dual_coef=np.asarray(params["dual_coef"], dtype=float),
                bias=float(params["bias"]),
                standardization=Standardizer(used, np.asarray(st["mean"], dtype=float), np.asarray(st["std"], dtype=float)),
                schema=schema,
                metadata=dict(meta),
            )
            if len(model.dual_coef) != sv.shape[0]:
                raise ModelFormatError("support vector and dual coefficient counts differ")
        else:
            raise ModelFormatError(f"unknown model family {family!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc!r}") from exc
    if expected_schema is not None and list(expected_schema) != schema:
        raise SchemaMismatchError(f"model schema {schema} does not match data schema {list(expected_schema)}")
    return model


def read_model(path: str | Path, expected_schema: Sequence[str] | None = None):
    return load_model(Path(path).read_text(), expected_schema)
