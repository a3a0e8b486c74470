"""Checkpoint container shared by the displacement experts and the classifier.

An npz archive (zip of npy members): named float64 arrays for every
parameter plus `__format__` (version header), `__kind__`, and `__config__`
(the owning config as JSON).  Loading into a model validates every shape
and fails loudly on mismatch.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np
import torch

from .errors import MalformedInput, MissingArtifact, ShapeMismatch

FORMAT = "xio-ckpt-v1"


def _named_tensors(model: torch.nn.Module):
    yield from model.named_parameters()
    # buffers too (batch-norm running statistics)
    yield from model.named_buffers()


def save_checkpoint(path, model: torch.nn.Module, kind: str) -> None:
    arrays = {
        name: p.detach().cpu().numpy().astype(np.float64)
        for name, p in _named_tensors(model)
    }
    np.savez(
        path,
        __format__=np.array(FORMAT),
        __kind__=np.array(kind),
        __config__=np.array(json.dumps(asdict(model.config))),
        **arrays,
    )


def read_checkpoint(path, expect_kind: str) -> tuple[dict, dict]:
    """Return (config_dict, name->array) after validating the header."""
    if not os.path.exists(path):
        raise MissingArtifact(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        if "__format__" not in z or str(z["__format__"]) != FORMAT:
            raise MalformedInput(f"{path}: not a {FORMAT} checkpoint")
        kind = str(z["__kind__"]) if "__kind__" in z else ""
        if kind != expect_kind:
            raise MalformedInput(
                f"{path}: checkpoint kind '{kind}', expected '{expect_kind}'")
        cfg = json.loads(str(z["__config__"]))
        params = {k: z[k] for k in z.files if not k.startswith("__")}
    return cfg, params


def load_into(model: torch.nn.Module, params: dict, path="<checkpoint>") -> None:
    model_params = dict(_named_tensors(model))
    missing = set(model_params) - set(params)
    extra = set(params) - set(model_params)
    if missing or extra:
        raise ShapeMismatch(f"{path}: parameter set mismatch "
                            f"(missing {sorted(missing)}, extra {sorted(extra)})")
    with torch.no_grad():
        for name, arr in params.items():
            target = model_params[name]
            if tuple(arr.shape) != tuple(target.shape):
                raise ShapeMismatch(
                    f"{path}: shape mismatch for '{name}': file "
                    f"{tuple(arr.shape)} vs model {tuple(target.shape)}")
            target.copy_(torch.from_numpy(arr).to(target.dtype))
