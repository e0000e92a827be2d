"""
ECON Checkpoints

torch.save of {"kind", "dims", "state_dict", "meta"}; the dims header must
match the model being restored.
"""

from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import torch
from torch import nn

from .errors import ContractError, DataError


def save_checkpoint(
    path: Path,
    kind: str,
    dims: Mapping[str, int],
    module: nn.Module,
    meta: Optional[Mapping[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": kind,
            "dims": dict(dims),
            "state_dict": module.state_dict(),
            "meta": dict(meta or {}),
        },
        path,
    )
    return path


def load_checkpoint(path: Path, kind: str, expected_dims: Optional[Mapping[str, int]] = None) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != kind:
        raise ContractError(f"{path} holds a {payload.get('kind')!r} checkpoint, expected {kind!r}")
    if expected_dims is not None:
        mismatched = {
            name: (payload["dims"].get(name), value)
            for name, value in expected_dims.items()
            if payload["dims"].get(name) != value
        }
        if mismatched:
            raise ContractError(f"{path}: dimension mismatch (stored, expected) {mismatched}")
    return payload
