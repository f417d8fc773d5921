"""Versioned checkpoint container (torch zip archive of plain tensors/scalars)."""
from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from .model import DSTNet, ModelConfig

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: DSTNet, optimizer=None, epoch: int = -1, step: int = 0, seed: int = 0,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    payload = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.cfg),
        "config_hash": model.cfg.config_hash(),
        "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "step": step,
        "seed": seed,
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        torch.save(payload, tmp)
        tmp.replace(path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_checkpoint(path) -> dict:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or "format_version" not in blob:
        raise CheckpointError(f"{path} is not a checkpoint")
    if blob["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {blob['format_version']} unsupported (expected {FORMAT_VERSION})"
        )
    cfg = ModelConfig(**blob["model_config"])
    if cfg.config_hash() != blob["config_hash"]:
        raise CheckpointError(f"{path}: stored config hash does not match its config")
    blob["model_config"] = cfg
    return blob


def load_checkpoint(path, expected: ModelConfig | None = None, optimizer=None):
    """Rebuild the model from a checkpoint.

    With ``expected`` given, a config-hash mismatch raises instead of
    silently building a differently shaped network.
    """
    blob = read_checkpoint(path)
    cfg = blob["model_config"]
    if expected is not None and expected.config_hash() != blob["config_hash"]:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {blob['config_hash'][:12]} vs expected "
            f"{expected.config_hash()[:12]}"
        )
    model = DSTNet(cfg)
    model.load_state_dict(blob["params"])
    if optimizer is not None and blob["optimizer"] is not None:
        optimizer.load_state_dict(blob["optimizer"])
    return model, blob
