"""Self-describing checkpoint container: JSON header (phase, config, block
shapes) followed by raw little-endian float64 blocks. Deterministic bytes,
no timestamps, bit-exact round trips."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import AttentionParams
from .cells import CollaboratorParams, LstmParams
from .model import CamParams, FusionHead, LinearHead, StageOneView, StageTwoModel

MAGIC = b"CAMCKPT\n"
FORMAT_VERSION = 1

PHASES = ("stage1", "stage2", "fusion")


class CheckpointFormatError(ValueError):
    """``code`` is one of corrupt-header, shape-mismatch, unknown-version."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


def _blocks_of(params, phase):
    """Flat name -> array mapping for the blocks a phase has trained."""
    pairs = []
    pairs += list(params.stage1_r.named("stage1_r"))
    pairs += list(params.stage1_d.named("stage1_d"))
    if phase in ("stage2", "fusion"):
        pairs += list(params.stage2.named("stage2"))
    if phase == "fusion":
        pairs += list(params.fusion.named("fusion"))
    return {name: arr.values for name, arr in pairs}


def save_checkpoint(path, params, phase, config_dict, extra=None):
    """Write the blocks trained up to ``phase`` (checkpoints are cumulative:
    the fusion checkpoint carries the whole model)."""
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    blocks = _blocks_of(params, phase)
    header = {
        "format_version": FORMAT_VERSION,
        "phase": phase,
        "config": config_dict,
        "blocks": [{"name": n, "shape": list(blocks[n].shape)} for n in blocks],
    }
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name in blocks:
            fh.write(np.ascontiguousarray(blocks[name], dtype="<f8").tobytes())
    return path


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError("corrupt-header", f"truncated file while reading {what}")
    return data


def load_checkpoint(path):
    """Read (phase, config_dict, blocks, extra) and validate shapes."""
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointFormatError("corrupt-header", f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(
                "unknown-version", f"format version {version}, expected {FORMAT_VERSION}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise CheckpointFormatError("corrupt-header", f"bad header JSON: {exc}") from exc
        phase = header.get("phase")
        if phase not in PHASES:
            raise CheckpointFormatError("corrupt-header", f"unknown phase {phase!r}")
        blocks = {}
        for spec in header.get("blocks", []):
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 8 * n, f"block {spec['name']}")
            blocks[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointFormatError("corrupt-header", "trailing bytes after last block")
    return phase, header.get("config", {}), blocks, header.get("extra")


def _take(blocks, name):
    if name not in blocks:
        raise CheckpointFormatError("corrupt-header", f"missing block {name}")
    return T.parameter(blocks[name])


def _lstm_from(blocks, prefix):
    names = ("w_f", "u_f", "b_f", "w_i", "u_i", "b_i",
             "w_o", "u_o", "b_o", "w_c", "u_c", "b_c")
    return LstmParams(*[_take(blocks, f"{prefix}.{n}") for n in names])


def _attention_from(blocks, prefix):
    return AttentionParams(*[_take(blocks, f"{prefix}.{n}") for n in ("w_w", "b_w", "u_w")])


def _head_from(blocks, prefix):
    return LinearHead(_take(blocks, f"{prefix}.w"), _take(blocks, f"{prefix}.b"))


def _stage_one_from(blocks, prefix):
    return StageOneView(_lstm_from(blocks, f"{prefix}.lstm"),
                        _attention_from(blocks, f"{prefix}.att"),
                        _head_from(blocks, f"{prefix}.cls"))


def _stage_two_from(blocks):
    collab = CollaboratorParams(*[_take(blocks, f"stage2.collab.{n}")
                                  for n in ("w_rd", "w_d", "w_dr", "w_r")])
    return StageTwoModel(
        lstm_r=_lstm_from(blocks, "stage2.lstm_r"),
        lstm_d=_lstm_from(blocks, "stage2.lstm_d"),
        collab=collab,
        att_r=_attention_from(blocks, "stage2.att_r"),
        att_d=_attention_from(blocks, "stage2.att_d"),
        classifier_r=_head_from(blocks, "stage2.cls_r"),
        classifier_d=_head_from(blocks, "stage2.cls_d"),
    )


def params_from_blocks(phase, blocks, rng=None):
    """Rebuild parameter containers; blocks a phase has not trained yet are
    freshly initialized (a generator must be supplied to allow that)."""
    from .model import init_fusion_head, init_stage_two_model

    stage1_r = _stage_one_from(blocks, "stage1_r")
    stage1_d = _stage_one_from(blocks, "stage1_d")
    hidden = stage1_r.lstm.hidden_dim
    att_dim = stage1_r.att.att_dim
    n_classes = stage1_r.classifier.b.shape[0]
    d_r = stage1_r.lstm.input_dim
    d_d = stage1_d.lstm.input_dim
    if phase in ("stage2", "fusion"):
        stage2 = _stage_two_from(blocks)
    else:
        if rng is None:
            raise ValueError("need an rng to initialize untrained stage-2 blocks")
        stage2 = init_stage_two_model(d_r, d_d, hidden, att_dim, n_classes, rng)
    if phase == "fusion":
        fusion = FusionHead(_head_from(blocks, "fusion.cls"))
    else:
        if rng is None:
            raise ValueError("need an rng to initialize an untrained fusion head")
        fusion = init_fusion_head(n_classes, rng)
    params = CamParams(stage1_r, stage1_d, stage2, fusion)
    validate_cam_params(params)
    return params


def validate_cam_params(params):
    """Cross-block shape invariants: one hidden width, one class count, and a
    fusion input of exactly n_classes**2."""
    hidden = params.stage1_r.lstm.hidden_dim
    for name, lstm in (("stage1_d", params.stage1_d.lstm),
                       ("stage2.lstm_r", params.stage2.lstm_r),
                       ("stage2.lstm_d", params.stage2.lstm_d)):
        if lstm.hidden_dim != hidden:
            raise CheckpointFormatError(
                "shape-mismatch", f"{name} hidden dim {lstm.hidden_dim} != {hidden}")
    n_classes = params.stage1_r.classifier.b.shape[0]
    for name, head in (("stage1_d", params.stage1_d.classifier),
                       ("stage2.cls_r", params.stage2.classifier_r),
                       ("stage2.cls_d", params.stage2.classifier_d),
                       ("fusion", params.fusion.classifier)):
        if head.b.shape[0] != n_classes:
            raise CheckpointFormatError(
                "shape-mismatch", f"{name} classifies {head.b.shape[0]} != {n_classes} classes")
    fusion_in = params.fusion.classifier.w.shape[1]
    if fusion_in != n_classes * n_classes:
        raise CheckpointFormatError(
            "shape-mismatch",
            f"fusion head input {fusion_in} != n_classes**2 = {n_classes * n_classes}")
    return params
