"""Versioned binary checkpoints: parameters, optimizer states, raw episodes.

Layout (all integers little-endian, all arrays float64 C-order):

    magic   8 bytes  b"FRLCKPT\\x00"
    version u32
    hlen    u64      byte length of the JSON header
    header  hlen     JSON, sorted keys: counters, metrics, meta, shapes
    blobs            arrays in the deterministic order the header implies
    digest  32 bytes sha256 of everything before it

Everything in the file is a pure function of the saved state, so
save -> load -> save reproduces the file byte for byte. Floats inside the
JSON header round-trip exactly (shortest-repr encoding both ways).
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .sac import ExperienceTuple

MAGIC = b"FRLCKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to resume a run at an episode boundary."""

    config_sha: str = ""
    meta: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    params: dict = field(default_factory=dict)      # name -> float64 array
    trainable: dict = field(default_factory=dict)   # name -> bool
    adam: dict = field(default_factory=dict)        # label -> state_dict
    episodes: list = field(default_factory=list)    # lists of ExperienceTuple


def _episode_blobs(episode):
    oc = np.asarray([st.oc for st in episode], dtype=np.float64)
    action = np.asarray([st.action for st in episode], dtype=np.float64)
    reward = np.asarray([st.reward for st in episode], dtype=np.float64)
    oc_next = np.asarray([st.oc_next for st in episode], dtype=np.float64)
    done = np.asarray([float(st.done) for st in episode], dtype=np.float64)
    return [oc, action, reward, oc_next, done]


def _blob_order(header):
    """Shapes of every array blob, in file order, derived from the header."""
    shapes = []
    for name, shape, _ in header["params"]:
        shapes.append(tuple(shape))
    for label in sorted(header["adam"]):
        for key, shape in header["adam"][label]:
            shapes.append(tuple(shape))
    for ep in header["episodes"]:
        n, oc_dim, act_dim = ep
        shapes.extend([(n, oc_dim), (n, act_dim), (n,), (n, oc_dim), (n,)])
    return shapes


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "version": VERSION,
        "config_sha": ckpt.config_sha,
        "meta": ckpt.meta,
        "counters": ckpt.counters,
        "metrics": ckpt.metrics,
        "params": [[name, list(ckpt.params[name].shape),
                    bool(ckpt.trainable.get(name, True))]
                   for name in sorted(ckpt.params)],
        "adam": {label: [[key, list(np.asarray(state[key]).shape)]
                         for key in sorted(state)]
                 for label, state in ckpt.adam.items()},
        "episodes": [],
    }
    blobs = [np.ascontiguousarray(ckpt.params[name], dtype=np.float64)
             for name in sorted(ckpt.params)]
    for label in sorted(ckpt.adam):
        state = ckpt.adam[label]
        for key in sorted(state):
            blobs.append(np.ascontiguousarray(state[key], dtype=np.float64))
    for episode in ckpt.episodes:
        parts = _episode_blobs(episode)
        header["episodes"].append(
            [len(episode), parts[0].shape[1], parts[1].shape[1]])
        blobs.extend(parts)
    head = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += VERSION.to_bytes(4, "little")
    out += len(head).to_bytes(8, "little")
    out += head
    for blob in blobs:
        out += blob.tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(out))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 + 32:
        raise CheckpointError(f"truncated checkpoint: only {len(raw)} bytes")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(
            f"corrupt checkpoint: digest mismatch over {len(body)} bytes")
    pos = len(MAGIC)
    version = int.from_bytes(raw[pos:pos + 4], "little")
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version {version} not supported (expected {VERSION})")
    pos += 4
    hlen = int.from_bytes(raw[pos:pos + 8], "little")
    pos += 8
    if pos + hlen > len(body):
        raise CheckpointError(f"truncated header at offset {pos}")
    header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen

    arrays = []
    for shape in _blob_order(header):
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if pos + nbytes > len(body):
            raise CheckpointError(f"truncated blob at offset {pos}")
        arrays.append(np.frombuffer(raw, dtype=np.float64, count=count,
                                    offset=pos).reshape(shape).copy())
        pos += nbytes
    if pos != len(body):
        raise CheckpointError(
            f"{len(body) - pos} unexpected trailing bytes at offset {pos}")

    ckpt = Checkpoint(config_sha=header["config_sha"], meta=header["meta"],
                      counters=header["counters"], metrics=header["metrics"])
    it = iter(arrays)
    for name, _, trainable in header["params"]:
        ckpt.params[name] = next(it)
        ckpt.trainable[name] = bool(trainable)
    for label in sorted(header["adam"]):
        state = {}
        for key, _ in header["adam"][label]:
            state[key] = next(it)
        ckpt.adam[label] = state
    for n, _, _ in header["episodes"]:
        oc, action, reward, oc_next, done = (next(it) for _ in range(5))
        ckpt.episodes.append([
            ExperienceTuple(oc[i], action[i], float(reward[i]),
                            oc_next[i], bool(done[i]))
            for i in range(n)
        ])
    return ckpt


def pset_to_checkpoint(pset, ckpt: Checkpoint) -> None:
    """Copy every parameter tensor (and its trainability) into `ckpt`."""
    for name, tensor in pset.items():
        ckpt.params[name] = tensor.data.copy()
        ckpt.trainable[name] = bool(tensor.requires_grad)


def checkpoint_to_pset(ckpt: Checkpoint, pset) -> None:
    """Load parameter values into an already-constructed ParameterSet."""
    names = set(pset.names())
    saved = set(ckpt.params)
    if names != saved:
        missing = sorted(names - saved)[:3]
        extra = sorted(saved - names)[:3]
        raise CheckpointError(
            f"parameter names do not match the model: missing {missing}, "
            f"unexpected {extra}")
    for name in names:
        tensor = pset[name]
        if tensor.data.shape != ckpt.params[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: model {tensor.data.shape}, "
                f"file {ckpt.params[name].shape}")
        tensor.data = ckpt.params[name].copy()
