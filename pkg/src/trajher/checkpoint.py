"""Binary checkpoints.

Layout (little-endian)::

    8 bytes   magic "TRAJHER1"
    u32       format version
    u32       section count
    repeated: u16 name length, name (ascii), u64 payload length, payload

Sections: ``config`` (key=value text), ``digest`` (sha256 hex of the config
text), ``progress`` and ``rng`` (sorted-key JSON), ``net.*`` (float64
parameter arrays), ``adam.*`` (u64 step then m and v), ``norm.*`` (u64 count
then sum and sum of squares) and optionally ``buffer`` (replay contents, for
bit-exact resume).
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .config import Config, parse_config
from .errors import CheckpointError, ConfigurationError
from .numerics import AdamState, RunningNormalizer

MAGIC = b"TRAJHER1"
VERSION = 1
NETS = ("actor", "critic", "target_actor", "target_critic")
_BUFFER_KEYS = (("obs", "<f8"), ("actions", "<f8"), ("ag", "<f8"), ("g", "<f8"), ("seg", "<i8"))


def _f64(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _pack_adam(state: AdamState) -> bytes:
    return struct.pack("<Q", state.step) + _f64(state.m) + _f64(state.v)


def _pack_norm(norm: RunningNormalizer) -> bytes:
    return struct.pack("<Q", norm.count) + _f64(norm.sum) + _f64(norm.sumsq)


def _pack_buffer(buffer) -> bytes:
    arrays = buffer.state_arrays()
    out = io.BytesIO()
    out.write(struct.pack("<QQ", buffer.inserted, arrays["obs"].shape[0]))
    for key, dtype in _BUFFER_KEYS:
        out.write(np.ascontiguousarray(arrays[key], dtype=dtype).tobytes())
    return out.getvalue()


def encode(trainer, include_buffer: bool = True) -> bytes:
    config_text = trainer.config.dump()
    agent = trainer.agent
    sections = [
        ("config", config_text.encode()),
        ("digest", hashlib.sha256(config_text.encode()).hexdigest().encode()),
        ("progress", _json(trainer.progress())),
        ("rng", _json(trainer.rng.get_state())),
    ]
    for name in NETS:
        sections.append((f"net.{name}", _f64(getattr(agent, name).params)))
    sections.append(("adam.actor", _pack_adam(agent.actor_adam)))
    sections.append(("adam.critic", _pack_adam(agent.critic_adam)))
    sections.append(("norm.obs", _pack_norm(agent.obs_norm)))
    sections.append(("norm.goal", _pack_norm(agent.goal_norm)))
    if include_buffer:
        sections.append(("buffer", _pack_buffer(trainer.buffer)))
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(sections)))
    for name, payload in sections:
        raw = name.encode("ascii")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    return out.getvalue()


def save(trainer, path: str | Path, include_buffer: bool = True) -> None:
    """Write atomically: a crash mid-write leaves any previous file intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode(trainer, include_buffer))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def decode(data: bytes) -> dict[str, bytes]:
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic (expected TRAJHER1)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    pos = 16
    sections: dict[str, bytes] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("ascii")
            pos += 2 + n
            (size,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if pos + size > len(data):
                raise CheckpointError(f"section {name!r} is truncated")
            sections[name] = data[pos:pos + size]
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint is truncated or corrupt: {exc}") from exc
    if pos != len(data):
        raise CheckpointError("trailing bytes after last section")
    required = ["config", "digest", "progress", "rng", "adam.actor", "adam.critic", "norm.obs", "norm.goal"]
    required += [f"net.{n}" for n in NETS]
    missing = [r for r in required if r not in sections]
    if missing:
        raise CheckpointError(f"checkpoint missing sections: {', '.join(missing)}")
    if hashlib.sha256(sections["config"]).hexdigest().encode() != sections["digest"]:
        raise CheckpointError("config digest does not match the stored config")
    return sections


def read_config(sections: dict[str, bytes]) -> Config:
    try:
        return parse_config(sections["config"].decode(), "<checkpoint config>")
    except ConfigurationError as exc:
        raise CheckpointError(str(exc)) from exc


def _unpack_f64(raw: bytes, expected: int, what: str) -> np.ndarray:
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if arr.size != expected:
        raise CheckpointError(f"{what}: expected {expected} values, found {arr.size}")
    return arr


def restore(trainer, sections: dict[str, bytes]) -> None:
    """Overwrite ``trainer`` state with checkpoint contents."""
    agent = trainer.agent
    for name in NETS:
        net = getattr(agent, name)
        net.set_params(_unpack_f64(sections[f"net.{name}"], net.n_params, f"net.{name}"))
    for name, state in (("actor", agent.actor_adam), ("critic", agent.critic_adam)):
        raw = sections[f"adam.{name}"]
        (state.step,) = struct.unpack_from("<Q", raw)
        mv = _unpack_f64(raw[8:], 2 * state.size, f"adam.{name}")
        state.m[...] = mv[:state.size]
        state.v[...] = mv[state.size:]
    for name, norm in (("obs", agent.obs_norm), ("goal", agent.goal_norm)):
        raw = sections[f"norm.{name}"]
        (count,) = struct.unpack_from("<Q", raw)
        sums = _unpack_f64(raw[8:], 2 * norm.size, f"norm.{name}")
        norm.load(count, sums[:norm.size], sums[norm.size:])
    trainer.rng.set_state(json.loads(sections["rng"]))
    trainer.restore_progress(json.loads(sections["progress"]))
    if "buffer" in sections:
        _restore_buffer(trainer.buffer, sections["buffer"])
    else:
        trainer.buffer.clear()


def _restore_buffer(buffer, raw: bytes) -> None:
    inserted, n = struct.unpack_from("<QQ", raw)
    T = buffer.horizon
    shapes = {
        "obs": (n, T + 1, buffer.obs_dim),
        "actions": (n, T, buffer.action_dim),
        "ag": (n, T + 1, buffer.goal_dim),
        "g": (n, T, buffer.goal_dim),
        "seg": (n, T),
    }
    pos = 16
    arrays = {}
    for key, dtype in _BUFFER_KEYS:
        count = int(np.prod(shapes[key]))
        chunk = raw[pos:pos + 8 * count]
        if len(chunk) != 8 * count:
            raise CheckpointError("buffer section is truncated")
        arrays[key] = np.frombuffer(chunk, dtype=dtype).reshape(shapes[key]).copy()
        pos += 8 * count
    buffer.load_arrays(arrays, inserted)


def load_trainer(path: str | Path, expected: Config | None = None):
    """Rebuild a :class:`~trajher.trainer.Trainer` from a checkpoint file.

    When ``expected`` is given its digest must match the stored config.
    """
    from .trainer import Trainer

    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    sections = decode(data)
    config = read_config(sections)
    if expected is not None and expected.digest() != config.digest():
        raise CheckpointError(
            f"config digest mismatch: checkpoint {config.digest()[:12]} vs current {expected.digest()[:12]}")
    progress = json.loads(sections["progress"])
    trainer = Trainer(config, seed=progress["seed"])
    restore(trainer, sections)
    return trainer
