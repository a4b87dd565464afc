"""Binary checkpoint format.

Layout (all integers little-endian):

* magic ``HLF1`` (4 bytes), format version (u16)
* config block: u32 byte length, then the canonical config text (utf-8)
* parameter table: u32 entry count, then per tensor u32 name length,
  name bytes, u32 rank, u32 dims, and the float64 payload
* optimizer state in the same tensor-table format (scalars are rank 0)
* RNG state: u32 word count followed by that many u64 words
* epoch counter (u32)

Saving the result of a load reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"HLF1"
VERSION = 1

# Adam scalars travel in the optimizer table as rank-0 entries.
_ADAM_META = ("adam.step", "adam.lr", "adam.beta1", "adam.beta2", "adam.eps")


@dataclass
class Checkpoint:
    config_text: str
    params: dict                 # name -> float64 ndarray
    opt_state: dict = field(default_factory=dict)
    rng_words: tuple = ()
    epoch: int = 0


def philox_state_words(bit_generator):
    """Flatten a Philox bit-generator state into 13 u64 words."""
    st = bit_generator.state
    words = list(st["state"]["counter"]) + list(st["state"]["key"])
    words += list(st["buffer"])
    words += [st["buffer_pos"], st["has_uint32"], st["uinteger"]]
    return tuple(int(w) for w in words)


def philox_from_words(words):
    """Rebuild a numpy Generator from :func:`philox_state_words` output."""
    words = list(words)
    if len(words) != 13:
        raise FormatError(f"expected 13 RNG state words, found {len(words)}")
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.array(words[0:4], dtype=np.uint64),
                  "key": np.array(words[4:6], dtype=np.uint64)},
        "buffer": np.array(words[6:10], dtype=np.uint64),
        "buffer_pos": int(words[10]),
        "has_uint32": int(words[11]),
        "uinteger": int(words[12]),
    }
    return np.random.Generator(bg)


def _write_table(parts, table):
    parts.append(struct.pack("<I", len(table)))
    for name, array in table.items():
        arr = np.asarray(array, dtype=np.float64)
        ident = name.encode("utf-8")
        parts.append(struct.pack("<I", len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(ckpt, path):
    parts = [MAGIC, struct.pack("<H", VERSION)]
    config_bytes = ckpt.config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(config_bytes)))
    parts.append(config_bytes)
    _write_table(parts, ckpt.params)
    _write_table(parts, ckpt.opt_state)
    parts.append(struct.pack("<I", len(ckpt.rng_words)))
    for w in ckpt.rng_words:
        parts.append(struct.pack("<Q", int(w)))
    parts.append(struct.pack("<I", ckpt.epoch))
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, nbytes, what):
        if self.offset + nbytes > len(self.raw):
            raise FormatError(f"truncated checkpoint '{self.path}' while reading {what}",
                              offset=self.offset)
        chunk = self.raw[self.offset:self.offset + nbytes]
        self.offset += nbytes
        return chunk

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def _read_table(reader, what):
    count = reader.u32(f"{what} count")
    table = {}
    for i in range(count):
        name_len = reader.u32(f"{what} name length")
        name = reader.take(name_len, f"{what} name").decode("utf-8")
        rank = reader.u32(f"rank of '{name}'")
        if rank > 8:
            raise FormatError(f"implausible rank {rank} for '{name}'",
                              offset=reader.offset - 4)
        dims = tuple(reader.u32(f"dim of '{name}'") for _ in range(rank))
        n_values = 1
        for d in dims:
            n_values *= d
        payload = reader.take(8 * n_values, f"payload of '{name}'")
        table[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return table


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    reader = _Reader(raw, path)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} in '{path}'", offset=0)
    version = reader.u16("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    config_len = reader.u32("config length")
    config_text = reader.take(config_len, "config block").decode("utf-8")
    params = _read_table(reader, "parameter table")
    opt_state = _read_table(reader, "optimizer table")
    n_words = reader.u32("rng word count")
    rng_words = tuple(reader.u64("rng word") for _ in range(n_words))
    epoch = reader.u32("epoch")
    if reader.offset != len(raw):
        raise FormatError(f"trailing bytes in checkpoint '{path}'", offset=reader.offset)
    return Checkpoint(config_text=config_text, params=params, opt_state=opt_state,
                      rng_words=rng_words, epoch=epoch)


def pack_adam(state, params):
    """Flatten an AdamState into the optimizer tensor table."""
    table = {
        "adam.step": np.float64(state.step),
        "adam.lr": np.float64(state.lr),
        "adam.beta1": np.float64(state.beta1),
        "adam.beta2": np.float64(state.beta2),
        "adam.eps": np.float64(state.eps),
    }
    for name in params:
        table[f"adam.m.{name}"] = state.m.get(name, np.zeros_like(params[name]))
        table[f"adam.v.{name}"] = state.v.get(name, np.zeros_like(params[name]))
    return table


def unpack_adam(table, param_names):
    from .autodiff import AdamState

    state = AdamState(
        lr=float(table["adam.lr"]),
        beta1=float(table["adam.beta1"]),
        beta2=float(table["adam.beta2"]),
        eps=float(table["adam.eps"]),
        step=int(float(table["adam.step"])),
    )
    for name in param_names:
        state.m[name] = np.array(table[f"adam.m.{name}"])
        state.v[name] = np.array(table[f"adam.v.{name}"])
    return state
