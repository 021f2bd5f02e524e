"""Binary trajectory dumps: per-step observation, action, reward, and
episode-boundary flags behind a versioned header.

Layout (all little-endian):
  magic   8 bytes  b"TDAETRJ1"
  hlen    u32      length of the JSON header blob
  header  hlen     {"obs_shape": [...], "dtype": "float32"|"float64",
                    "steps": T}
  body    T records, each: obs raw bytes, action u16, reward f64, flags u8
          (bit 0 terminated, bit 1 truncated)
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"TDAETRJ1"
_DTYPES = {"float32": np.float32, "float64": np.float64}


def write_trajectory(path: str, observations, actions, rewards,
                     terminated, truncated):
    obs = np.ascontiguousarray(observations)
    if obs.dtype.name not in _DTYPES:
        raise ValueError(f"unsupported observation dtype {obs.dtype.name}")
    t = obs.shape[0]
    actions = np.asarray(actions)
    rewards = np.asarray(rewards, dtype=np.float64)
    term = np.asarray(terminated, dtype=bool)
    trunc = np.asarray(truncated, dtype=bool)
    for name, arr in (("actions", actions), ("rewards", rewards),
                      ("terminated", term), ("truncated", trunc)):
        if arr.shape != (t,):
            raise ValueError(f"{name} has shape {arr.shape}, want ({t},)")
    header = json.dumps({"obs_shape": list(obs.shape[1:]),
                         "dtype": obs.dtype.name, "steps": t},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for i in range(t):
            f.write(obs[i].tobytes())
            f.write(struct.pack("<H", int(actions[i])))
            f.write(struct.pack("<d", float(rewards[i])))
            flags = int(term[i]) | (int(trunc[i]) << 1)
            f.write(struct.pack("<B", flags))


def read_trajectory(path: str) -> dict:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:8]!r}")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    shape = tuple(header["obs_shape"])
    dt = _DTYPES[header["dtype"]]
    t = header["steps"]
    obs_bytes = int(np.prod(shape)) * np.dtype(dt).itemsize
    rec = obs_bytes + 2 + 8 + 1
    off = 12 + hlen
    if len(data) != off + rec * t:
        raise ValueError(f"{path}: body is {len(data) - off} bytes, want {rec * t}")
    obs = np.empty((t,) + shape, dtype=dt)
    actions = np.empty(t, dtype=np.int64)
    rewards = np.empty(t, dtype=np.float64)
    term = np.empty(t, dtype=bool)
    trunc = np.empty(t, dtype=bool)
    for i in range(t):
        obs[i] = np.frombuffer(data, dtype=dt,
                               count=int(np.prod(shape)), offset=off).reshape(shape)
        off += obs_bytes
        (actions[i],) = struct.unpack_from("<H", data, off)
        off += 2
        (rewards[i],) = struct.unpack_from("<d", data, off)
        off += 8
        flags = data[off]
        off += 1
        term[i] = bool(flags & 1)
        trunc[i] = bool(flags & 2)
    return {"observations": obs, "actions": actions, "rewards": rewards,
            "terminated": term, "truncated": trunc}
