"""KINMO1 checkpoint container: magic, component tag, config digest, weight blobs.

Layout (all integers little-endian):
  magic            6 bytes  b"KINMO1"
  component tag    u16 length + utf-8 bytes
  config digest    u16 length + utf-8 bytes (sha256 hex of the owning section)
  blob count       u32
  per blob:        u16 name length + utf-8 name, u8 ndim, u32 per dim,
                   float32 little-endian data, row-major
Weights serialize in sorted name order, so identical weights give identical bytes.
"""

import struct
from collections import OrderedDict

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"KINMO1"


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf, off):
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    return buf[off:off + n].decode("utf-8"), off + n


def save_blobs(path, component, config_digest, arrays):
    """Write named float32 arrays. `arrays`: mapping name -> ndarray/tensor."""
    out = [MAGIC, _pack_str(component), _pack_str(config_digest)]
    names = sorted(arrays)
    out.append(struct.pack("<I", len(names)))
    for name in names:
        arr = arrays[name]
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().numpy()
        shape = np.asarray(arr).shape
        # ascontiguousarray promotes 0-d to 1-d; keep the true shape
        arr = np.ascontiguousarray(arr, dtype="<f4").reshape(shape)
        out.append(_pack_str(name))
        out.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            out.append(struct.pack("<I", dim))
        out.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(out))


def load_blobs(path, expected_component=None, expected_digest=None):
    """Read blobs back; verifies component tag and config digest when given."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:6] != MAGIC:
        raise CheckpointError(f"{path}: not a KINMO1 checkpoint")
    off = 6
    component, off = _unpack_str(buf, off)
    digest, off = _unpack_str(buf, off)
    if expected_component is not None and component != expected_component:
        raise CheckpointError(
            f"{path}: component {component!r}, expected {expected_component!r}")
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointError(
            f"{path}: config digest mismatch ({digest[:12]}... vs {expected_digest[:12]}...); "
            "checkpoint was trained under a different config")
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    arrays = OrderedDict()
    for _ in range(count):
        name, off = _unpack_str(buf, off)
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape.append(dim)
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        arrays[name] = arr.copy()
    return component, digest, arrays


def state_dict_to_blobs(state_dict):
    return {name: tensor for name, tensor in state_dict.items()}


def blobs_to_state_dict(arrays, reference_state):
    """Cast loaded arrays back onto a module's state-dict dtypes/shapes."""
    state = OrderedDict()
    for name, ref in reference_state.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing weight {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(
                f"weight {name!r} shape {tuple(arr.shape)} != expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(np.array(arr)).to(ref.dtype)
    extra = set(arrays) - set(reference_state)
    if extra:
        raise CheckpointError(f"checkpoint has unexpected weights: {sorted(extra)[:4]}")
    return state
