"""Binary model container ("HBEO" magic, little-endian, CRC32-trailed).

Layout: magic, version u16, section flags u8, header (d, k, r, m as u32),
length-prefixed UTF-8 class names, shared basis as row-major float32, then
optional GMM and network sections, and a trailing CRC32 of everything before
it. Matrices are stored as float32; mixture weights stay float64 so their
normalization survives the round trip. save(load(x)) is byte-identical.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..beo import ClassGMM
from ..ioutil import atomic_write
from ..jointnet import JointNetwork, NetworkSpec, param_names
from ..subspace import SharedBasis

_MAGIC = b"HBEO"
_VERSION = 1
_FLAG_GMMS = 1
_FLAG_NETWORK = 2


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelBundle:
    basis: SharedBasis
    gmms: list | None = None
    network: JointNetwork | None = None


class _Writer:
    def __init__(self):
        self.parts = []

    def pack(self, fmt, *vals):
        self.parts.append(struct.pack(fmt, *vals))

    def raw(self, blob: bytes):
        self.parts.append(blob)

    def string(self, s: str):
        data = s.encode("utf-8")
        self.pack("<H", len(data))
        self.raw(data)

    def f32_array(self, arr: np.ndarray):
        self.raw(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def f64_array(self, arr: np.ndarray):
        self.raw(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def finish(self) -> bytes:
        body = b"".join(self.parts)
        return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise ModelFormatError("truncated model file")
        vals = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def string(self) -> str:
        n = self.unpack("<H")
        if self.pos + n > len(self.blob):
            raise ModelFormatError("truncated model file")
        s = self.blob[self.pos : self.pos + n].decode("utf-8")
        self.pos += n
        return s

    def f32_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        size = 4 * count
        if self.pos + size > len(self.blob):
            raise ModelFormatError("truncated model file")
        arr = np.frombuffer(self.blob, dtype="<f4", count=count, offset=self.pos)
        self.pos += size
        return arr.astype(np.float64).reshape(shape)

    def f64_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        size = 8 * count
        if self.pos + size > len(self.blob):
            raise ModelFormatError("truncated model file")
        arr = np.frombuffer(self.blob, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return arr.copy().reshape(shape)


def save_model(path, bundle: ModelBundle) -> None:
    basis = bundle.basis
    w = _Writer()
    w.raw(_MAGIC)
    w.pack("<H", _VERSION)
    flags = (_FLAG_GMMS if bundle.gmms else 0) | (_FLAG_NETWORK if bundle.network else 0)
    w.pack("<B", flags)
    m = len(basis.class_ids)
    w.pack("<IIII", basis.d, basis.k, basis.resolution, m)
    for cid in basis.class_ids:
        w.string(cid)
    w.f32_array(basis.matrix)

    if bundle.gmms:
        if len(bundle.gmms) != m:
            raise ValueError("need one GMM per class")
        for gmm in bundle.gmms:
            w.pack("<I", gmm.n_components)
            w.f32_array(np.asarray([gmm.covariance_floor]))
            w.f64_array(gmm.weights)
            w.f32_array(gmm.means)
            w.f32_array(gmm.variances)

    if bundle.network:
        net = bundle.network
        spec = net.spec
        w.pack("<II", spec.input_width, spec.input_height)
        for channels, kernel in spec.conv_layers:
            w.pack("<II", channels, kernel)
        for width in spec.fc_widths:
            w.pack("<I", width)
        w.pack("<II", spec.num_classes, spec.projection_dim)
        w.pack("<q", net.seed)
        for name in param_names(spec):
            w.f32_array(net.params[name])

    atomic_write(path, w.finish())


def load_model(path) -> ModelBundle:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise ModelFormatError("truncated model file")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise ModelFormatError("CRC mismatch; file corrupted")
    r = _Reader(body)
    if r.blob[:4] != _MAGIC:
        raise ModelFormatError("bad magic; not a model container")
    r.pos = 4
    version = r.unpack("<H")
    if version != _VERSION:
        raise ModelFormatError(f"unknown container version {version}")
    flags = r.unpack("<B")
    d, k, resolution, m = r.unpack("<IIII")
    class_ids = tuple(r.string() for _ in range(m))
    matrix = r.f32_array((d, k))
    basis = SharedBasis(matrix, resolution, class_ids)  # re-validates orthonormality

    gmms = None
    if flags & _FLAG_GMMS:
        gmms = []
        for cid in class_ids:
            n_comp = r.unpack("<I")
            floor = float(r.f32_array((1,))[0])
            weights = r.f64_array((n_comp,))
            means = r.f32_array((n_comp, k))
            variances = r.f32_array((n_comp, k))
            gmms.append(ClassGMM(cid, weights, means, variances, floor))

    network = None
    if flags & _FLAG_NETWORK:
        input_w, input_h = r.unpack("<II")
        conv_layers = tuple(r.unpack("<II") for _ in range(4))
        fc_widths = tuple(r.unpack("<I") for _ in range(3))
        num_classes, projection_dim = r.unpack("<II")
        seed = r.unpack("<q")
        spec = NetworkSpec(input_w, input_h, conv_layers, fc_widths, num_classes, projection_dim)
        params = {}
        in_ch = 1
        for i, (out_ch, kernel) in enumerate(spec.conv_layers):
            params[f"conv{i}_w"] = r.f32_array((out_ch, in_ch, kernel, kernel))
            params[f"conv{i}_b"] = r.f32_array((out_ch,))
            in_ch = out_ch
        width_in = spec.flattened_size
        for i, width in enumerate(spec.fc_widths):
            params[f"fc{i}_w"] = r.f32_array((width_in, width))
            params[f"fc{i}_b"] = r.f32_array((width,))
            width_in = width
        for head, dim in (("class", spec.num_classes), ("pose", 3), ("proj", spec.projection_dim)):
            params[f"head_{head}_w"] = r.f32_array((width_in, dim))
            params[f"head_{head}_b"] = r.f32_array((dim,))
        network = JointNetwork(spec, params, seed)

    if r.pos != len(body):
        raise ModelFormatError("trailing bytes after model sections")
    return ModelBundle(basis, gmms, network)
