"""Binary model bundle: a JSON manifest followed by CCA1/DCC1/TNN1 sections.

Layout (little-endian)::

    "XMB1"  u32 manifest_len  manifest (UTF-8 JSON)  section*

The manifest records the stage chain, the section tags in order, the full
pipeline config, its SHA-256 (``config_hash``) and a SHA-256 of the section
bytes (``payload_sha256``).  Section encodings:

* ``CCA1``: u32 dx, dy, k; f64 Wx (dx*k), Wy (dy*k), mean_x, mean_y,
  correlations; f64 reg.
* ``DCC1``: two branch blocks (A then B), then an embedded ``CCA1``.
  A branch block is u32 layer count, then per layer u32 d_in, u32 d_out,
  u8 activation tag, f64 weights row-major, f64 biases.
* ``TNN1``: two branch blocks, f64 margin, u8 distance tag.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cca import CcaModel
from .deepnet import DccaModel
from .errors import CorruptBundle, IoFailure
from .nn import BranchNetwork, Layer
from .triplet import TnnModel

MAGIC = b"XMB1"
ACT_TAGS = {"linear": 0, "relu": 1, "tanh": 2}
DIST_TAGS = {"cosine": 0, "sqeuclidean": 1}
SECTION_OF = {CcaModel: b"CCA1", DccaModel: b"DCC1", TnnModel: b"TNN1"}


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config)).hexdigest()


# --------------------------------------------------------------------------
# encoding


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def encode_cca(m: CcaModel) -> bytes:
    dx, dy = m.dims
    return b"".join([
        b"CCA1", struct.pack("<III", dx, dy, m.k),
        _f64(m.Wx), _f64(m.Wy), _f64(m.mean_x), _f64(m.mean_y), _f64(m.correlations),
        struct.pack("<d", m.reg),
    ])


def encode_branch(net: BranchNetwork) -> bytes:
    parts = [struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        d_in, d_out = layer.W.shape
        parts += [struct.pack("<IIB", d_in, d_out, ACT_TAGS[layer.activation]),
                  _f64(layer.W), _f64(layer.b)]
    return b"".join(parts)


def encode_dcca(m: DccaModel) -> bytes:
    return b"DCC1" + encode_branch(m.netA) + encode_branch(m.netB) + encode_cca(m.cca_head)


def encode_tnn(m: TnnModel) -> bytes:
    return b"".join([
        b"TNN1", encode_branch(m.refinerA), encode_branch(m.refinerB),
        struct.pack("<dB", m.margin, DIST_TAGS[m.distance]),
    ])


_ENCODERS = {b"CCA1": encode_cca, b"DCC1": encode_dcca, b"TNN1": encode_tnn}


# --------------------------------------------------------------------------
# decoding


class _Reader:
    def __init__(self, buf: bytes, off: int = 0):
        self.buf, self.off = buf, off

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CorruptBundle("bundle ends early")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def f64(self, *shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)

    def magic(self, expected: bytes):
        got = self.take(4)
        if got != expected:
            raise CorruptBundle(f"expected section {expected!r}, found {got!r}")


def decode_cca(r: _Reader) -> CcaModel:
    r.magic(b"CCA1")
    dx, dy, k = r.unpack("<III")
    Wx, Wy = r.f64(dx, k), r.f64(dy, k)
    mx, my, corr = r.f64(dx), r.f64(dy), r.f64(k)
    (reg,) = r.unpack("<d")
    return CcaModel(Wx, Wy, mx, my, corr, reg)


def decode_branch(r: _Reader) -> BranchNetwork:
    tags = {v: k for k, v in ACT_TAGS.items()}
    (n_layers,) = r.unpack("<I")
    layers = []
    for _ in range(n_layers):
        d_in, d_out, tag = r.unpack("<IIB")
        if tag not in tags:
            raise CorruptBundle(f"unknown activation tag {tag}")
        layers.append(Layer(r.f64(d_in, d_out), r.f64(d_out), tags[tag]))
    return BranchNetwork(tuple(layers))


def decode_dcca(r: _Reader) -> DccaModel:
    r.magic(b"DCC1")
    netA, netB = decode_branch(r), decode_branch(r)
    return DccaModel(netA, netB, decode_cca(r))


def decode_tnn(r: _Reader) -> TnnModel:
    r.magic(b"TNN1")
    refA, refB = decode_branch(r), decode_branch(r)
    margin, tag = r.unpack("<dB")
    tags = {v: k for k, v in DIST_TAGS.items()}
    if tag not in tags:
        raise CorruptBundle(f"unknown distance tag {tag}")
    return TnnModel(refA, refB, margin, tags[tag])


_DECODERS = {b"CCA1": decode_cca, b"DCC1": decode_dcca, b"TNN1": decode_tnn}


# --------------------------------------------------------------------------
# bundle


@dataclass(frozen=True, eq=False)
class ModelBundle:
    stage: str
    sections: tuple  # models in pipeline order
    config: dict

    @property
    def tags(self) -> list[str]:
        return [SECTION_OF[type(m)].decode() for m in self.sections]

    def manifest(self, payload: bytes) -> dict:
        return {
            "format": 1,
            "stage": self.stage,
            "sections": self.tags,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }

    def to_bytes(self) -> bytes:
        payload = b"".join(_ENCODERS[SECTION_OF[type(m)]](m) for m in self.sections)
        manifest = canonical_json(self.manifest(payload))
        return MAGIC + struct.pack("<I", len(manifest)) + manifest + payload


def read_manifest(buf: bytes) -> tuple[dict, int]:
    if buf[:4] != MAGIC:
        raise CorruptBundle("not a model bundle (bad magic)")
    r = _Reader(buf, 4)
    (n,) = r.unpack("<I")
    try:
        manifest = json.loads(r.take(n))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptBundle(f"unreadable manifest: {exc}") from exc
    return manifest, r.off


def bundle_from_bytes(buf: bytes) -> ModelBundle:
    manifest, off = read_manifest(buf)
    try:
        config, tags, stage = manifest["config"], manifest["sections"], manifest["stage"]
        if config_hash(config) != manifest["config_hash"]:
            raise CorruptBundle("config hash does not match manifest")
        if hashlib.sha256(buf[off:]).hexdigest() != manifest["payload_sha256"]:
            raise CorruptBundle("section payload checksum mismatch")
    except (KeyError, TypeError) as exc:
        raise CorruptBundle(f"manifest missing field: {exc}") from exc
    r = _Reader(buf, off)
    sections = []
    for tag in tags:
        dec = _DECODERS.get(tag.encode())
        if dec is None:
            raise CorruptBundle(f"unknown section tag {tag!r}")
        sections.append(dec(r))
    if r.off != len(buf):
        raise CorruptBundle("trailing bytes after last section")
    return ModelBundle(stage, tuple(sections), config)


def save_bundle(bundle: ModelBundle, path) -> None:
    try:
        Path(path).write_bytes(bundle.to_bytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_bundle(path) -> ModelBundle:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return bundle_from_bytes(buf)
