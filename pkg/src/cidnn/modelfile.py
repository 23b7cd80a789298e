"""Binary model files: network, normalisation statistics and config digest.

Layout (all little-endian)::

    b"CIDN"  u32 version  u32 n_layers
    per layer: u32 in  u32 out  u8 activation  u8 batchnorm  f32 dropout
               f32[out*in] W  f32[out] b  [f32[out] gain, beta, run_mean, run_var]
    u32 n_bypass  (u32 src, u32 dst) * n_bypass
    u32 n_bins  f32[n_bins] mean  f32[n_bins] std
    32 bytes SHA-256 digest of the training config

Stats-only files use the magic ``b"CIDS"`` followed by the version and the
statistics block.
"""

import struct

import numpy as np

from . import nn
from .pipeline import NormStats

MAGIC = b"CIDN"
STATS_MAGIC = b"CIDS"
VERSION = 1
DIGEST_LEN = 32
ACTIVATION_TAGS = {name: i for i, name in enumerate(nn.ACTIVATIONS)}


def _f32(a):
    return np.asarray(a, dtype="<f4").tobytes()


def _stats_bytes(stats):
    return struct.pack("<I", len(stats.mean)) + _f32(stats.mean) + _f32(stats.std)


def model_bytes(net, stats, digest=b"\0" * DIGEST_LEN):
    if len(digest) != DIGEST_LEN:
        raise ValueError("config digest must be %d bytes" % DIGEST_LEN)
    parts = [MAGIC, struct.pack("<II", VERSION, len(net.specs))]
    for i, spec in enumerate(net.specs):
        parts.append(struct.pack("<IIBBf", spec.in_dim, spec.out_dim,
                                 ACTIVATION_TAGS[spec.activation], int(spec.batchnorm),
                                 spec.dropout))
        parts += [_f32(net.weights[i]), _f32(net.biases[i])]
        if spec.batchnorm:
            parts += [_f32(a[i]) for a in (net.bn_gain, net.bn_bias,
                                           net.running_mean, net.running_var)]
    parts.append(struct.pack("<I", len(net.bypasses)))
    parts += [struct.pack("<II", s, d) for s, d in net.bypasses]
    parts += [_stats_bytes(stats), bytes(digest)]
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError("truncated model file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n):
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(float)

    def header(self, magic):
        if bytes(self.take(4)) != magic:
            raise ValueError("bad magic: not a %s file" % magic.decode())
        (version,) = self.unpack("<I")
        if version != VERSION:
            raise ValueError("unsupported file version %d (expected %d)" % (version, VERSION))

    def stats(self):
        (n,) = self.unpack("<I")
        return NormStats(self.floats(n), self.floats(n))

    def finish(self):
        if self.pos != len(self.data):
            raise ValueError("trailing bytes after model data")


def parse_model(data):
    """Inverse of :func:`model_bytes`; returns ``(net, stats, digest)``."""
    r = _Reader(data)
    r.header(MAGIC)
    (n_layers,) = r.unpack("<I")
    if n_layers == 0:
        raise ValueError("model has no layers")
    tags = {i: name for name, i in ACTIVATION_TAGS.items()}
    specs, W, b, g, beta, rm, rv = [], [], [], [], [], [], []
    for _ in range(n_layers):
        n_in, n_out, tag, bn, dropout = r.unpack("<IIBBf")
        if tag not in tags:
            raise ValueError("unknown activation tag %d" % tag)
        # dropout was stored as f32; round it back to a short decimal
        specs.append(nn.LayerSpec(n_in, n_out, tags[tag], bool(bn), round(dropout, 6)))
        W.append(r.floats(n_out * n_in).reshape(n_out, n_in))
        b.append(r.floats(n_out))
        for dst in (g, beta, rm, rv):
            dst.append(r.floats(n_out) if bn else None)
    (n_bypass,) = r.unpack("<I")
    bypasses = tuple(r.unpack("<II") for _ in range(n_bypass))
    stats = r.stats()
    digest = bytes(r.take(DIGEST_LEN))
    r.finish()
    return nn.Mlp(specs, W, b, g, beta, rm, rv, bypasses), stats, digest


def save_model(path, net, stats, digest=b"\0" * DIGEST_LEN):
    data = model_bytes(net, stats, digest)
    with open(path, "wb") as f:
        f.write(data)


def load_model(path):
    with open(path, "rb") as f:
        return parse_model(f.read())


def save_stats(path, stats):
    with open(path, "wb") as f:
        f.write(STATS_MAGIC + struct.pack("<I", VERSION) + _stats_bytes(stats))


def load_stats(path):
    with open(path, "rb") as f:
        r = _Reader(f.read())
    r.header(STATS_MAGIC)
    stats = r.stats()
    r.finish()
    return stats
