"""Token stream container: fixed-width index packing behind a small binary header."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CPLX"
VERSION = 1
# magic, version, sample_rate, n_fft, hop, stride, stages, K, frame_count, original_length
_HEADER = struct.Struct("<4sHIHHHHIII")
HEADER_SIZE = _HEADER.size


class BitstreamError(ValueError):
    pass


class BadMagicError(BitstreamError):
    pass


class VersionError(BitstreamError):
    pass


class TruncatedStreamError(BitstreamError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    n_fft: int
    hop: int
    stride: int
    stages: int
    codebook_size: int
    frame_count: int
    original_length: int
    version: int = VERSION

    @property
    def bits_per_symbol(self):
        return symbol_bits(self.codebook_size)

    @property
    def token_rate(self):
        return self.sample_rate / (self.hop * self.stride)

    @property
    def payload_bits(self):
        return self.stages * self.frame_count * self.bits_per_symbol

    @property
    def payload_bytes(self):
        return -(-self.payload_bits // 8)

    def to_bytes(self):
        return _HEADER.pack(MAGIC, self.version, self.sample_rate, self.n_fft, self.hop, self.stride,
                            self.stages, self.codebook_size, self.frame_count, self.original_length)

    @classmethod
    def from_bytes(cls, data):
        if len(data) < HEADER_SIZE:
            raise TruncatedStreamError(f"stream has {len(data)} bytes, header needs {HEADER_SIZE}")
        magic, version, *fields = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        if version != VERSION:
            raise VersionError(f"unsupported version {version}")
        sr, n_fft, hop, stride, stages, K, frames, length = fields
        return cls(sr, n_fft, hop, stride, stages, K, frames, length, version)


@dataclass
class TokenStream:
    header: StreamHeader
    indices: np.ndarray  # (S, T)


def symbol_bits(K):
    if K < 2:
        raise ValueError("codebook size must be at least 2")
    return math.ceil(math.log2(K))


def bitrate(header: StreamHeader):
    """token_rate * S * bits per symbol."""
    return header.token_rate * header.stages * header.bits_per_symbol


def pack_indices(indices, K):
    """Big-endian fixed-width packing, stage-major then time; zero-padded to a byte."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise ValueError(f"indices must lie in [0, {K})")
    b = symbol_bits(K)
    shifts = np.arange(b - 1, -1, -1)
    bits = ((idx.reshape(-1, 1) >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1)).tobytes()


def unpack_indices(data, S, T, K):
    b = symbol_bits(K)
    n_bits = S * T * b
    need = -(-n_bits // 8)
    if len(data) < need:
        raise TruncatedStreamError(f"payload has {len(data)} bytes, expected {need}")
    bits = np.unpackbits(np.frombuffer(data, np.uint8, count=need))[:n_bits]
    weights = 1 << np.arange(b - 1, -1, -1)
    idx = bits.reshape(-1, b).astype(np.int64) @ weights
    return idx.reshape(S, T)


def pack(indices, header: StreamHeader):
    idx = np.asarray(indices)
    if idx.shape != (header.stages, header.frame_count):
        raise ValueError(f"index matrix {idx.shape} does not match header "
                         f"({header.stages}, {header.frame_count})")
    return header.to_bytes() + pack_indices(idx, header.codebook_size)


def unpack(data) -> TokenStream:
    header = StreamHeader.from_bytes(data)
    payload = data[HEADER_SIZE:]
    idx = unpack_indices(payload, header.stages, header.frame_count, header.codebook_size)
    if len(payload) > header.payload_bytes:
        raise BitstreamError("trailing bytes after payload")
    return TokenStream(header, idx)
