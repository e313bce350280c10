"""Binary feature cache.

Layout, byte-exact:

* one UTF-8 JSON header line ``{"version": 1, "n_mfcc": 39, "image_h": 64,
  "image_w": 64}`` terminated by ``\\n``;
* then one record per sample, sorted by id:
  ``u16-LE id length | id UTF-8 bytes | 39 f64-LE MFCCs |
  4096 f64-LE image values (row-major) | 2 flag bytes (0/1)``.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .dsp import IMAGE_SIZE, N_MFCC, FeatureVector

CACHE_VERSION = 1


class CacheError(Exception):
    pass


def _header() -> bytes:
    obj = {
        "version": CACHE_VERSION,
        "n_mfcc": N_MFCC,
        "image_h": IMAGE_SIZE,
        "image_w": IMAGE_SIZE,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def write_cache(path, features: dict[str, FeatureVector]) -> None:
    """Write features to ``path``, records ordered by sample id."""
    with open(path, "wb") as fh:
        fh.write(_header())
        for sample_id in sorted(features):
            fv = features[sample_id]
            ident = sample_id.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(fv.mfcc.astype("<f8").tobytes())
            fh.write(fv.image.astype("<f8").tobytes())
            fh.write(bytes(int(v) for v in fv.clinical))


def read_cache(path) -> dict[str, FeatureVector]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise CacheError("bad cache header") from e
        if not isinstance(header, dict):
            raise CacheError("bad cache header")
        if header.get("version") != CACHE_VERSION:
            raise CacheError(f"unsupported cache version {header.get('version')!r}")
        try:
            n_mfcc = int(header["n_mfcc"])
            image_len = int(header["image_h"]) * int(header["image_w"])
        except (KeyError, TypeError, ValueError) as e:
            raise CacheError("bad cache header") from e
        record_body = 8 * n_mfcc + 8 * image_len + 2

        features: dict[str, FeatureVector] = {}
        while True:
            len_bytes = fh.read(2)
            if not len_bytes:
                break
            if len(len_bytes) < 2:
                raise CacheError("truncated record length")
            (id_len,) = struct.unpack("<H", len_bytes)
            body = fh.read(id_len + record_body)
            if len(body) < id_len + record_body:
                raise CacheError("truncated record")
            try:
                sample_id = body[:id_len].decode("utf-8")
            except UnicodeDecodeError as e:
                raise CacheError("corrupt record id") from e
            offset = id_len
            mfcc = np.frombuffer(body, dtype="<f8", count=n_mfcc, offset=offset)
            offset += 8 * n_mfcc
            image = np.frombuffer(body, dtype="<f8", count=image_len, offset=offset)
            offset += 8 * image_len
            flags = body[offset : offset + 2]
            features[sample_id] = FeatureVector(
                mfcc=mfcc.copy(),
                image=image.copy().reshape(header["image_h"], header["image_w"]),
                clinical=np.array([float(flags[0]), float(flags[1])]),
            )
        return features
