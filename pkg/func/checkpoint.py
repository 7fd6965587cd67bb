"""
Versioned binary checkpoint of a model.

Layout: header of u32 little-endian values (magic as 4 bytes, version, mode code, n_e, n_r,
k_e, k_r, C_E, C_R, activation code), the mode's arrays as float32 little-endian row-major
in a fixed order, the entity and relation cluster ids as u32, then an 8-byte blake2b digest
of everything before it.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

from func.base_logger import logger
from func.model_core import ACTIVATIONS, ProjBParams, cluster_means
from data.configs import BinaryFormats
from data.exceptions import CheckpointError

_HEADER = struct.Struct('<4sIIIIIIIII')
_DIGEST_SIZE = 8
_ORDER = {
    'projb': ('W_E', 'W_R', 'b_p', 'B_PE', 'B_QR', 'D_E', 'D_R'),
    'proje': ('W_E', 'W_R', 'b_p', 'd_e', 'd_r', 'b_c'),
}


def _shapes(mode: str, n_e: int, n_r: int, k_e: int, k_r: int, c_e: int, c_r: int) -> dict[str, tuple]:
    shapes = {'W_E': (n_e, k_e), 'W_R': (n_r, k_r), 'b_p': (1,)}
    if mode == 'projb':
        shapes.update({'B_PE': (c_e, k_e), 'B_QR': (c_r, k_r), 'D_E': (n_e, k_e), 'D_R': (n_r, k_r)})
    else:
        shapes.update({'d_e': (k_e,), 'd_r': (k_r,), 'b_c': (k_e,)})
    return shapes


def checkpoint_bytes(params: ProjBParams) -> bytes:
    header = _HEADER.pack(BinaryFormats.CHECKPOINT_MAGIC, BinaryFormats.CHECKPOINT_VERSION,
                          BinaryFormats.MODE_CODES[params.mode], params.n_entities, params.n_relations,
                          params.k_e, params.k_r, params.C_E, params.C_R, ACTIVATIONS.index(params.activation))
    parts = [header]
    parts += [getattr(params, name).astype('<f4').tobytes() for name in _ORDER[params.mode]]
    parts += [params.entity_cluster.astype('<u4').tobytes(), params.relation_cluster.astype('<u4').tobytes()]
    payload = b''.join(parts)
    return payload + hashlib.blake2b(payload, digest_size=_DIGEST_SIZE).digest()


def save_checkpoint(params: ProjBParams, path: Path):
    """
    Writes params to path (see the module docstring for the layout).
    """
    Path(path).write_bytes(checkpoint_bytes(params))
    logger.info(f"Saved checkpoint of {params} to {path}")


def load_checkpoint(path: Path) -> ProjBParams:
    """
    Reads a checkpoint, verifying magic, version and digest. Arrays come back as float64.
    :param path: Checkpoint file.
    :return: ProjBParams with centers recomputed from the embeddings.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if len(blob) < _HEADER.size + _DIGEST_SIZE:
        raise CheckpointError(f"Checkpoint {path} is truncated.")

    payload, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.blake2b(payload, digest_size=_DIGEST_SIZE).digest() != digest:
        raise CheckpointError(f"Checkpoint {path} fails its checksum.")

    magic, version, mode_code, n_e, n_r, k_e, k_r, c_e, c_r, activation_code = _HEADER.unpack_from(payload)
    if magic != BinaryFormats.CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (magic {magic!r}).")
    if version != BinaryFormats.CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}.")
    modes = {code: mode for mode, code in BinaryFormats.MODE_CODES.items()}
    if mode_code not in modes or activation_code >= len(ACTIVATIONS):
        raise CheckpointError(f"Checkpoint {path} has an unknown mode or activation code.")
    mode = modes[mode_code]

    shapes = _shapes(mode, n_e, n_r, k_e, k_r, c_e, c_r)
    expected = _HEADER.size + 4 * (sum(int(np.prod(shapes[name])) for name in _ORDER[mode]) + n_e + n_r)
    if len(payload) != expected:
        raise CheckpointError(f"Checkpoint {path} has {len(payload)} payload bytes, header implies {expected}.")

    arrays, offset = {}, _HEADER.size
    for name in _ORDER[mode]:
        count = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(payload, dtype='<f4', count=count, offset=offset).astype(np.float64)
        arrays[name] = arrays[name].reshape(shapes[name])
        offset += 4 * count
    entity_cluster = np.frombuffer(payload, dtype='<u4', count=n_e, offset=offset).astype(np.int64)
    relation_cluster = np.frombuffer(payload, dtype='<u4', count=n_r, offset=offset + 4 * n_e).astype(np.int64)

    params = ProjBParams(mode=mode, entity_cluster=entity_cluster, relation_cluster=relation_cluster,
                         activation=ACTIVATIONS[activation_code], **arrays)
    params.entity_centers = cluster_means(params.W_E, entity_cluster, params.C_E)
    params.relation_centers = cluster_means(params.W_R, relation_cluster, params.C_R)
    logger.info(f"Loaded checkpoint {path}: {params}")
    return params
