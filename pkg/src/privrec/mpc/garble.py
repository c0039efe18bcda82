"""Semi-honest garbling engine: point-and-permute with free XOR.

Labels are 128-bit rows of a (n_wires, 16) uint8 array; the low bit of a
label's first byte is its select bit. XOR-family gates are label XORs and
ship nothing; every AND gate ships a 4-row table, so transmitted table
count equals the AND count exactly. The row hash is a fixed-key AES
correlation-robust construction evaluated in batches, which keeps the
per-gate Python cost to array indexing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..rng import Rng
from .circuit import AND, NOT, XOR, XORN, Circuit

LABEL_BYTES = 16

_FIXED_KEY = bytes(range(16))
_AES = Cipher(algorithms.AES(_FIXED_KEY), modes.ECB()).encryptor()


def _aes_block(data: np.ndarray) -> np.ndarray:
    flat = np.ascontiguousarray(data, dtype=np.uint8)
    out = _AES.update(flat.tobytes())
    return np.frombuffer(out, dtype=np.uint8).reshape(flat.shape)


def hash_labels(a: np.ndarray, b: np.ndarray | None, tweak: np.ndarray) -> np.ndarray:
    """H(A, B, T) = AES_fix(K) ^ K with K = A ^ rot8(B) ^ T.

    a/b: (n, 16) uint8; tweak: (n,) uint64 gate ids."""
    k = a.copy()
    if b is not None:
        k ^= np.roll(b, 1, axis=1)
    tw = np.zeros((len(k), LABEL_BYTES), dtype=np.uint8)
    tw[:, :8] = np.asarray(tweak, dtype="<u8")[:, None].view(np.uint8)
    k ^= tw
    return _aes_block(k) ^ k


@dataclass
class GarbledCircuit:
    tables: np.ndarray            # (n_and, 4, 16) uint8
    client_label_pairs: np.ndarray  # (n_client_in, 2, 16): OT material
    cloud_zero_labels: np.ndarray   # (n_cloud_in, 16): garbler picks per value
    const_labels: np.ndarray        # labels for circuit constants, value baked
    decode_to_client: dict[str, np.ndarray]  # output name -> permute bits
    decode_to_cloud: dict[str, np.ndarray]
    r_offset: np.ndarray            # kept by the garbler only, never sent


def garble(circ: Circuit, rng: Rng) -> GarbledCircuit:
    n = circ.n_wires
    z = np.zeros((n, LABEL_BYTES), dtype=np.uint8)
    r = rng.u8(LABEL_BYTES)
    r[0] |= 1

    # fresh labels for everything not derived by an XOR-family gate
    fresh = [np.array([0, 1], dtype=np.int64)]
    for wires in circ.inputs.values():
        fresh.append(wires.astype(np.int64))
    fresh.append(circ.const_wires.astype(np.int64))
    and_outs = [blk.out.astype(np.int64) for blk in circ.blocks if blk.kind == AND]
    fresh.extend(and_outs)
    fresh_idx = np.concatenate(fresh) if fresh else np.empty(0, np.int64)
    z[fresh_idx] = rng.u8((len(fresh_idx), LABEL_BYTES))

    for blk in circ.blocks:
        if blk.kind == XOR:
            z[blk.out] = z[blk.a] ^ z[blk.b]
        elif blk.kind == XORN:
            z[blk.out] = np.bitwise_xor.reduce(z[blk.a], axis=0)
        elif blk.kind == NOT:
            z[blk.out] = z[blk.a] ^ r

    # one batched table build over every AND gate
    a_idx = [blk.a for blk in circ.blocks if blk.kind == AND]
    tables = np.zeros((circ.n_and, 4, LABEL_BYTES), dtype=np.uint8)
    if circ.n_and:
        a_all = np.concatenate(a_idx)
        b_all = np.concatenate([blk.b for blk in circ.blocks if blk.kind == AND])
        o_all = np.concatenate([blk.out for blk in circ.blocks if blk.kind == AND])
        gid = np.arange(circ.n_and, dtype=np.uint64)
        a0, b0, w0 = z[a_all], z[b_all], z[o_all]
        rows = np.arange(circ.n_and)
        for va in (0, 1):
            la = a0 ^ (r if va else 0)
            sa = la[:, 0] & 1
            for vb in (0, 1):
                lb = b0 ^ (r if vb else 0)
                sb = lb[:, 0] & 1
                val = w0 ^ (r if va and vb else 0)
                tables[rows, 2 * sa + sb] = hash_labels(la, lb, gid) ^ val

    client_in = circ.inputs.get("client", np.empty(0, np.int32))
    pairs = np.zeros((len(client_in), 2, LABEL_BYTES), dtype=np.uint8)
    if len(client_in):
        pairs[:, 0] = z[client_in]
        pairs[:, 1] = z[client_in] ^ r
    cloud_in = circ.inputs.get("cloud", np.empty(0, np.int32))

    const_w = np.concatenate([np.array([0, 1], np.int64),
                              circ.const_wires.astype(np.int64)])
    const_b = np.concatenate([np.array([0, 1], np.uint8), circ.const_bits])
    const_labels = z[const_w] ^ (const_b[:, None] * r)

    dec_client, dec_cloud = {}, {}
    for o in circ.outputs:
        perm = z[o.wires][:, 0] & 1
        if o.to in ("client", "both"):
            dec_client[o.name] = perm
        if o.to in ("cloud", "both"):
            dec_cloud[o.name] = perm
    return GarbledCircuit(tables, pairs, z[cloud_in].copy(), const_labels,
                          dec_client, dec_cloud, r)


def cloud_input_labels(gc: GarbledCircuit, bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, np.uint8)
    return gc.cloud_zero_labels ^ (bits[:, None] * gc.r_offset)


def evaluate(circ: Circuit, tables: np.ndarray,
             client_labels: np.ndarray, cloud_labels: np.ndarray,
             const_labels: np.ndarray) -> np.ndarray:
    """Run the garbled circuit; returns the full wire-label array."""
    lab = np.zeros((circ.n_wires, LABEL_BYTES), dtype=np.uint8)
    cw = np.concatenate([np.array([0, 1], np.int64),
                         circ.const_wires.astype(np.int64)])
    lab[cw] = const_labels
    cin = circ.inputs.get("client", np.empty(0, np.int32))
    if len(cin):
        lab[cin] = client_labels
    sin = circ.inputs.get("cloud", np.empty(0, np.int32))
    if len(sin):
        lab[sin] = cloud_labels
    gid0 = 0
    for blk in circ.blocks:
        if blk.kind == XOR:
            lab[blk.out] = lab[blk.a] ^ lab[blk.b]
        elif blk.kind == XORN:
            lab[blk.out] = np.bitwise_xor.reduce(lab[blk.a], axis=0)
        elif blk.kind == AND:
            n = len(blk.out)
            la, lb = lab[blk.a], lab[blk.b]
            rows = 2 * (la[:, 0] & 1) + (lb[:, 0] & 1)
            h = hash_labels(la, lb, np.arange(gid0, gid0 + n, dtype=np.uint64))
            lab[blk.out] = h ^ tables[np.arange(gid0, gid0 + n), rows]
            gid0 += n
        else:
            lab[blk.out] = lab[blk.a]
    return lab


def decode_bits(circ: Circuit, labels: np.ndarray, name: str,
                perm_bits: np.ndarray) -> np.ndarray:
    out = circ.output(name)
    return (labels[out.wires][:, 0] & 1) ^ perm_bits


def select_bits(circ: Circuit, labels: np.ndarray, name: str) -> np.ndarray:
    out = circ.output(name)
    return labels[out.wires][:, 0] & 1


def decode_from_select(gc: GarbledCircuit, name: str, select: np.ndarray) -> np.ndarray:
    return select ^ gc.decode_to_cloud[name]
