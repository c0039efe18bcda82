"""Boolean circuits as ordered blocks of vector gates.

A circuit is a straight-line program over single-bit wires. Gates are
grouped into *blocks*: one block applies the same gate kind to whole
numpy arrays of wires at once. Blocks are emitted in dependency order by
construction, which gives the garbler/evaluator a ready-made schedule
(every block only reads wires written by earlier blocks or inputs) and
keeps per-gate Python overhead off the hot path.

Wire 0 is reserved as constant-0 and wire 1 as constant-1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

XOR, AND, NOT, XORN = 0, 1, 2, 3
KIND_NAMES = {XOR: "XOR", AND: "AND", NOT: "NOT", XORN: "XORN"}

CLIENT = "client"
CLOUD = "cloud"

TO_CLIENT = "client"
TO_CLOUD = "cloud"
TO_BOTH = "both"


@dataclass
class Block:
    kind: int
    a: np.ndarray
    b: np.ndarray | None
    out: np.ndarray
    gid0: int = 0  # first garbling gate id (AND blocks only)


@dataclass
class Output:
    name: str
    wires: np.ndarray
    to: str


@dataclass
class Circuit:
    n_wires: int
    blocks: list[Block]
    inputs: dict[str, np.ndarray]           # party -> wire ids
    const_wires: np.ndarray                 # ids of baked-constant wires
    const_bits: np.ndarray                  # their values
    outputs: list[Output]
    n_and: int
    n_xor: int
    n_not: int

    def output(self, name: str) -> Output:
        for o in self.outputs:
            if o.name == name:
                return o
        raise KeyError(name)

    def shape_hash(self) -> bytes:
        """Digest of the circuit shape; both parties compare these before
        running a session so they garble/evaluate identical circuits."""
        h = hashlib.blake2b(digest_size=16)
        h.update(np.int64(self.n_wires).tobytes())
        for blk in self.blocks:
            h.update(bytes([blk.kind]))
            h.update(blk.a.astype(np.int64).tobytes())
            if blk.b is not None:
                h.update(blk.b.astype(np.int64).tobytes())
            h.update(blk.out.astype(np.int64).tobytes())
        for party in sorted(self.inputs):
            h.update(party.encode())
            h.update(self.inputs[party].astype(np.int64).tobytes())
        h.update(self.const_wires.astype(np.int64).tobytes())
        h.update(self.const_bits.astype(np.uint8).tobytes())
        for o in self.outputs:
            h.update(o.name.encode() + b"|" + o.to.encode())
            h.update(o.wires.astype(np.int64).tobytes())
        return h.digest()


class Builder:
    """Emits a Circuit; all gate methods accept/return int32 wire-id arrays."""

    def __init__(self):
        self._n = 2  # wires 0,1 = const 0,1
        self._blocks: list[Block] = []
        self._inputs: dict[str, list[np.ndarray]] = {}
        self._const_w: list[np.ndarray] = []
        self._const_b: list[np.ndarray] = []
        self._outputs: list[Output] = []
        self.n_and = 0
        self.n_xor = 0
        self.n_not = 0

    # -- wires ---------------------------------------------------------

    def _alloc(self, n: int) -> np.ndarray:
        w = np.arange(self._n, self._n + n, dtype=np.int32)
        self._n += n
        return w

    def inputs(self, party: str, n: int) -> np.ndarray:
        w = self._alloc(n)
        self._inputs.setdefault(party, []).append(w)
        return w

    def const(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        # constants 0/1 map to the reserved wires; no allocation needed
        return bits.astype(np.int32)

    def const_secret(self, bits) -> np.ndarray:
        """Garbler-baked constants on fresh wires (used where a value is
        public to the garbler but must flow through garbled gates)."""
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        w = self._alloc(len(bits))
        self._const_w.append(w)
        self._const_b.append(bits)
        return w

    @property
    def zero(self) -> int:
        return 0

    @property
    def one(self) -> int:
        return 1

    # -- gates ---------------------------------------------------------

    def _binary(self, kind: int, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int32)
        b = np.asarray(b, dtype=np.int32)
        a, b = np.broadcast_arrays(a, b)
        out = self._alloc(a.size)
        blk = Block(kind, a.ravel().copy(), b.ravel().copy(), out)
        if kind == AND:
            blk.gid0 = self.n_and
            self.n_and += a.size
        else:
            self.n_xor += a.size
        self._blocks.append(blk)
        return out.reshape(a.shape)

    def xor(self, a, b) -> np.ndarray:
        return self._binary(XOR, a, b)

    def xorn(self, parts: list) -> np.ndarray:
        """XOR of any number of equal-shaped wire arrays in one block
        (free-XOR has no fan-in limit; this keeps block counts down in
        round-structured circuits)."""
        arrs = [np.asarray(p, dtype=np.int32) for p in parts]
        arrs = np.broadcast_arrays(*arrs)
        stacked = np.stack([a.ravel() for a in arrs])       # (fan, n)
        out = self._alloc(stacked.shape[1])
        self._blocks.append(Block(XORN, stacked.copy(), None, out))
        self.n_xor += stacked.shape[1] * (stacked.shape[0] - 1)
        return out.reshape(arrs[0].shape)

    def and_(self, a, b) -> np.ndarray:
        return self._binary(AND, a, b)

    def not_(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.int32)
        out = self._alloc(a.size)
        self._blocks.append(Block(NOT, a.ravel().copy(), None, out))
        self.n_not += a.size
        return out.reshape(a.shape)

    def or_(self, a, b) -> np.ndarray:
        # a|b = (a^b) ^ (a&b)
        return self.xor(self.xor(a, b), self.and_(a, b))

    def mux(self, sel, a, b) -> np.ndarray:
        """sel ? a : b, elementwise; a select wire fans out over the last
        axis of word-shaped operands."""
        d = self.xor(a, b)
        sel = np.asarray(sel, np.int32)
        if sel.ndim == d.ndim - 1:
            sel = sel[..., None]
        return self.xor(b, self.and_(np.broadcast_to(sel, d.shape), d))

    def output(self, name: str, wires, to: str) -> None:
        self._outputs.append(Output(name, np.asarray(wires, np.int32).ravel().copy(), to))

    def build(self) -> Circuit:
        inputs = {p: np.concatenate(ws) if ws else np.empty(0, np.int32)
                  for p, ws in self._inputs.items()}
        cw = np.concatenate(self._const_w) if self._const_w else np.empty(0, np.int32)
        cb = np.concatenate(self._const_b) if self._const_b else np.empty(0, np.uint8)
        return Circuit(self._n, self._blocks, inputs, cw, cb,
                       self._outputs, self.n_and, self.n_xor, self.n_not)


def eval_plain(circ: Circuit, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Reference evaluation on plain bits; the oracle garbling is tested
    against. Returns {output name: uint8 bit array}."""
    vals = np.zeros(circ.n_wires, dtype=np.uint8)
    vals[1] = 1
    for party, wires in circ.inputs.items():
        bits = np.asarray(inputs.get(party, ()), dtype=np.uint8).ravel()
        if bits.size != wires.size:
            raise ValueError(f"{party}: expected {wires.size} input bits, got {bits.size}")
        vals[wires] = bits
    vals[circ.const_wires] = circ.const_bits
    for blk in circ.blocks:
        if blk.kind == XOR:
            vals[blk.out] = vals[blk.a] ^ vals[blk.b]
        elif blk.kind == AND:
            vals[blk.out] = vals[blk.a] & vals[blk.b]
        elif blk.kind == XORN:
            vals[blk.out] = np.bitwise_xor.reduce(vals[blk.a], axis=0)
        else:
            vals[blk.out] = vals[blk.a] ^ 1
    return {o.name: vals[o.wires].copy() for o in circ.outputs}


# -- word-level helpers (wire arrays shaped (..., n_bits), LSB first) ----

def bits_of_u16(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.uint16)
    return ((v[..., None] >> np.arange(16)) & 1).astype(np.uint8)


def u16_of_bits(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint32)
    return (b << np.arange(b.shape[-1], dtype=np.uint32)).sum(axis=-1).astype(np.uint16)


def bits_of_uint(values, width: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.uint64)
    return ((v[..., None] >> np.arange(width, dtype=np.uint64)) & 1).astype(np.uint8)


def uint_of_bits(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint64)
    return (b << np.arange(b.shape[-1], dtype=np.uint64)).sum(axis=-1)


def add_words(bld: Builder, a: np.ndarray, b: np.ndarray, carry_in=None) -> np.ndarray:
    """Ripple add of two (..., w) wire arrays, one AND per bit:
    carry' = c ^ ((a^c) & (b^c)). Result is (..., w) mod 2^w."""
    a = np.asarray(a, np.int32)
    b = np.asarray(b, np.int32)
    w = a.shape[-1]
    lanes = a.shape[:-1]
    if carry_in is None:
        c = np.broadcast_to(np.int32(bld.zero), lanes).astype(np.int32)
    else:
        c = np.broadcast_to(np.asarray(carry_in, np.int32), lanes).astype(np.int32)
    outs = []
    for i in range(w):
        ai, bi = a[..., i], b[..., i]
        outs.append(bld.xor(bld.xor(ai, bi), c))
        if i + 1 < w:
            c = bld.xor(c, bld.and_(bld.xor(ai, c), bld.xor(bi, c)))
    return np.stack(outs, axis=-1)


def sub_words(bld: Builder, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a - b) mod 2^w via a + ~b + 1."""
    return add_words(bld, a, bld.not_(np.asarray(b, np.int32)), carry_in=bld.one)


def less_than(bld: Builder, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unsigned a < b on (..., w) wire arrays -> (...,) wires.

    Computed as the missing carry of a + ~b + 1 (borrow of a - b)."""
    a = np.asarray(a, np.int32)
    nb = bld.not_(np.asarray(b, np.int32))
    w = a.shape[-1]
    c = np.broadcast_to(np.int32(bld.one), a.shape[:-1]).astype(np.int32)
    for i in range(w):
        ai, bi = a[..., i], nb[..., i]
        c = bld.xor(c, bld.and_(bld.xor(ai, c), bld.xor(bi, c)))
    return bld.not_(c)


def equal(bld: Builder, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bitwise equality of (..., w) wire arrays -> (...,) wires (AND tree)."""
    z = bld.not_(bld.xor(a, b))
    while z.shape[-1] > 1:
        half = z.shape[-1] // 2
        rest = z[..., 2 * half:]
        z = np.concatenate([bld.and_(z[..., :half], z[..., half:2 * half]), rest], axis=-1)
    return z[..., 0]
