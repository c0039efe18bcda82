"""Oblivious transfer: Bellare-Micali style base OTs over a 2048-bit MODP
group, extended with IKNP to arbitrary batch sizes.

The extension reuses one set of 128 base OTs per party pair: each extend
call advances a per-column PRG offset (AES-CTR), so choice batches stay
independent without re-running the (expensive) public-key phase. All
randomness comes from caller-provided Rng streams, keeping transcripts
reproducible under a fixed root seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..rng import Rng
from .garble import LABEL_BYTES, hash_labels

# RFC 3526 group 14 (2048-bit MODP), generator 2
MODP_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF", 16)
MODP_G = 2
_EXP_BYTES = 32  # 256-bit exponents (short-exponent DH)


def _h_point(x: int, sid: bytes, i: int, b: int) -> bytes:
    return hashlib.blake2b(
        x.to_bytes(256, "big") + sid + i.to_bytes(4, "big") + bytes([b]),
        digest_size=LABEL_BYTES).digest()


def _rand_exp(rng: Rng) -> int:
    return int.from_bytes(rng.bytes(_EXP_BYTES), "big") | 1


@dataclass
class BaseOtSender:
    """Holds message pairs; two-round protocol driven by the caller."""
    sid: bytes
    rng: Rng
    c: int = 0

    def round0(self) -> bytes:
        self.c = pow(MODP_G, _rand_exp(self.rng.child("c")), MODP_P)
        return self.c.to_bytes(256, "big")

    def round2(self, pk0_blob: bytes, msgs: np.ndarray) -> bytes:
        """msgs: (n, 2, 16) label pairs -> encrypted payload."""
        n = msgs.shape[0]
        out = bytearray()
        for i in range(n):
            pk0 = int.from_bytes(pk0_blob[i * 256:(i + 1) * 256], "big")
            pk1 = (self.c * pow(pk0, -1, MODP_P)) % MODP_P
            for b, pk in ((0, pk0), (1, pk1)):
                rr = _rand_exp(self.rng.child("r", i, b))
                gr = pow(MODP_G, rr, MODP_P)
                pad = _h_point(pow(pk, rr, MODP_P), self.sid, i, b)
                ct = bytes(x ^ y for x, y in zip(pad, msgs[i, b].tobytes()))
                out += gr.to_bytes(256, "big") + ct
        return bytes(out)


@dataclass
class BaseOtReceiver:
    sid: bytes
    rng: Rng
    choices: np.ndarray = None
    _x: list = field(default_factory=list)

    def round1(self, c_blob: bytes, choices: np.ndarray) -> bytes:
        c = int.from_bytes(c_blob, "big")
        self.choices = np.asarray(choices, np.uint8)
        out = bytearray()
        self._x = []
        for i, sigma in enumerate(self.choices):
            x = _rand_exp(self.rng.child("x", i))
            self._x.append(x)
            pk_sigma = pow(MODP_G, x, MODP_P)
            pk0 = pk_sigma if sigma == 0 else (c * pow(pk_sigma, -1, MODP_P)) % MODP_P
            out += pk0.to_bytes(256, "big")
        return bytes(out)

    def round3(self, payload: bytes) -> np.ndarray:
        n = len(self.choices)
        rec = np.zeros((n, LABEL_BYTES), dtype=np.uint8)
        stride = (256 + LABEL_BYTES) * 2
        for i, sigma in enumerate(self.choices):
            off = i * stride + int(sigma) * (256 + LABEL_BYTES)
            gr = int.from_bytes(payload[off:off + 256], "big")
            ct = payload[off + 256:off + 256 + LABEL_BYTES]
            pad = _h_point(pow(gr, self._x[i], MODP_P), self.sid, i, int(sigma))
            rec[i] = np.frombuffer(bytes(x ^ y for x, y in zip(pad, ct)), np.uint8)
        return rec


def _prg(key16: bytes, offset_blocks: int, nbytes: int) -> np.ndarray:
    blocks = (nbytes + 15) // 16
    ctr0 = offset_blocks.to_bytes(16, "big")
    enc = Cipher(algorithms.AES(key16), modes.CTR(ctr0)).encryptor()
    out = enc.update(bytes(blocks * 16))
    return np.frombuffer(out, dtype=np.uint8)[:nbytes]


def _transpose_bits(cols: np.ndarray, n: int) -> np.ndarray:
    """(128, n_bytes) column matrix -> (n, 16) row matrix."""
    bits = np.unpackbits(cols, axis=1)[:, :n]      # (128, n)
    return np.packbits(bits.T, axis=1)             # (n, 16)


@dataclass
class OtExtensionSender:
    """IKNP sender (the garbler): turns base-OT keys into label transfers."""
    s_bits: np.ndarray          # (128,) secret choice bits
    keys: np.ndarray            # (128, 16) received base-OT keys
    offset: int = 0
    tweak: int = 0

    def process(self, u_matrix: bytes, pairs: np.ndarray) -> bytes:
        """pairs: (n, 2, 16); returns the masked label stream."""
        n = pairs.shape[0]
        nbytes = (n + 7) // 8
        u = np.frombuffer(u_matrix, np.uint8).reshape(128, nbytes)
        q_cols = np.zeros((128, nbytes), dtype=np.uint8)
        for i in range(128):
            g = _prg(self.keys[i].tobytes(), self.offset, nbytes)
            q_cols[i] = g ^ (u[i] if self.s_bits[i] else 0)
        self.offset += (nbytes + 15) // 16 + 1
        q = _transpose_bits(q_cols, n)
        s_row = np.packbits(self.s_bits)
        tw = np.arange(self.tweak, self.tweak + n, dtype=np.uint64)
        self.tweak += n
        y0 = pairs[:, 0] ^ hash_labels(q, None, tw)
        y1 = pairs[:, 1] ^ hash_labels(q ^ s_row, None, tw)
        return y0.tobytes() + y1.tobytes()


@dataclass
class OtExtensionReceiver:
    """IKNP receiver (the evaluator)."""
    key_pairs: np.ndarray       # (128, 2, 16) base-OT sent key pairs
    offset: int = 0
    tweak: int = 0

    def round_u(self, choices: np.ndarray) -> tuple[bytes, np.ndarray]:
        n = len(choices)
        nbytes = (n + 7) // 8
        r_row = np.packbits(np.asarray(choices, np.uint8))
        t_cols = np.zeros((128, nbytes), dtype=np.uint8)
        u = np.zeros((128, nbytes), dtype=np.uint8)
        for i in range(128):
            g0 = _prg(self.key_pairs[i, 0].tobytes(), self.offset, nbytes)
            g1 = _prg(self.key_pairs[i, 1].tobytes(), self.offset, nbytes)
            t_cols[i] = g0
            u[i] = g0 ^ g1 ^ r_row
        self.offset += (nbytes + 15) // 16 + 1
        t = _transpose_bits(t_cols, n)
        return u.tobytes(), t

    def receive(self, payload: bytes, choices: np.ndarray, t: np.ndarray) -> np.ndarray:
        n = len(choices)
        y0 = np.frombuffer(payload, np.uint8, n * LABEL_BYTES)
        y1 = np.frombuffer(payload, np.uint8, n * LABEL_BYTES, n * LABEL_BYTES)
        y0 = y0.reshape(n, LABEL_BYTES); y1 = y1.reshape(n, LABEL_BYTES)
        tw = np.arange(self.tweak, self.tweak + n, dtype=np.uint64)
        self.tweak += n
        h = hash_labels(t, None, tw)
        sel = np.asarray(choices, np.uint8)[:, None]
        return np.where(sel == 0, y0 ^ h, y1 ^ h).astype(np.uint8)


def setup_extension(sid: bytes, sender_rng: Rng, receiver_rng: Rng):
    """Run the base-OT phase in memory (both endpoints local). The caller
    normally drives the message blobs over a channel instead; this helper
    is for tests and for building both ends of a loopback session."""
    # extension-sender plays base-RECEIVER with secret s; extension-receiver
    # plays base-SENDER with 128 fresh key pairs
    s_bits = sender_rng.child("s").bits(128)
    key_pairs = receiver_rng.child("keys").u8((128, 2, LABEL_BYTES))
    base_s = BaseOtSender(sid, receiver_rng.child("base-s"))
    base_r = BaseOtReceiver(sid, sender_rng.child("base-r"))
    c_blob = base_s.round0()
    pk_blob = base_r.round1(c_blob, s_bits)
    payload = base_s.round2(pk_blob, key_pairs)
    keys = base_r.round3(payload)
    return (OtExtensionSender(s_bits, keys),
            OtExtensionReceiver(key_pairs))
