"""Leveled BFV-style RLWE encryption, just deep enough for the distance
kernel: keygen, encrypt/decrypt, ciphertext add/sub, plaintext multiply
and plaintext add. No relinearization or ciphertext-ciphertext products.

Plaintexts are degree-< d polynomials with coefficients mod t = 2^16;
ciphertext polynomials are stored in the (bit-reversed) NTT domain so all
homomorphic operations are pointwise.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ..rng import Rng
from .ntt import NttContext, find_ntt_primes

# classical 128-bit security: max log2(q) per ring degree
SECURITY_TABLE = {1024: 27, 2048: 54, 4096: 109, 8192: 218, 16384: 438, 32768: 881}


class HeError(ValueError):
    pass


class NoiseOverflow(HeError):
    """Decryption sanity check failed; the result would be corrupt."""


@dataclass
class HeParams:
    """Defaults give a 109-bit q (four ~27.25-bit NTT primes), the largest
    modulus the 128-bit table allows at d = 4096."""
    d: int = 4096
    t_bits: int = 16
    limb_count: int = 4
    limb_below: int = 159_000_000
    sigma: float = 3.2
    security: int = 128

    def __post_init__(self):
        if self.d & (self.d - 1) or self.d < 16:
            raise HeError("ring degree must be a power of two")
        if self.d not in SECURITY_TABLE:
            raise HeError(f"no security bound known for d={self.d}")
        self.t = 1 << self.t_bits
        self.primes = find_ntt_primes(self.limb_count, self.limb_below, 2 * self.d)
        self.q = math.prod(self.primes)
        if math.log2(self.q) > SECURITY_TABLE[self.d]:
            raise HeError(f"log2(q)={math.log2(self.q):.1f} exceeds the "
                          f"{self.security}-bit bound for d={self.d}")
        if self.q <= self.t * 4:
            raise HeError("q too small for the plaintext modulus")
        self.delta = self.q // self.t

    def params_hash(self) -> bytes:
        blob = struct.pack("<IIQ", self.d, self.t, self.primes[0])
        for p in self.primes[1:]:
            blob += struct.pack("<Q", p)
        return hashlib.blake2b(blob, digest_size=8).digest()


_CTX_CACHE: dict[tuple, NttContext] = {}


def _ctx(params: HeParams) -> NttContext:
    key = (params.d, tuple(params.primes))
    if key not in _CTX_CACHE:
        _CTX_CACHE[key] = NttContext(params.primes, params.d)
    return _CTX_CACHE[key]


@dataclass
class CipherText:
    """(c0, c1) in the NTT domain, (L, d) uint64 each."""
    c0: np.ndarray
    c1: np.ndarray
    params_hash: bytes

    def to_bytes(self) -> bytes:
        head = self.params_hash + struct.pack("<HII", 2, self.c0.shape[0],
                                              self.c0.shape[1])
        return head + self.c0.astype("<u8").tobytes() + self.c1.astype("<u8").tobytes()

    @staticmethod
    def from_bytes(data: bytes) -> "CipherText":
        ph = data[:8]
        npoly, limbs, d = struct.unpack_from("<HII", data, 8)
        if npoly != 2:
            raise HeError("expected a 2-polynomial ciphertext")
        off = 8 + struct.calcsize("<HII")
        n = limbs * d
        c0 = np.frombuffer(data, "<u8", n, off).reshape(limbs, d).copy()
        c1 = np.frombuffer(data, "<u8", n, off + 8 * n).reshape(limbs, d).copy()
        return CipherText(c0, c1, ph)

    @staticmethod
    def byte_size(params: HeParams) -> int:
        return 8 + struct.calcsize("<HII") + 2 * 8 * params.limb_count * params.d


@dataclass
class SecretKey:
    s_ntt: np.ndarray
    params: HeParams


@dataclass
class PublicKey:
    b_ntt: np.ndarray
    a_ntt: np.ndarray
    params: HeParams


def _sample_ternary(rng: Rng, d: int) -> np.ndarray:
    return rng.generator.integers(-1, 2, size=d).astype(np.int64)


def _sample_gauss(rng: Rng, sigma: float, d: int) -> np.ndarray:
    return np.rint(rng.normal(sigma, d)).astype(np.int64)


def keygen(params: HeParams, rng: Rng) -> tuple[SecretKey, PublicKey]:
    ctx = _ctx(params)
    s = _sample_ternary(rng.child("sk"), params.d)
    s_ntt = ctx.forward(ctx.to_limbs(s).astype(np.uint64))
    # uniform a mod q: independent uniform residues per limb (CRT bijection)
    a_rng = rng.child("pk-a")
    a_ntt = np.stack([a_rng.generator.integers(0, p, size=params.d, dtype=np.uint64)
                      for p in params.primes])
    e = _sample_gauss(rng.child("pk-e"), params.sigma, params.d)
    e_ntt = ctx.forward(ctx.to_limbs(e).astype(np.uint64))
    b_ntt = ctx.sub(np.zeros_like(a_ntt), ctx.add(ctx.mul(a_ntt, s_ntt), e_ntt))
    return SecretKey(s_ntt, params), PublicKey(b_ntt, a_ntt, params)


def encode_plain(params: HeParams, coeffs: np.ndarray) -> np.ndarray:
    """Plaintext polynomial (coefficients mod t) -> NTT-domain limbs."""
    c = np.asarray(coeffs, dtype=np.int64) % params.t
    if len(c) > params.d:
        raise HeError("plaintext longer than ring degree")
    full = np.zeros(params.d, dtype=np.int64)
    full[:len(c)] = c
    ctx = _ctx(params)
    return ctx.forward(ctx.to_limbs(full).astype(np.uint64))


def encrypt(pk: PublicKey, plain_ntt: np.ndarray, rng: Rng) -> CipherText:
    params = pk.params
    ctx = _ctx(params)
    u = _sample_ternary(rng.child("enc-u"), params.d)
    e1 = _sample_gauss(rng.child("enc-e1"), params.sigma, params.d)
    e2 = _sample_gauss(rng.child("enc-e2"), params.sigma, params.d)
    u_ntt = ctx.forward(ctx.to_limbs(u).astype(np.uint64))
    e1_ntt = ctx.forward(ctx.to_limbs(e1).astype(np.uint64))
    e2_ntt = ctx.forward(ctx.to_limbs(e2).astype(np.uint64))
    dm = ctx.scale(plain_ntt, [params.delta % p for p in params.primes])
    c0 = ctx.add(ctx.add(ctx.mul(pk.b_ntt, u_ntt), e1_ntt), dm)
    c1 = ctx.add(ctx.mul(pk.a_ntt, u_ntt), e2_ntt)
    return CipherText(c0, c1, params.params_hash())


def add(params: HeParams, x: CipherText, y: CipherText) -> CipherText:
    ctx = _ctx(params)
    return CipherText(ctx.add(x.c0, y.c0), ctx.add(x.c1, y.c1), x.params_hash)


def sub(params: HeParams, x: CipherText, y: CipherText) -> CipherText:
    ctx = _ctx(params)
    return CipherText(ctx.sub(x.c0, y.c0), ctx.sub(x.c1, y.c1), x.params_hash)


def mul_plain(params: HeParams, x: CipherText, plain_ntt: np.ndarray) -> CipherText:
    ctx = _ctx(params)
    return CipherText(ctx.mul(x.c0, plain_ntt), ctx.mul(x.c1, plain_ntt), x.params_hash)


def add_plain(params: HeParams, x: CipherText, plain_ntt: np.ndarray) -> CipherText:
    ctx = _ctx(params)
    dm = ctx.scale(plain_ntt, [params.delta % p for p in params.primes])
    return CipherText(ctx.add(x.c0, dm), x.c1, x.params_hash)


def _phase(params: HeParams, sk: SecretKey, ct: CipherText) -> list[int]:
    """Centered CRT lift of c0 + c1*s in the coefficient domain."""
    ctx = _ctx(params)
    v_ntt = ctx.add(ct.c0, ctx.mul(ct.c1, sk.s_ntt))
    return ctx.lift_centered(ctx.inverse(v_ntt))


def decrypt(sk: SecretKey, ct: CipherText) -> np.ndarray:
    params = sk.params
    lifted = _phase(params, sk, ct)
    t, q = params.t, params.q
    out = np.empty(params.d, dtype=np.uint16)
    for i, v in enumerate(lifted):
        out[i] = ((t * v + (q // 2)) // q) % t
    return out


def noise_budget_bits(sk: SecretKey, ct: CipherText) -> float:
    """log2 of the remaining headroom before rounding starts to fail."""
    params = sk.params
    lifted = _phase(params, sk, ct)
    t, q, delta = params.t, params.q, params.delta
    worst = 1
    for v in lifted:
        m = ((t * v + (q // 2)) // q) % t
        r = v - delta * m
        r %= q
        if r > q // 2:
            r -= q
        worst = max(worst, abs(r))
    return math.log2(delta / (2 * worst)) if worst else float(params.q.bit_length())
