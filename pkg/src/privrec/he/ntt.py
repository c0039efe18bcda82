"""Negacyclic number-theoretic transform over word-sized prime limbs.

The ciphertext modulus q is a product of primes p < 2^30 with
p = 1 (mod 2d), so products of residues fit in uint64 and every limb has
a 2d-th root of unity. Polynomials live as (num_limbs, d) uint64 arrays;
forward transforms leave coefficients in bit-reversed order and all
pointwise arithmetic stays in that domain.
"""

from __future__ import annotations

import numpy as np

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2; s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def find_ntt_primes(count: int, below: int, two_d: int) -> list[int]:
    """`count` primes p = 1 (mod two_d) descending from `below`."""
    primes = []
    p = (below // two_d) * two_d + 1
    while len(primes) < count:
        if p < two_d:
            raise ValueError("ran out of prime candidates")
        if is_prime(p):
            primes.append(p)
        p -= two_d
    return primes


def _primitive_root(p: int) -> int:
    factors = []
    n = p - 1
    d = 2
    while d * d <= n:
        if n % d == 0:
            factors.append(d)
            while n % d == 0:
                n //= d
        d += 1
    if n > 1:
        factors.append(n)
    g = 2
    while True:
        if all(pow(g, (p - 1) // f, p) != 1 for f in factors):
            return g
        g += 1


def _bitrev_indices(d: int) -> np.ndarray:
    bits = d.bit_length() - 1
    idx = np.arange(d, dtype=np.uint64)
    out = np.zeros(d, dtype=np.uint64)
    for b in range(bits):
        out |= ((idx >> np.uint64(b)) & np.uint64(1)) << np.uint64(bits - 1 - b)
    return out.astype(np.int64)


class LimbNTT:
    """Transform tables for one prime limb."""

    def __init__(self, p: int, d: int):
        self.p = p
        self.d = d
        g = _primitive_root(p)
        psi = pow(g, (p - 1) // (2 * d), p)           # primitive 2d-th root
        ipsi = pow(psi, p - 2, p)
        rev = _bitrev_indices(d)
        pw = np.empty(d, dtype=np.uint64)
        ipw = np.empty(d, dtype=np.uint64)
        x = y = 1
        for i in range(d):
            pw[i] = x; ipw[i] = y
            x = x * psi % p
            y = y * ipsi % p
        self.psi_br = pw[rev]                          # bit-reversed psi powers
        self.ipsi_br = ipw[rev]
        self.d_inv = pow(d, p - 2, p)

    def forward(self, a: np.ndarray) -> np.ndarray:
        """In-place-style CT NTT; normal order in, bit-reversed out."""
        p = np.uint64(self.p)
        a = a.astype(np.uint64).copy()
        d = self.d
        t, m = d, 1
        while m < d:
            t //= 2
            s = self.psi_br[m:2 * m]
            blk = a.reshape(m, 2 * t)
            left = blk[:, :t]
            right = (blk[:, t:] * s[:, None]) % p
            u = left.copy()
            blk[:, :t] = (u + right) % p
            blk[:, t:] = (u + p - right) % p
            m *= 2
        return a

    def inverse(self, a: np.ndarray) -> np.ndarray:
        """GS inverse NTT; bit-reversed in, normal order out."""
        p = np.uint64(self.p)
        a = a.astype(np.uint64).copy()
        d = self.d
        t, m = 1, d
        while m > 1:
            h = m // 2
            s = self.ipsi_br[h:m]
            blk = a.reshape(h, 2 * t)
            u = blk[:, :t].copy()
            v = blk[:, t:].copy()
            blk[:, :t] = (u + v) % p
            blk[:, t:] = ((u + p - v) % p * s[:, None]) % p
            t *= 2
            m = h
        return (a * np.uint64(self.d_inv)) % p


class NttContext:
    def __init__(self, primes: list[int], d: int):
        self.primes = primes
        self.d = d
        self.limbs = [LimbNTT(p, d) for p in primes]
        self.p_arr = np.array(primes, dtype=np.uint64)[:, None]
        self.q = 1
        for p in primes:
            self.q *= p
        # CRT reconstruction constants: x = sum r_i * C_i (mod q)
        self.crt_m = [self.q // p for p in primes]
        self.crt_c = [pow(m % p, p - 2, p) for m, p in zip(self.crt_m, primes)]
        self.crt_const = [m * c for m, c in zip(self.crt_m, self.crt_c)]

    def forward(self, poly: np.ndarray) -> np.ndarray:
        return np.stack([limb.forward(poly[i]) for i, limb in enumerate(self.limbs)])

    def inverse(self, poly: np.ndarray) -> np.ndarray:
        return np.stack([limb.inverse(poly[i]) for i, limb in enumerate(self.limbs)])

    def to_limbs(self, coeffs: np.ndarray) -> np.ndarray:
        """Signed/unsigned integer coefficients -> per-limb residues."""
        c = np.asarray(coeffs, dtype=np.int64)
        return ((c[None, :] % self.p_arr.astype(np.int64)) +
                self.p_arr.astype(np.int64)) % self.p_arr.astype(np.int64)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a * b) % self.p_arr

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a + b) % self.p_arr

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a + self.p_arr - b) % self.p_arr

    def scale(self, a: np.ndarray, scalars: list[int]) -> np.ndarray:
        s = np.array([x % p for x, p in zip(scalars, self.primes)],
                     dtype=np.uint64)[:, None]
        return (a * s) % self.p_arr

    def lift_centered(self, poly_coeff_domain: np.ndarray) -> list[int]:
        """CRT-lift each coefficient to a centered integer in (-q/2, q/2]."""
        half = self.q // 2
        consts = self.crt_const
        out = []
        rows = [list(map(int, poly_coeff_domain[i])) for i in range(len(self.primes))]
        for j in range(poly_coeff_domain.shape[1]):
            x = sum(rows[i][j] * consts[i] for i in range(len(consts))) % self.q
            out.append(x - self.q if x > half else x)
        return out
