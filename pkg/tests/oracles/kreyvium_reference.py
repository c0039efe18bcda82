"""Independent bit-level Kreyvium reference, kept deliberately naive.

Written before (and totally separately from) the production stream engine:
1-indexed Python lists, one bit per element, shifts done by list slicing.
This file is the ground truth the engine and the boolean circuit are
checked against; do not "optimize" it.

Conventions shared with the engine:
  * key / IV are 16 bytes; bit 1 is the most significant bit of byte 0.
  * keystream bit 1 becomes the most significant bit of output byte 0.
"""


def _bits_msb_first(data: bytes) -> list[int]:
    out = []
    for byte in data:
        for i in range(7, -1, -1):
            out.append((byte >> i) & 1)
    return out


def bits_to_bytes(bits: list[int]) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i // 8] |= 1 << (7 - (i % 8))
    return bytes(out)


def kreyvium_bits(key: bytes, iv: bytes, n_bits: int) -> list[int]:
    assert len(key) == 16 and len(iv) == 16
    kbits = _bits_msb_first(key)   # K1..K128 at indices 0..127
    vbits = _bits_msb_first(iv)    # IV1..IV128

    # Inner state, 1-indexed: s[1..288].
    s = [0] * 289
    for i in range(93):
        s[1 + i] = kbits[i]
    for i in range(84):
        s[94 + i] = vbits[i]
    for i in range(44):
        s[178 + i] = vbits[84 + i]
    for i in range(222, 288):
        s[i] = 1
    s[288] = 0

    # Rotating key/IV registers: (K*127,...,K*0) <- (K1,...,K128).
    kstar = [0] * 128  # kstar[j] holds K*_j
    vstar = [0] * 128
    for j in range(128):
        kstar[127 - j] = kbits[j]
        vstar[127 - j] = vbits[j]

    z = []
    for rnd in range(1, 1152 + n_bits + 1):
        t1 = s[66] ^ s[93]
        t2 = s[162] ^ s[177]
        t3 = s[243] ^ s[288] ^ kstar[0]
        if rnd > 1152:
            z.append(t1 ^ t2 ^ t3)
        t1 = t1 ^ (s[91] & s[92]) ^ s[171] ^ vstar[0]
        t2 = t2 ^ (s[175] & s[176]) ^ s[264]
        t3 = t3 ^ (s[286] & s[287]) ^ s[69]
        t4 = kstar[0]
        t5 = vstar[0]
        s[1:94] = [t3] + s[1:93]
        s[94:178] = [t1] + s[94:177]
        s[178:289] = [t2] + s[178:288]
        kstar = kstar[1:] + [t4]
        vstar = vstar[1:] + [t5]
    return z


def kreyvium_bytes(key: bytes, iv: bytes, n_bits: int) -> bytes:
    return bits_to_bytes(kreyvium_bits(key, iv, n_bits))
