"""Binary BCH codes over GF(2^m) and the fuzzy-commitment construction.

Polynomials over GF(2) are held as Python ints (bit ``i`` is the
coefficient of ``x**i``); bit strings at the API boundary are ``uint8``
arrays whose element ``i`` is the same coefficient.  Codewords are
systematic: the ``N - K`` low coefficients carry parity, the top ``K``
carry the message.

The commitment hides a random codeword under XOR with the initiator's
key bits ``Q_A``; any ``Q_B`` within ``t`` bit flips of ``Q_A`` opens it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from b2p.errors import ParameterError

# Primitive polynomials, one per field size.
PRIMITIVE_POLYS = {
    3: 0b1011,              # x^3 + x + 1
    4: 0b10011,             # x^4 + x + 1
    5: 0b100101,            # x^5 + x^2 + 1
    6: 0b1000011,           # x^6 + x + 1
    7: 0b10001001,          # x^7 + x^3 + 1
    8: 0b100011101,         # x^8 + x^4 + x^3 + x^2 + 1
    9: 0b1000010001,        # x^9 + x^4 + 1
    10: 0b10000001001,      # x^10 + x^3 + 1
}


class GF2m:
    """Arithmetic in GF(2^m) through exp/log tables of a primitive element."""

    def __init__(self, m: int):
        if m not in PRIMITIVE_POLYS:
            raise ParameterError(f"unsupported field GF(2^{m})")
        self.m = m
        self.n = (1 << m) - 1
        poly = PRIMITIVE_POLYS[m]
        exp = np.zeros(2 * self.n, dtype=np.int64)
        log = np.full(self.n + 1, -1, dtype=np.int64)
        v = 1
        for i in range(self.n):
            exp[i] = v
            log[v] = i
            v <<= 1
            if v >> m:
                v ^= poly
        exp[self.n:] = exp[:self.n]
        self.exp = exp
        self.log = log
        self._exp_list = exp.tolist()
        self._log_list = log.tolist()

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self._exp_list[self._log_list[a] + self._log_list[b]]

    def div(self, a: int, b: int) -> int:
        if b == 0:
            raise ZeroDivisionError("division by zero in GF(2^m)")
        if a == 0:
            return 0
        return self._exp_list[(self._log_list[a] - self._log_list[b]) % self.n]


@lru_cache(maxsize=None)
def field(m: int) -> GF2m:
    return GF2m(m)


def cyclotomic_coset(i: int, n: int) -> frozenset[int]:
    out, j = set(), i % n
    while j not in out:
        out.add(j)
        j = (2 * j) % n
    return frozenset(out)


def _minimal_polynomial(gf: GF2m, coset: frozenset[int]) -> int:
    # prod (x - alpha^j) over the coset; coefficients fall in GF(2).
    coeffs = [1]
    for j in sorted(coset):
        root = int(gf.exp[j])
        nxt = [0] * (len(coeffs) + 1)
        for k, c in enumerate(coeffs):
            nxt[k + 1] ^= c
            nxt[k] ^= gf.mul(c, root)
        coeffs = nxt
    if any(c not in (0, 1) for c in coeffs):
        raise AssertionError("minimal polynomial left GF(2)")
    return sum(c << k for k, c in enumerate(coeffs))


def poly_mul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def poly_mod(a: int, g: int) -> int:
    dg = g.bit_length() - 1
    while a and a.bit_length() - 1 >= dg:
        a ^= g << (a.bit_length() - 1 - dg)
    return a


def bits_to_int(bits) -> int:
    bits = np.asarray(bits, dtype=np.uint8)
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def int_to_bits(v: int, n: int) -> np.ndarray:
    raw = np.frombuffer(v.to_bytes((n + 7) // 8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].copy()


def pack_bits(bits) -> bytes:
    """MSB-first packing; a trailing partial byte is zero-padded."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:n].copy()


@dataclass(frozen=True)
class _Construction:
    generator: int
    roots: frozenset[int]
    designed_t: int


def _designed_t(roots: frozenset[int]) -> int:
    # Consecutive roots alpha^1 .. alpha^r give designed distance r + 1.
    r = 0
    while (r + 1) in roots:
        r += 1
    return r // 2


@lru_cache(maxsize=None)
def _native_table(m: int) -> dict[int, _Construction]:
    """Narrow-sense primitive BCH codes of length 2^m - 1, keyed by K."""
    gf = field(m)
    n = gf.n
    table: dict[int, _Construction] = {}
    roots: set[int] = set()
    g = 1
    for t in range(1, 1 << (m - 1)):
        for i in range(1, 2 * t + 1):
            if i % n not in roots:
                c = cyclotomic_coset(i, n)
                roots |= c
                g = poly_mul(g, _minimal_polynomial(gf, c))
        k = n - (g.bit_length() - 1)
        if k <= 0:
            break
        if k not in table:
            fr = frozenset(roots)
            table[k] = _Construction(g, fr, _designed_t(fr))
    return table


def valid_k(n: int) -> list[int]:
    """Message lengths of the narrow-sense binary BCH codes of length ``n``."""
    return sorted(_native_table(_field_degree(n)))


def _field_degree(n: int) -> int:
    m = (n + 1).bit_length() - 1
    if (1 << m) - 1 != n or m not in PRIMITIVE_POLYS:
        raise ParameterError(f"N={n} is not 2^m - 1 for a supported m in 3..10")
    return m


def _extra_cosets(m: int, exclude: frozenset[int], degree: int) -> list[frozenset[int]] | None:
    """Cosets outside ``exclude`` whose sizes add up to ``degree``."""
    n = (1 << m) - 1
    seen, pool = set(), []
    for i in range(n):
        if i in exclude or i in seen:
            continue
        c = cyclotomic_coset(i, n)
        seen |= c
        pool.append(c)
    pool.sort(key=lambda c: (len(c), min(c)))

    def search(start, left, chosen):
        if left == 0:
            return chosen
        for j in range(start, len(pool)):
            if len(pool[j]) <= left:
                got = search(j + 1, left - len(pool[j]), chosen + [pool[j]])
                if got is not None:
                    return got
        return None

    return search(0, degree, [])


@dataclass(frozen=True, eq=False)
class BchCode:
    m: int
    n: int
    k: int
    t: int
    generator: int
    roots: frozenset[int]
    n_syndromes: int

    @property
    def gf(self) -> GF2m:
        return field(self.m)

    @property
    def generator_bits(self) -> np.ndarray:
        return int_to_bits(self.generator, self.n - self.k + 1)

    @property
    def ecr(self) -> float:
        """Error correction rate t / N."""
        return self.t / self.n

    def __repr__(self) -> str:
        return f"BchCode(N={self.n}, K={self.k}, t={self.t})"


@lru_cache(maxsize=None)
def make_code(N: int, K: int) -> BchCode:
    """Build the binary BCH code ``(N, K)``.

    Narrow-sense pairs are built from the minimal polynomials of
    ``alpha^1 .. alpha^2t`` and get their designed ``t``.  Other ``K`` below
    a narrow-sense ``K'`` are served by the ``K'`` code's generator times
    extra cyclotomic factors of total degree ``K' - K`` (an expurgated
    cyclic subcode); such codes decode up to ``ceil((N - K) / m)`` errors,
    the capability guaranteed by the check-bit budget ``N - K <= m t``.
    """
    m = _field_degree(N)
    table = _native_table(m)
    if K in table:
        c = table[K]
        return BchCode(m, N, K, c.designed_t, c.generator, c.roots, 2 * c.designed_t)
    if 1 <= K < N:
        for k_host in sorted(kk for kk in table if kk > K):
            host = table[k_host]
            extra = _extra_cosets(m, host.roots, k_host - K)
            if extra is None:
                continue
            gf = field(m)
            g = host.generator
            roots = set(host.roots)
            for c in extra:
                g = poly_mul(g, _minimal_polynomial(gf, c))
                roots |= c
            t = min(math.ceil((N - K) / m), host.designed_t)
            return BchCode(m, N, K, t, g, frozenset(roots), 2 * host.designed_t)
    near = sorted(table, key=lambda kk: (abs(kk - K), kk))[:3]
    raise ParameterError(f"no binary BCH code ({N}, {K}); nearest valid K: {sorted(near)}")


def bch_encode(code: BchCode, message) -> np.ndarray:
    msg = np.asarray(message, dtype=np.uint8)
    if msg.shape != (code.k,):
        raise ParameterError(f"message must be {code.k} bits, got {msg.size}")
    shifted = bits_to_int(msg) << (code.n - code.k)
    return int_to_bits(shifted ^ poly_mod(shifted, code.generator), code.n)


def syndromes(code: BchCode, received) -> np.ndarray:
    """``r(alpha^j)`` for ``j = 1 .. n_syndromes``."""
    gf = code.gf
    pos = np.flatnonzero(np.asarray(received, dtype=np.uint8))
    j = np.arange(1, code.n_syndromes + 1)
    if pos.size == 0:
        return np.zeros(j.size, dtype=np.int64)
    powers = gf.exp[(j[:, None] * pos[None, :]) % gf.n]
    return np.bitwise_xor.reduce(powers, axis=1)


def _berlekamp_massey(gf: GF2m, synd: list[int]) -> list[int]:
    """Shortest LFSR (error-locator coefficients, constant first).

    The result has exactly ``L + 1`` entries, ``L`` being the LFSR length;
    a zero leading coefficient means the locator's degree fell short.
    """
    exp, log, n = gf._exp_list, gf._log_list, gf.n
    C = [1]
    B = [1]
    L, shift, b = 0, 1, 1
    for r, s_r in enumerate(synd):
        d = s_r
        for i in range(1, L + 1):
            ci = C[i] if i < len(C) else 0
            sv = synd[r - i]
            if ci and sv:
                d ^= exp[log[ci] + log[sv]]
        if d == 0:
            shift += 1
            continue
        coef = exp[(log[d] - log[b]) % n]
        lc = log[coef]
        newC = C + [0] * max(0, len(B) + shift - len(C))
        for i, bi in enumerate(B):
            if bi:
                newC[i + shift] ^= exp[lc + log[bi]]
        if 2 * L <= r:
            B, C = C, newC
            L = r + 1 - L
            b = d
            shift = 1
        else:
            C = newC
            shift += 1
    C = (C + [0] * (L + 1))[:L + 1]
    return C


def _error_positions(gf: GF2m, locator: list[int]) -> np.ndarray:
    # Roots alpha^{-i} of the locator mark error position i.
    coeffs = np.array(locator, dtype=np.int64)
    nz = np.flatnonzero(coeffs)
    logs = gf.log[coeffs[nz]]
    i = np.arange(gf.n)
    terms = gf.exp[(logs[:, None] - nz[:, None] * i[None, :]) % gf.n]
    values = np.bitwise_xor.reduce(terms, axis=0)
    return np.flatnonzero(values == 0)


def bch_decode(code: BchCode, received) -> np.ndarray | None:
    """Bounded-distance decoding up to ``code.t`` errors.

    Returns the ``K`` message bits, or ``None`` on decoding failure.  Words
    more than ``t`` flips from every codeword either fail or, rarely,
    decode to a different codeword.
    """
    r = np.asarray(received, dtype=np.uint8)
    if r.shape != (code.n,):
        raise ParameterError(f"received word must be {code.n} bits, got {r.size}")
    synd = syndromes(code, r)
    corrected = r
    if synd.any():
        gf = code.gf
        locator = _berlekamp_massey(gf, synd.tolist())
        n_err = len(locator) - 1
        if n_err > code.t or locator[-1] == 0:
            return None
        pos = _error_positions(gf, locator)
        if pos.size != n_err:
            return None
        corrected = r.copy()
        corrected[pos] ^= 1
    word = bits_to_int(corrected)
    if poly_mod(word, code.generator):
        return None
    return int_to_bits(word >> (code.n - code.k), code.k)


# --------------------------------------------------------------------------
# Fuzzy commitment
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Commitment:
    block: np.ndarray
    code: BchCode
    attempt_id: int = 0

    def __post_init__(self):
        blk = np.asarray(self.block, dtype=np.uint8)
        if blk.shape != (self.code.n,):
            raise ParameterError(f"commitment block must be {self.code.n} bits")
        object.__setattr__(self, "block", blk)


def commit(code: BchCode, q_a, rng: np.random.Generator, attempt_id: int = 0) -> tuple[Commitment, np.ndarray]:
    """Hide a fresh random codeword under ``q_a``: ``B = encode(R) ^ q_a``."""
    q_a = np.asarray(q_a, dtype=np.uint8)
    if q_a.shape != (code.n,):
        raise ParameterError(f"Q_A must be {code.n} bits, got {q_a.size}")
    r = rng.integers(0, 2, code.k, dtype=np.uint8)
    return Commitment(bch_encode(code, r) ^ q_a, code, attempt_id), r


def recover(code: BchCode, commitment: Commitment, q_b) -> tuple[np.ndarray, np.ndarray] | None:
    """Open a commitment with the responder's bits.

    Returns ``(Q_A', R')`` or ``None`` when decoding fails.
    """
    q_b = np.asarray(q_b, dtype=np.uint8)
    if q_b.shape != (code.n,):
        raise ParameterError(f"Q_B must be {code.n} bits, got {q_b.size}")
    block = commitment.block
    r_prime = bch_decode(code, block ^ q_b)
    if r_prime is None:
        return None
    return block ^ bch_encode(code, r_prime), r_prime


@dataclass(frozen=True, eq=False)
class FinalKey:
    key_bits: np.ndarray
    pre_hash: np.ndarray

    @property
    def key_bytes(self) -> bytes:
        return pack_bits(self.key_bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FinalKey):
            return NotImplemented
        return np.array_equal(self.key_bits, other.key_bits) and np.array_equal(self.pre_hash, other.pre_hash)

    __hash__ = None


def finalize_key(q_a, out_len: int = 256) -> FinalKey:
    """Append an even-parity bit and hash with SHA-256 (truncated to ``out_len``)."""
    if out_len not in (128, 256):
        raise ParameterError("key length must be 128 or 256 bits")
    q_a = np.asarray(q_a, dtype=np.uint8)
    parity = np.uint8(int(q_a.sum()) & 1)
    pre = np.concatenate((q_a, [parity])).astype(np.uint8)
    digest = hashlib.sha256(pack_bits(pre)).digest()
    key = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[:out_len].copy()
    return FinalKey(key, pre)
