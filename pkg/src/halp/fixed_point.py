"""Dynamically scaled fixed-point numbers with stochastic rounding.

A representation ``LPRepr(delta, bits)`` is the lattice

    {-delta * 2**(bits-1), ..., -delta, 0, delta, ..., delta * (2**(bits-1) - 1)}

Values are stored as signed integer codes (always ``int64``, whatever the
nominal width) and read back as ``code * delta``.  Same-scale addition
saturates at the code range, products multiply scales and add widths, and a
left shift trades width for a finer scale without changing any value.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .rng import QuantRng, next_double, next_u64

BACKING_BITS = 64


class InvalidInputError(ValueError):
    pass


class ScaleMismatchError(ValueError):
    pass


class WidthOverflowError(OverflowError):
    pass


# Instrumentation: when active, every vector-level operation is appended as a
# (kind, name) pair.  kind is "lp" for integer-code ops and "fp" for
# full-precision float vector ops reported by callers via record_fp().
_op_log: list | None = None


@contextmanager
def count_ops():
    global _op_log
    prev, _op_log = _op_log, []
    try:
        yield _op_log
    finally:
        _op_log = prev


def _record(kind, name):
    if _op_log is not None:
        _op_log.append((kind, name))


def record_fp(name):
    _record("fp", name)


def record_phase(name):
    """Mark the start of a phase (e.g. "outer", "inner") in the op log."""
    _record("phase", name)


@dataclass(frozen=True)
class LPRepr:
    delta: float
    bits: int

    def __post_init__(self):
        d = float(self.delta)
        if not (math.isfinite(d) and d > 0.0):
            raise InvalidInputError(f"delta must be finite and > 0, got {self.delta!r}")
        if not (2 <= int(self.bits) <= BACKING_BITS):
            raise InvalidInputError(f"bits must be in [2, {BACKING_BITS}], got {self.bits!r}")
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "bits", int(self.bits))

    @property
    def lo(self) -> int:
        return -(1 << (self.bits - 1))

    @property
    def hi(self) -> int:
        return (1 << (self.bits - 1)) - 1

    @property
    def min_value(self) -> float:
        return self.lo * self.delta

    @property
    def max_value(self) -> float:
        return self.hi * self.delta

    def lattice(self) -> np.ndarray:
        """All 2**bits representable values in increasing order."""
        if self.bits > 24:
            raise ValueError("lattice enumeration limited to bits <= 24")
        return np.arange(self.lo, self.hi + 1, dtype=np.int64) * self.delta

    def __len__(self):
        return 1 << self.bits


@dataclass(frozen=True)
class LPScalar:
    code: int
    repr: LPRepr

    def __post_init__(self):
        c = int(self.code)
        if not (self.repr.lo <= c <= self.repr.hi):
            raise WidthOverflowError(f"code {c} outside {self.repr.bits}-bit range")
        object.__setattr__(self, "code", c)

    @property
    def value(self) -> float:
        return self.code * self.repr.delta

    def __float__(self):
        return self.value


@dataclass(frozen=True, eq=False)
class LPVector:
    """Integer codes sharing one representation.  Codes may be 1-D or 2-D."""

    codes: np.ndarray
    repr: LPRepr
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.dtype != np.int64:
            if codes.size and not np.issubdtype(codes.dtype, np.integer):
                raise InvalidInputError("codes must be integers")
            codes = codes.astype(np.int64)
        if not self._checked and codes.size:
            if codes.min() < self.repr.lo or codes.max() > self.repr.hi:
                raise WidthOverflowError(f"codes outside {self.repr.bits}-bit range")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def shape(self):
        return self.codes.shape

    def __len__(self):
        return len(self.codes)

    def __eq__(self, other):
        return (isinstance(other, LPVector) and self.repr == other.repr
                and np.array_equal(self.codes, other.codes))

    def __neg__(self):
        return negate(self)

    def __add__(self, other):
        return add_same_scale(self, other)

    def __sub__(self, other):
        return add_same_scale(self, negate(other))


def _trusted(codes, repr_):
    return LPVector(codes, repr_, _checked=True)


# -- quantization ----------------------------------------------------------

@njit(cache=True)
def quantize_code(x, delta, lo, hi, u):
    """Stochastic rounding of ``x`` into code space given one uniform draw ``u``."""
    c = x / delta
    if c >= hi:
        return np.int64(hi)
    if c <= lo:
        return np.int64(lo)
    r = np.floor(c + 0.5)
    if r * delta == x:
        return np.int64(r)
    f = np.floor(c)
    if u < c - f:
        return np.int64(f) + 1
    return np.int64(f)


@njit(cache=True)
def quantize_array(x, delta, lo, hi, state, out):
    """Quantize flat ``x`` into ``out``; one draw per coordinate, always consumed.

    Returns False if any input is non-finite (``out`` is then unspecified).
    """
    ok = True
    flo = np.float64(lo)
    fhi = np.float64(hi)
    for j in range(x.shape[0]):
        u = next_double(state)
        v = x[j]
        if not np.isfinite(v):
            ok = False
            out[j] = 0
            continue
        out[j] = quantize_code(v, delta, flo, fhi, u)
        if out[j] > hi:
            out[j] = hi
    return ok


def quantize_scalar(x: float, repr: LPRepr, rng: QuantRng) -> LPScalar:
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"cannot quantize non-finite value {x!r}")
    out = np.empty(1, dtype=np.int64)
    quantize_array(np.array([x]), repr.delta, repr.lo, repr.hi, rng.state, out)
    return LPScalar(int(out[0]), repr)


def quantize_vector(x, repr: LPRepr, rng: QuantRng) -> LPVector:
    x = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(x).reshape(-1)
    out = np.empty(flat.shape[0], dtype=np.int64)
    ok = quantize_array(flat, repr.delta, repr.lo, repr.hi, rng.state, out)
    if not ok:
        raise InvalidInputError("cannot quantize non-finite values")
    _record("lp", "quantize")
    return _trusted(out.reshape(x.shape), repr)


# -- arithmetic --------------------------------------------------------------

def _same_scale(a: LPVector, b: LPVector):
    if a.repr != b.repr:
        raise ScaleMismatchError(f"representations differ: {a.repr} vs {b.repr}")
    if a.shape != b.shape:
        raise ScaleMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def _saturating(total, repr_):
    # int64 sums of codes below 2**63 in magnitude cannot wrap for bits <= 62
    if repr_.bits <= 62:
        return np.clip(total, repr_.lo, repr_.hi)
    exact = total.astype(object)
    return np.clip(exact, repr_.lo, repr_.hi).astype(np.int64)


def add_same_scale(a: LPVector, b: LPVector) -> LPVector:
    """Saturating same-scale addition."""
    _same_scale(a, b)
    _record("lp", "add")
    if a.repr.bits <= 62:
        total = a.codes + b.codes
    else:
        total = a.codes.astype(object) + b.codes.astype(object)
    return _trusted(_saturating(total, a.repr), a.repr)


def add_exact(a: LPVector, b: LPVector) -> LPVector:
    """Same-scale addition widened by one bit so it never saturates."""
    _same_scale(a, b)
    if a.repr.bits + 1 > BACKING_BITS:
        raise WidthOverflowError("exact addition would exceed 64 backing bits")
    _record("lp", "add_exact")
    return _trusted(a.codes + b.codes, LPRepr(a.repr.delta, a.repr.bits + 1))


def negate(a: LPVector) -> LPVector:
    _record("lp", "neg")
    if a.repr.bits == BACKING_BITS:
        codes = np.where(a.codes == a.repr.lo, a.repr.hi, -a.codes)
    else:
        codes = np.minimum(-a.codes, a.repr.hi)
    return _trusted(codes, a.repr)


def mul_scalar(a: LPVector, s: LPScalar) -> LPVector:
    """Exact product; scales multiply and widths add."""
    bits = a.repr.bits + s.repr.bits
    if bits > BACKING_BITS:
        raise WidthOverflowError(f"product needs {bits} bits")
    _record("lp", "mul_scalar")
    return _trusted(a.codes * s.code, LPRepr(a.repr.delta * s.repr.delta, bits))


def mul_outer(a: LPVector, s: LPVector) -> LPVector:
    """Exact outer product of a length-d and a length-C vector, as a d x C matrix."""
    bits = a.repr.bits + s.repr.bits
    if bits > BACKING_BITS:
        raise WidthOverflowError(f"product needs {bits} bits")
    _record("lp", "mul_outer")
    return _trusted(np.multiply.outer(a.codes, s.codes),
                    LPRepr(a.repr.delta * s.repr.delta, bits))


def widen_shift(a: LPVector, extra_bits: int) -> LPVector:
    """Shift codes left by ``extra_bits``; the real values do not change."""
    extra_bits = int(extra_bits)
    if extra_bits < 0:
        raise ValueError("extra_bits must be >= 0")
    bits = a.repr.bits + extra_bits
    if bits > BACKING_BITS:
        raise WidthOverflowError(f"shift needs {bits} bits")
    _record("lp", "widen_shift")
    return _trusted(a.codes << extra_bits,
                    LPRepr(math.ldexp(a.repr.delta, -extra_bits), bits))


@njit(cache=True)
def _narrow(codes, shift, lo, hi, state, out):
    mask = (np.int64(1) << shift) - 1
    top = np.uint64(64 - shift)
    for j in range(codes.shape[0]):
        c = codes[j]
        q = c >> shift
        rem = c & mask
        r = np.int64(next_u64(state) >> top)
        if r < rem:
            q += 1
        if q > hi:
            q = hi
        elif q < lo:
            q = lo
        out[j] = q


def narrow_shift(a: LPVector, shift: int, bits: int, rng: QuantRng) -> LPVector:
    """Stochastically round onto the lattice ``(delta * 2**shift, bits)``.

    Integer-only: the low ``shift`` bits of each code decide the round-up
    probability, compared against ``shift`` random bits.  Saturates.
    """
    if not (1 <= shift <= 63):
        raise ValueError("shift must be in [1, 63]")
    target = LPRepr(math.ldexp(a.repr.delta, shift), bits)
    flat = np.ascontiguousarray(a.codes).reshape(-1)
    out = np.empty_like(flat)
    _narrow(flat, np.int64(shift), target.lo, target.hi, rng.state, out)
    _record("lp", "narrow_shift")
    return _trusted(out.reshape(a.shape), target)


def to_real(a: LPVector) -> np.ndarray:
    return a.codes * a.repr.delta


def _exact_dot(ac, bc):
    return np.dot(ac.astype(object), bc.astype(object))


def dot_lp(a: LPVector, b: LPVector):
    """Integer dot product, scaled once by ``a.delta * b.delta``.

    ``b`` may be a d x C code matrix, giving a length-C result.
    Raises WidthOverflowError rather than letting the accumulator wrap.
    """
    if a.codes.ndim != 1 or a.shape[0] != b.shape[0]:
        raise ScaleMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    _record("lp", "dot")
    d = max(a.shape[0], 1)
    need = (a.repr.bits - 1) + (b.repr.bits - 1) + math.ceil(math.log2(d))
    if need <= 62:
        acc = a.codes @ b.codes
    else:
        acc = _exact_dot(a.codes, b.codes)
        flat = np.atleast_1d(acc)
        if any(abs(int(v)) > (1 << 63) - 1 for v in flat):
            raise WidthOverflowError("dot-product accumulator exceeds 64 bits")
        acc = np.asarray(acc, dtype=np.int64) if np.ndim(acc) else np.int64(acc)
    scale = a.repr.delta * b.repr.delta
    if np.ndim(acc) == 0:
        return float(acc) * scale
    return acc.astype(np.float64) * scale
