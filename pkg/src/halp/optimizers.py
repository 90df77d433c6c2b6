"""SGD, SVRG and their low-precision variants (LP-SGD, LP-SVRG, HALP, LM-HALP).

Accounting: a *pass* is N stochastic example-gradient steps.  Full-gradient
evaluations are not counted, so with the default ``inner = 2 * N`` every
outer iteration advances the trace by two passes.

Each run draws example indices (and the option-II snapshot step) from one
xorshift stream and quantization noise from a second, both derived from
``cfg.seed``.  Runs that share a seed therefore visit the same examples.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels as K
from .fixed_point import (
    LPRepr, LPScalar, LPVector, ScaleMismatchError, WidthOverflowError, add_same_scale, dot_lp,
    mul_outer, mul_scalar, narrow_shift, negate, quantize_vector, record_fp, record_phase, to_real,
    widen_shift,
)
from .objectives import Dataset, Objective
from .rng import QuantRng, derive_seed

ALGORITHMS = ("sgd", "svrg", "lp-sgd", "lp-svrg", "halp", "lm-halp")
DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class OptimizerConfig:
    algorithm: str = "svrg"
    alpha: float = 1e-3
    epochs: int = 10
    inner: int | None = None
    bits: int = 8
    delta: float | None = None
    mu: float | None = None
    option: str = "I"
    period: float = 2.0
    seed: int = 0
    measure_every: int = 1
    min_delta: float = 1e-300
    record_iterates: bool = False

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be finite and >= 0")
        if self.epochs < 0 or (self.inner is not None and self.inner < 0):
            raise ValueError("epochs and inner must be >= 0")
        if self.option not in ("I", "II"):
            raise ValueError("option must be 'I' or 'II'")
        if self.period <= 0 or self.measure_every < 1:
            raise ValueError("period must be > 0 and measure_every >= 1")
        if self.algorithm in ("lp-sgd", "lp-svrg", "halp", "lm-halp") and self.bits < 2:
            raise ValueError("bits must be >= 2")
        if self.algorithm in ("lp-sgd", "lp-svrg") and not (self.delta and self.delta > 0):
            raise ValueError(f"{self.algorithm} needs a fixed scale delta > 0")
        if self.algorithm in ("halp", "lm-halp") and not (self.mu and self.mu > 0):
            raise ValueError(f"{self.algorithm} needs mu > 0")

    def inner_length(self, N: int) -> int:
        return self.inner if self.inner is not None else max(1, round(self.period * N))

    def to_dict(self):
        return asdict(self)


@dataclass
class Row:
    passes: float
    seconds: float
    loss: float
    grad_norm: float
    delta: float
    digest: str


@dataclass
class RunRecord:
    algorithm: str
    rows: list = field(default_factory=list)
    final: np.ndarray | None = None
    status: str = "ok"
    iterates: list = field(default_factory=list)
    scales: list = field(default_factory=list)
    final_codes: LPVector | None = None

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def grad_norms(self):
        return self.column("grad_norm")

    @property
    def losses(self):
        return self.column("loss")


def _digest(w):
    return hashlib.sha256(np.ascontiguousarray(w).tobytes()).hexdigest()[:16]


class _Tracker:
    def __init__(self, obj, cfg, rec):
        self.obj, self.cfg, self.rec = obj, cfg, rec
        self.t0 = time.perf_counter()
        self.samples = 0
        self.outer = 0

    def measure(self, w, delta=float("nan"), g=None, force=False):
        """Append a row; returns the full gradient at ``w``."""
        if g is None:
            g = self.obj.full_gradient(w)
        if not force and self.outer % self.cfg.measure_every and self.outer != self.cfg.epochs:
            return g
        gn = float(np.linalg.norm(g))
        loss = self.obj.loss(w)
        self.rec.rows.append(Row(self.samples / self.obj.N, time.perf_counter() - self.t0,
                                 loss, gn, float(delta), _digest(w)))
        if self.cfg.record_iterates:
            self.rec.iterates.append(np.array(w, copy=True))
        if not (math.isfinite(loss) and math.isfinite(gn)) or max(loss, gn) > DIVERGENCE_LIMIT:
            self.rec.status = "diverged"
            self.rec.final = np.array(w, copy=True)
            raise DivergenceError(
                f"{self.rec.algorithm} diverged at pass {self.samples / self.obj.N:g} "
                f"(loss={loss:.3g}, grad_norm={gn:.3g})", self.rec)
        return g

    def blowup(self, w):
        self.rec.status = "diverged"
        self.rec.final = np.array(w, copy=True)
        raise DivergenceError(f"{self.rec.algorithm} produced non-finite iterates "
                              f"at pass {self.samples / self.obj.N:g}", self.rec)


def _streams(seed):
    return QuantRng(derive_seed(seed, 0)), QuantRng(derive_seed(seed, 1))


def _initial(obj, w0):
    if w0 is None:
        return np.zeros((obj.d, obj.C))
    return obj.as_matrix(w0).copy()


def _lattice(bits):
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def _quantize_matrix(W, repr_, rng):
    return np.ascontiguousarray(to_real(quantize_vector(W, repr_, rng)))


def _loop(obj, base, v, anchor, g_anchor, cfg, T, vr, quant, delta, idx_rng, q_rng, snap_t=-1):
    ds = obj.dataset
    codes = np.zeros(v.shape, dtype=np.int64)
    snap = np.empty_like(v)
    lo, hi = _lattice(cfg.bits) if quant else (0, 0)
    status = K.inner_loop(ds.X, ds.y, obj.l2, obj.family, base, v, anchor, g_anchor,
                          cfg.alpha, T, vr, quant, float(delta), lo, hi, snap_t,
                          idx_rng.state, q_rng.state, codes, snap)
    return status, snap


def variance_reduced_gradient(obj: Objective, w, anchor, anchor_grad, i):
    """``grad_i(w) - grad_i(anchor) + anchor_grad``, the SVRG inner direction."""
    return obj.component_gradient(w, i) - obj.component_gradient(anchor, i) + anchor_grad


def _sgd(obj, cfg, w0, quant):
    rec = RunRecord(cfg.algorithm)
    tr = _Tracker(obj, cfg, rec)
    idx_rng, q_rng = _streams(cfg.seed)
    T = cfg.inner_length(obj.N)
    delta = cfg.delta if quant else float("nan")
    w = _initial(obj, w0)
    if quant:
        w = _quantize_matrix(w, LPRepr(delta, cfg.bits), q_rng)
    zeros = np.zeros_like(w)
    tr.measure(w.reshape(obj.shape), delta, force=True)
    for k in range(cfg.epochs):
        status, _ = _loop(obj, zeros, w, zeros, zeros, cfg, T, False, quant, delta if quant else 1.0,
                          idx_rng, q_rng)
        tr.samples += T
        tr.outer = k + 1
        if status != K.OK:
            tr.blowup(w.reshape(obj.shape))
        tr.measure(w.reshape(obj.shape), delta)
    rec.final = w.reshape(obj.shape)
    if quant:
        rec.final_codes = LPVector(np.rint(w / delta).astype(np.int64).reshape(obj.shape),
                                   LPRepr(delta, cfg.bits))
    return rec


def run_sgd(obj: Objective, cfg: OptimizerConfig, w0=None) -> RunRecord:
    """Plain SGD; measurements every ``cfg.inner`` steps, ``cfg.epochs`` times."""
    return _sgd(obj, cfg, w0, quant=False)


def run_lp_sgd(obj: Objective, cfg: OptimizerConfig, w0=None) -> RunRecord:
    """SGD whose iterate is re-quantized onto the fixed ``(delta, bits)`` lattice each step."""
    return _sgd(obj, cfg, w0, quant=True)


def _svrg(obj, cfg, w0, quant):
    rec = RunRecord(cfg.algorithm)
    tr = _Tracker(obj, cfg, rec)
    idx_rng, q_rng = _streams(cfg.seed)
    T = cfg.inner_length(obj.N)
    delta = cfg.delta if quant else float("nan")
    wt = _initial(obj, w0)
    if quant:
        wt = _quantize_matrix(wt, LPRepr(delta, cfg.bits), q_rng)
    zeros = np.zeros_like(wt)
    g = tr.measure(wt.reshape(obj.shape), delta, force=True)
    for k in range(cfg.epochs):
        G = obj.as_matrix(g)
        v = wt.copy()
        snap_t = idx_rng.integers(T) if cfg.option == "II" and T else -1
        status, snap = _loop(obj, zeros, v, wt, G, cfg, T, True, quant, delta if quant else 1.0,
                             idx_rng, q_rng, snap_t)
        tr.samples += T
        tr.outer = k + 1
        if status != K.OK:
            tr.blowup(v.reshape(obj.shape))
        wt = snap if snap_t >= 0 else v
        g = tr.measure(wt.reshape(obj.shape), delta)
    rec.final = wt.reshape(obj.shape)
    if quant:
        rec.final_codes = LPVector(np.rint(wt / delta).astype(np.int64).reshape(obj.shape),
                                   LPRepr(delta, cfg.bits))
    return rec


def run_svrg(obj: Objective, cfg: OptimizerConfig, w0=None) -> RunRecord:
    return _svrg(obj, cfg, w0, quant=False)


def run_lp_svrg(obj: Objective, cfg: OptimizerConfig, w0=None) -> RunRecord:
    """SVRG with every stored iterate on the fixed ``(delta, bits)`` lattice.

    The caller is responsible for choosing a range that covers the optimum.
    """
    return _svrg(obj, cfg, w0, quant=True)


def _halp_scale(cfg, gn):
    if not math.isfinite(gn):
        return None
    return max(gn / (cfg.mu * ((1 << (cfg.bits - 1)) - 1)), cfg.min_delta)


def run_halp(obj: Objective, cfg: OptimizerConfig, w0=None) -> RunRecord:
    """HALP: SVRG on the offset z = w - w_anchor, stored on a lattice re-scaled each epoch.

    The lattice spacing is ``||full gradient|| / (mu * (2**(bits-1) - 1))`` so
    its range covers the ball that must contain the optimum.  Stops early with
    status ``"converged"`` if the full gradient is exactly zero.
    """
    rec = RunRecord(cfg.algorithm)
    tr = _Tracker(obj, cfg, rec)
    idx_rng, q_rng = _streams(cfg.seed)
    T = cfg.inner_length(obj.N)
    wt = _initial(obj, w0)
    g = tr.measure(wt.reshape(obj.shape), force=True)
    for k in range(cfg.epochs):
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            rec.status = "converged"
            break
        delta = _halp_scale(cfg, gn)
        if delta is None:
            tr.blowup(wt.reshape(obj.shape))
        rec.scales.append({"delta": delta, "max_value": delta * ((1 << (cfg.bits - 1)) - 1)})
        G = obj.as_matrix(g)
        z = np.zeros_like(wt)
        snap_t = idx_rng.integers(T) if cfg.option == "II" and T else -1
        status, snap = _loop(obj, wt, z, wt, G, cfg, T, True, True, delta, idx_rng, q_rng, snap_t)
        tr.samples += T
        tr.outer = k + 1
        if status != K.OK:
            tr.blowup(wt.reshape(obj.shape))
        wt = wt + (snap if snap_t >= 0 else z)
        g = tr.measure(wt.reshape(obj.shape), delta)
    rec.final = wt.reshape(obj.shape)
    return rec


def _derivatives(obj, margins):
    """Row-wise ``l_i'`` for an N x C margin matrix (vectorized over examples)."""
    y = obj.dataset.y
    if obj.family == K.SQUARED:
        return margins - y[:, None]
    P = np.exp(margins - margins.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(len(y)), y.astype(np.int64)] -= 1.0
    return P


def run_lm_halp(obj: Objective, cfg: OptimizerConfig, w0=None, exact_aux: bool = False) -> RunRecord:
    """HALP for linear models with an integer-only inner loop.

    Needs ``obj.dataset.quantized`` in ``(delta_d, cfg.bits)``; the problem
    actually optimized is the one on the dequantized examples.  Per epoch:

    * ``z`` lives in ``(delta_m, b)``, the per-step scalar(s) in ``(delta_s, b)``
      and the offset and the update in ``(delta_i, 2b)``, with
      ``delta_i = delta_s * delta_d`` and ``delta_m = 2**b * delta_i``;
    * each step takes an integer dot product, quantizes the scalar loss
      derivative difference, forms ``z << b - x_i * gamma - h`` on codes and
      rounds back to ``(delta_m, b)`` with a stochastic right shift.

    An L2 term ``lam * z`` is handled with a scalar quantized on ``(2**-b, b)``.

    ``exact_aux`` is a test hook: gamma and h are left unquantized and the
    update is done in floating point before the final quantization of z.
    """
    ds = obj.dataset
    Xq = ds.quantized
    if Xq is None:
        raise ValueError("LM-HALP needs a dataset with quantized examples (see quantize_dataset)")
    if Xq.repr.bits != cfg.bits:
        raise ScaleMismatchError(f"data stored with {Xq.repr.bits} bits, config asks for {cfg.bits}")
    b = cfg.bits
    if not exact_aux and 2 * b > 64:
        raise WidthOverflowError(f"integer inner loop needs 2b = {2 * b} <= 64 bits")

    rec = RunRecord(cfg.algorithm)
    Xr = to_real(Xq)
    target = Objective(Dataset(Xr, ds.y, ds.n_classes), obj.loss_family, obj.l2, obj.mu, obj.L)
    tr = _Tracker(target, cfg, rec)
    idx_rng, q_rng = _streams(cfg.seed)
    T = cfg.inner_length(obj.N)
    N, C = obj.N, obj.C
    dd = Xq.repr.delta
    lam = obj.l2

    wt = _initial(obj, w0)
    tr.measure(wt.reshape(obj.shape), force=True)
    for k in range(cfg.epochs):
        record_phase("outer")
        record_fp("phi")
        phi = Xr @ wt
        S = _derivatives(obj, phi)
        record_fp("full_gradient")
        g = Xr.T @ S / N + lam * wt
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            rec.status = "converged"
            break
        s = _halp_scale(cfg, gn)
        if s is None:
            tr.blowup(wt.reshape(obj.shape))
        delta_s = math.ldexp(s, -b) / dd
        delta_i = delta_s * dd
        delta_m = math.ldexp(delta_i, b)
        rec.scales.append({"delta_m": delta_m, "delta_i": delta_i, "delta_s": delta_s,
                           "delta_d": dd, "target": s})
        rep_m, rep_s = LPRepr(delta_m, b), LPRepr(delta_s, b)
        snap_t = idx_rng.integers(T) if cfg.option == "II" and T else -1
        snap = None
        y = ds.y
        record_phase("inner")

        if exact_aux:
            z = np.zeros((obj.d, C))
            h = cfg.alpha * g
            for t in range(T):
                if t == snap_t:
                    snap = z.copy()
                i = idx_rng.integers(N)
                record_fp("dot")
                m = Xr[i] @ z
                beta = cfg.alpha * (_scalar_derivative(obj, phi[i] + m, y[i])
                                    - _scalar_derivative(obj, phi[i], y[i]))
                record_fp("update")
                u = z - np.multiply.outer(Xr[i], beta) - h - cfg.alpha * lam * z
                z = to_real(quantize_vector(u, rep_m, q_rng))
            zr = snap if snap is not None else z
        else:
            rep_i2 = LPRepr(delta_i, 2 * b)
            h = quantize_vector(cfg.alpha * g, rep_i2, q_rng)
            decay = None
            if lam:
                decay = LPScalar(_quantize_scalar_code(cfg.alpha * lam, math.ldexp(1.0, -b), b, q_rng),
                                 LPRepr(math.ldexp(1.0, -b), b))
            z = LPVector(np.zeros((obj.d, C), dtype=np.int64), rep_m)
            for t in range(T):
                if t == snap_t:
                    snap = z
                i = idx_rng.integers(N)
                xi = LPVector(Xq.codes[i], Xq.repr, _checked=True)
                m = dot_lp(xi, z)
                beta = cfg.alpha * (_scalar_derivative(obj, phi[i] + m, y[i])
                                    - _scalar_derivative(obj, phi[i], y[i]))
                gam = quantize_vector(beta, rep_s, q_rng)
                u = add_same_scale(widen_shift(z, b), negate(mul_outer(xi, gam)))
                u = add_same_scale(u, negate(h))
                if decay is not None:
                    u = add_same_scale(u, negate(mul_scalar(z, decay)))
                z = narrow_shift(u, b, b, q_rng)
            zr = to_real(snap if snap is not None else z)
            rec.final_codes = snap if snap is not None else z

        record_phase("outer")
        tr.samples += T
        tr.outer = k + 1
        wt = wt + zr
        tr.measure(wt.reshape(obj.shape), delta_m)
    rec.final = wt.reshape(obj.shape)
    return rec


def _scalar_derivative(obj, margin, yi):
    m = np.atleast_1d(margin)
    out = np.empty(obj.C)
    K.loss_derivative(obj.family, m, yi, out)
    return out


def _quantize_scalar_code(x, delta, bits, rng):
    q = quantize_vector(np.array([x]), LPRepr(delta, bits), rng)
    return int(q.codes[0])


def run_clipping_variant(obj: Objective, cfg: OptimizerConfig, mode: str,
                         bits: int = 16, w0=None) -> RunRecord:
    """Re-run a low-bit HALP configuration at ``bits`` (default 16) bits.

    ``mode="scale"`` keeps the per-epoch lattice spacing of the original run
    (mu rescaled by the ratio of the largest codes); ``mode="clip"`` keeps its
    representable range (same mu).
    """
    if cfg.algorithm != "halp":
        raise ValueError("clipping variants are defined for HALP configurations")
    if mode == "scale":
        mu = cfg.mu * ((1 << (cfg.bits - 1)) - 1) / ((1 << (bits - 1)) - 1)
    elif mode == "clip":
        mu = cfg.mu
    else:
        raise ValueError("mode must be 'scale' or 'clip'")
    rec = run_halp(obj, replace(cfg, bits=bits, mu=mu), w0)
    rec.algorithm = f"halp-{mode}"
    return rec


_RUNNERS = {
    "sgd": run_sgd,
    "svrg": run_svrg,
    "lp-sgd": run_lp_sgd,
    "lp-svrg": run_lp_svrg,
    "halp": run_halp,
    "lm-halp": run_lm_halp,
}


def run(obj: Objective, cfg: OptimizerConfig, w0=None) -> RunRecord:
    return _RUNNERS[cfg.algorithm](obj, cfg, w0)
