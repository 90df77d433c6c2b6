"""Finite-sum objectives, synthetic datasets and dataset files.

Two loss families are supported, both linear models ``f_i(w) = l_i(x_i^T w)``
plus an optional L2 term ``(lam / 2) * ||w||^2``:

* ``"squared"``: ``l_i(m) = (m - y_i)^2 / 2``, parameters of shape ``(d,)``
* ``"softmax"``: multinomial cross-entropy, parameters of shape ``(d, C)``
"""
from __future__ import annotations

import csv
import gzip
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .fixed_point import LPRepr, LPVector, quantize_vector
from .rng import QuantRng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_CHUNK_ROWS = 2048


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int = 0
    quantized: LPVector | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise DatasetError(f"X must be a non-empty N x d matrix, got {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise DatasetError("targets must have one entry per example")
        if self.n_classes:
            if self.y.min() < 0 or self.y.max() >= self.n_classes or np.any(self.y != np.round(self.y)):
                raise DatasetError("class labels must be integers in [0, n_classes)")
        if self.quantized is not None and self.quantized.shape != self.X.shape:
            raise DatasetError("quantized examples must match X in shape")

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


class Objective:
    """``f(w) = (1/N) sum_i f_i(w)`` over a dataset.

    ``mu`` and ``L`` may be supplied when known exactly; otherwise
    :meth:`strong_convexity` and :meth:`lipschitz` compute them.
    """

    def __init__(self, dataset: Dataset, loss: str = "squared", l2: float = 0.0,
                 mu: float | None = None, L: float | None = None):
        if loss not in ("squared", "softmax"):
            raise ValueError(f"unknown loss family {loss!r}")
        if l2 < 0:
            raise ValueError("l2 must be >= 0")
        if loss == "softmax" and dataset.n_classes < 2:
            raise ValueError("softmax loss needs a dataset with n_classes >= 2")
        self.dataset = dataset
        self.loss_family = loss
        self.family = K.SQUARED if loss == "squared" else K.SOFTMAX
        self.l2 = float(l2)
        self.mu = mu
        self.L = L

    @property
    def N(self):
        return self.dataset.N

    @property
    def d(self):
        return self.dataset.d

    @property
    def C(self):
        return 1 if self.family == K.SQUARED else self.dataset.n_classes

    @property
    def shape(self):
        return (self.d,) if self.family == K.SQUARED else (self.d, self.C)

    def zeros(self):
        return np.zeros(self.shape)

    def as_matrix(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != self.shape:
            raise ValueError(f"parameter shape {w.shape} != {self.shape}")
        return np.ascontiguousarray(w.reshape(self.d, self.C))

    def component_gradient(self, w, i: int):
        if not 0 <= i < self.N:
            raise IndexError(f"example index {i} out of range [0, {self.N})")
        W = self.as_matrix(w)
        out = np.empty_like(W)
        K.component_grad(self.dataset.X, self.dataset.y, self.l2, self.family, W, int(i),
                         np.empty(self.C), np.empty(self.C), out)
        return out.reshape(self.shape)

    def loss_derivative(self, i: int, margin):
        """``l_i'`` at a margin (scalar for squared loss, length-C for softmax)."""
        m = np.atleast_1d(np.asarray(margin, dtype=np.float64))
        out = np.empty(self.C)
        K.loss_derivative(self.family, m, self.dataset.y[i], out)
        return out[0] if self.family == K.SQUARED else out

    def _chunk_sum(self, W, lo, hi):
        X = self.dataset.X[lo:hi]
        M = X @ W
        if self.family == K.SQUARED:
            R = M - self.dataset.y[lo:hi, None]
        else:
            M = M - M.max(axis=1, keepdims=True)
            R = np.exp(M)
            R /= R.sum(axis=1, keepdims=True)
            R[np.arange(hi - lo), self.dataset.y[lo:hi].astype(np.int64)] -= 1.0
        return X.T @ R

    def full_gradient(self, w, workers: int | None = None):
        """Mean of the component gradients.

        Rows are summed in fixed chunks and the chunk partials reduced in
        order, so any ``workers`` count gives a bitwise-identical result.
        """
        W = self.as_matrix(w)
        bounds = [(a, min(a + _CHUNK_ROWS, self.N)) for a in range(0, self.N, _CHUNK_ROWS)]
        if workers and workers > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(lambda b: self._chunk_sum(W, *b), bounds))
        else:
            parts = [self._chunk_sum(W, *b) for b in bounds]
        total = parts[0]
        for p in parts[1:]:
            total = total + p
        g = total / self.N + self.l2 * W
        return g.reshape(self.shape)

    def loss(self, w) -> float:
        W = self.as_matrix(w)
        M = self.dataset.X @ W
        if self.family == K.SQUARED:
            r = M[:, 0] - self.dataset.y
            data = 0.5 * float(np.mean(r * r))
        else:
            mx = M.max(axis=1, keepdims=True)
            lse = mx[:, 0] + np.log(np.exp(M - mx).sum(axis=1))
            picked = M[np.arange(self.N), self.dataset.y.astype(np.int64)]
            data = float(np.mean(lse - picked))
        return data + 0.5 * self.l2 * float(np.sum(W * W))

    def grad_norm(self, w) -> float:
        return float(np.linalg.norm(self.full_gradient(w)))

    def lipschitz(self) -> float:
        """Lipschitz constant of the component gradients (``max_i`` bound)."""
        if self.L is not None:
            return float(self.L)
        row = float(np.max(np.einsum("ij,ij->i", self.dataset.X, self.dataset.X)))
        if self.family == K.SOFTMAX:
            row *= 0.5
        return row + self.l2

    def strong_convexity(self) -> float:
        if self.mu is not None:
            return float(self.mu)
        if self.family == K.SQUARED:
            H = self.dataset.X.T @ self.dataset.X / self.N
            return float(np.linalg.eigvalsh(H)[0]) + self.l2
        return self.l2

    def solve(self):
        """Exact minimizer for squared loss (normal equations)."""
        if self.family != K.SQUARED:
            raise NotImplementedError("closed-form solution only for squared loss")
        X, y = self.dataset.X, self.dataset.y
        H = X.T @ X / self.N + self.l2 * np.eye(self.d)
        return np.linalg.solve(H, X.T @ y / self.N)


# -- generators ---------------------------------------------------------------

def make_regression(n: int, d: int, noise_sd: float = 0.0, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w_true = rng.standard_normal(d)
    y = X @ w_true
    if noise_sd:
        y = y + noise_sd * rng.standard_normal(n)
    return Dataset(X, y, info={"generator": "regression", "w_true": w_true})


def make_classification(n: int, d: int, n_classes: int = 2, separation: float = 2.0,
                        seed: int = 0) -> Dataset:
    """Gaussian clusters with unit covariance and pairwise mean distance ``separation``."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((d, n_classes))
    if d >= n_classes:
        basis, _ = np.linalg.qr(basis)
        scale = separation / math.sqrt(2.0)
    else:
        basis /= np.linalg.norm(basis, axis=0)
        scale = separation / 2.0
    means = scale * basis.T
    labels = rng.permutation(np.arange(n) % n_classes)
    X = means[labels] + rng.standard_normal((n, d))
    return Dataset(X, labels.astype(np.float64), n_classes=n_classes,
                   info={"generator": "classification", "means": means})


def make_conditioned_regression(kappa: float, seed: int = 0, n: int = 1000, d: int = 64,
                                noise_sd: float = 0.0) -> Dataset:
    """Least squares with Hessian ``X^T X / n`` spectrum spanning exactly ``[1, kappa]``.

    ``X = U S V^T`` with U, V from QR of Gaussian matrices; eigenvalues are
    log-spaced between the endpoints.
    """
    if not kappa >= 1:
        raise ValueError("kappa must be >= 1")
    if n < d:
        raise ValueError("need n >= d for a strongly convex problem")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = np.geomspace(1.0, kappa, d)
    eig[0], eig[-1] = 1.0, kappa
    X = (U * np.sqrt(n * eig)) @ V.T
    w_true = rng.standard_normal(d)
    y = X @ w_true
    if noise_sd:
        y = y + noise_sd * rng.standard_normal(n)
    return Dataset(X, y, info={"generator": "conditioned", "kappa": float(kappa),
                               "w_true": w_true, "hessian_eigs": eig})


def quantize_dataset(ds: Dataset, bits: int, seed: int = 0) -> Dataset:
    """Store every example in one shared representation ``(max|x| / (2**(b-1)-1), b)``."""
    peak = float(np.max(np.abs(ds.X)))
    hi = (1 << (bits - 1)) - 1
    delta = peak / hi if peak > 0 else 1.0
    q = quantize_vector(ds.X, LPRepr(delta, bits), QuantRng(seed))
    return replace(ds, quantized=q, info={**ds.info, "data_bits": bits, "data_delta": delta})


# -- IDX files ------------------------------------------------------------------

def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file (magic 0x0801 labels or 0x0803 images)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DatasetError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IDX_LABELS_MAGIC, IDX_IMAGES_MAGIC):
        raise DatasetError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = math.prod(dims)
    if len(raw) - head < count:
        raise DatasetError(f"{path}: truncated IDX data ({len(raw) - head} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def write_idx(path, array) -> None:
    a = np.asarray(array, dtype=np.uint8)
    if a.ndim not in (1, 3):
        raise ValueError("IDX writer supports label vectors and image stacks only")
    magic = IDX_LABELS_MAGIC if a.ndim == 1 else IDX_IMAGES_MAGIC
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def load_idx(images_path, labels_path=None, n_classes: int = 10) -> Dataset:
    """MNIST-style IDX pair -> Dataset with pixels scaled to [0, 1]."""
    images = read_idx(images_path)
    if images.ndim != 3:
        raise DatasetError(f"{images_path}: expected an image file (3 dimensions)")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if labels_path is None:
        return Dataset(X, np.zeros(X.shape[0]))
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise DatasetError(f"{labels_path}: expected a label file (1 dimension)")
    if labels.shape[0] != X.shape[0]:
        raise DatasetError(f"{labels.shape[0]} labels for {X.shape[0]} images")
    n_classes = max(n_classes, int(labels.max()) + 1)
    return Dataset(X, labels.astype(np.float64), n_classes=n_classes)


# -- CSV files ------------------------------------------------------------------

def write_csv(path, ds: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(ds.d)] + ["target"])
        for row, t in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])


def load_csv(path, n_classes: int = 0) -> Dataset:
    """Header ``f0..f{d-1},target``; ``n_classes > 0`` marks a classification set."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty CSV")
    header = rows[0]
    d = len(header) - 1
    if d < 1 or header[-1] != "target" or header[:-1] != [f"f{j}" for j in range(d)]:
        raise DatasetError(f"{path}: header must be f0..f{{d-1}},target")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != d + 1:
        raise DatasetError(f"{path}: ragged or empty data")
    return Dataset(data[:, :d], data[:, d], n_classes=n_classes)
