"""Desk-scale objectives that feed Euclidean gradients to the optimizer.

Every objective works on a list of kernel banks, one ``(C, D, A, B)`` array
per layer, and returns the loss together with a gradient bank of the same
shape for each layer. Evaluation is a pure function of ``(kernels, batch)``.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ensemble import LayerShape
from .errors import NonFiniteGradient, ShapeError

__all__ = [
    "Objective",
    "Rayleigh",
    "Procrustes",
    "MLP",
    "ConvNet",
    "rayleigh",
    "procrustes",
    "mlp_forward_backward",
    "conv2d_forward_backward",
    "finite_difference_gradient",
    "SyntheticDataset",
    "make_synthetic_dataset",
    "save_dataset",
    "load_dataset",
    "batch_indices",
]


def batch_indices(n: int, batch_size: int, seed, t: int) -> np.ndarray:
    """Indices of mini-batch ``t``: sampled without replacement per epoch.

    Depends only on ``(n, batch_size, seed, t)``; a trailing partial batch is
    dropped.
    """
    batch_size = min(int(batch_size), n)
    per_epoch = n // batch_size
    epoch, k = divmod(int(t), per_epoch)
    perm = np.random.default_rng([int(seed), epoch]).permutation(n)
    return perm[k * batch_size:(k + 1) * batch_size]


class Objective:
    """Base class. Subclasses set ``name``, ``layers`` and ``loss_and_grad``."""

    name = "objective"
    layers: list
    n_samples = None
    # manifold kind each layer uses when a config does not say otherwise
    default_kinds: tuple = ()

    def loss_and_grad(self, kernels, batch=None):
        raise NotImplementedError

    def loss(self, kernels, batch=None) -> float:
        return self.loss_and_grad(kernels, batch)[0]

    def batch(self, t, seed, batch_size):
        if self.n_samples is None or batch_size is None:
            return None
        return batch_indices(self.n_samples, batch_size, seed, t)


class Rayleigh(Objective):
    """``w^T A w`` on the unit sphere; the minimum is ``lambda_min(A)``."""

    name = "rayleigh"
    default_kinds = ("Sphere",)

    def __init__(self, A):
        A = np.array(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"Rayleigh needs a square matrix, got {A.shape}")
        if not np.array_equal(A, A.T):
            warnings.warn("matrix is not symmetric; using (A + A^T)/2", stacklevel=2)
            A = 0.5 * (A + A.T)
        self.A = A
        self.layers = [LayerShape(1, A.shape[0], 1, 1, 1)]

    def loss_and_grad(self, kernels, batch=None):
        w = np.asarray(kernels[0], dtype=np.float64).reshape(-1)
        Aw = self.A @ w
        return float(w @ Aw), [(2.0 * Aw).reshape(self.layers[0].bank_shape)]


class Procrustes(Objective):
    """``||W X - Y||_F^2`` over orthonormal frames ``W`` (``n x p``).

    ``X`` is a fixed ``p x p`` conditioning matrix (identity by default), in
    which case the minimiser is the polar factor of ``Y``.
    """

    name = "procrustes"
    default_kinds = ("Stiefel",)

    def __init__(self, Y, X=None):
        Y = np.array(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] < Y.shape[1]:
            raise ShapeError(f"Procrustes target must be n x p with n >= p, got {Y.shape}")
        n, p = Y.shape
        X = np.eye(p) if X is None else np.array(X, dtype=np.float64)
        if X.shape != (p, p):
            raise ShapeError(f"conditioning matrix must be {p}x{p}, got {X.shape}")
        self.Y, self.X = Y, X
        self.layers = [LayerShape(1, n, p, 1, 1)]

    def loss_and_grad(self, kernels, batch=None):
        W = np.asarray(kernels[0], dtype=np.float64).reshape(self.Y.shape)
        r = W @ self.X - self.Y
        return float(np.sum(r * r)), [(2.0 * r @ self.X.T).reshape(self.layers[0].bank_shape)]


def rayleigh(A) -> Rayleigh:
    return Rayleigh(A)


def procrustes(Y, X=None) -> Procrustes:
    return Procrustes(Y, X)


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(s)
    n = logits.shape[0]
    loss = -float(np.mean(logp[np.arange(n), y]))
    dlogits = ez / s
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteGradient("non-finite activations")


def mlp_forward_backward(params, batch):
    """Two-layer perceptron: ``softmax(tanh(X W1) W2)`` with cross-entropy.

    ``params = [W1 (d_in x hidden), W2 (hidden x K)]``, ``batch = (X, y)``.
    Returns ``(loss, [dW1, dW2])``.
    """
    W1, W2 = (np.asarray(p, dtype=np.float64) for p in params)
    X, y = batch
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    h = np.tanh(X @ W1)
    logits = h @ W2
    _check_finite(h, logits)
    loss, dlogits = _softmax_xent(logits, np.asarray(y))
    dW2 = h.T @ dlogits
    dpre = (dlogits @ W2.T) * (1.0 - h * h)
    dW1 = X.T @ dpre
    return loss, [dW1, dW2]


def _patches(X, A, B):
    """``(N*Ho*Wo, C*A*B)`` matrix of valid-mode windows of ``X (N, C, H, W)``."""
    N, C, H, W = X.shape
    win = sliding_window_view(X, (A, B), axis=(2, 3))  # N, C, Ho, Wo, A, B
    Ho, Wo = H - A + 1, W - B + 1
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(N * Ho * Wo, C * A * B), Ho, Wo


def _conv_core(bank, V, patches, Ho, Wo, y):
    C, D, A, B = bank.shape
    n = len(y)
    Wm = bank.transpose(0, 2, 3, 1).reshape(C * A * B, D)
    Z = patches @ Wm  # (n*Ho*Wo, D)
    R = np.maximum(Z, 0.0)
    F = R.reshape(n, Ho * Wo, D).mean(axis=1)
    logits = F @ V
    _check_finite(Z, logits)
    loss, dlogits = _softmax_xent(logits, y)
    dV = F.T @ dlogits
    dF = dlogits @ V.T
    dZ = np.repeat(dF / (Ho * Wo), Ho * Wo, axis=0) * (Z > 0)
    dWm = patches.T @ dZ
    dbank = dWm.reshape(C, A, B, D).transpose(0, 3, 1, 2)
    return loss, dbank, dV, logits


def conv2d_forward_backward(params, batch):
    """One valid, stride-1 convolution layer, ReLU, global average pool, linear.

    ``params = [bank (C, D, A, B), V (D, K)]``; output map ``d`` sums the
    correlations of input channel ``c`` with kernel ``bank[c, d]`` over all
    ``c``. ``batch = (X (N, C, H, W), y)``. Returns ``(loss, [dbank, dV])``.
    """
    bank = np.asarray(params[0], dtype=np.float64)
    V = np.asarray(params[1], dtype=np.float64)
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != bank.shape[0]:
        raise ShapeError(f"input has {X.shape[1]} channels, kernels expect {bank.shape[0]}")
    patches, Ho, Wo = _patches(X, bank.shape[2], bank.shape[3])
    loss, dbank, dV, _ = _conv_core(bank, V, patches, Ho, Wo, np.asarray(y))
    return loss, [dbank, dV]


def conv_features(bank, X):
    """Pooled ReLU feature maps ``(N, D)``; used for inspection and tests."""
    bank = np.asarray(bank, dtype=np.float64)
    C, D, A, B = bank.shape
    patches, Ho, Wo = _patches(np.asarray(X, dtype=np.float64), A, B)
    Z = patches @ bank.transpose(0, 2, 3, 1).reshape(C * A * B, D)
    return np.maximum(Z, 0.0).reshape(len(X), Ho * Wo, D).mean(axis=1)


class _Classifier(Objective):
    def __init__(self, dataset):
        self.dataset = dataset
        self.n_samples = len(dataset.labels)

    def _batch(self, batch):
        if batch is None:
            return slice(None)
        return np.asarray(batch)

    def accuracy(self, kernels) -> float:
        logits = self.logits(kernels)
        return float(np.mean(np.argmax(logits, axis=1) == self.dataset.labels))


class MLP(_Classifier):
    """Tanh MLP over flattened images. Layers are ``(d_in x hidden)`` and ``(hidden x K)``."""

    name = "mlp"
    default_kinds = ("Euclidean", "Euclidean")

    def __init__(self, dataset, hidden=16):
        super().__init__(dataset)
        self.X = dataset.images.reshape(len(dataset.labels), -1)
        d_in, K = self.X.shape[1], dataset.classes
        self.layers = [LayerShape(1, d_in, hidden, 1, 1), LayerShape(2, hidden, K, 1, 1)]

    def loss_and_grad(self, kernels, batch=None):
        sel = self._batch(batch)
        params = [np.asarray(k).reshape(s.kernel_shape) for k, s in zip(kernels, self.layers)]
        loss, grads = mlp_forward_backward(params, (self.X[sel], self.dataset.labels[sel]))
        return loss, [g.reshape(s.bank_shape) for g, s in zip(grads, self.layers)]

    def logits(self, kernels):
        W1, W2 = (np.asarray(k).reshape(s.kernel_shape) for k, s in zip(kernels, self.layers))
        return np.tanh(self.X @ W1) @ W2


class ConvNet(_Classifier):
    """Single convolution layer classifier.

    Layer 1 is the ``(C, D, A, B)`` kernel bank, layer 2 the ``D x K``
    linear classifier stored as a single kernel.
    """

    name = "conv"
    default_kinds = ("Euclidean", "Euclidean")

    def __init__(self, dataset, out_channels=4, kernel=3):
        super().__init__(dataset)
        X = dataset.images
        C = X.shape[1]
        self.layers = [
            LayerShape(1, kernel, kernel, C, out_channels),
            LayerShape(2, out_channels, dataset.classes, 1, 1),
        ]
        self._patches, self._Ho, self._Wo = _patches(X, kernel, kernel)
        self._rows = self._patches.reshape(len(X), self._Ho * self._Wo, -1)

    def loss_and_grad(self, kernels, batch=None):
        bank = np.asarray(kernels[0], dtype=np.float64)
        V = np.asarray(kernels[1], dtype=np.float64).reshape(self.layers[1].kernel_shape)
        if batch is None:
            patches, y = self._patches, self.dataset.labels
        else:
            idx = np.asarray(batch)
            patches = self._rows[idx].reshape(-1, self._patches.shape[1])
            y = self.dataset.labels[idx]
        loss, dbank, dV, _ = _conv_core(bank, V, patches, self._Ho, self._Wo, y)
        return loss, [dbank, dV.reshape(self.layers[1].bank_shape)]

    def logits(self, kernels):
        V = np.asarray(kernels[1]).reshape(self.layers[1].kernel_shape)
        return conv_features(kernels[0], self.dataset.images) @ V


def finite_difference_gradient(objective, params, h=1e-5):
    """Central-difference gradient of a scalar function of a list of arrays.

    ``objective`` is a callable ``f(params) -> float`` or anything with a
    ``loss(params)`` method.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    f = objective if callable(objective) else objective.loss
    work = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for p in work:
        g = np.empty_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            x0 = flat[i]
            flat[i] = x0 + h
            fp = f(work)
            flat[i] = x0 - h
            fm = f(work)
            flat[i] = x0
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


@dataclass(frozen=True)
class SyntheticDataset:
    images: np.ndarray  # (N, C, H, W) float64 holding float32-representable values
    labels: np.ndarray  # (N,) int
    classes: int
    per_class: int
    seed: int = 0

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return (isinstance(other, SyntheticDataset)
                and self.classes == other.classes and self.per_class == other.per_class
                and np.array_equal(self.images, other.images)
                and np.array_equal(self.labels, other.labels))


def make_synthetic_dataset(classes: int, per_class: int, seed=0, size=8, channels=2,
                           noise=1.0) -> SyntheticDataset:
    """Class-balanced toy images.

    Each class has its own grating orientation and frequency, rendered with a
    random phase, plus a Gaussian blob at a jittered class-dependent position
    and pixel noise. Channels share the grating with a phase offset.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    N = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    images = np.empty((N, channels, size, size))
    for i, k in enumerate(labels):
        theta = np.pi * k / classes
        freq = 1.5 + (k % 2)
        kx, ky = np.cos(theta) * freq, np.sin(theta) * freq
        phase = rng.uniform(0, 2 * np.pi)
        cx = size / 2 + 2.0 * np.cos(2 * np.pi * k / classes) + rng.normal(0, 0.5)
        cy = size / 2 + 2.0 * np.sin(2 * np.pi * k / classes) + rng.normal(0, 0.5)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 4.0)
        for c in range(channels):
            grating = np.cos(2 * np.pi * (kx * xx + ky * yy) / size + phase + c * np.pi / 2)
            images[i, c] = grating + blob + noise * rng.standard_normal((size, size))
    order = rng.permutation(N)
    images = images[order].astype(np.float32).astype(np.float64)
    return SyntheticDataset(images, labels[order].astype(np.int64), classes, per_class, seed)


_MAGIC = b"PEMD"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")


def save_dataset(ds: SyntheticDataset, path):
    """Binary container: magic, version, K, n, C, H, W (u32), f32 images, u16 labels."""
    N, C, H, W = ds.images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, ds.classes, ds.per_class, C, H, W))
        fh.write(ds.images.astype("<f4").tobytes())
        fh.write(ds.labels.astype("<u2").tobytes())


def load_dataset(path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("dataset file is truncated")
    magic, version, K, n, C, H, W = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a PEMD dataset file")
    if version != _VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    N = K * n
    n_img = N * C * H * W
    expected = _HEADER.size + 4 * n_img + 2 * N
    if len(raw) != expected:
        raise ValueError(f"dataset file has {len(raw)} bytes, expected {expected}")
    images = np.frombuffer(raw, "<f4", n_img, _HEADER.size).reshape(N, C, H, W)
    labels = np.frombuffer(raw, "<u2", N, _HEADER.size + 4 * n_img)
    return SyntheticDataset(images.astype(np.float64), labels.astype(np.int64), K, n)
