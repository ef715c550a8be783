"""One-hidden-layer sigmoid networks and the three constrained training problems.

Parameters are one flat vector laid out as

    W1 (input_dim x hidden, row-major), b1 (hidden),
    W2 (heads x hidden, row-major),     b2 (heads)

and head ``h`` predicts  W2[h] . sigmoid(W1' theta + b1) + b2[h].
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..problem import InvalidArgument, SampleBatch, StochasticProblem, SubproblemData
from .idx import IMAGES_MAGIC, LABELS_MAGIC, center_crop, companion_labels_path, read_idx

INPUT_DIMS = (100, 400, 784)
HIDDEN_SIZES = (50, 100, 200, 400)
EXPERIMENTS = ("ellipsoid", "validation", "multitask")
LOSSES = ("squared", "signed")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class Layout:
    input_dim: int
    hidden: int
    heads: int = 1

    @property
    def size(self) -> int:
        return self.input_dim * self.hidden + self.hidden + self.heads * self.hidden + self.heads

    def unpack(self, params: np.ndarray):
        """Views (W1, b1, W2, b2) into ``params``."""
        I, H, K = self.input_dim, self.hidden, self.heads
        if params.shape != (self.size,):
            raise InvalidArgument(f"parameter vector has shape {params.shape}, layout needs ({self.size},)")
        o1 = I * H
        o2 = o1 + H
        o3 = o2 + K * H
        return (params[:o1].reshape(I, H), params[o1:o2], params[o2:o3].reshape(K, H), params[o3:])

    def weight_mask(self) -> np.ndarray:
        """True on weight entries, False on biases."""
        mask = np.zeros(self.size, dtype=bool)
        W1, b1, W2, b2 = self.unpack(mask)
        W1[...] = True
        W2[...] = True
        return mask


def _loss_and_residual(pred, y, loss):
    r = pred - y
    if loss == "squared":
        return 0.5 * r * r, r
    if loss == "signed":
        return 0.5 * r, np.full_like(r, 0.5)
    raise InvalidArgument(f"unknown loss {loss!r}")


def batch_loss_grad(params, X, y, head: int, layout: Layout, loss: str = "squared",
                    per_sample: bool = True):
    """Losses (B,) and gradients for a batch of inputs.

    Gradients are per sample (B, n) when ``per_sample`` else their mean (n,).
    """
    W1, b1, W2, b2 = layout.unpack(params)
    X = np.atleast_2d(X)
    if X.shape[1] != layout.input_dim:
        raise InvalidArgument(f"input has {X.shape[1]} features, layout expects {layout.input_dim}")
    if not 0 <= head < layout.heads:
        raise InvalidArgument(f"head {head} out of range for {layout.heads} head(s)")
    Hs = sigmoid(X @ W1 + b1)
    pred = Hs @ W2[head] + b2[head]
    losses, dpred = _loss_and_residual(pred, np.asarray(y, dtype=float), loss)
    dZ = (dpred[:, None] * W2[head][None, :]) * Hs * (1.0 - Hs)
    B = X.shape[0]
    if per_sample:
        grads = np.zeros((B, layout.size))
        gW1, gb1, gW2, gb2 = _unpack_batch(grads, layout)
        gW1[...] = X[:, :, None] * dZ[:, None, :]
        gb1[...] = dZ
        gW2[:, head, :] = dpred[:, None] * Hs
        gb2[:, head] = dpred
        return losses, grads
    grad = np.zeros(layout.size)
    gW1, gb1, gW2, gb2 = layout.unpack(grad)
    gW1[...] = X.T @ dZ / B
    gb1[...] = dZ.mean(axis=0)
    gW2[head] = Hs.T @ dpred / B
    gb2[head] = dpred.mean()
    return losses, grad


def _unpack_batch(grads, layout: Layout):
    I, H, K = layout.input_dim, layout.hidden, layout.heads
    B = grads.shape[0]
    o1 = I * H
    o2 = o1 + H
    o3 = o2 + K * H
    return (grads[:, :o1].reshape(B, I, H), grads[:, o1:o2], grads[:, o2:o3].reshape(B, K, H),
            grads[:, o3:])


def nn_loss_grad(params, input, label: float, head: int, layout: Layout, loss: str = "squared"):
    """Loss and exact gradient for one (input, label) pair on one output head."""
    params = np.asarray(params, dtype=float)
    losses, grads = batch_loss_grad(params, np.asarray(input, dtype=float)[None, :], [label],
                                    head, layout, loss)
    return float(losses[0]), grads[0]


# ---------------------------------------------------------------- data


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, input_dim) in [0, 1]
    labels: Optional[np.ndarray]  # (N,) digit labels
    split: np.ndarray  # (N,) "train" | "validation"

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.inputs):
            raise InvalidArgument("inputs and labels have different row counts")
        if len(self.split) != len(self.inputs):
            raise InvalidArgument("inputs and split tags have different row counts")
        if not np.all(np.isfinite(self.inputs)):
            raise InvalidArgument("dataset contains non-finite inputs")

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def part(self, tag: str) -> "Dataset":
        keep = self.split == tag
        return Dataset(self.inputs[keep], None if self.labels is None else self.labels[keep],
                       self.split[keep])


def load_idx(path, labels_path=None, input_dim: Optional[int] = None,
             validation_fraction: float = 0.0) -> Dataset:
    """Load IDX images (and labels from the companion file when present)."""
    path = Path(path)
    images = read_idx(path, IMAGES_MAGIC)
    if images.ndim != 3:
        raise InvalidArgument(f"{path}: expected 3-d image array, got {images.ndim}-d")
    pixels = images.shape[1] * images.shape[2]
    flat = center_crop(images, input_dim or pixels).astype(float) / 255.0
    if labels_path is None:
        labels_path = companion_labels_path(path)
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, LABELS_MAGIC).astype(int)
        if labels.shape != (images.shape[0],):
            raise InvalidArgument(f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images")
    n_val = int(round(validation_fraction * len(flat)))
    split = np.array(["train"] * (len(flat) - n_val) + ["validation"] * n_val)
    return Dataset(flat, labels, split)


def synthetic_blobs(input_dim: int, rows: int = 4000, classes: int = 10, seed: int = 0,
                    spread: float = 0.1, validation_fraction: float = 0.2) -> Dataset:
    """Gaussian clusters in [0, 1]^input_dim with one digit-like label per cluster."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, size=(classes, input_dim))
    labels = rng.integers(0, classes, size=rows)
    inputs = np.clip(centers[labels] + spread * rng.normal(size=(rows, input_dim)), 0.0, 1.0)
    n_val = int(round(validation_fraction * rows))
    split = np.array(["train"] * (rows - n_val) + ["validation"] * n_val)
    return Dataset(inputs, labels, split)


# ---------------------------------------------------------------- problems


@dataclass(frozen=True)
class NetSpec:
    input_dim: int = 100
    hidden: int = 50
    experiment: str = "ellipsoid"
    a_w: float = 2.0
    a_b: float = 1.0
    c_level: float = 5.0
    digit: int = 2
    constraint_digit: int = 4
    threshold: Optional[float] = None  # right-hand side of loss constraints
    loss: str = "squared"
    eval_rows: int = 1000
    init_scale: float = 1.0

    @property
    def heads(self) -> int:
        return 2 if self.experiment == "multitask" else 1

    @property
    def layout(self) -> Layout:
        return Layout(self.input_dim, self.hidden, self.heads)

    def validate(self) -> None:
        if self.input_dim not in INPUT_DIMS:
            raise InvalidArgument(f"input_dim must be one of {INPUT_DIMS}, got {self.input_dim}")
        if self.hidden not in HIDDEN_SIZES:
            raise InvalidArgument(f"hidden must be one of {HIDDEN_SIZES}, got {self.hidden}")
        if self.experiment not in EXPERIMENTS:
            raise InvalidArgument(f"experiment must be one of {EXPERIMENTS}")
        if self.loss not in LOSSES:
            raise InvalidArgument(f"loss must be one of {LOSSES}")
        if self.experiment == "ellipsoid" and min(self.a_w, self.a_b, self.c_level) <= 0:
            raise InvalidArgument("ellipsoid needs positive a_w, a_b and c_level")
        if self.experiment in ("validation", "multitask") and self.threshold is None:
            raise InvalidArgument(f"experiment {self.experiment!r} requires a loss threshold")


class NeuralProblem(StochasticProblem):
    num_constraints = 1

    def __init__(self, spec: NetSpec, data: Dataset):
        spec.validate()
        if data.input_dim != spec.input_dim:
            raise InvalidArgument(f"dataset has {data.input_dim} inputs but the network expects {spec.input_dim}")
        if data.labels is None:
            raise InvalidArgument("training needs labelled data")
        self.spec = spec
        self.layout = spec.layout
        self.dim = self.layout.size
        train, val = data.part("train"), data.part("validation")
        if len(train.inputs) == 0:
            raise InvalidArgument("dataset has no training rows")
        if spec.experiment == "validation" and len(val.inputs) == 0:
            raise InvalidArgument("validation experiment needs validation rows")
        self.X = train.inputs
        self.y = (train.labels == spec.digit).astype(float)
        self.y_con = (train.labels == spec.constraint_digit).astype(float)
        self.Xv = val.inputs
        self.yv = (val.labels == spec.digit).astype(float) if len(val.inputs) else np.zeros(0)
        mask = self.layout.weight_mask()
        self._ell_scale = np.where(mask, 1.0 / spec.a_w ** 2, 1.0 / spec.a_b ** 2)

    def ellipsoid(self, params) -> tuple[float, np.ndarray]:
        """||W||^2/a_w^2 + ||b||^2/a_b^2 - c and its gradient."""
        value = float(params @ (self._ell_scale * params)) - self.spec.c_level
        return value, 2.0 * self._ell_scale * params

    def initial_point(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        x = np.zeros(self.dim)
        W1, b1, W2, b2 = self.layout.unpack(x)
        s = self.spec.init_scale
        W1[...] = rng.uniform(-s, s, W1.shape) / np.sqrt(self.spec.input_dim)
        W2[...] = rng.uniform(-s, s, W2.shape) / np.sqrt(self.spec.hidden)
        return x

    def _draw_rows(self, count, rng):
        rows = rng.integers(0, len(self.X), size=count)
        vrows = rng.integers(0, len(self.Xv), size=count) if self.spec.experiment == "validation" else None
        return rows, vrows

    def _fields(self, x, rows, vrows, per_sample):
        spec, lay = self.spec, self.layout
        f, g = batch_loss_grad(x, self.X[rows], self.y[rows], 0, lay, spec.loss, per_sample)
        if spec.experiment == "ellipsoid":
            cv, cg = self.ellipsoid(x)
            c = np.full(len(rows), cv)
        elif spec.experiment == "validation":
            c, cg = batch_loss_grad(x, self.Xv[vrows], self.yv[vrows], 0, lay, spec.loss, per_sample)
            c = c - spec.threshold
        else:
            c, cg = batch_loss_grad(x, self.X[rows], self.y_con[rows], 1, lay, spec.loss, per_sample)
            c = c - spec.threshold
        return f, g, c, cg

    def _sample(self, x, count, rng):
        rows, vrows = self._draw_rows(count, rng)
        f, g, c, cg = self._fields(x, rows, vrows, True)
        J = np.broadcast_to(cg, (count, self.dim)) if cg.ndim == 1 else cg
        return SampleBatch(f, g, c[:, None], np.array(J)[:, None, :], rows)

    def sample_mean(self, x, count, rng) -> SubproblemData:
        rows, vrows = self._draw_rows(count, rng)
        f, g, c, cg = self._fields(x, rows, vrows, False)
        return SubproblemData(g, np.array([c.mean()]), cg[None, :])

    def split_means(self, x, count, rng):
        rows, vrows = self._draw_rows(count, rng)
        odd = (rows[0::2], None if vrows is None else vrows[0::2])
        even = (rows[1::2], None if vrows is None else vrows[1::2])
        parts = []
        for r, v in (odd, even):
            f, g, c, cg = self._fields(x, r, v, False)
            parts.append(SubproblemData(g, np.array([c.mean()]), cg[None, :]))
        o, e = parts
        pooled = SubproblemData(0.5 * (o.g + e.g), 0.5 * (o.c + e.c), 0.5 * (o.J + e.J))
        return pooled, o, e

    def evaluate(self, x):
        spec, lay, k = self.spec, self.layout, self.spec.eval_rows
        f, _ = batch_loss_grad(x, self.X[:k], self.y[:k], 0, lay, spec.loss, False)
        if spec.experiment == "ellipsoid":
            c = self.ellipsoid(x)[0]
        elif spec.experiment == "validation":
            c = float(batch_loss_grad(x, self.Xv[:k], self.yv[:k], 0, lay, spec.loss, False)[0].mean()) - spec.threshold
        else:
            c = float(batch_loss_grad(x, self.X[:k], self.y_con[:k], 1, lay, spec.loss, False)[0].mean()) - spec.threshold
        return float(f.mean()), np.array([c])
