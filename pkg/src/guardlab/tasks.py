"""Desk-scale differentiable tasks with exact hand-derived gradients.

Three task kinds stand in for full-scale LM training: an ill-conditioned
quadratic bowl, a one-hidden-layer tanh regression against a synthetic
teacher, and a softmax bigram language model over a small alphabet.
Everything is deterministic in (kind, dims, seed); evaluation sets are
fixed at construction and disjoint from the training stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .rngstream import StreamState, advance, generator

__all__ = [
    "TASK_KINDS",
    "Batch",
    "EvalResult",
    "Task",
    "QuadraticTask",
    "MlpRegressionTask",
    "BigramLmTask",
    "make_task",
    "forward_backward",
    "evaluate",
    "sample_batch",
]

TASK_KINDS = ("quadratic", "mlp_regression", "bigram_lm")


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    outlier_flag: bool = False


@dataclass(frozen=True)
class EvalResult:
    eval_loss: float
    perplexity: float


def _eval_result(loss: float) -> EvalResult:
    loss = float(loss)
    try:
        ppl = math.exp(loss)
    except OverflowError:
        ppl = math.inf
    return EvalResult(eval_loss=loss, perplexity=ppl)


class Task:
    """Immutable after construction; shareable across concurrent runs."""

    kind: str
    seed: int
    n_params: int

    def init_params(self) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grad(self, params: np.ndarray, batch: Batch) -> Tuple[float, np.ndarray]:
        raise NotImplementedError

    def eval_loss(self, params: np.ndarray) -> float:
        raise NotImplementedError

    def draw_batch(self, rng: np.random.Generator, batch_size: int) -> Batch:
        raise NotImplementedError


class QuadraticTask(Task):
    """Ill-conditioned bowl: loss = 0.5 x'Hx - b'x + c, with H diagonal.

    The constant c shifts the minimum to exactly zero. Batches carry the
    (optionally noise-perturbed) linear term b as their target, so target
    injection produces a consistent gradient bias direction.
    """

    kind = "quadratic"

    def __init__(self, dim: int, condition: float, seed: int, noise: float = 0.0):
        if dim < 2:
            raise ValueError("quadratic dim must be >= 2")
        if condition < 1.0:
            raise ValueError("condition number must be >= 1")
        if noise < 0.0:
            raise ValueError("noise must be >= 0")
        self.seed = seed
        self.dim = dim
        self.noise = noise
        self.n_params = dim
        rng = generator(StreamState(seed=seed, stream=100))
        self.h = np.logspace(0.0, math.log10(condition), dim)
        self.b = rng.normal(size=dim)
        self._x0 = rng.normal(size=dim)
        # Shift so the minimum value is exactly 0.
        self.offset = 0.5 * float(np.dot(self.b / self.h, self.b))

    def init_params(self) -> np.ndarray:
        return self._x0.copy()

    def _loss(self, x: np.ndarray, b: np.ndarray) -> float:
        return float(0.5 * np.dot(x, self.h * x) - np.dot(b, x) + self.offset)

    def loss_and_grad(self, params, batch):
        b = batch.targets
        return self._loss(params, b), self.h * params - b

    def eval_loss(self, params) -> float:
        return self._loss(params, self.b)

    def draw_batch(self, rng, batch_size):
        b = self.b
        if self.noise > 0.0:
            b = b + self.noise * rng.normal(size=self.dim)
        return Batch(inputs=np.zeros(0), targets=b.copy())

    def minimizer(self) -> np.ndarray:
        return self.b / self.h


class MlpRegressionTask(Task):
    """One-hidden-layer tanh network fit to a synthetic teacher.

    Student parameters are the flat vector [W1, b1, W2, b2]. Loss is the
    mean squared error over all batch entries. The teacher output bias is
    offset away from zero so scaled-target injection has a consistent
    direction.
    """

    kind = "mlp_regression"

    def __init__(
        self,
        d_in: int,
        d_hidden: int,
        d_out: int,
        seed: int,
        noise: float = 0.02,
        eval_size: int = 128,
    ):
        if min(d_in, d_hidden, d_out) < 1:
            raise ValueError("mlp dims must be >= 1")
        if noise < 0.0:
            raise ValueError("noise must be >= 0")
        self.seed = seed
        self.d_in, self.d_hidden, self.d_out = d_in, d_hidden, d_out
        self.noise = noise
        self.n_params = d_hidden * (d_in + 1) + d_out * (d_hidden + 1)
        rng = generator(StreamState(seed=seed, stream=100))
        self._teacher = rng.normal(size=self.n_params)
        # Push the teacher output bias off zero: injection bias direction.
        w1, b1, w2, b2 = self._unpack(self._teacher)
        b2 += 0.5
        self._teacher = self._pack(w1, b1, w2, b2)
        self._x0 = 0.5 * rng.normal(size=self.n_params)
        x_eval = rng.normal(size=(eval_size, d_in))
        self._eval_x = x_eval
        self._eval_y = self._predict(self._teacher, x_eval)

    def _unpack(self, p: np.ndarray):
        i = 0
        w1 = p[i : i + self.d_hidden * self.d_in].reshape(self.d_hidden, self.d_in)
        i += self.d_hidden * self.d_in
        b1 = p[i : i + self.d_hidden]
        i += self.d_hidden
        w2 = p[i : i + self.d_out * self.d_hidden].reshape(self.d_out, self.d_hidden)
        i += self.d_out * self.d_hidden
        b2 = p[i : i + self.d_out]
        return w1, b1, w2, b2

    def _pack(self, w1, b1, w2, b2) -> np.ndarray:
        return np.concatenate([w1.ravel(), b1.ravel(), w2.ravel(), b2.ravel()])

    def _predict(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(p)
        return np.tanh(x @ w1.T + b1) @ w2.T + b2

    def init_params(self) -> np.ndarray:
        return self._x0.copy()

    def loss_and_grad(self, params, batch):
        x, y = batch.inputs, batch.targets
        w1, b1, w2, b2 = self._unpack(params)
        z = x @ w1.T + b1
        a = np.tanh(z)
        pred = a @ w2.T + b2
        err = pred - y
        loss = float(np.mean(err * err))
        d_pred = 2.0 * err / err.size
        d_w2 = d_pred.T @ a
        d_b2 = d_pred.sum(axis=0)
        d_a = d_pred @ w2
        d_z = d_a * (1.0 - a * a)
        d_w1 = d_z.T @ x
        d_b1 = d_z.sum(axis=0)
        return loss, self._pack(d_w1, d_b1, d_w2, d_b2)

    def eval_loss(self, params) -> float:
        pred = self._predict(params, self._eval_x)
        err = pred - self._eval_y
        return float(np.mean(err * err))

    def draw_batch(self, rng, batch_size):
        x = rng.normal(size=(batch_size, self.d_in))
        y = self._predict(self._teacher, x)
        if self.noise > 0.0:
            y = y + self.noise * rng.normal(size=y.shape)
        return Batch(inputs=x, targets=y)


class BigramLmTask(Task):
    """Softmax next-token model over a small alphabet, synthetic corpus.

    Parameters are the flat A x A logits matrix, initialized to zeros so
    the initial loss is exactly ln(A). Training pairs come from a Markov
    chain sampled from a hidden transition matrix; the eval pairs come from
    a separate chain drawn from the same matrix.
    """

    kind = "bigram_lm"

    def __init__(
        self,
        alphabet: int,
        seed: int,
        corpus_len: int = 4096,
        eval_len: int = 512,
        concentration: float = 2.0,
    ):
        if alphabet < 2:
            raise ValueError("alphabet must be >= 2")
        if concentration <= 0.0:
            raise ValueError("concentration must be > 0")
        self.seed = seed
        self.alphabet = alphabet
        self.n_params = alphabet * alphabet
        rng = generator(StreamState(seed=seed, stream=100))
        # concentration sharpens the hidden transitions, separating the
        # achievable loss floor from the uniform-model loss ln(alphabet).
        true_logits = concentration * rng.normal(size=(alphabet, alphabet))
        probs = _softmax_rows(true_logits)
        self._train_pairs = _markov_pairs(rng, probs, corpus_len)
        self._eval_pairs = _markov_pairs(rng, probs, eval_len)

    def init_params(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def _ce_and_grad(self, params, prev, nxt) -> Tuple[float, np.ndarray]:
        a = self.alphabet
        logits = params.reshape(a, a)
        rows = logits[prev]
        shifted = rows - rows.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        n = len(prev)
        logp = shifted[np.arange(n), nxt] - np.log(exp.sum(axis=1))
        loss = float(-np.mean(logp))
        d_rows = probs.copy()
        d_rows[np.arange(n), nxt] -= 1.0
        d_rows /= n
        grad = np.zeros((a, a))
        np.add.at(grad, prev, d_rows)
        return loss, grad.ravel()

    def loss_and_grad(self, params, batch):
        prev = batch.inputs.astype(int)
        nxt = batch.targets.astype(int)
        return self._ce_and_grad(params, prev, nxt)

    def eval_loss(self, params) -> float:
        prev, nxt = self._eval_pairs
        loss, _ = self._ce_and_grad(params, prev, nxt)
        return loss

    def draw_batch(self, rng, batch_size):
        prev, nxt = self._train_pairs
        idx = rng.integers(0, len(prev), size=batch_size)
        return Batch(inputs=prev[idx], targets=nxt[idx])


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _markov_pairs(
    rng: np.random.Generator, probs: np.ndarray, length: int
) -> Tuple[np.ndarray, np.ndarray]:
    a = probs.shape[0]
    tokens = np.empty(length + 1, dtype=np.int64)
    tokens[0] = rng.integers(0, a)
    for i in range(length):
        tokens[i + 1] = rng.choice(a, p=probs[tokens[i]])
    return tokens[:-1].copy(), tokens[1:].copy()


_DEFAULT_DIMS: Dict[str, Dict] = {
    "quadratic": {"dim": 20, "condition": 1e3, "noise": 0.0},
    "mlp_regression": {"d_in": 5, "d_hidden": 8, "d_out": 2, "noise": 0.02},
    "bigram_lm": {"alphabet": 32, "corpus_len": 4096, "eval_len": 512, "concentration": 2.0},
}


def make_task(kind: str, dims: Optional[Dict] = None, seed: int = 0) -> Task:
    """Deterministic task factory: same (kind, dims, seed) -> identical task."""
    if kind not in TASK_KINDS:
        raise ValueError(f"unknown task kind: {kind!r}")
    merged = dict(_DEFAULT_DIMS[kind])
    for key, value in (dims or {}).items():
        if key not in merged:
            raise ValueError(f"unknown dim {key!r} for task kind {kind!r}")
        merged[key] = value
    if kind == "quadratic":
        return QuadraticTask(
            dim=int(merged["dim"]),
            condition=float(merged["condition"]),
            seed=seed,
            noise=float(merged["noise"]),
        )
    if kind == "mlp_regression":
        return MlpRegressionTask(
            d_in=int(merged["d_in"]),
            d_hidden=int(merged["d_hidden"]),
            d_out=int(merged["d_out"]),
            seed=seed,
            noise=float(merged["noise"]),
        )
    return BigramLmTask(
        alphabet=int(merged["alphabet"]),
        seed=seed,
        corpus_len=int(merged["corpus_len"]),
        eval_len=int(merged["eval_len"]),
        concentration=float(merged["concentration"]),
    )


def forward_backward(task: Task, params: np.ndarray, batch: Batch):
    """Loss and exact analytic gradient on one batch."""
    return task.loss_and_grad(np.asarray(params, dtype=float), batch)


def evaluate(task: Task, params: np.ndarray) -> EvalResult:
    """Mean loss over the fixed eval set; perplexity = exp(loss)."""
    return _eval_result(task.eval_loss(np.asarray(params, dtype=float)))


def sample_batch(
    task: Task, rng_state: StreamState, batch_size: int
) -> Tuple[Batch, StreamState]:
    """Draw one batch from the counter-based stream and advance it."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batch = task.draw_batch(generator(rng_state), batch_size)
    return batch, advance(rng_state)
