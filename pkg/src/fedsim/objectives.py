"""Client objectives with gradient access.

Two families:

* ``QuadraticObjective`` — client i holds F_i(x) = 0.5 ||x - u_i||^2 with
  exact gradient x - u_i.  The global optimum is the mean of the targets,
  which makes averaging bias directly measurable.

* ``SoftmaxObjective`` — per-client softmax regression (60 features, 10
  classes, 610 flattened parameters) over a heterogeneous synthetic
  dataset: client i labels its features with its own ground-truth linear
  model, whose weights are drawn around a client-specific level, and draws
  features around a client-specific mean with decaying per-coordinate
  variance.  ``alpha`` scales model heterogeneity across clients and
  ``beta`` scales feature heterogeneity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .streams import SeededStream

N_FEATURES = 60
N_CLASSES = 10
PARAM_DIM = N_CLASSES * N_FEATURES + N_CLASSES

# Per-coordinate feature variances decay polynomially in the coordinate.
_FEATURE_VAR = (np.arange(1, N_FEATURES + 1, dtype=float)) ** -1.2
_FEATURE_STD = np.sqrt(_FEATURE_VAR)

DATASET_MAGIC = "synthetic-v1"


class QuadraticObjective:
    """Mean of per-client squared distances to fixed targets."""

    kind = "quadratic"
    fleet_vectorized = True
    needs_batches = False

    def __init__(self, targets: np.ndarray):
        targets = np.asarray(targets, dtype=float)
        if targets.ndim != 2:
            raise ConfigError("targets must be a d x m matrix (one column per client)")
        if not np.all(np.isfinite(targets)):
            raise ConfigError("targets must be finite")
        self.targets = targets
        self.dim, self.num_clients = targets.shape

    def gradient(self, i: int, x: np.ndarray, batch=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ConfigError(f"model vector must have dimension {self.dim}")
        return x - self.targets[:, i]

    def gradient_fleet(self, X: np.ndarray, batches=None, out=None) -> np.ndarray:
        return np.subtract(X, self.targets, out=out)

    def global_optimum(self) -> np.ndarray:
        return self.targets.mean(axis=1)

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return x - self.global_optimum()

    def train_loss(self, x: np.ndarray) -> float:
        diffs = x[:, None] - self.targets
        return float(0.5 * (diffs * diffs).sum() / self.num_clients)

    def test_accuracy(self, x: np.ndarray) -> Optional[float]:
        return None


def quad_gradient(obj: QuadraticObjective, i: int, x: np.ndarray) -> np.ndarray:
    """Exact local gradient x - u_i."""
    return obj.gradient(i, x)


def quad_global_optimum(obj: QuadraticObjective) -> np.ndarray:
    """Column mean of the targets — the unique global minimizer."""
    return obj.global_optimum()


@dataclass(frozen=True)
class SoftmaxParams:
    """Weight matrix plus bias, flattened to one 610-vector for the engines."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.shape != (N_CLASSES, N_FEATURES):
            raise ConfigError(f"weight must be {N_CLASSES}x{N_FEATURES}")
        if self.bias.shape != (N_CLASSES,):
            raise ConfigError(f"bias must have length {N_CLASSES}")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    @staticmethod
    def from_vector(vec: np.ndarray) -> "SoftmaxParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (PARAM_DIM,):
            raise ConfigError(f"parameter vector must have dimension {PARAM_DIM}")
        w = vec[: N_CLASSES * N_FEATURES].reshape(N_CLASSES, N_FEATURES)
        return SoftmaxParams(weight=w.copy(), bias=vec[N_CLASSES * N_FEATURES:].copy())


def _logits(vec: np.ndarray, features: np.ndarray) -> np.ndarray:
    w = vec[: N_CLASSES * N_FEATURES].reshape(N_CLASSES, N_FEATURES)
    b = vec[N_CLASSES * N_FEATURES:]
    return features @ w.T + b


def softmax_loss_grad(params, features: np.ndarray,
                      labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact flattened gradient.

    Logits are stabilized by max subtraction, so overflow cannot produce
    non-finite intermediates.
    """
    vec = params.flatten() if isinstance(params, SoftmaxParams) else np.asarray(params, float)
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[1] != N_FEATURES:
        raise ConfigError(f"features must be n x {N_FEATURES}")
    n = features.shape[0]
    if n == 0:
        raise ConfigError("batch must be non-empty")
    z = _logits(vec, features)
    z -= z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    denom = expz.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    loss = float(-logp[np.arange(n), labels].mean())
    delta = expz / denom
    delta[np.arange(n), labels] -= 1.0
    grad_w = delta.T @ features / n
    grad_b = delta.mean(axis=0)
    return loss, np.concatenate([grad_w.ravel(), grad_b])


@dataclass
class ClientData:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class FederatedDataset:
    """Per-client train/test partitions plus generation metadata."""

    clients: List[ClientData]
    alpha: float
    beta: float
    seed: int

    @property
    def num_clients(self) -> int:
        return len(self.clients)


def generate_synthetic(alpha: float, beta: float, m: int, samples_per_client: int,
                       stream: SeededStream, *, model_std: float = 1.0,
                       count_mode: str = "fixed") -> FederatedDataset:
    """Generate the heterogeneous softmax-regression dataset.

    Per client i (all draws from the client's own sub-stream, in a fixed
    order): a scalar model level u_i ~ N(0, alpha); ground-truth weights
    and bias with entries ~ N(u_i, model_std^2); a scalar feature level
    B_i ~ N(0, beta); a feature mean vector with entries ~ N(B_i, 1);
    features ~ N(mean, diag(j^-1.2)); labels by argmax of the true model's
    logits.  ``model_std=0`` is a degenerate test hook that collapses all
    clients onto one labeling model when alpha is also 0.

    ``count_mode="lognormal"`` replaces the fixed per-client count with
    round(lognormal(4, 0.5)), floored at 2.
    """
    if m < 1:
        raise ConfigError("client count must be >= 1")
    if samples_per_client < 2:
        raise ConfigError("need at least 2 samples per client")
    if alpha < 0 or beta < 0:
        raise ConfigError("alpha and beta are variances and must be >= 0")
    if count_mode not in ("fixed", "lognormal"):
        raise ConfigError(f"unknown count_mode {count_mode!r}")

    clients = []
    for i in range(m):
        gen = stream.child("client", i).generator()
        if count_mode == "lognormal":
            n_i = max(2, int(round(gen.lognormal(4.0, 0.5))))
        else:
            n_i = samples_per_client
        u_i = gen.normal(0.0, np.sqrt(alpha))
        w_true = gen.normal(u_i, model_std, size=(N_CLASSES, N_FEATURES))
        b_true = gen.normal(u_i, model_std, size=N_CLASSES)
        level = gen.normal(0.0, np.sqrt(beta))
        mean_vec = gen.normal(level, 1.0, size=N_FEATURES)
        features = gen.normal(mean_vec, _FEATURE_STD, size=(n_i, N_FEATURES))
        labels = np.argmax(features @ w_true.T + b_true, axis=1).astype(np.int64)

        split_gen = stream.child("split", i).generator()
        order = split_gen.permutation(n_i)
        n_test = max(1, int(np.floor(0.2 * n_i)))
        test_idx = order[:n_test]
        train_idx = order[n_test:]
        clients.append(ClientData(
            train_x=features[train_idx], train_y=labels[train_idx],
            test_x=features[test_idx], test_y=labels[test_idx]))
    return FederatedDataset(clients=clients, alpha=alpha, beta=beta,
                            seed=stream.root_seed)


def save_dataset_csv(path, dataset: FederatedDataset) -> None:
    """One header line holding the generation metadata, then per-sample rows."""
    def fmt(x: float) -> str:
        return f"{x:.17g}"

    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join([DATASET_MAGIC, fmt(dataset.alpha), fmt(dataset.beta),
                           str(dataset.num_clients), str(dataset.seed)]) + "\n")
        for cid, cl in enumerate(dataset.clients):
            for split, xs, ys in (("train", cl.train_x, cl.train_y),
                                  ("test", cl.test_x, cl.test_y)):
                for x, y in zip(xs, ys):
                    fields = [str(cid), split, str(int(y))]
                    fields.extend(fmt(v) for v in x)
                    fh.write(",".join(fields) + "\n")


def load_dataset_csv(path) -> FederatedDataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if len(header) != 5 or header[0] != DATASET_MAGIC:
            raise ConfigError(f"not a {DATASET_MAGIC} dataset file")
        alpha, beta = float(header[1]), float(header[2])
        m, seed = int(header[3]), int(header[4])
        rows = {("train", i): ([], []) for i in range(m)}
        rows.update({("test", i): ([], []) for i in range(m)})
        for line in fh:
            rec = line.rstrip("\n").split(",")
            cid, split, label = int(rec[0]), rec[1], int(rec[2])
            feats = [float(v) for v in rec[3:]]
            if len(feats) != N_FEATURES:
                raise ConfigError("bad feature count in dataset row")
            xs, ys = rows[(split, cid)]
            xs.append(feats)
            ys.append(label)
    clients = []
    for i in range(m):
        tx, ty = rows[("train", i)]
        ex, ey = rows[("test", i)]
        if not tx or not ex:
            raise ConfigError(f"client {i} is missing a train or test partition")
        clients.append(ClientData(
            train_x=np.array(tx), train_y=np.array(ty, dtype=np.int64),
            test_x=np.array(ex), test_y=np.array(ey, dtype=np.int64)))
    return FederatedDataset(clients=clients, alpha=alpha, beta=beta, seed=seed)


class MiniBatcher:
    """Without-replacement mini-batches, reshuffled each epoch.

    A tail shorter than one batch is dropped at the reshuffle; if the
    client holds fewer samples than the batch size, every batch is the
    full set in shuffled order.
    """

    def __init__(self, n: int, batch_size: int, stream: SeededStream):
        if n < 1 or batch_size < 1:
            raise ConfigError("batcher needs n >= 1 and batch_size >= 1")
        self.n = n
        self.batch_size = min(batch_size, n)
        self._gen = stream.generator()
        self._order = self._gen.permutation(self.n)
        self._pos = 0

    def next_indices(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._order = self._gen.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return out


class SoftmaxObjective:
    """Softmax regression over a federated dataset, one loss per client."""

    kind = "softmax"
    fleet_vectorized = False
    needs_batches = True

    def __init__(self, dataset: FederatedDataset):
        self.dataset = dataset
        self.dim = PARAM_DIM
        self.num_clients = dataset.num_clients

    def gradient(self, i: int, x: np.ndarray, batch) -> np.ndarray:
        features, labels = batch
        _, grad = softmax_loss_grad(x, features, labels)
        return grad

    def make_batchers(self, batch_size: int, stream: SeededStream) -> List[MiniBatcher]:
        return [MiniBatcher(len(cl.train_y), batch_size, stream.child("client", i))
                for i, cl in enumerate(self.dataset.clients)]

    def batch_for(self, i: int, batcher: MiniBatcher):
        idx = batcher.next_indices()
        cl = self.dataset.clients[i]
        return cl.train_x[idx], cl.train_y[idx]

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros(PARAM_DIM)
        for cl in self.dataset.clients:
            _, grad = softmax_loss_grad(x, cl.train_x, cl.train_y)
            total += grad
        return total / self.num_clients

    def train_loss(self, x: np.ndarray) -> float:
        losses = [softmax_loss_grad(x, cl.train_x, cl.train_y)[0]
                  for cl in self.dataset.clients]
        return float(np.mean(losses))

    def test_accuracy(self, x: np.ndarray) -> float:
        accs = []
        for cl in self.dataset.clients:
            pred = np.argmax(_logits(np.asarray(x, float), cl.test_x), axis=1)
            accs.append(float((pred == cl.test_y).mean()))
        return float(np.mean(accs))


def global_gradient_norm(objective, x_bar: np.ndarray) -> float:
    """Euclidean norm of the uniform average of per-client gradients at x_bar,
    using exact gradients (quadratic) or full train sets (softmax)."""
    return float(np.linalg.norm(objective.global_gradient(np.asarray(x_bar, float))))
