"""Graph-attention forecaster with a learned top-K sensor graph.

Every sensor ``i`` owns an embedding ``v_i``. Cosine similarity between
embeddings, restricted to each sensor's candidate set, picks the top-K
edges of a directed graph. One attention layer then aggregates the
linearly transformed lag windows of each sensor's in-neighbourhood, and a
small shared feed-forward head maps ``v_i * z_i`` to the one-step forecast.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .dataio import MultivariateSeries, ScalingStats, WindowSample, invert_scaling, scale_values, window_arrays
from .errors import ConfigError, DataError, NumericalError, ShapeError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "riverad-gdn-checkpoint"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("V", "W", "a", "eta.W1", "eta.b1", "eta.w2", "eta.b2")


@dataclass
class GdnHyperparams:
    w: int = 3
    d: int = 16
    K: int = 5
    leaky_slope: float = 0.2
    hidden_width: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    # "epoch" recomputes the top-K graph after every epoch, "batch" after every optimizer step
    adjacency_update: str = "epoch"
    # candidate_sets[i] lists the sensor indices allowed as neighbours of i; None means all others
    candidate_sets: Optional[list[list[int]]] = None

    def validate(self, n: int) -> None:
        if self.w < 1 or self.d < 1 or self.hidden_width < 1:
            raise ConfigError("w, d and hidden_width must be >= 1")
        if not 1 <= self.K <= n - 1:
            raise ConfigError(f"K must be in [1, n-1] = [1, {n - 1}], got {self.K}")
        if not self.leaky_slope > 0:
            raise ConfigError(f"leaky_slope must be > 0, got {self.leaky_slope}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch_size, max_epochs must be >= 1 and patience >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.adjacency_update not in ("epoch", "batch"):
            raise ConfigError(f"adjacency_update must be 'epoch' or 'batch', got {self.adjacency_update!r}")
        if self.candidate_sets is not None:
            candidate_matrix(n, self.candidate_sets)


def candidate_matrix(n: int, candidate_sets: Optional[Sequence[Sequence[int]]] = None) -> np.ndarray:
    """Boolean (n, n) matrix with ``[i, j]`` true when j may be a neighbour of i."""
    if candidate_sets is None:
        return ~np.eye(n, dtype=bool)
    if len(candidate_sets) != n:
        raise ConfigError(f"need one candidate set per sensor ({n}), got {len(candidate_sets)}")
    cand = np.zeros((n, n), dtype=bool)
    for i, cs in enumerate(candidate_sets):
        for j in cs:
            if not 0 <= j < n:
                raise ConfigError(f"candidate {j} of sensor {i} is out of range")
            if j == i:
                raise ConfigError(f"sensor {i} lists itself as a candidate")
            cand[i, j] = True
    return cand


# ---------------------------------------------------------------------------
# graph construction


def cosine_similarities(V: np.ndarray, candidate_sets=None) -> np.ndarray:
    """``e[j, i] = cos(v_i, v_j)`` when j is a candidate of i, else 0."""
    V = np.asarray(V, dtype=np.float64)
    norms = np.linalg.norm(V, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise NumericalError(f"embedding of sensor {int(bad[0])} has zero norm")
    unit = V / norms[:, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    cand = candidate_matrix(V.shape[0], candidate_sets)
    return np.where(cand.T, cos, 0.0)


def topk_adjacency(e: np.ndarray, K: int, allowed: Optional[np.ndarray] = None) -> np.ndarray:
    """Row ``j`` gets ones at its K largest allowed ``e[j, i]`` (lowest index on ties) and at ``[j, j]``.

    ``allowed`` defaults to every off-diagonal entry. Rows with fewer than K
    allowed entries keep all of them.
    """
    e = np.asarray(e, dtype=np.float64)
    n = e.shape[0]
    if not 1 <= K <= n - 1:
        raise ConfigError(f"K must be in [1, n-1] = [1, {n - 1}], got {K}")
    if allowed is None:
        allowed = ~np.eye(n, dtype=bool)
    else:
        allowed = np.asarray(allowed, dtype=bool) & ~np.eye(n, dtype=bool)
    adj = kernels.topk_mask(e, allowed, K)
    np.fill_diagonal(adj, True)
    return adj.astype(np.int8)


def learned_adjacency(V: np.ndarray, K: int, candidate_sets=None) -> np.ndarray:
    e = cosine_similarities(V, candidate_sets)
    cand = candidate_matrix(V.shape[0], candidate_sets)
    return topk_adjacency(e, K, allowed=cand.T)


# ---------------------------------------------------------------------------
# parameters and forward pass


@dataclass
class GdnParams:
    V: np.ndarray
    W: np.ndarray
    a: np.ndarray
    eta: dict[str, np.ndarray]

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {"V": self.V, "W": self.W, "a": self.a}
        out.update({f"eta.{k}": v for k, v in self.eta.items()})
        return out

    @classmethod
    def from_dict(cls, d) -> "GdnParams":
        eta = {k[4:]: np.asarray(v, dtype=np.float64) for k, v in d.items() if k.startswith("eta.")}
        return cls(np.asarray(d["V"], dtype=np.float64), np.asarray(d["W"], dtype=np.float64),
                   np.asarray(d["a"], dtype=np.float64), eta)

    def copy(self) -> "GdnParams":
        return GdnParams.from_dict({k: v.copy() for k, v in self.as_dict().items()})


def init_params(n: int, hp: GdnHyperparams, rng: np.random.Generator) -> GdnParams:
    d, w, h = hp.d, hp.w, hp.hidden_width

    def uni(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    V = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n, d))
    eta = {"W1": uni(d, (d, h)), "b1": uni(d, (h,)), "w2": uni(h, (h,)), "b2": uni(h, ())}
    return GdnParams(V, uni(w, (d, w)), uni(2 * d, (2 * d,)), eta)


def _finite(node: ad.Node, stage: str) -> ad.Node:
    if not np.all(np.isfinite(node.value)):
        raise NumericalError(f"non-finite values at stage '{stage}'")
    return node


def gdn_graph(p: dict, X: np.ndarray, adjacency: np.ndarray, leaky_slope: float):
    """Record the forward pass for a batch ``X`` (B, n, w) on the tape of ``p``.

    Returns ``(yhat, alpha)`` nodes of shapes (B, n) and (B, n, n), where
    ``alpha[b, i, j]`` is the attention node i pays to in-neighbour j.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeError(f"gdn: input must be (B, n, w), got {X.shape}")
    bsz, n, _ = X.shape
    V = p["V"]
    if V.shape[0] != n or adjacency.shape != (n, n):
        raise ShapeError(f"gdn: {n} sensors in input, embeddings {V.shape}, adjacency {adjacency.shape}")
    d = V.shape[1]
    Wx = ad.matmul(X, ad.transpose(p["W"]))  # (B, n, d)
    G = ad.concat([ad.broadcast_to(V, (bsz, n, d)), Wx], axis=-1)
    s = ad.matmul(G, p["a"])  # a^T g_i
    logits = ad.add(ad.reshape(s, (bsz, n, 1)), ad.reshape(s, (bsz, 1, n)))
    pi = ad.leaky_relu(logits, leaky_slope)
    # node i attends to j when the edge j -> i exists
    alpha = _finite(ad.masked_softmax(pi, np.asarray(adjacency).T > 0), "attention")
    z = ad.relu(ad.matmul(alpha, Wx))
    h = ad.mul(z, V)
    hidden = ad.relu(ad.add(ad.matmul(h, p["eta.W1"]), p["eta.b1"]))
    yhat = _finite(ad.add(ad.matmul(hidden, p["eta.w2"]), p["eta.b2"]), "output")
    return yhat, alpha


def mse_node(yhat: ad.Node, Y: np.ndarray) -> ad.Node:
    """Mean over the batch of the squared Euclidean forecast error."""
    return ad.mul(ad.sum(ad.square(ad.sub(yhat, Y))), 1.0 / yhat.shape[0])


def attention_forward(params: GdnParams, adjacency: np.ndarray, X: np.ndarray, leaky_slope: float = 0.2):
    """Forecast for one lag matrix (n, w) or a batch (B, n, w).

    Returns ``(yhat, alpha)`` with the batch axis dropped for a single input.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    tape = ad.Tape()
    p = {k: tape.param(v, k) for k, v in params.as_dict().items()}
    yhat, alpha = gdn_graph(p, X[None] if single else X, adjacency, leaky_slope)
    if single:
        return yhat.value[0], alpha.value[0]
    return yhat.value, alpha.value


def _stack(windows) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(windows, tuple) and len(windows) == 2:
        return np.asarray(windows[0], dtype=np.float64), np.asarray(windows[1], dtype=np.float64)
    windows = list(windows)
    if not windows:
        return np.zeros((0, 0, 0)), np.zeros((0, 0))
    return np.stack([s.input for s in windows]), np.stack([s.target for s in windows])


def loss(params: GdnParams, adjacency: np.ndarray, batch, leaky_slope: float = 0.2) -> float:
    """Mean squared forecast error over a batch of windows."""
    X, Y = _stack(batch)
    if X.shape[0] == 0:
        raise DataError("loss needs a non-empty batch")
    yhat, _ = attention_forward(params, adjacency, X, leaky_slope)
    return float(np.sum((yhat - Y) ** 2) / X.shape[0])


# ---------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class FittedModel:
    params: GdnParams
    hyperparams: GdnHyperparams
    adjacency: np.ndarray
    sensor_ids: tuple[str, ...] = ()
    scaling: Optional[ScalingStats] = None
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    validation_errors: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.params.V.shape[0]


def train(train_windows, val_windows, hp: GdnHyperparams, sensor_ids: Sequence[str] = (),
          scaling: Optional[ScalingStats] = None) -> FittedModel:
    """Fit the forecaster by mini-batch Adam with early stopping on validation loss.

    The adjacency is recomputed from the embeddings after every epoch and
    used for the next one; the returned model holds the parameters and
    adjacency of the best validation epoch.
    """
    Xtr, Ytr = _stack(train_windows)
    Xva, Yva = _stack(val_windows)
    if Xtr.shape[0] == 0:
        raise DataError("training set is empty")
    if Xva.shape[0] == 0:
        raise DataError("validation set is empty")
    n = Xtr.shape[1]
    if Xtr.shape[2] != hp.w:
        raise ConfigError(f"windows have {Xtr.shape[2]} lags, hyperparams say w={hp.w}")
    hp.validate(n)
    rng = np.random.default_rng(hp.seed)
    params = init_params(n, hp, rng).as_dict()
    opt = Adam(params, hp.learning_rate)
    adjacency = learned_adjacency(params["V"], hp.K, hp.candidate_sets)

    best = (np.inf, None, None, 0)
    history = []
    stale = 0
    n_train = Xtr.shape[0]
    for epoch in range(1, hp.max_epochs + 1):
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            tape = ad.Tape()
            p = {k: tape.param(v, k) for k, v in params.items()}
            # overflow surfaces as a NumericalError from the finiteness checks instead
            with np.errstate(over="ignore", invalid="ignore"):
                yhat, _ = gdn_graph(p, Xtr[idx], adjacency, hp.leaky_slope)
                batch_loss = mse_node(yhat, Ytr[idx])
                if not np.isfinite(batch_loss.value):
                    raise NumericalError(f"training diverged: non-finite loss in epoch {epoch}")
                grads = tape.backward(batch_loss)
            opt.step(params, grads)
            total += float(batch_loss.value) * idx.shape[0]
            if hp.adjacency_update == "batch":
                adjacency = learned_adjacency(params["V"], hp.K, hp.candidate_sets)
        adjacency = learned_adjacency(params["V"], hp.K, hp.candidate_sets)
        current = GdnParams.from_dict(params)
        val_loss = loss(current, adjacency, (Xva, Yva), hp.leaky_slope)
        if not np.isfinite(val_loss):
            raise NumericalError(f"training diverged: non-finite validation loss in epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": total / n_train, "val_loss": val_loss})
        log.debug("epoch %d train %.6f val %.6f", epoch, total / n_train, val_loss)
        if val_loss < best[0]:
            best = (val_loss, current.copy(), adjacency.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale > hp.patience:
                break
    _, best_params, best_adj, best_epoch = best
    return FittedModel(best_params, hp, best_adj, tuple(sensor_ids), scaling, history, best_epoch)


def predict_scaled(model: FittedModel, scaled_values: np.ndarray, batch: int = 1024) -> np.ndarray:
    X, _ = window_arrays(scaled_values, model.hyperparams.w)
    out = np.empty((X.shape[0], X.shape[1]))
    for s in range(0, X.shape[0], batch):
        out[s : s + batch], _ = attention_forward(model.params, model.adjacency, X[s : s + batch],
                                                  model.hyperparams.leaky_slope)
    return out


def predict_series(model: FittedModel, series: MultivariateSeries, scaled: bool = False) -> np.ndarray:
    """One-step forecasts for ticks w+1..T, shape (T-w, n).

    Input is scaled with the model's training statistics; the output is in
    sensor units unless ``scaled`` is true.
    """
    if series.n != model.n:
        raise DataError(f"model has {model.n} sensors, series has {series.n}")
    values = series.values if model.scaling is None else scale_values(series.values, model.scaling)
    pred = predict_scaled(model, values)
    if scaled or model.scaling is None:
        return pred
    return invert_scaling(pred, model.scaling)


# ---------------------------------------------------------------------------
# checkpoint


def _tensor(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _untensor(d) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(model: FittedModel, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sensor_ids": list(model.sensor_ids),
        "hyperparams": asdict(model.hyperparams),
        "scaling": None if model.scaling is None else model.scaling.to_dict(),
        "params": {k: _tensor(v) for k, v in model.params.as_dict().items()},
        "adjacency": _tensor(model.adjacency),
        "best_epoch": model.best_epoch,
        "history": model.history,
        "validation_errors": None if model.validation_errors is None else _tensor(model.validation_errors),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> FittedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a checkpoint ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {doc.get('version')} != supported {CHECKPOINT_VERSION}")
    params = GdnParams.from_dict({k: _untensor(v) for k, v in doc["params"].items()})
    val = doc.get("validation_errors")
    return FittedModel(
        params=params,
        hyperparams=GdnHyperparams(**doc["hyperparams"]),
        adjacency=_untensor(doc["adjacency"]).astype(np.int8),
        sensor_ids=tuple(doc["sensor_ids"]),
        scaling=None if doc["scaling"] is None else ScalingStats.from_dict(doc["scaling"]),
        history=doc["history"],
        best_epoch=doc["best_epoch"],
        validation_errors=None if val is None else _untensor(val),
    )
