"""Logistic-regression detector over lookback-ratio features.

Objective: weighted mean log-loss + l2_lambda * ||w||^2 / 2, bias unregularized,
minimized by damped Newton with an Armijo backtracking line search.

Training first collapses identical (features, label) rows into unique rows
with weights count / n. Duplicating a dataset therefore leaves every float
the optimizer sees unchanged, and the fitted classifier is bit-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit
from scipy.stats import rankdata

from .errors import (
    DegenerateLabelsError,
    InsufficientHeadsError,
    InvalidFeatureError,
    LayoutError,
    TraceFormatError,
)
from .features import SpanFeatureVector

SELECTION_MODES = ("largest_magnitude", "most_positive", "most_negative")


@dataclass(frozen=True)
class TrainConfig:
    # Fixed default mirrors an off-the-shelf C=1 penalty at ~1000 training rows.
    l2_lambda: float = 1e-3
    max_iters: int = 1000
    tolerance: float = 1e-8
    seed: int = 0
    standardize: bool = False

    def __post_init__(self) -> None:
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class FeatureLayout:
    """Which entries of the layer-major L*H head vector a classifier reads."""

    num_layers: int
    num_heads: int
    active_indices: tuple[int, ...]

    @classmethod
    def full(cls, num_layers: int, num_heads: int) -> FeatureLayout:
        return cls(num_layers, num_heads, tuple(range(num_layers * num_heads)))

    @property
    def total(self) -> int:
        return self.num_layers * self.num_heads

    @property
    def dim(self) -> int:
        return len(self.active_indices)

    def head_of(self, index: int) -> tuple[int, int]:
        """1-based (layer, head) of a layer-major feature index."""
        return index // self.num_heads + 1, index % self.num_heads + 1


@dataclass(frozen=True)
class LensClassifier:
    weights: np.ndarray
    bias: float
    layout: FeatureLayout
    train_config: dict[str, Any] = field(default_factory=dict)
    digest: str | None = None

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        if w.size != self.layout.dim:
            raise LayoutError(f"{w.size} weights for {self.layout.dim} active features")


@dataclass(frozen=True)
class HeadSelection:
    """Selected heads as layer-major feature indices, in rank order."""

    mode: str
    k: int
    indices: tuple[int, ...]


@dataclass
class FitResult:
    params: np.ndarray
    loss_history: list[float]
    n_iter: int
    converged: bool
    grad_norm: float


# ---------------------------------------------------------------------------
# Objective


def logistic_objective(
    params: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    l2_lambda: float,
    sample_weight: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Loss and gradient at ``params`` = (w..., b).

    ``sample_weight`` defaults to 1/n per row (plain mean loss).
    """
    n = X.shape[0]
    omega = np.full(n, 1.0 / n) if sample_weight is None else sample_weight
    w, b = params[:-1], params[-1]
    z = X @ w + b
    loss = float(omega @ (np.logaddexp(0.0, z) - y * z) + 0.5 * l2_lambda * (w @ w))
    r = omega * (expit(z) - y)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r + l2_lambda * w
    grad[-1] = r.sum()
    return loss, grad


def logistic_hessian(
    params: np.ndarray,
    X: np.ndarray,
    l2_lambda: float,
    sample_weight: np.ndarray | None = None,
) -> np.ndarray:
    n, d = X.shape
    omega = np.full(n, 1.0 / n) if sample_weight is None else sample_weight
    p = expit(X @ params[:-1] + params[-1])
    s = omega * p * (1.0 - p)
    Xa = np.hstack([X, np.ones((n, 1))])
    hess = (Xa * s[:, None]).T @ Xa
    hess[np.arange(d), np.arange(d)] += l2_lambda
    return hess


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        return -scipy.linalg.solve(hess, grad, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return -np.linalg.lstsq(hess, grad, rcond=None)[0]


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig = TrainConfig(),
    sample_weight: np.ndarray | None = None,
) -> FitResult:
    """Damped Newton from the origin until ||grad|| <= tolerance or max_iters."""
    d = X.shape[1]
    params = np.zeros(d + 1)
    lam = config.l2_lambda
    loss, grad = logistic_objective(params, X, y, lam, sample_weight)
    history = [loss]
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iters + 1):
        if np.linalg.norm(grad) <= config.tolerance:
            converged = True
            n_iter -= 1
            break
        direction = _newton_direction(logistic_hessian(params, X, lam, sample_weight), grad)
        slope = float(grad @ direction)
        if slope >= 0:
            direction, slope = -grad, -float(grad @ grad)
        step = 1.0
        while step > 1e-16:
            cand = params + step * direction
            cand_loss, cand_grad = logistic_objective(cand, X, y, lam, sample_weight)
            if cand_loss <= loss + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            # no representable decrease left
            break
        params, loss, grad = cand, cand_loss, cand_grad
        history.append(loss)
    gnorm = float(np.linalg.norm(grad))
    return FitResult(params, history, n_iter, converged or gnorm <= config.tolerance, gnorm)


# ---------------------------------------------------------------------------
# Training / inference


def rows_to_arrays(rows: Sequence[SpanFeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    if not rows:
        raise DegenerateLabelsError("no training rows")
    dims = {r.dim for r in rows}
    if len(dims) != 1:
        raise LayoutError(f"rows have mixed dimensions {sorted(dims)}")
    if any(r.label not in (0, 1) for r in rows):
        raise DegenerateLabelsError("every training row needs a 0/1 label")
    X = np.stack([r.values for r in rows])
    y = np.array([r.label for r in rows], dtype=np.float64)
    return X, y


def _check_labels(y: np.ndarray) -> None:
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need both labels, got {n_pos} factual / {n_neg} hallucinated rows"
        )


def rows_digest(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<f8").tobytes())
    return h.hexdigest()


def train_arrays(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig = TrainConfig(),
    layout: FeatureLayout | None = None,
) -> LensClassifier:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LayoutError(f"feature matrix {X.shape} does not match {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise InvalidFeatureError("features contain NaN or infinite values")
    _check_labels(y)
    if layout is None:
        layout = FeatureLayout.full(1, X.shape[1])
    if layout.dim != X.shape[1]:
        raise LayoutError(f"layout has {layout.dim} active features, rows have {X.shape[1]}")

    mean = np.zeros(X.shape[1])
    scale = np.ones(X.shape[1])
    if config.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0.0] = 1.0
    Xs = (X - mean) / scale

    uniq, counts = np.unique(np.column_stack([Xs, y]), axis=0, return_counts=True)
    fit = fit_logistic(uniq[:, :-1], uniq[:, -1], config, counts / X.shape[0])
    w = fit.params[:-1] / scale
    b = fit.params[-1] - float(w @ mean)
    cfg = asdict(config)
    cfg.update(n_iter=fit.n_iter, converged=fit.converged, grad_norm=fit.grad_norm)
    return LensClassifier(w, b, layout, cfg, rows_digest(X, y))


def train(
    rows: Sequence[SpanFeatureVector],
    config: TrainConfig = TrainConfig(),
    layout: FeatureLayout | None = None,
) -> LensClassifier:
    X, y = rows_to_arrays(rows)
    return train_arrays(X, y, config, layout)


def _select_active(clf: LensClassifier, values: np.ndarray) -> np.ndarray:
    lay = clf.layout
    if values.shape[-1] == lay.dim:
        return values
    if values.shape[-1] == lay.total:
        return values[..., list(lay.active_indices)]
    raise LayoutError(
        f"feature dimension {values.shape[-1]} matches neither the {lay.dim} active "
        f"nor the {lay.total} total features of the classifier"
    )


def decision_function(clf: LensClassifier, X: np.ndarray) -> np.ndarray:
    X = _select_active(clf, np.asarray(X, dtype=np.float64))
    return X @ clf.weights + clf.bias


def predict(clf: LensClassifier, v: SpanFeatureVector | np.ndarray) -> float:
    """P(factual | v) = sigmoid(w . v + b)."""
    values = v.values if isinstance(v, SpanFeatureVector) else np.asarray(v, dtype=np.float64)
    return float(expit(decision_function(clf, values.reshape(-1))))


def predict_many(clf: LensClassifier, X: np.ndarray) -> np.ndarray:
    return expit(decision_function(clf, np.atleast_2d(X)))


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg), ties counted 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(f"need both labels, got {n_pos} positive / {n_neg} negative")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# Head selection and feature restriction


def select_heads(clf: LensClassifier, k: int, mode: str = "largest_magnitude") -> HeadSelection:
    """Top-k coefficients by |w|, by most positive, or by most negative.

    Ties go to the lower index. Sign-restricted modes only consider strictly
    positive (resp. negative) coefficients.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    w = clf.weights
    idx = np.arange(w.size)
    if mode == "largest_magnitude":
        key, pool = -np.abs(w), idx
    elif mode == "most_positive":
        key, pool = -w, idx[w > 0]
    elif mode == "most_negative":
        key, pool = w, idx[w < 0]
    else:
        raise ValueError(f"unknown selection mode {mode!r}; expected one of {SELECTION_MODES}")
    if pool.size < k:
        raise InsufficientHeadsError(f"{mode}: only {pool.size} qualifying coefficients, need {k}")
    order = pool[np.lexsort((pool, key[pool]))][:k]
    active = clf.layout.active_indices
    return HeadSelection(mode, k, tuple(active[i] for i in order))


def layer_indices(layout: FeatureLayout, first: int, last: int) -> list[int]:
    """Layer-major indices for 1-based inclusive layers first..last."""
    if not 1 <= first <= last <= layout.num_layers:
        raise ValueError(f"layer range [{first}, {last}] outside 1..{layout.num_layers}")
    H = layout.num_heads
    return [(l - 1) * H + h for l in range(first, last + 1) for h in range(H)]


def restrict_features(
    rows: Sequence[SpanFeatureVector],
    layout: FeatureLayout,
    indices: Sequence[int] | HeadSelection,
) -> tuple[list[SpanFeatureVector], FeatureLayout]:
    """Keep only the given layer-major feature indices (which must be active in ``layout``)."""
    if isinstance(indices, HeadSelection):
        indices = indices.indices
    indices = list(indices)
    if not indices:
        raise ValueError("empty feature selection")
    pos = {orig: i for i, orig in enumerate(layout.active_indices)}
    missing = [i for i in indices if i not in pos]
    if missing:
        raise LayoutError(f"indices {missing} are not active in the layout")
    cols = [pos[i] for i in indices]
    out = [
        SpanFeatureVector(r.values[cols], r.span, r.label, r.example_id, r.origin) for r in rows
    ]
    return out, FeatureLayout(layout.num_layers, layout.num_heads, tuple(indices))


# ---------------------------------------------------------------------------
# Classifier file


def classifier_to_record(clf: LensClassifier) -> dict[str, Any]:
    return {
        "feature_layout": {
            "num_layers": clf.layout.num_layers,
            "num_heads": clf.layout.num_heads,
            "active_indices": list(clf.layout.active_indices),
        },
        "weights": clf.weights.tolist(),
        "bias": clf.bias,
        "train_config": clf.train_config,
        "training_digest": clf.digest,
    }


def save_classifier(path: str | Path, clf: LensClassifier) -> None:
    Path(path).write_text(json.dumps(classifier_to_record(clf), indent=1) + "\n", encoding="utf-8")


def load_classifier(path: str | Path) -> LensClassifier:
    try:
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
        lay = rec["feature_layout"]
        layout = FeatureLayout(
            int(lay["num_layers"]), int(lay["num_heads"]), tuple(int(i) for i in lay["active_indices"])
        )
        return LensClassifier(
            np.asarray(rec["weights"], dtype=np.float64),
            rec["bias"],
            layout,
            rec.get("train_config", {}),
            rec.get("training_digest"),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"{path}: cannot load classifier ({exc})") from exc
