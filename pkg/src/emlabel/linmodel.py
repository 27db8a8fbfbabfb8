"""From-scratch L2-regularized logistic regression: standardization,
damped-Newton fitting, prediction, and k-fold mislabel scoring.

The objective is mean log-loss + (lambda/2)*||w||^2 with the bias
unpenalized. Fitting is full-batch and fully deterministic: identical
inputs give bit-identical weights.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateLabels, InvalidArgument, StaleModel

DEFAULT_LAMBDA = 1.0
GRAD_TOL = 1e-8
MAX_ITER = 500


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool mask of zero-variance dimensions

    @property
    def dim(self) -> int:
        return len(self.mean)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        inv = np.where(self.constant, 0.0, 1.0 / np.where(self.constant, 1.0, self.std))
        return (X - self.mean) * inv


def fit_standardizer(vectors) -> Standardizer:
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidArgument("fit_standardizer needs at least 2 vectors")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std == 0.0
    return Standardizer(mean=mean, std=np.where(constant, 1.0, std), constant=constant)


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    lam: float
    standardizer: Standardizer | None = None
    n_keyword_features: int = 0
    feature_version: int = 0
    iterations: int = 0
    final_gradient_norm: float = 0.0

    @property
    def train_meta(self) -> dict:
        return {"iterations": self.iterations, "final_gradient_norm": self.final_gradient_norm}


def logistic_objective(X, y, w, b, lam) -> float:
    obj, _, _ = _kernels.logistic_obj_grad(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        float(b),
        float(lam),
    )
    return obj


def logistic_gradient(X, y, w, b, lam):
    _, gw, gb = _kernels.logistic_obj_grad(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        float(b),
        float(lam),
    )
    return gw, gb


def fit_logistic(
    X,
    y,
    lam: float = DEFAULT_LAMBDA,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
) -> LinearModel:
    """Minimize the regularized log-loss with damped Newton steps.

    Stops when the gradient norm over (weights, bias) drops to ``tol`` or
    after ``max_iter`` iterations.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidArgument("X must be 2-D with one row per label")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise InvalidArgument("non-finite values in training data")
    if lam <= 0:
        raise InvalidArgument("lambda must be > 0")
    classes = np.unique(y)
    if not np.array_equal(classes, [0.0, 1.0]):
        if set(classes) <= {0.0, 1.0}:
            raise DegenerateLabels("training labels contain a single class")
        raise InvalidArgument("labels must be 0/1")

    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    obj, gw, gb = _kernels.logistic_obj_grad(X, y, w, b, lam)
    gnorm = float(np.sqrt(gw @ gw + gb * gb))
    iterations = 0
    for _ in range(max_iter):
        if gnorm <= tol:
            break
        iterations += 1
        z = X @ w + b
        p = _kernels.sigmoid(z)
        s = np.maximum(p * (1.0 - p), 1e-10)
        Xs = X * s[:, None]
        H = np.empty((d + 1, d + 1))
        H[:d, :d] = (Xs.T @ X) / n + lam * np.eye(d)
        H[:d, d] = H[d, :d] = (X.T @ s) / n
        H[d, d] = float(np.mean(s))
        g = np.concatenate([gw, [gb]])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        descent = float(g @ step)
        t = 1.0
        while True:
            w_new = w - t * step[:d]
            b_new = b - t * step[d]
            obj_new, gw_new, gb_new = _kernels.logistic_obj_grad(X, y, w_new, b_new, lam)
            if obj_new <= obj - 1e-4 * t * descent or t < 2**-40:
                break
            t *= 0.5
        w, b, obj, gw, gb = w_new, float(b_new), obj_new, gw_new, gb_new
        gnorm = float(np.sqrt(gw @ gw + gb * gb))
    return LinearModel(
        weights=w,
        bias=b,
        lam=float(lam),
        iterations=iterations,
        final_gradient_norm=gnorm,
    )


def design_row(model: LinearModel, embedding: np.ndarray, bits: np.ndarray) -> np.ndarray:
    if model.standardizer is None:
        raise InvalidArgument("model has no standardizer attached")
    emb = model.standardizer.transform(np.asarray(embedding, dtype=np.float64)[None, :])[0]
    return np.concatenate([emb, np.asarray(bits, dtype=np.float64)])


def predict_proba(model: LinearModel, obj, features) -> float:
    """Probability for one object: sigmoid(w . [standardize(emb), bits] + b)."""
    from .textmatch import keyword_bits  # local import to keep modules decoupled

    if features.version != model.feature_version or len(features) != model.n_keyword_features:
        raise StaleModel(
            f"model trained at feature version {model.feature_version} "
            f"({model.n_keyword_features} features); got version {features.version} "
            f"({len(features)} features)"
        )
    bits = keyword_bits(obj, features)
    x = design_row(model, obj.embedding, bits)
    z = float(x @ model.weights + model.bias)
    return float(_kernels.sigmoid(np.array([z]))[0])


def score_probs(X: np.ndarray, model: LinearModel) -> np.ndarray:
    """Probabilities for rows of an already-built design matrix."""
    return _kernels.score_sigmoid(
        np.ascontiguousarray(X, dtype=np.float64), model.weights, float(model.bias)
    )


def predict_proba_matrix(model: LinearModel, embeddings: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Vectorized prediction over a pool; bits must match the model's
    keyword-feature count."""
    if bits.shape[1] != model.n_keyword_features:
        raise StaleModel(
            f"model expects {model.n_keyword_features} keyword features, got {bits.shape[1]}"
        )
    emb = model.standardizer.transform(embeddings)
    design = np.ascontiguousarray(np.hstack([emb, bits.astype(np.float64)]))
    return _kernels.score_sigmoid(design, model.weights, float(model.bias))


def mislabel_scores_kfold(X, y, lam: float, seed: int, k: int = 20, max_attempts: int = 10):
    """Cross-validated mislabel scores: |y - p_heldout| per row.

    Rows are split into ``k`` seeded folds; each fold is scored by a model
    fit on the remaining folds. Splits leaving a training side single-class
    are resampled (new sub-seed) up to ``max_attempts`` times.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < k:
        raise InvalidArgument(f"need at least k={k} labeled objects, have {n}")
    folds = None
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, 0x5EED, attempt])
        perm = rng.permutation(n)
        candidate = np.array_split(perm, k)
        ok = True
        for fold in candidate:
            train_mask = np.ones(n, dtype=bool)
            train_mask[fold] = False
            if len(np.unique(y[train_mask])) < 2:
                ok = False
                break
        if ok:
            folds = candidate
            break
    if folds is None:
        raise DegenerateLabels(
            f"could not split labels into {k} folds with both classes after {max_attempts} attempts"
        )
    p_heldout = np.empty(n)
    for fold in folds:
        train_mask = np.ones(n, dtype=bool)
        train_mask[fold] = False
        m = fit_logistic(X[train_mask], y[train_mask], lam)
        p_heldout[fold] = _kernels.score_sigmoid(
            np.ascontiguousarray(X[fold]), m.weights, m.bias
        )
    scores = np.abs(y - p_heldout)
    return scores, p_heldout


# --- persistence -----------------------------------------------------------


def _array_to_b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=np.float64).tobytes()).decode("ascii")


def _array_from_b64(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype=np.float64).copy()


def model_to_dict(model: LinearModel) -> dict:
    """JSON-safe dict that round-trips bit-exactly."""
    d = {
        "weights": _array_to_b64(model.weights),
        "bias": _array_to_b64(np.array([model.bias])),
        "lam": model.lam,
        "n_keyword_features": model.n_keyword_features,
        "feature_version": model.feature_version,
        "iterations": model.iterations,
        "final_gradient_norm": _array_to_b64(np.array([model.final_gradient_norm])),
        "standardizer": None,
    }
    if model.standardizer is not None:
        d["standardizer"] = {
            "mean": _array_to_b64(model.standardizer.mean),
            "std": _array_to_b64(model.standardizer.std),
            "constant": base64.b64encode(
                np.ascontiguousarray(model.standardizer.constant, dtype=np.uint8).tobytes()
            ).decode("ascii"),
        }
    return d


def model_from_dict(d: dict) -> LinearModel:
    std = None
    if d.get("standardizer"):
        s = d["standardizer"]
        std = Standardizer(
            mean=_array_from_b64(s["mean"]),
            std=_array_from_b64(s["std"]),
            constant=np.frombuffer(base64.b64decode(s["constant"]), dtype=np.uint8).astype(bool),
        )
    return LinearModel(
        weights=_array_from_b64(d["weights"]),
        bias=float(_array_from_b64(d["bias"])[0]),
        lam=float(d["lam"]),
        standardizer=std,
        n_keyword_features=int(d["n_keyword_features"]),
        feature_version=int(d["feature_version"]),
        iterations=int(d["iterations"]),
        final_gradient_norm=float(_array_from_b64(d["final_gradient_norm"])[0]),
    )


def model_to_blob(model: LinearModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True)


def model_from_blob(blob: str) -> LinearModel:
    return model_from_dict(json.loads(blob))
