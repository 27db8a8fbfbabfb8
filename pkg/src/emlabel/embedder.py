"""Concatenated standardized attribute vectors and the single-bottleneck
autoencoder whose standardized hidden activation is the object embedding."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FailedPrecondition, InvalidArgument, TrainingFailure
from .linmodel import Standardizer, fit_standardizer

LINEAR = "LINEAR"
SMOOTH_SATURATING = "SMOOTH_SATURATING"  # tanh bottleneck
ACTIVATIONS = (LINEAR, SMOOTH_SATURATING)


@dataclass(frozen=True)
class FeatureLayout:
    """Named, disjoint slices covering [0, total_dim)."""

    slices: tuple  # of (name, offset, length)
    total_dim: int

    def __post_init__(self):
        covered = 0
        names = set()
        for name, offset, length in sorted(self.slices, key=lambda s: s[1]):
            if name in names:
                raise InvalidArgument(f"duplicate slice name {name!r}")
            names.add(name)
            if offset != covered or length <= 0:
                raise InvalidArgument(
                    f"slice {name!r} at offset {offset} breaks coverage (expected {covered})"
                )
            covered = offset + length
        if covered != self.total_dim:
            raise InvalidArgument(f"slices cover {covered} dims, total_dim is {self.total_dim}")

    @classmethod
    def from_lengths(cls, named_lengths) -> "FeatureLayout":
        slices = []
        offset = 0
        for name, length in named_lengths:
            slices.append((name, offset, int(length)))
            offset += int(length)
        return cls(tuple(slices), offset)

    @property
    def names(self):
        return [s[0] for s in self.slices]

    def range_of(self, name: str) -> slice:
        for n, offset, length in self.slices:
            if n == name:
                return slice(offset, offset + length)
        raise InvalidArgument(f"unknown slice {name!r}")


def fit_layout_standardizers(values: dict, layout: FeatureLayout) -> dict:
    """Per-slice standardizers from stacked raw values (name -> (n, len))."""
    return {name: fit_standardizer(values[name]) for name in layout.names}


def build_input_vector(obj_values, layout: FeatureLayout, standardizers: dict) -> np.ndarray:
    """Standardized concatenation of the object's attribute blocks.

    ``obj_values`` maps slice name to a raw vector; a missing or None
    entry means the attribute was never imputed, which is an error here
    because fill-in is a precondition of embedding.
    """
    parts = []
    for name, _, length in layout.slices:
        raw = obj_values.get(name) if hasattr(obj_values, "get") else None
        if raw is None:
            raise FailedPrecondition(f"missing un-imputed field for slice {name!r}")
        raw = np.asarray(raw, dtype=np.float64).ravel()
        if len(raw) != length:
            raise InvalidArgument(f"slice {name!r} expects length {length}, got {len(raw)}")
        parts.append(standardizers[name].transform(raw[None, :])[0])
    return np.concatenate(parts)


@dataclass
class TrainConfig:
    batch_size: int = 512
    epochs: int = 50
    lr_start: float = 3e-3
    lr_end: float = 3e-7
    seed: int = 0


def _lr_schedule(config: TrainConfig, epoch: int) -> float:
    # geometric interpolation start -> end; for the defaults this halves
    # roughly every 4 epochs
    if config.epochs <= 1:
        return config.lr_start
    frac = epoch / (config.epochs - 1)
    return config.lr_start * (config.lr_end / config.lr_start) ** frac


@dataclass
class AutoencoderModel:
    enc_w: np.ndarray  # (total_dim, bottleneck)
    enc_b: np.ndarray  # (bottleneck,)
    dec_w: np.ndarray  # (bottleneck, total_dim)
    dec_b: np.ndarray  # (total_dim,)
    activation: str
    bottleneck_dim: int
    input_standardizer: Standardizer
    code_standardizer: Standardizer | None = None
    final_loss: float = float("nan")

    @property
    def total_dim(self) -> int:
        return self.enc_w.shape[0]

    @property
    def rms(self) -> float:
        """Per-feature RMS reconstruction error: sqrt of the mean loss."""
        return float(np.sqrt(self.final_loss))

    def codes(self, X: np.ndarray) -> np.ndarray:
        """Raw bottleneck activations for standardized input."""
        A = X @ self.enc_w + self.enc_b
        if self.activation == SMOOTH_SATURATING:
            return np.tanh(A)
        return A

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        return self.codes(X) @ self.dec_w + self.dec_b


def ae_loss_and_grads(enc_w, enc_b, dec_w, dec_b, activation, Xs):
    """Loss (mean squared error over samples and features) plus gradients."""
    n, d = Xs.shape
    A = Xs @ enc_w + enc_b
    Z = np.tanh(A) if activation == SMOOTH_SATURATING else A
    R = Z @ dec_w + dec_b - Xs
    loss = float(np.mean(R * R))
    dR = 2.0 * R / (n * d)
    g_dec_w = Z.T @ dR
    g_dec_b = dR.sum(axis=0)
    dZ = dR @ dec_w.T
    dA = dZ * (1.0 - Z * Z) if activation == SMOOTH_SATURATING else dZ
    g_enc_w = Xs.T @ dA
    g_enc_b = dA.sum(axis=0)
    return loss, g_enc_w, g_enc_b, g_dec_w, g_dec_b


def ae_loss(model: AutoencoderModel, Xs: np.ndarray) -> float:
    loss, *_ = ae_loss_and_grads(
        model.enc_w, model.enc_b, model.dec_w, model.dec_b, model.activation, Xs
    )
    return loss


def train_autoencoder(
    vectors,
    bottleneck_dim: int,
    config: TrainConfig | None = None,
    activation: str = LINEAR,
) -> AutoencoderModel:
    """Adam training of the reconstruction loss; deterministic per seed."""
    config = config or TrainConfig()
    if activation not in ACTIVATIONS:
        raise InvalidArgument(f"unknown activation {activation!r}")
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgument("vectors must be a 2-D array")
    if bottleneck_dim < 1:
        raise InvalidArgument("bottleneck_dim must be >= 1")
    n, d = X.shape
    if n < 2 * bottleneck_dim:
        raise InvalidArgument(f"need at least {2 * bottleneck_dim} vectors, have {n}")

    input_std = fit_standardizer(X)
    Xs = input_std.transform(X)

    rng = np.random.default_rng(config.seed)
    params = [
        rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, bottleneck_dim)),
        np.zeros(bottleneck_dim),
        rng.normal(0.0, 1.0 / np.sqrt(bottleneck_dim), size=(bottleneck_dim, d)),
        np.zeros(d),
    ]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    batch = min(config.batch_size, n)
    for epoch in range(config.epochs):
        lr = _lr_schedule(config, epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, *grads = ae_loss_and_grads(*params, activation, Xs[idx])
            if not np.isfinite(loss):
                raise TrainingFailure(f"loss became non-finite at epoch {epoch}")
            t += 1
            for i, g in enumerate(grads):
                m[i] = beta1 * m[i] + (1 - beta1) * g
                v[i] = beta2 * v[i] + (1 - beta2) * g * g
                mhat = m[i] / (1 - beta1**t)
                vhat = v[i] / (1 - beta2**t)
                params[i] = params[i] - lr * mhat / (np.sqrt(vhat) + eps)

    model = AutoencoderModel(
        enc_w=params[0],
        enc_b=params[1],
        dec_w=params[2],
        dec_b=params[3],
        activation=activation,
        bottleneck_dim=bottleneck_dim,
        input_standardizer=input_std,
    )
    model.final_loss = ae_loss(model, Xs)
    if not np.isfinite(model.final_loss):
        raise TrainingFailure(f"final loss non-finite after {config.epochs} epochs")
    model.code_standardizer = fit_standardizer(model.codes(Xs))
    return model


def encode(x, model: AutoencoderModel, layout: FeatureLayout | None = None) -> np.ndarray:
    """Standardized bottleneck activation for one raw input vector or a
    matrix of them."""
    if model.code_standardizer is None:
        raise InvalidArgument("model has no post-training code standardizer")
    if layout is not None and layout.total_dim != model.total_dim:
        raise InvalidArgument(
            f"layout dim {layout.total_dim} does not match model dim {model.total_dim}"
        )
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.total_dim:
        raise InvalidArgument(f"input dim {X.shape[1]} does not match model dim {model.total_dim}")
    codes = model.codes(model.input_standardizer.transform(X))
    out = model.code_standardizer.transform(codes)
    return out[0] if single else out


def reconstruction_report(model: AutoencoderModel, vectors, layout: FeatureLayout | None = None):
    """Overall and per-slice standardized reconstruction error."""
    X = np.asarray(vectors, dtype=np.float64)
    Xs = model.input_standardizer.transform(X)
    R = model.reconstruct(Xs) - Xs
    sq = R * R
    avg = float(np.mean(sq))
    report = {"avg_standardized_l2": avg, "rms": float(np.sqrt(avg)), "per_slice_l2": {}}
    if layout is not None:
        for name in layout.names:
            report["per_slice_l2"][name] = float(np.mean(sq[:, layout.range_of(name)]))
    return report


MODEL_FORMAT_VERSION = 1


def save_autoencoder(model: AutoencoderModel, path, layout: FeatureLayout | None = None) -> None:
    """Versioned binary blob (npz) with an optional layout descriptor."""
    import json

    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "activation": model.activation,
        "bottleneck_dim": model.bottleneck_dim,
        "final_loss": model.final_loss,
        "layout": [list(s) for s in layout.slices] if layout else None,
    }
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        enc_w=model.enc_w,
        enc_b=model.enc_b,
        dec_w=model.dec_w,
        dec_b=model.dec_b,
        in_mean=model.input_standardizer.mean,
        in_std=model.input_standardizer.std,
        in_const=model.input_standardizer.constant,
        code_mean=model.code_standardizer.mean,
        code_std=model.code_standardizer.std,
        code_const=model.code_standardizer.constant,
    )


def load_autoencoder(path):
    """Returns (model, layout or None)."""
    import json

    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
        if meta["format_version"] != MODEL_FORMAT_VERSION:
            raise InvalidArgument(f"unsupported model format {meta['format_version']}")
        model = AutoencoderModel(
            enc_w=z["enc_w"],
            enc_b=z["enc_b"],
            dec_w=z["dec_w"],
            dec_b=z["dec_b"],
            activation=meta["activation"],
            bottleneck_dim=int(meta["bottleneck_dim"]),
            input_standardizer=Standardizer(z["in_mean"], z["in_std"], z["in_const"].astype(bool)),
            code_standardizer=Standardizer(z["code_mean"], z["code_std"], z["code_const"].astype(bool)),
            final_loss=float(meta["final_loss"]),
        )
    layout = None
    if meta.get("layout"):
        layout = FeatureLayout(
            tuple((n, int(o), int(l)) for n, o, l in meta["layout"]),
            sum(int(l) for _, _, l in meta["layout"]),
        )
    return model, layout


def principal_subspace_loss(vectors, bottleneck_dim: int) -> float:
    """Analytic optimum of the linear autoencoder: trailing-eigenvalue mass
    of the standardized covariance divided by the feature count."""
    X = np.asarray(vectors, dtype=np.float64)
    std = fit_standardizer(X)
    Xs = std.transform(X)
    cov = (Xs.T @ Xs) / len(Xs)
    eig = np.sort(np.linalg.eigvalsh(cov))
    trailing = eig[: max(0, Xs.shape[1] - bottleneck_dim)]
    return float(np.sum(trailing) / Xs.shape[1])
