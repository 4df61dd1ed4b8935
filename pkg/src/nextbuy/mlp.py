"""Feed-forward network trained from scratch with minibatch SGD.

Architecture: z-score standardization, optional input dropout, two ReLU
hidden layers with inverted dropout, and an independent sigmoid per item
(multi-label). Loss is mean binary cross-entropy over batch and items.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import ItemCatalog, PlayerTimeSeries
from .ert import FEATURE_CACHE_MAX_ENTRIES, MODEL_SCHEMA_VERSION, ModelError
from .features import FeatureConfig, FeatureVector
from .sampling import SamplerConfig, draw_sample_matrix


@dataclass(frozen=True)
class MlpParams:
    hidden_sizes: tuple[int, ...] = (2048, 2048)
    dropout_hidden: float = 0.5
    dropout_input: float = 0.2
    learning_rate: float = 0.01
    iterations: int = 30
    repeats_per_iteration: int = 5
    sgd_batch: int = 128
    batch_users: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not all(h >= 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be >= 1")
        for rate in (self.dropout_hidden, self.dropout_input):
            if not 0.0 <= rate < 1.0:
                raise ValueError("dropout rates must be in [0, 1)")
        for name in ("iterations", "repeats_per_iteration", "sgd_batch", "batch_users"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def desk_params(**overrides) -> MlpParams:
    """Small-network preset for tests and laptop runs."""
    defaults = dict(hidden_sizes=(128, 128), dropout_hidden=0.1, dropout_input=0.0)
    defaults.update(overrides)
    return MlpParams(**defaults)


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # layer l: (fan_in, fan_out)
    biases: list[np.ndarray]
    mean: np.ndarray  # standardization stats, frozen at first training pass
    std: np.ndarray  # zeros replaced by 1
    catalog: ItemCatalog
    layout: tuple[str, ...]
    params: MlpParams = field(default_factory=MlpParams)

    def __post_init__(self):
        fan = len(self.layout)
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != fan or b.shape != (W.shape[1],):
                raise ModelError("layer shapes do not chain")
            fan = W.shape[1]
        if fan != self.catalog.size:
            raise ModelError("output width does not match catalog size")

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def forward(
        self,
        X: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        keep_trace: bool = False,
    ):
        """Probabilities for a batch; (n, M).

        In train mode inverted dropout scales surviving units by 1/(1-p) so
        inference needs no rescaling and is fully deterministic.
        """
        if X.shape[1] != len(self.layout):
            raise ModelError(
                f"feature width {X.shape[1]} does not match model input "
                f"({len(self.layout)})"
            )
        if train and rng is None:
            raise ModelError("train-mode forward pass needs an RNG for dropout masks")
        p = self.params
        h = self.standardize(X)
        masks: list[np.ndarray | None] = []
        activations = [h]
        if train and p.dropout_input > 0.0:
            h, mask = apply_dropout(h, p.dropout_input, rng)
            masks.append(mask)
        else:
            masks.append(None)
        activations[0] = h
        n_hidden = len(self.weights) - 1
        for layer in range(n_hidden):
            h = np.maximum(h @ self.weights[layer] + self.biases[layer], 0.0)
            if train and p.dropout_hidden > 0.0:
                h, mask = apply_dropout(h, p.dropout_hidden, rng)
                masks.append(mask)
            else:
                masks.append(None)
            activations.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        probs = _sigmoid(logits)
        if keep_trace:
            return probs, activations, masks
        return probs

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X, train=False)

    def predict(self, features: FeatureVector) -> np.ndarray:
        if features.layout != self.layout:
            raise ModelError("feature layout does not match the trained model")
        return self.forward(features.values[None, :])[0]

    def backward(
        self, X: np.ndarray, Y: np.ndarray, rng: np.random.Generator | None = None
    ) -> tuple[list[np.ndarray], list[np.ndarray], float]:
        """Gradients of mean BCE over (batch, items) w.r.t. every parameter.

        Dropout masks are drawn inside the paired forward pass; passing
        rng=None disables dropout (used by the finite-difference checks).
        """
        if len(X) == 0:
            raise ModelError("empty batch")
        train = rng is not None
        probs, activations, masks = self.forward(X, train=train, rng=rng, keep_trace=True)
        n, m = probs.shape
        loss = float(
            -np.mean(Y * np.log(np.clip(probs, 1e-12, None))
                     + (1 - Y) * np.log(np.clip(1 - probs, 1e-12, None)))
        )
        # d(mean BCE)/d(logits) for sigmoid outputs
        delta = (probs - Y) / (n * m)
        grads_w: list[np.ndarray] = [None] * len(self.weights)
        grads_b: list[np.ndarray] = [None] * len(self.biases)
        p = self.params
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = activations[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer == 0:
                break
            delta = delta @ self.weights[layer].T
            delta = delta * (activations[layer] > 0)
            if masks[layer] is not None:
                delta = delta * masks[layer] / (1.0 - p.dropout_hidden)
        return grads_w, grads_b, loss

    def sgd_step(self, X, Y, rng) -> float:
        grads_w, grads_b, loss = self.backward(X, Y, rng)
        lr = self.params.learning_rate
        for layer in range(len(self.weights)):
            self.weights[layer] -= lr * grads_w[layer]
            self.biases[layer] -= lr * grads_b[layer]
        return loss

    def save(self, path: str | Path) -> None:
        doc = {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": "mlp",
            "catalog": list(self.catalog.items),
            "layout": list(self.layout),
            "params": {
                "hidden_sizes": list(self.params.hidden_sizes),
                "dropout_hidden": self.params.dropout_hidden,
                "dropout_input": self.params.dropout_input,
                "learning_rate": self.params.learning_rate,
                "iterations": self.params.iterations,
                "repeats_per_iteration": self.params.repeats_per_iteration,
                "sgd_batch": self.params.sgd_batch,
                "batch_users": self.params.batch_users,
                "seed": self.params.seed,
            },
            "shapes": [list(W.shape) for W in self.weights],
            "weights": [_encode(W) for W in self.weights],
            "biases": [_encode(b) for b in self.biases],
            "mean": _encode(self.mean),
            "std": _encode(self.std),
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema_version") != MODEL_SCHEMA_VERSION or doc.get("kind") != "mlp":
            raise ModelError(f"unsupported model file {path}")
        params = MlpParams(
            **{**doc["params"], "hidden_sizes": tuple(doc["params"]["hidden_sizes"])}
        )
        weights = [
            _decode(blob).reshape(shape)
            for blob, shape in zip(doc["weights"], doc["shapes"])
        ]
        biases = [_decode(blob) for blob in doc["biases"]]
        return cls(
            weights=weights,
            biases=biases,
            mean=_decode(doc["mean"]),
            std=_decode(doc["std"]),
            catalog=ItemCatalog(tuple(doc["catalog"])),
            layout=tuple(doc["layout"]),
            params=params,
        )


def apply_dropout(h: np.ndarray, rate: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: kept units are scaled by 1/(1-rate) so the
    expectation over masks equals the input."""
    mask = rng.random(h.shape) >= rate
    return h * mask / (1.0 - rate), mask


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep probabilities strictly inside (0, 1) even at saturating logits
    return np.clip(out, 1e-12, 1.0 - 1e-12)


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).decode()


def _decode(blob: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype=np.float64).copy()


def init_model(
    fconfig_layout: tuple[str, ...],
    catalog: ItemCatalog,
    params: MlpParams,
    rng: np.random.Generator,
    mean: np.ndarray | None = None,
    std: np.ndarray | None = None,
) -> MlpModel:
    """He-initialized model with identity standardization until stats freeze."""
    f = len(fconfig_layout)
    sizes = [f, *params.hidden_sizes, catalog.size]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        weights=weights,
        biases=biases,
        mean=np.zeros(f) if mean is None else mean,
        std=np.ones(f) if std is None else std,
        catalog=catalog,
        layout=fconfig_layout,
        params=params,
    )


def standardization_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return mean, std


def train_mlp(
    players: list[PlayerTimeSeries],
    catalog: ItemCatalog,
    fconfig: FeatureConfig,
    sampler_config: SamplerConfig,
    params: MlpParams,
) -> MlpModel:
    """Minibatch training with the same batch/sampling regime as the trees.

    Each iteration draws a fresh player batch and its labels, then makes
    ``repeats_per_iteration`` shuffled SGD passes over those samples.
    Standardization stats are computed from the first iteration's samples
    and frozen.
    """
    if not players:
        raise ModelError("no players to train on")
    root = np.random.SeedSequence([params.seed, 10])
    init_rng = np.random.default_rng(root.spawn(1)[0])
    model = init_model(fconfig.layout(), catalog, params, init_rng)
    batch_rng = np.random.default_rng(np.random.SeedSequence([params.seed, 11]))
    sgd_rng = np.random.default_rng(np.random.SeedSequence([params.seed, 12]))
    order: list[int] = []
    feature_cache: dict = {}
    stats_frozen = False
    for it in range(params.iterations):
        if len(order) < min(params.batch_users, len(players)):
            order = list(batch_rng.permutation(len(players)))
        take = min(params.batch_users, len(players))
        batch = [players[i] for i in order[:take]]
        order = order[take:]
        sample_seed = int(
            np.random.SeedSequence([params.seed, 13, it]).generate_state(1)[0]
        )
        X, Y = draw_sample_matrix(
            batch, sampler_config, fconfig, catalog, sample_seed, feature_cache
        )
        if len(X) == 0:
            raise ModelError(f"iteration {it}: batch produced no training samples")
        if not stats_frozen:
            model.mean, model.std = standardization_stats(X)
            stats_frozen = True
        for _ in range(params.repeats_per_iteration):
            perm = sgd_rng.permutation(len(X))
            for start in range(0, len(X), params.sgd_batch):
                sel = perm[start : start + params.sgd_batch]
                model.sgd_step(X[sel], Y[sel], sgd_rng)
        if len(feature_cache) > FEATURE_CACHE_MAX_ENTRIES:
            feature_cache.clear()
    return model
