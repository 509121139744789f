"""3D signal prediction: position -> RAN metric regression.

Feature rows are local coordinates (x_m, y_m, alt_m); each target metric
gets its own model. Two evaluation protocols are supported: a seeded 80/20
random split (spatial interpolation) and leave-one-altitude-out, which
holds out every sample of one altitude bin per fold and therefore measures
vertical extrapolation. Tree models extrapolate flat along altitude, which
is exactly why the held-out-edge-bin error exceeds the random-split error.
"""

from __future__ import annotations

import math
import pickle
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.compose import TransformedTargetRegressor
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPRegressor
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from .model import FlightDataset, local_projection
from .stats import METRIC_GETTERS

MIN_FIT_ROWS = 20
MODEL_FILE_FORMAT = "uavnet-predictor"
MODEL_FILE_VERSION = 1

FEATURE_NAMES = ("x_m", "y_m", "alt_m")
TARGET_METRICS = ("rsrp", "rsrq", "rssi", "sinr")


class ModelKind(Enum):
    TREE_ENSEMBLE = "rf"
    BOOSTED_TREES = "gb"
    FEEDFORWARD_NET = "mlp"


class EvalProtocol(Enum):
    LOAO = "loao"
    RANDOM_SPLIT_80_20 = "split"


DEFAULT_HYPERPARAMS = {
    ModelKind.TREE_ENSEMBLE: {
        "n_estimators": 200, "max_depth": 12, "max_features": "sqrt",
    },
    ModelKind.BOOSTED_TREES: {
        "n_estimators": 300, "learning_rate": 0.05, "max_depth": 3,
        "loss": "squared_error",
    },
    ModelKind.FEEDFORWARD_NET: {
        "hidden_layer_sizes": (64, 64), "activation": "relu",
        "max_iter": 500, "learning_rate_init": 1e-3,
    },
}


def feature_rows(ds: FlightDataset, metric: str) -> tuple[np.ndarray, np.ndarray]:
    """Extract (features, target) arrays; rows with a null target are dropped."""
    if metric not in TARGET_METRICS:
        raise ValueError(f"metric must be one of {TARGET_METRICS}, got {metric!r}")
    coords = local_projection(ds)
    getter = METRIC_GETTERS[metric]
    feats, targets = [], []
    for s, (x, y, alt) in zip(ds.samples, coords):
        v = getter(s)
        if v is None or not math.isfinite(v):
            continue
        feats.append((x, y, alt))
        targets.append(v)
    return np.asarray(feats, dtype=float), np.asarray(targets, dtype=float)


@dataclass(frozen=True)
class TrainedPredictor:
    model_kind: ModelKind
    target_metric: str
    estimator: object
    train_seed: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(self, X)


def _build_estimator(kind: ModelKind, hyperparams: Optional[dict], seed: int):
    params = {**DEFAULT_HYPERPARAMS[kind], **(hyperparams or {})}
    if kind is ModelKind.TREE_ENSEMBLE:
        return RandomForestRegressor(random_state=seed, **params)
    if kind is ModelKind.BOOSTED_TREES:
        return GradientBoostingRegressor(random_state=seed, **params)
    # Both features and target are standardized: dB-scale targets sit far
    # from the net's zero init, and the fixed epoch budget cannot close
    # that gap in raw units.
    pipeline = Pipeline([
        ("scale", StandardScaler()),
        ("net", MLPRegressor(random_state=seed, **params)),
    ])
    return TransformedTargetRegressor(regressor=pipeline,
                                      transformer=StandardScaler())


def fit(X: np.ndarray, y: np.ndarray, model_kind: ModelKind,
        hyperparams: Optional[dict] = None, seed: int = 0,
        target_metric: str = "rsrp") -> TrainedPredictor:
    """Train one regressor; fully deterministic given (data, seed)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(FEATURE_NAMES):
        raise ValueError(f"X must be (n, {len(FEATURE_NAMES)})")
    if len(X) != len(y):
        raise ValueError("X and y length mismatch")
    if len(X) < MIN_FIT_ROWS:
        raise ValueError(f"need at least {MIN_FIT_ROWS} rows, got {len(X)}")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise ValueError("features and targets must be finite")

    est = _build_estimator(model_kind, hyperparams, seed)
    with warnings.catch_warnings():
        # Fixed-epoch training for the net: not converging in max_iter is
        # by design, not a defect worth a warning per fit.
        warnings.simplefilter("ignore", ConvergenceWarning)
        est.fit(X, y)
    return TrainedPredictor(model_kind=model_kind, target_metric=target_metric,
                            estimator=est, train_seed=seed)


def predict(model: TrainedPredictor, X: np.ndarray) -> np.ndarray:
    if not isinstance(model, TrainedPredictor) or model.estimator is None:
        raise ValueError("model is not a fitted predictor")
    X = np.asarray(X, dtype=float)
    out = np.asarray(model.estimator.predict(X), dtype=float)
    if out.shape[0] != X.shape[0]:
        raise RuntimeError("prediction length mismatch")
    return out


def metrics(y: Sequence[float], y_hat: Sequence[float]) -> tuple[float, float]:
    """Mean absolute error and root mean squared error of paired values."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError("length mismatch")
    if y.size == 0:
        raise ValueError("empty input")
    err = y - y_hat
    mae = float(np.abs(err).mean())
    rmse = float(math.sqrt((err ** 2).mean()))
    return mae, rmse


@dataclass(frozen=True)
class FoldResult:
    label: str
    n_test: int
    mae: float
    rmse: float


@dataclass(frozen=True)
class EvalReport:
    protocol: EvalProtocol
    model_kind: ModelKind
    target_metric: str
    folds: tuple[FoldResult, ...]
    pooled_mae: float
    pooled_rmse: float

    def __post_init__(self):
        for f in self.folds:
            if not f.rmse >= f.mae >= 0:
                raise ValueError(f"fold {f.label}: rmse >= mae >= 0 violated")
        if not self.pooled_rmse >= self.pooled_mae >= 0:
            raise ValueError("pooled rmse >= mae >= 0 violated")


def altitude_fold_indices(alts: np.ndarray, bin_width_m: float = 10.0
                          ) -> list[tuple[float, np.ndarray]]:
    """Group row indices by altitude bin (floor-anchored, like the ingest bins)."""
    lows = np.floor(np.asarray(alts, dtype=float) / bin_width_m) * bin_width_m
    return [(lo, np.flatnonzero(lows == lo)) for lo in sorted(set(lows.tolist()))]


def eval_loao(X: np.ndarray, y: np.ndarray, model_kind: ModelKind,
              bin_width_m: float = 10.0, seed: int = 0,
              hyperparams: Optional[dict] = None,
              target_metric: str = "rsrp") -> EvalReport:
    """Leave-one-altitude-out cross-validation.

    Each fold drops every row of one altitude bin from training and
    predicts exactly those rows. Pooled metrics are computed over the
    concatenation of all held-out predictions, so the pooled numbers are a
    single application of the error formulas, not a mean of fold means.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = altitude_fold_indices(X[:, 2], bin_width_m)
    if len(groups) < 2:
        raise ValueError("need at least 2 non-empty altitude bins")

    folds = []
    pooled_y, pooled_hat = [], []
    for lo, test_idx in groups:
        train_mask = np.ones(len(X), dtype=bool)
        train_mask[test_idx] = False
        train_idx = np.flatnonzero(train_mask)
        if len(train_idx) == 0:
            raise ValueError(f"altitude bin at {lo} m contains every row")
        assert not set(train_idx.tolist()) & set(test_idx.tolist())
        model = fit(X[train_idx], y[train_idx], model_kind, hyperparams, seed,
                    target_metric)
        y_hat = predict(model, X[test_idx])
        mae, rmse = metrics(y[test_idx], y_hat)
        folds.append(FoldResult(label=f"alt[{lo:g},{lo + bin_width_m:g})",
                                n_test=len(test_idx), mae=mae, rmse=rmse))
        pooled_y.append(y[test_idx])
        pooled_hat.append(y_hat)

    pooled_mae, pooled_rmse = metrics(np.concatenate(pooled_y),
                                      np.concatenate(pooled_hat))
    return EvalReport(protocol=EvalProtocol.LOAO, model_kind=model_kind,
                      target_metric=target_metric, folds=tuple(folds),
                      pooled_mae=pooled_mae, pooled_rmse=pooled_rmse)


def eval_split(X: np.ndarray, y: np.ndarray, model_kind: ModelKind,
               test_fraction: float = 0.2, seed: int = 0,
               hyperparams: Optional[dict] = None,
               target_metric: str = "rsrp") -> EvalReport:
    """Seeded uniform shuffle into disjoint train/test; metrics on test only."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(X)
    if n < 10:
        raise ValueError("need at least 10 rows")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise ValueError(f"degenerate split: {n} rows at fraction {test_fraction}")
    test_idx = perm[:n_test]
    train_idx = perm[n_test:]

    model = fit(X[train_idx], y[train_idx], model_kind, hyperparams, seed,
                target_metric)
    y_hat = predict(model, X[test_idx])
    mae, rmse = metrics(y[test_idx], y_hat)
    fold = FoldResult(label="test", n_test=n_test, mae=mae, rmse=rmse)
    return EvalReport(protocol=EvalProtocol.RANDOM_SPLIT_80_20,
                      model_kind=model_kind, target_metric=target_metric,
                      folds=(fold,), pooled_mae=mae, pooled_rmse=rmse)


def save_model(model: TrainedPredictor, path) -> None:
    """Persist a fitted predictor in the versioned envelope format."""
    payload = {
        "format": MODEL_FILE_FORMAT,
        "version": MODEL_FILE_VERSION,
        "model_kind": model.model_kind.value,
        "target_metric": model.target_metric,
        "train_seed": model.train_seed,
        "feature_names": list(FEATURE_NAMES),
        "estimator": model.estimator,
    }
    with Path(path).open("wb") as fh:
        pickle.dump(payload, fh)


def load_model(path) -> TrainedPredictor:
    with Path(path).open("rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FILE_FORMAT:
        raise ValueError(f"{path}: not a predictor file")
    if payload.get("version") != MODEL_FILE_VERSION:
        raise ValueError(f"{path}: unsupported version {payload.get('version')}")
    return TrainedPredictor(model_kind=ModelKind(payload["model_kind"]),
                            target_metric=payload["target_metric"],
                            estimator=payload["estimator"],
                            train_seed=payload["train_seed"])
