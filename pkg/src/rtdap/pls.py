"""Inferred-measurement analytics: NIPALS partial least squares regression
fitted from stored history, executed periodically over sliding windows.

Single-response PLS1: each derived output tag gets its own model. Feature
matrices are built by joining input tags on nearest timestamps; rows with
any missing input within tolerance are dropped.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .store import TsdbStore


class DegenerateInput(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass
class PlsModel:
    """Fitted NIPALS weights/loadings plus the standardization applied at
    fit time. ``kept`` maps model columns back to input columns after
    zero-variance drops."""

    weights: np.ndarray  # (p_kept, k)
    loadings: np.ndarray  # (p_kept, k)
    q: np.ndarray  # (k,)
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    kept: np.ndarray
    n_features_in: int

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    def coefficients(self) -> np.ndarray:
        """Regression vector B in standardized space: W (PᵀW)⁻¹ q."""
        pw = self.loadings.T @ self.weights
        return self.weights @ np.linalg.solve(pw, self.q)


def pls_fit(X, y, k: int) -> PlsModel:
    """Fit k components by NIPALS on centered/scaled data.

    Per component: w ∝ Xᵀy (unit norm), t = Xw, p = Xᵀt/tᵀt, q = yᵀt/tᵀt,
    then deflate X ← X - tpᵀ and y ← y - qt.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise DegenerateInput("X must be a 2-d matrix")
    n, p = X.shape
    if n != len(y):
        raise DimensionMismatch(f"X has {n} rows but y has {len(y)}")
    if n < 2:
        raise DegenerateInput(f"need at least 2 samples, got {n}")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise DegenerateInput("non-finite entries in training data")

    x_mean_all = X.mean(axis=0)
    x_std_all = X.std(axis=0)
    # numerically-constant columns have std at rounding level, not exactly 0
    var_floor = np.finfo(np.float64).eps * 1000 * np.maximum(1.0, np.abs(x_mean_all))
    kept = np.flatnonzero(x_std_all > var_floor)
    if len(kept) == 0:
        raise DegenerateInput("all feature columns are constant")
    if len(kept) < p:
        warnings.warn(
            f"dropping {p - len(kept)} zero-variance feature column(s)", stacklevel=2
        )
    if not 1 <= k <= min(n - 1, len(kept)):
        raise DegenerateInput(f"k={k} not in 1..min(n-1, p)={min(n - 1, len(kept))}")

    x_mean = x_mean_all[kept]
    x_std = x_std_all[kept]
    y_mean = float(y.mean())
    y_std = float(y.std())
    y_floor = float(np.finfo(np.float64).eps * 1000 * max(1.0, abs(y_mean)))
    y_scale = y_std if y_std > y_floor else 1.0

    Xc = (X[:, kept] - x_mean) / x_std
    yc = (y - y_mean) / y_scale

    p_kept = len(kept)
    W = np.zeros((p_kept, k))
    P = np.zeros((p_kept, k))
    q = np.zeros(k)
    eps = np.finfo(np.float64).eps
    actual = 0
    for c in range(k):
        w = Xc.T @ yc
        norm = np.linalg.norm(w)
        if norm < eps * 100:
            break  # response deflated to numerical zero
        w /= norm
        t = Xc @ w
        tt = float(t @ t)
        if tt < eps * 100:
            break
        p_load = Xc.T @ t / tt
        q_c = float(yc @ t) / tt
        W[:, c] = w
        P[:, c] = p_load
        q[c] = q_c
        Xc -= np.outer(t, p_load)
        yc -= q_c * t
        actual = c + 1
    if actual == 0:
        raise DegenerateInput("no usable component (X uncorrelated with y)")
    return PlsModel(
        weights=W[:, :actual],
        loadings=P[:, :actual],
        q=q[:actual],
        x_mean=x_mean,
        x_std=x_std,
        y_mean=y_mean,
        y_std=float(y_scale),
        kept=kept,
        n_features_in=p,
    )


def pls_predict(model: PlsModel, x):
    """Predict for one feature vector (p,) or a batch (n, p)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.n_features_in:
        raise DimensionMismatch(f"expected {model.n_features_in} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise DegenerateInput("non-finite prediction input")
    Xs = (X[:, model.kept] - model.x_mean) / model.x_std
    yhat = model.y_mean + model.y_std * (Xs @ model.coefficients())
    return float(yhat[0]) if single else yhat


def fitted_r2(model: PlsModel, X, y) -> float:
    y = np.asarray(y, dtype=np.float64).ravel()
    pred = pls_predict(model, np.asarray(X, dtype=np.float64))
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def join_series(series: list[list[tuple]], tolerance_ms: float):
    """Align several raw-series on the first series' timestamps.

    series: per tag, ascending (time_ms, kind, value, status) tuples.
    Returns (matrix n x len(series), anchor timestamps); rows missing any
    input within tolerance are dropped.
    """
    if not series:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    anchor = series[0]
    ts = np.array([r[0] for r in anchor], dtype=np.int64)
    cols = [np.array([r[2] for r in anchor], dtype=np.float64)]
    keep = np.ones(len(ts), dtype=bool)
    for other in series[1:]:
        if not other:
            keep[:] = False
            cols.append(np.zeros(len(ts)))
            continue
        ots = np.array([r[0] for r in other], dtype=np.int64)
        ovs = np.array([r[2] for r in other], dtype=np.float64)
        idx = np.searchsorted(ots, ts)
        idx_left = np.clip(idx - 1, 0, len(ots) - 1)
        idx_right = np.clip(idx, 0, len(ots) - 1)
        d_left = np.abs(ts - ots[idx_left])
        d_right = np.abs(ots[idx_right] - ts)
        nearest = np.where(d_right < d_left, idx_right, idx_left)
        dist = np.minimum(d_left, d_right)
        keep &= dist <= tolerance_ms
        cols.append(ovs[nearest])
    matrix = np.column_stack(cols)[keep]
    return matrix, ts[keep]


def extract_training_set(
    store: TsdbStore,
    tags: list[str],
    from_ms: int,
    to_ms: int,
    tolerance_ms: float = 500.0,
):
    """Joined (rows = aligned timestamps, cols = tags) matrix from raw
    history; first tag supplies the anchor timestamps."""
    ids = [store.dictionary.id_of(t) for t in tags]
    series = [store.scan_raw(tag_id, from_ms, to_ms) for tag_id in ids]
    series = [[r for r in s if r[1] == "F"] for s in series]
    return join_series(series, tolerance_ms)


def save_model(path: str, model: PlsModel) -> None:
    np.savez(
        path,
        weights=model.weights,
        loadings=model.loadings,
        q=model.q,
        x_mean=model.x_mean,
        x_std=model.x_std,
        y_mean=model.y_mean,
        y_std=model.y_std,
        kept=model.kept,
        n_features_in=model.n_features_in,
    )


def load_model(path: str) -> PlsModel:
    data = np.load(path)
    return PlsModel(
        weights=data["weights"],
        loadings=data["loadings"],
        q=data["q"],
        x_mean=data["x_mean"],
        x_std=data["x_std"],
        y_mean=float(data["y_mean"]),
        y_std=float(data["y_std"]),
        kept=data["kept"],
        n_features_in=int(data["n_features_in"]),
    )


@dataclass
class WindowJobSpec:
    input_tags: list[str]
    output_tag: str
    window_ms: int
    period_ms: int
    k: int = 2

    def __post_init__(self) -> None:
        if not self.input_tags:
            raise ValueError("input_tags must be non-empty")
        if self.window_ms < self.period_ms:
            raise ValueError("window must be at least one period")


@dataclass
class WindowJobRunner:
    """Periodic execution: each tick reads the trailing window of every
    input tag, joins on nearest timestamps (within period/2), predicts on
    the latest joined row, and emits one output record stamped with the
    tick time. Ticks without a joined row are skipped and counted."""

    model: PlsModel
    spec: WindowJobSpec
    store: TsdbStore
    emit: object  # callable(tag_text, time_ms, value)
    ticks: int = 0
    emitted: int = 0
    skipped: int = 0
    _input_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._input_ids = [self.store.dictionary.id_of(t) for t in self.spec.input_tags]

    def tick(self, now_ms: int):
        self.ticks += 1
        series = [
            [r for r in self.store.scan_raw(tag_id, now_ms - self.spec.window_ms, now_ms) if r[1] == "F"]
            for tag_id in self._input_ids
        ]
        matrix, ts = join_series(series, self.spec.period_ms / 2)
        if matrix.shape[0] < 1:
            self.skipped += 1
            return None
        latest = matrix[-1]
        value = pls_predict(self.model, latest)
        self.emit(self.spec.output_tag, now_ms, value)
        self.emitted += 1
        return value

    def run_wall_clock(self, duration_s: float) -> None:
        end = time.monotonic() + duration_s
        while time.monotonic() < end:
            self.tick(int(time.time() * 1000))
            time.sleep(self.spec.period_ms / 1000.0)
