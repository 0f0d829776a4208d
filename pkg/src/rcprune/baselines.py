"""Neuron-importance pruners used as comparison baselines.

Each baseline scores neurons from the quantized state trace on the
calibration slice; a recurrent weight w_r[i, j] inherits the importance of
its destination neuron i.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .data import REGRESSION
from .errors import ConvergenceError
from .quant import Calibration, QuantizedModel, run_quantized
from .reservoir import one_hot
from .sensitivity import SensitivityReport

MI_BINS = 8
PCA_K = 10
LASSO_TOL = 1e-6
LASSO_MAX_SWEEPS = 10_000


def calibration_trace(qm: QuantizedModel, calib: Calibration):
    """Dequantized states and targets aligned sample by sample.

    Regression: one row per scored time step. Classification: per-sequence
    time-mean states against one-hot labels.
    """
    states = run_quantized(qm, calib.u_int).astype(float) / qm.state_scale
    if calib.task == REGRESSION:
        return states[0, calib.warmup:], np.asarray(calib.targets, dtype=float)
    n_classes = max(calib.n_classes, int(np.max(calib.targets)) + 1)
    return states.mean(axis=1), one_hot(calib.targets, n_classes)


def neuron_to_weight_scores(qm: QuantizedModel, importance, kind, calib_id, flags=None) -> SensitivityReport:
    imp = np.asarray(importance, dtype=float)
    scores = imp[qm.positions[:, 0]] if len(qm.positions) else np.zeros(0)
    return SensitivityReport(kind, qm.positions.copy(), scores, qm.q, calib_id, None, flags or {})


def random_scores(qm: QuantizedModel, seed: int = 0) -> SensitivityReport:
    scores = np.random.default_rng(seed).random(len(qm.positions))
    return SensitivityReport("random", qm.positions.copy(), scores, qm.q, f"seed={seed}")


# -- rank correlation --------------------------------------------------------


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    rx = rankdata(x) - (len(x) + 1) / 2
    ry = rankdata(y) - (len(y) + 1) / 2
    return float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def spearman_importance(states, targets):
    targets = np.asarray(targets, dtype=float).reshape(len(states), -1)
    return np.array(
        [max(abs(spearman(states[:, j], targets[:, o])) for o in range(targets.shape[1]))
         for j in range(states.shape[1])]
    )


def spearman_scores(qm: QuantizedModel, calib: Calibration) -> SensitivityReport:
    s, y = calibration_trace(qm, calib)
    return neuron_to_weight_scores(qm, spearman_importance(s, y), "spearman", calib.identifier)


# -- mutual information ----------------------------------------------------------


def equal_frequency_bins(x, n_bins: int):
    """Bin labels from ranks; tied values always share a bin."""
    x = np.asarray(x, dtype=float)
    r = rankdata(x, method="min") - 1
    return np.minimum((r * n_bins) // len(x), n_bins - 1).astype(np.int64)


def mutual_information(x, y, n_bins: int = MI_BINS):
    """Plug-in MI estimate in nats; returns (mi, degenerate)."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    bx = equal_frequency_bins(x, n_bins)
    by = equal_frequency_bins(y, n_bins)
    if len(np.unique(bx)) < 2 or len(np.unique(by)) < 2:
        return 0.0, True
    joint = np.zeros((n_bins, n_bins))
    np.add.at(joint, (bx, by), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))
    return max(mi, 0.0), False


def mi_importance(states, targets, n_bins: int = MI_BINS):
    targets = np.asarray(targets, dtype=float).reshape(len(states), -1)
    imp = np.zeros(states.shape[1])
    degenerate = []
    for j in range(states.shape[1]):
        best, deg = 0.0, True
        for o in range(targets.shape[1]):
            mi, d = mutual_information(states[:, j], targets[:, o], n_bins)
            best = max(best, mi)
            deg = deg and d
        imp[j] = best
        if deg:
            degenerate.append(j)
    return imp, degenerate


def mi_scores(qm: QuantizedModel, calib: Calibration, n_bins: int = MI_BINS) -> SensitivityReport:
    s, y = calibration_trace(qm, calib)
    imp, degenerate = mi_importance(s, y, n_bins)
    flags = {"degenerate_neurons": degenerate} if degenerate else {}
    return neuron_to_weight_scores(qm, imp, "mutual_information", calib.identifier, flags)


# -- PCA ----------------------------------------------------------------------


def pca_importance(states, k: int = PCA_K):
    """Explained-variance-weighted squared loadings over the top-k components."""
    states = np.asarray(states, dtype=float)
    n = states.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    x = states - states.mean(axis=0)
    cov = x.T @ x / max(len(x) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    total = float(np.sum(np.clip(evals, 0, None)))
    if total <= 0:
        return np.zeros(n), True
    tol = evals[0] * n * np.finfo(float).eps
    avail = int(np.sum(evals > tol))
    used = min(k, avail)
    ratio = np.clip(evals[:used], 0, None) / total
    return (evecs[:, :used] ** 2) @ ratio, used < k


def pca_scores(qm: QuantizedModel, calib: Calibration, k: int = PCA_K) -> SensitivityReport:
    s, _ = calibration_trace(qm, calib)
    imp, deficient = pca_importance(s, min(k, s.shape[1]))
    flags = {"rank_deficient": True} if deficient else {}
    return neuron_to_weight_scores(qm, imp, "pca", calib.identifier, flags)


# -- Lasso ----------------------------------------------------------------------


def lasso_cd(x, y, alpha: float, tol: float = LASSO_TOL, max_sweeps: int = LASSO_MAX_SWEEPS):
    """Minimize 0.5 * ||y - x w||^2 + alpha * ||w||_1 by cyclic coordinate descent.

    Stops when the duality gap is at most ``tol * ||y||^2``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n_feat = x.shape[1]
    w = np.zeros(n_feat)
    col_sq = np.einsum("ij,ij->j", x, x)
    r = y.copy()
    yy = float(y @ y)
    gap = np.inf
    for _ in range(max_sweeps):
        for j in range(n_feat):
            if col_sq[j] == 0:
                continue
            rho = x[:, j] @ r + col_sq[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - alpha, 0.0) / col_sq[j]
            if new != w[j]:
                r -= x[:, j] * (new - w[j])
                w[j] = new
        gap = duality_gap(x, y, w, r, alpha)
        if gap <= tol * max(yy, np.finfo(float).tiny):
            return w, gap
    raise ConvergenceError(f"lasso did not converge in {max_sweeps} sweeps", gap)


def duality_gap(x, y, w, r, alpha) -> float:
    corr = np.max(np.abs(x.T @ r)) if x.shape[1] else 0.0
    nu = r * min(1.0, alpha / corr) if corr > 0 else r
    primal = 0.5 * float(r @ r) + alpha * float(np.sum(np.abs(w)))
    dual = 0.5 * float(y @ y) - 0.5 * float((y - nu) @ (y - nu))
    return primal - dual


def default_alpha(x, y, fraction: float = 0.01) -> float:
    y = np.asarray(y, dtype=float).reshape(len(x), -1)
    peak = float(np.max(np.abs(x.T @ y)))
    return fraction * peak if peak > 0 else 1.0


def collinear_representatives(x):
    """First column of every group of exactly proportional columns.

    Proportional columns leave the lasso objective flat along their mix and
    stall coordinate descent; the group's weight goes to its first column.
    """
    x = np.asarray(x, dtype=float)
    first = np.argmax(x != 0, axis=0)
    pivot = x[first, np.arange(x.shape[1])]
    pivot = np.where(pivot == 0, 1.0, pivot)
    _, idx = np.unique(x / pivot, axis=1, return_index=True)
    return np.sort(idx)


def lasso_importance(states, targets, alpha: float | None = None):
    targets = np.asarray(targets, dtype=float).reshape(len(states), -1)
    # unpenalized intercept: center both sides
    x = np.asarray(states, dtype=float)
    x = x - x.mean(axis=0)
    targets = targets - targets.mean(axis=0)
    a = default_alpha(x, targets) if alpha is None else alpha
    keep = collinear_representatives(x)
    x = x[:, keep]
    imp = np.zeros(states.shape[1])
    for o in range(targets.shape[1]):
        w, _ = lasso_cd(x, targets[:, o], a)
        imp[keep] += np.abs(w)
    return imp, a


def lasso_scores(qm: QuantizedModel, calib: Calibration, alpha: float | None = None) -> SensitivityReport:
    s, y = calibration_trace(qm, calib)
    imp, a = lasso_importance(s, y, alpha)
    return neuron_to_weight_scores(qm, imp, "lasso", calib.identifier, {"alpha": a})


def pruner_report(kind: str, qm: QuantizedModel, calib: Calibration, seed: int = 0, jobs: int = 1) -> SensitivityReport:
    from .sensitivity import sensitivity_scores

    if kind == "sensitivity":
        return sensitivity_scores(qm, calib, jobs=jobs)
    if kind == "random":
        return random_scores(qm, seed)
    if kind == "spearman":
        return spearman_scores(qm, calib)
    if kind == "mutual_information":
        return mi_scores(qm, calib)
    if kind == "pca":
        return pca_scores(qm, calib)
    if kind == "lasso":
        return lasso_scores(qm, calib)
    raise ValueError(f"unknown pruner {kind!r}")
