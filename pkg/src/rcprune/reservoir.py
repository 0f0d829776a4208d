"""Float-precision echo state networks: construction, state updates, ridge readout,
evaluation and hyperparameter random search."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import REGRESSION, TimeSeriesDataset
from .errors import (
    EmptyDatasetError,
    EmptyTraceError,
    IllConditionedError,
    InvalidSparsityError,
    NonFiniteStateError,
    SearchSpaceError,
    UntrainedError,
)

SCHEMA_VERSION = 1
ACTIVATIONS = ("tanh", "hardtanh")


def hardtanh(x):
    return np.clip(x, -1.0, 1.0)


def activation_fn(name):
    if name == "tanh":
        return np.tanh
    if name == "hardtanh":
        return hardtanh
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


@dataclass(frozen=True)
class Hyperparams:
    sr: float = 0.9
    lr: float = 1.0
    ncrl: int = 250
    ridge: float = 1e-8
    input_scaling: float = 2.0
    bias_scaling: float = 3.0
    activation: str = "hardtanh"

    def __post_init__(self):
        if not self.sr > 0:
            raise ValueError("spectral radius must be > 0")
        if not 0 < self.lr <= 1:
            raise ValueError("leaking rate must be in (0, 1]")
        if self.ridge < 0:
            raise ValueError("ridge coefficient must be >= 0")
        if self.ncrl < 1:
            raise InvalidSparsityError("ncrl must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class Performance:
    kind: str  # "rmse" or "accuracy"
    value: float

    def __post_init__(self):
        if self.kind not in ("rmse", "accuracy"):
            raise ValueError(f"unknown performance kind {self.kind!r}")

    def better_than(self, other: "Performance") -> bool:
        if self.kind == "rmse":
            return self.value < other.value
        return self.value > other.value

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["value"]))


def metric_for(task):
    return "rmse" if task == REGRESSION else "accuracy"


@dataclass(frozen=True)
class StateTrace:
    states: np.ndarray  # (T, N)
    t_range: range

    def __len__(self):
        return self.states.shape[0]


@dataclass(frozen=True)
class ReservoirModel:
    w_in: np.ndarray  # (N, d_in)
    w_r: np.ndarray  # (N, N) dense storage of a sparse matrix
    positions: np.ndarray  # (ncrl, 2) structural nonzeros of w_r, row-major sorted
    bias: np.ndarray  # (N,)
    hp: Hyperparams
    seed: int = 0
    w_out: Optional[np.ndarray] = None  # (d_out, N)
    # set when the spectral radius could not be estimated (nilpotent w_r)
    radius_fallback: bool = False

    @property
    def n(self) -> int:
        return self.w_r.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_in.shape[1]

    @property
    def sr(self):
        return self.hp.sr

    @property
    def lr(self):
        return self.hp.lr

    @property
    def activation(self):
        return self.hp.activation

    @property
    def ncrl(self) -> int:
        return len(self.positions)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "reservoir_model",
            "metadata": {
                "seed": self.seed,
                "hyperparams": asdict(self.hp),
                "radius_fallback": self.radius_fallback,
                "n": self.n,
                "d_in": self.d_in,
            },
            "w_in": self.w_in.tolist(),
            "w_r": self.w_r.tolist(),
            "w_r_positions": self.positions.tolist(),
            "bias": self.bias.tolist(),
            "w_out": None if self.w_out is None else self.w_out.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {d.get('schema_version')!r}")
        meta = d["metadata"]
        n = int(meta["n"])
        return cls(
            w_in=np.asarray(d["w_in"], dtype=float).reshape(n, -1),
            w_r=np.asarray(d["w_r"], dtype=float).reshape(n, n),
            positions=np.asarray(d["w_r_positions"], dtype=np.int64).reshape(-1, 2),
            bias=np.asarray(d["bias"], dtype=float),
            hp=Hyperparams(**meta["hyperparams"]),
            seed=int(meta["seed"]),
            w_out=None if d["w_out"] is None else np.asarray(d["w_out"], dtype=float).reshape(-1, n),
            radius_fallback=bool(meta.get("radius_fallback", False)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- spectral radius --------------------------------------------------------


def _ritz_radius(w, v, m):
    """Largest |Ritz value| of an ``m``-step Arnoldi factorisation started at ``v``."""
    n = len(v)
    basis = np.zeros((m + 1, n))
    h = np.zeros((m + 1, m))
    basis[0] = v
    k = m
    for j in range(m):
        x = w @ basis[j]
        for i in range(j + 1):
            h[i, j] = basis[i] @ x
            x = x - h[i, j] * basis[i]
        nrm = np.linalg.norm(x)
        h[j + 1, j] = nrm
        if nrm <= 1e-14 * max(1.0, np.abs(h[: j + 1, j]).max()):
            k = j + 1
            break
        basis[j + 1] = x / nrm
    return float(np.max(np.abs(np.linalg.eigvals(h[:k, :k]))))


def spectral_radius(w, max_iter=1000, tol=1e-9, krylov=32):
    """Dominant eigenvalue magnitude of ``w`` by power iteration.

    The iterate starts at the normalized all-ones vector. Each step extracts
    Ritz values from a small Krylov space at the current iterate so that
    complex-conjugate or sign-alternating dominant pairs, where plain power
    iteration oscillates, still converge. Returns ``(estimate, converged)``;
    a nilpotent matrix yields ``(0.0, False)``.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if n == 1:
        return abs(float(w[0, 0])), True
    scale = np.abs(w).sum(axis=1).max()
    if scale == 0:
        return 0.0, False
    m = min(n, krylov)
    v = np.ones(n) / math.sqrt(n)
    prev = None
    stable = 0
    for _ in range(max_iter):
        est = _ritz_radius(w, v, m)
        if prev is not None and abs(est - prev) <= tol * max(est, 1e-300):
            stable += 1
            if stable == 2:
                break
        else:
            stable = 0
        prev = est
        x = w @ v
        nrm = np.linalg.norm(x)
        if nrm <= 1e-300 or nrm < 1e-13 * scale * np.linalg.norm(v):
            return 0.0, False
        v = x / nrm
    if est <= 1e-10 * scale:
        return 0.0, False
    return est, True


# -- construction and dynamics ---------------------------------------------


def init_reservoir(hp: Hyperparams, n: int, d_in: int, seed: int = 0) -> ReservoirModel:
    """Random reservoir with exactly ``hp.ncrl`` recurrent connections.

    Draw order from ``numpy.random.default_rng(seed)``: input weights, the
    connection positions (without replacement), their values, then the bias.
    """
    if n < 1 or d_in < 1:
        raise ValueError("n and d_in must be >= 1")
    if hp.ncrl > n * n:
        raise InvalidSparsityError(f"ncrl={hp.ncrl} exceeds n^2={n * n}")
    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-1.0, 1.0, size=(n, d_in)) * hp.input_scaling
    flat = np.sort(rng.choice(n * n, size=hp.ncrl, replace=False))
    values = rng.uniform(-1.0, 1.0, size=hp.ncrl)
    bias = rng.uniform(-1.0, 1.0, size=n) * hp.bias_scaling
    w_r = np.zeros(n * n)
    w_r[flat] = values
    w_r = w_r.reshape(n, n)
    positions = np.stack(np.divmod(flat, n), axis=1).astype(np.int64)

    rho, ok = spectral_radius(w_r)
    fallback = not ok
    if fallback:
        rho = np.abs(w_r).sum(axis=1).max()
    w_r = w_r * (hp.sr / rho)
    return ReservoirModel(
        w_in=w_in, w_r=w_r, positions=positions, bias=bias, hp=hp,
        seed=int(seed), radius_fallback=bool(fallback),
    )


def update_state(m: ReservoirModel, u, s_prev):
    u = np.asarray(u, dtype=float).reshape(m.d_in)
    pre = (m.w_in @ u + m.bias) + m.w_r @ s_prev
    if not np.all(np.isfinite(pre)):
        raise NonFiniteStateError("non-finite reservoir pre-activation")
    f = activation_fn(m.activation)
    if m.lr == 1.0:
        return f(pre)
    return (1.0 - m.lr) * s_prev + m.lr * f(pre)


def run_reservoir(m: ReservoirModel, series, s0=None) -> StateTrace:
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.shape[0] == 0:
        raise EmptyTraceError("cannot run the reservoir on an empty series")
    s = np.zeros(m.n) if s0 is None else np.asarray(s0, dtype=float)
    out = np.empty((series.shape[0], m.n))
    for t in range(series.shape[0]):
        s = update_state(m, series[t], s)
        out[t] = s
    return StateTrace(out, range(series.shape[0]))


def washout_length(n_train: int) -> int:
    return min(100, n_train // 10)


def train_readout(trace, targets, ridge: float):
    """Ridge regression ``Y X^T (X X^T + ridge I)^-1`` with states as columns of X."""
    x = trace.states if isinstance(trace, StateTrace) else np.asarray(trace, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] < y.shape[0]:
        raise ValueError("fewer state rows than target rows")
    x = x[: y.shape[0]]
    gram = x.T @ x
    rhs = x.T @ y  # = (Y X^T)^T
    n = gram.shape[0]
    if ridge == 0 and np.linalg.matrix_rank(gram) < n:
        raise IllConditionedError("singular state Gram matrix with ridge=0; use ridge > 0")
    a = gram + ridge * np.eye(n)
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise IllConditionedError("singular state Gram matrix; increase the ridge coefficient") from None
    # iterative refinement drives the normal-equation residual to round-off
    for _ in range(3):
        res = rhs - a @ sol
        if np.linalg.norm(res) <= 1e-12 * max(np.linalg.norm(rhs), 1e-300):
            break
        sol = sol + np.linalg.solve(a, res)
    return sol.T


def predict(m: ReservoirModel, series, s0=None):
    if m.w_out is None:
        raise UntrainedError("model readout has not been trained")
    return run_reservoir(m, series, s0).states @ m.w_out.T


def one_hot(labels, n_classes):
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def collect_training_states(m: ReservoirModel, ds: TimeSeriesDataset):
    """States and aligned targets used to fit the readout."""
    if ds.task == REGRESSION:
        states = run_reservoir(m, ds.train_inputs).states
        w = washout_length(ds.n_train)
        return states[w:], ds.train_targets[w:]
    xs, ys = [], []
    for k in range(ds.n_train):
        xs.append(run_reservoir(m, ds.inputs[k]).states)
        ys.append(np.repeat(one_hot([ds.targets[k]], ds.n_classes), ds.inputs.shape[1], axis=0))
    return np.concatenate(xs), np.concatenate(ys)


def fit(m: ReservoirModel, ds: TimeSeriesDataset, ridge: Optional[float] = None) -> ReservoirModel:
    x, y = collect_training_states(m, ds)
    w_out = train_readout(x, y, m.hp.ridge if ridge is None else ridge)
    return replace(m, w_out=w_out)


def rmse(pred, target) -> float:
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


def sequence_accuracy(outputs, labels) -> float:
    """``outputs`` is ``(n_seq, L, n_classes)``; mean over time, then argmax."""
    decided = np.argmax(np.asarray(outputs).mean(axis=1), axis=1)
    return float(np.mean(decided == np.asarray(labels)))


def evaluate(m: ReservoirModel, ds: TimeSeriesDataset) -> Performance:
    if ds.n_test < 1:
        raise EmptyDatasetError("empty test split")
    if ds.task == REGRESSION:
        end = ds.n_train + ds.n_test
        y = predict(m, ds.inputs[:end])
        return Performance("rmse", rmse(y[ds.n_train:], ds.test_targets))
    outs = np.stack([predict(m, seq) for seq in ds.test_inputs])
    return Performance("accuracy", sequence_accuracy(outs, ds.test_targets))


# -- random search ----------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    """Closed sampling ranges; ``ridge`` is sampled log-uniformly."""

    sr: tuple = (0.1, 1.5)
    lr: tuple = (0.1, 1.0)
    ncrl: Optional[tuple] = None  # defaults to (N, 10 N)
    ridge: tuple = (1e-12, 1e-2)

    def resolved_ncrl(self, n):
        return self.ncrl if self.ncrl is not None else (n, 10 * n)

    def validate(self, n):
        for name in ("sr", "lr", "ridge"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SearchSpaceError(f"empty range for {name}: [{lo}, {hi}]")
        lo, hi = self.resolved_ncrl(n)
        if lo > hi or hi < 1:
            raise SearchSpaceError(f"empty range for ncrl: [{lo}, {hi}]")
        if self.ridge[0] <= 0:
            raise SearchSpaceError("ridge range must be positive for log-uniform sampling")

    def sample(self, rng, n, base: Hyperparams):
        lo, hi = self.resolved_ncrl(n)
        ncrl = int(rng.integers(lo, min(hi, n * n) + 1))
        lg = rng.uniform(math.log(self.ridge[0]), math.log(self.ridge[1]))
        return replace(
            base,
            sr=float(rng.uniform(*self.sr)),
            lr=float(rng.uniform(*self.lr)),
            ncrl=ncrl,
            ridge=float(math.exp(lg)) if self.ridge[0] != self.ridge[1] else self.ridge[0],
        )


@dataclass(frozen=True)
class Trial:
    index: int
    hp: Hyperparams
    model_seed: int
    perf: Optional[Performance]
    error: Optional[str] = None

    def to_dict(self):
        return {
            "index": self.index,
            "hyperparams": asdict(self.hp),
            "model_seed": self.model_seed,
            "perf": None if self.perf is None else self.perf.to_dict(),
            "error": self.error,
        }


@dataclass(frozen=True)
class SearchResult:
    best: Hyperparams
    best_perf: Performance
    best_seed: int
    trials: list = field(default_factory=list)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "search_result",
            "best": asdict(self.best),
            "best_perf": self.best_perf.to_dict(),
            "best_seed": self.best_seed,
            "trials": [t.to_dict() for t in self.trials],
        }

    @classmethod
    def from_dict(cls, d):
        trials = [
            Trial(
                t["index"], Hyperparams(**t["hyperparams"]), t["model_seed"],
                None if t["perf"] is None else Performance.from_dict(t["perf"]), t.get("error"),
            )
            for t in d["trials"]
        ]
        return cls(Hyperparams(**d["best"]), Performance.from_dict(d["best_perf"]), d["best_seed"], trials)


def _run_trial(args):
    index, hp, seed, n, val = args
    try:
        m = fit(init_reservoir(hp, n, val.d_in, seed), val)
        perf = evaluate(m, val)
        if not math.isfinite(perf.value):
            raise FloatingPointError("non-finite performance")
        return Trial(index, hp, seed, perf)
    except Exception as exc:  # a bad sample must not abort the search
        return Trial(index, hp, seed, None, f"{type(exc).__name__}: {exc}")


def random_search(
    space: SearchSpace,
    n_trials: int,
    ds: TimeSeriesDataset,
    seed: int = 0,
    n: int = 50,
    base: Hyperparams = Hyperparams(),
    jobs: int = 1,
    val_fraction: float = 0.2,
) -> SearchResult:
    """Uniform random search scored on the last ``val_fraction`` of training data."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    space.validate(n)
    val = ds.validation_split(val_fraction)
    rng = np.random.default_rng(seed)
    jobs_args = []
    for i in range(n_trials):
        hp = space.sample(rng, n, base)
        model_seed = int(rng.integers(0, 2**63 - 1))
        jobs_args.append((i, hp, model_seed, n, val))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            trials = list(ex.map(_run_trial, jobs_args, chunksize=max(1, n_trials // (4 * jobs))))
    else:
        trials = [_run_trial(a) for a in jobs_args]
    best = None
    for t in trials:
        if t.perf is not None and (best is None or t.perf.better_than(best.perf)):
            best = t
    if best is None:
        raise RuntimeError("every search trial failed")
    return SearchResult(best.hp, best.perf, best.model_seed, trials)
