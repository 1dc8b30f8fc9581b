"""Loss, backpropagation through time, Adam and the model-selection sweep.

Gradients through the material cells use central finite differences of the
packed cell maps (output and internal variables w.r.t. input and
beginning-of-step internal variables); the linear and SoftPlus layers are
differentiated analytically.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .constitutive import fd_jacobians
from .network import (
    INIT_SCHEMES,
    LayerSizes,
    NetworkParams,
    _activation_params,
    _cohesive_jumps,
    _leaky_grads,
    _max_jump,
    bulk_cell,
    cohesive_cell,
    decoder_weights,
    forward_batch,
    init_params,
    sigmoid,
    softplus,
)

log = logging.getLogger(__name__)


class GradientError(FloatingPointError):
    def __init__(self, step):
        super().__init__(f"non-finite gradient at time step {step}")
        self.step = step


class TrainingDiverged(FloatingPointError):
    """Raised when the loss becomes non-finite; carries the last good checkpoint."""

    def __init__(self, epoch, checkpoint):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    batch_size: int = 8
    fd_step: float = 1e-7
    patience: int = 50
    rng_seed: int = 0
    init_scheme: str = "homogenized"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be > 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")


@dataclass
class ErrorReport:
    mse: float
    rmse: float
    per_path_mse: np.ndarray
    per_component_mse: np.ndarray

    @classmethod
    def from_predictions(cls, preds, targets):
        """Errors over a list of (T_i, 3) prediction/target pairs."""
        if len(preds) == 0:
            raise ValueError("cannot build an error report from an empty slice")
        sq = [np.sum((p - t) ** 2, axis=-1) for p, t in zip(preds, targets)]
        n = sum(s.size for s in sq)
        mse = float(sum(s.sum() for s in sq) / n)
        comp = sum(((p - t) ** 2).sum(axis=0) for p, t in zip(preds, targets)) / n
        return cls(mse, float(np.sqrt(mse)), np.array([s.mean() for s in sq]), np.asarray(comp))


# --------------------------------------------------------------------------
# Batching helpers
# --------------------------------------------------------------------------

def _as_batch(strains, targets=None):
    """Pad a list of (T_i, 3) arrays to (P, Tmax, 3) plus a step mask."""
    if isinstance(strains, np.ndarray) and strains.ndim == 3:
        P, T, _ = strains.shape
        mask = np.ones((P, T))
        tg = None if targets is None else np.asarray(targets, dtype=float)
        return strains.astype(float), tg, mask
    arrs = [np.asarray(s, dtype=float) for s in strains]
    if len(arrs) == 0:
        raise ValueError("empty batch")
    T = max(a.shape[0] for a in arrs)
    P = len(arrs)
    X = np.zeros((P, T, 3))
    Y = np.zeros((P, T, 3))
    mask = np.zeros((P, T))
    for i, a in enumerate(arrs):
        n = a.shape[0]
        X[i, :n] = a
        if n < T and n > 0:
            X[i, n:] = a[-1]
        mask[i, :n] = 1.0
        if targets is not None:
            Y[i, :n] = targets[i]
    return X, (Y if targets is not None else None), mask


def loss(strains, targets, params: NetworkParams):
    """Mean over all steps of the squared Euclidean stress error."""
    X, Y, mask = _as_batch(strains, targets)
    if mask.sum() == 0:
        raise ValueError("empty slice")
    pred = forward_batch(X, params)
    return float(np.sum(mask * np.sum((pred - Y) ** 2, axis=-1)) / mask.sum())


def mse_from_residuals(residuals):
    residuals = [np.asarray(r, dtype=float) for r in residuals]
    n = sum(r.shape[0] for r in residuals)
    if n == 0:
        raise ValueError("empty slice")
    return float(sum(np.sum(r ** 2) for r in residuals) / n)


# --------------------------------------------------------------------------
# Backpropagation through time
# --------------------------------------------------------------------------

def grads_bptt(strains, targets, params: NetworkParams, fd_step=1e-7):
    """Loss and its gradient w.r.t. every trainable weight.

    Parameters
    ----------
    strains, targets : list of (T_i, 3) arrays, or (P, T, 3) arrays
    params : NetworkParams
    fd_step : float
        Relative step of the material-cell finite differences.

    Returns
    -------
    loss : float
    grads : dict
        Same keys and shapes as ``params.trainable()``.
    """
    X, Y, mask = _as_batch(strains, targets)
    P, T, _ = X.shape
    N = mask.sum()
    if N == 0:
        raise ValueError("empty batch")
    arch = params.architecture
    nb, nc = params.n_bulk, params.n_cohesive
    bprops, cprops = params.bulk_props, params.czm_props
    Wb, Wc = params.W_bulk, params.W_coh
    W2eff = decoder_weights(params)

    def bfun(u, a):
        return bulk_cell(u, a, bprops)

    def cfun(j, a):
        return cohesive_cell(j, a, cprops)

    bulk = np.zeros((P, nb, 4))
    coh = np.zeros((P, nc, 2))
    tape = []
    total = 0.0
    for t in range(T):
        x = X[:, t]
        pre, jump = _cohesive_jumps(x, params)
        c_out, Jc_in, Jc_st = fd_jacobians(cfun, jump, coh[..., :1], fd_step)
        tr, d = c_out[..., :2], c_out[..., 2]
        coh = np.stack([d, _max_jump(jump, coh[..., 1])], axis=-1)
        v = x @ Wb.T
        if arch == "prnn1":
            u = v
            amp_pre = None
        elif arch == "prnn2":
            u = v + d @ params.Wd.T
            amp_pre = None
        else:
            amp_pre = 1.0 + d @ params.Wd.T
            u = softplus(amp_pre) * v
        b_out, Jb_in, Jb_st = fd_jacobians(bfun, u.reshape(P, nb, 3), bulk, fd_step)
        s = b_out[..., :3]
        bulk = b_out[..., 3:]
        z = s.reshape(P, 3 * nb)
        if arch == "prnn1":
            z = np.concatenate([z, tr.reshape(P, 2 * nc)], axis=-1)
        y = z @ W2eff.T
        err = (y - Y[:, t]) * mask[:, t:t + 1]
        total += np.sum(err ** 2)
        tape.append((x, pre, d, v, amp_pre, z, err, Jc_in, Jc_st, Jb_in, Jb_st))

    g = {k: np.zeros_like(w) for k, w in params.trainable().items()}
    gW2eff = np.zeros_like(W2eff)
    gW1 = g["W1"]
    lam_b = np.zeros((P, nb, 4))
    lam_c = np.zeros((P, nc, 1))
    if params.cohesive_mode == "leaky":
        act_w, act_b = _activation_params(params)
    for t in range(T - 1, -1, -1):
        x, pre, d, v, amp_pre, z, err, Jc_in, Jc_st, Jb_in, Jb_st = tape[t]
        gy = 2.0 * err / N
        gW2eff += gy.T @ z
        gz = gy @ W2eff
        gs = gz[:, : 3 * nb].reshape(P, nb, 3)
        gt = gz[:, 3 * nb:].reshape(P, nc, 2) if arch == "prnn1" else np.zeros((P, nc, 2))

        gout_b = np.concatenate([gs, lam_b], axis=-1)
        gu = np.einsum("pnoi,pno->pni", Jb_in, gout_b).reshape(P, 3 * nb)
        lam_b = np.einsum("pnoa,pno->pna", Jb_st, gout_b)
        if arch == "prnn1":
            gv = gu
            gd = np.zeros((P, nc))
        elif arch == "prnn2":
            gv = gu
            g["Wd"] += gu.T @ d
            gd = gu @ params.Wd
        else:
            gv = gu * softplus(amp_pre)
            ga = gu * v * sigmoid(amp_pre)
            g["Wd"] += ga.T @ d
            gd = ga @ params.Wd
        gW1[: 3 * nb] += gv.T @ x

        gout_c = np.concatenate([gt, gd[..., None] + lam_c], axis=-1)
        gjump = np.einsum("pnoi,pno->pni", Jc_in, gout_c)
        lam_c = np.einsum("pnoa,pno->pna", Jc_st, gout_c)
        if params.cohesive_mode == "leaky":
            dx, dw, db = _leaky_grads(pre, act_w, act_b)
            g["act_w"] += np.sum(gjump * dw, axis=0).reshape(-1) * sigmoid(params.act_w)
            g["act_b"] += np.sum(gjump * db, axis=0).reshape(-1) * sigmoid(params.act_b)
            gjump = gjump * dx
        gW1[3 * nb:] += gjump.reshape(P, 2 * nc).T @ x
        if not (np.all(np.isfinite(lam_b)) and np.all(np.isfinite(gW1))):
            raise GradientError(t)
    g["W2"] = gW2eff * sigmoid(params.W2)
    for k, v in g.items():
        if not np.all(np.isfinite(v)):
            raise GradientError(0)
    return float(total / N), g


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, weights):
        return cls(0, {k: np.zeros_like(w) for k, w in weights.items()},
                   {k: np.zeros_like(w) for k, w in weights.items()})


def adam_step(weights, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns new weights and optimizer state."""
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    new_w, new_m, new_v = {}, {}, {}
    for k, w in weights.items():
        gk = grads[k]
        if gk.shape != w.shape:
            raise ValueError(f"gradient for {k} has shape {gk.shape}, expected {w.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * gk
        v = b2 * state.v[k] + (1.0 - b2) * gk * gk
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_w[k] = w - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_m[k], new_v[k] = m, v
    return new_w, AdamState(t, new_m, new_v)


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: NetworkParams
    optimizer: AdamState
    config: TrainConfig
    epoch: int
    best_val_mse: float
    rng_seed: int


LOG_COLUMNS = ("epoch", "train_mse", "val_mse", "wall_time_s")


def train(train_set, val_set, config: TrainConfig, architecture="prnn3", sizes=LayerSizes(4, 1),
          init=None, cohesive_mode="linear", bulk_props=None, czm_props=None, clock=time.perf_counter):
    """Adam training with shuffled path batches and best-on-validation retention.

    ``train_set`` and ``val_set`` are ``(strains, targets)`` pairs of path lists
    (or any object with ``strains`` and ``stresses`` attributes). ``init`` may
    supply starting parameters; otherwise they are drawn from ``config.rng_seed``
    with ``config.init_scheme``.

    Returns
    -------
    checkpoint : Checkpoint
        Best parameters on the validation set.
    history : list of dict
        One row per epoch (epoch 0 is the initial model).
    """
    Xtr, Ytr = _unpack(train_set)
    Xva, Yva = _unpack(val_set)
    if len(Xtr) == 0:
        raise ValueError("empty training set")
    if init is None:
        params = init_params(architecture, sizes, config.rng_seed, cohesive_mode, bulk_props, czm_props,
                             config.init_scheme)
    else:
        params = init
    rng = np.random.default_rng(config.rng_seed)
    opt = AdamState.zeros_like(params.trainable())
    t0 = clock()

    def val_loss(p):
        return loss(Xva, Yva, p) if len(Xva) else float("nan")

    best_val = val_loss(params)
    train0 = loss(Xtr, Ytr, params)
    best = Checkpoint(params, opt, config, 0, best_val, config.rng_seed)
    history = [{"epoch": 0, "train_mse": train0, "val_mse": best_val, "wall_time_s": clock() - t0}]
    since_best = 0
    n_steps_total = sum(len(x) for x in Xtr)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(Xtr))
        acc = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            bl, grads = grads_bptt([Xtr[i] for i in idx], [Ytr[i] for i in idx], params, config.fd_step)
            if not np.isfinite(bl):
                raise TrainingDiverged(epoch, best)
            acc += bl * sum(len(Xtr[i]) for i in idx)
            w, opt = adam_step(params.trainable(), grads, opt, config)
            params = params.with_weights(w)
        train_mse = acc / n_steps_total
        v = val_loss(params)
        if not np.isfinite(train_mse) or (len(Xva) and not np.isfinite(v)):
            raise TrainingDiverged(epoch, best)
        history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": v, "wall_time_s": clock() - t0})
        log.debug("epoch %d train %.6g val %.6g", epoch, train_mse, v)
        if v < best_val:
            best_val = v
            best = Checkpoint(params, opt, config, epoch, v, config.rng_seed)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best, history


def _unpack(ds):
    if hasattr(ds, "strains"):
        return list(ds.strains), list(ds.stresses)
    X, Y = ds
    return list(X), list(Y)


def history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in history:
        w.writerow([row["epoch"], repr(float(row["train_mse"])), repr(float(row["val_mse"])),
                    f"{row['wall_time_s']:.3f}"])
    return buf.getvalue()


def evaluate(params: NetworkParams, strains, targets):
    preds = [forward_batch(np.asarray(s, dtype=float)[None], params)[0] for s in strains]
    return ErrorReport.from_predictions(preds, [np.asarray(t, dtype=float) for t in targets]), preds


# --------------------------------------------------------------------------
# Model selection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectionGrid:
    layer_sizes: tuple
    training_sizes: tuple
    n_inits: int = 10

    def __post_init__(self):
        if not self.layer_sizes or not self.training_sizes:
            raise ValueError("selection grid must not be empty")
        if self.n_inits < 1:
            raise ValueError("n_inits must be >= 1")

    @classmethod
    def default(cls, n_inits=10):
        sizes = tuple(LayerSizes.with_ratio(c) for c in (1, 2, 4, 7, 11, 20))
        return cls(sizes, (32, 64, 96, 128, 160, 192), n_inits)


@dataclass
class SelectionResult:
    rows: list
    cells: dict
    selected: tuple

    def table_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_bulk", "n_cohesive", "training_size", "seed", "val_mse"])
        for r in self.rows:
            w.writerow([r["n_bulk"], r["n_cohesive"], r["training_size"], r["seed"], repr(float(r["val_mse"]))])
        return buf.getvalue()


def _select_job(job):
    arch, sizes, ntr, seed, train_set, val_set, config, cohesive_mode = job
    cfg = TrainConfig(**{**asdict(config), "rng_seed": seed})
    X, Y = train_set
    ck, _ = train((X[:ntr], Y[:ntr]), val_set, cfg, arch, sizes, cohesive_mode=cohesive_mode)
    return ck.best_val_mse


def select_from_table(rows):
    """Per-cell minimum and the selected cell (ties: smaller layer, then fewer paths)."""
    cells = {}
    for r in rows:
        key = (r["n_bulk"], r["n_cohesive"], r["training_size"])
        cells[key] = min(cells.get(key, np.inf), r["val_mse"])
    selected = min(cells, key=lambda k: (cells[k], k[0] + k[1], k[2]))
    return cells, selected


def model_select(grid: SelectionGrid, train_set, val_set, architecture, config: TrainConfig,
                 cohesive_mode="linear", n_workers=1, runner=None):
    """Train every (layer size, training size, seed) cell and pick the lowest validation MSE.

    Seeds are ``config.rng_seed + k`` for ``k < grid.n_inits``. ``runner`` can
    replace the training job (it receives the job tuple and returns a
    validation MSE), which keeps the selection logic testable on its own.
    """
    X, Y = _unpack(train_set)
    val = _unpack(val_set)
    jobs = []
    for sizes in grid.layer_sizes:
        for ntr in grid.training_sizes:
            if ntr > len(X):
                raise ValueError(f"training size {ntr} exceeds the {len(X)} available paths")
            for k in range(grid.n_inits):
                jobs.append((architecture, sizes, ntr, config.rng_seed + k, (X, Y), val, config, cohesive_mode))
    run = runner or _select_job
    if n_workers > 1 and runner is None:
        with ProcessPoolExecutor(n_workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    rows = [
        {"n_bulk": j[1].n_bulk, "n_cohesive": j[1].n_cohesive, "training_size": j[2], "seed": j[3], "val_mse": r}
        for j, r in zip(jobs, results)
    ]
    cells, selected = select_from_table(rows)
    return SelectionResult(rows, cells, selected)
