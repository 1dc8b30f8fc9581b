"""Forward pass of the physically recurrent network in its three layouts.

``prnn1``
    One material layer with bulk (J2) and cohesive (CZM) points; stresses and
    tractions are both decoded.
``prnn2``
    Cohesive layer first; its damage is added to the encoded bulk strains
    through a dense matrix ``Wd``.
``prnn3``
    Cohesive damage scales the encoded bulk strains through
    ``softplus(1 + Wd d)``.

In every layout the encoder ``W1`` is one bias-free dense matrix whose first
``3 * n_bulk`` rows feed the bulk points (point-major) and whose last
``2 * n_cohesive`` rows feed the cohesive points. The decoder applies SoftPlus
to its raw weights and has no bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constitutive import (
    BulkProps,
    BulkState,
    CohesiveState,
    CzmProps,
    _czm_core,
    _j2_core,
)
from .loadpaths import StrainPath

ARCHITECTURES = ("prnn1", "prnn2", "prnn3")
COHESIVE_MODES = ("linear", "leaky")
LEAK = 0.01


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass(frozen=True)
class LayerSizes:
    n_bulk: int
    n_cohesive: int

    def __post_init__(self):
        if self.n_bulk < 1:
            raise ValueError("n_bulk must be >= 1")
        if self.n_cohesive < 0:
            raise ValueError("n_cohesive must be >= 0")

    @classmethod
    def with_ratio(cls, n_cohesive, ratio=4):
        return cls(ratio * n_cohesive, n_cohesive)

    def __str__(self):
        return f"{self.n_bulk}+{self.n_cohesive}"


@dataclass
class NetworkParams:
    architecture: str
    sizes: LayerSizes
    W1: np.ndarray
    W2: np.ndarray
    Wd: np.ndarray | None = None
    act_w: np.ndarray | None = None
    act_b: np.ndarray | None = None
    cohesive_mode: str = "linear"
    bulk_props: BulkProps = field(default_factory=BulkProps)
    czm_props: CzmProps = field(default_factory=CzmProps)
    init_seed: int | None = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.cohesive_mode not in COHESIVE_MODES:
            raise ValueError(f"unknown cohesive mode {self.cohesive_mode!r}")
        if self.cohesive_mode == "leaky" and self.architecture == "prnn1":
            # the leaky activation is nonzero at zero strain and PRNN1 decodes
            # the resulting compressive traction directly
            raise ValueError("the leaky cohesive activation is only available for prnn2/prnn3")
        nb, nc = self.sizes.n_bulk, self.sizes.n_cohesive
        self.W1 = np.asarray(self.W1, dtype=float)
        self.W2 = np.asarray(self.W2, dtype=float)
        if self.W1.shape != (3 * nb + 2 * nc, 3):
            raise ValueError(f"W1 has shape {self.W1.shape}, expected {(3 * nb + 2 * nc, 3)}")
        n_dec = 3 * nb + 2 * nc if self.architecture == "prnn1" else 3 * nb
        if self.W2.shape != (3, n_dec):
            raise ValueError(f"W2 has shape {self.W2.shape}, expected {(3, n_dec)}")
        if self.architecture == "prnn1":
            if self.Wd is not None:
                raise ValueError("prnn1 has no damage coupling")
        else:
            self.Wd = np.asarray(self.Wd, dtype=float)
            if self.Wd.shape != (3 * nb, nc):
                raise ValueError(f"Wd has shape {self.Wd.shape}, expected {(3 * nb, nc)}")
        if self.cohesive_mode == "leaky":
            self.act_w = np.asarray(self.act_w, dtype=float)
            self.act_b = np.asarray(self.act_b, dtype=float)
            if self.act_w.shape != (2 * nc,) or self.act_b.shape != (2 * nc,):
                raise ValueError("leaky activation parameters need shape (2 * n_cohesive,)")

    @property
    def n_bulk(self):
        return self.sizes.n_bulk

    @property
    def n_cohesive(self):
        return self.sizes.n_cohesive

    @property
    def W_bulk(self):
        return self.W1[: 3 * self.n_bulk]

    @property
    def W_coh(self):
        return self.W1[3 * self.n_bulk:]

    def trainable(self):
        """Name -> array of every trainable weight (raw, before any SoftPlus)."""
        out = {"W1": self.W1, "W2": self.W2}
        if self.Wd is not None:
            out["Wd"] = self.Wd
        if self.cohesive_mode == "leaky":
            out["act_w"] = self.act_w
            out["act_b"] = self.act_b
        return out

    def with_weights(self, weights):
        return replace(self, **{k: np.array(v, dtype=float) for k, v in weights.items()})

    def n_weights(self):
        return sum(v.size for v in self.trainable().values())


INIT_SCHEMES = ("uniform", "homogenized")


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def init_params(architecture, sizes: LayerSizes, seed=0, cohesive_mode="linear",
                bulk_props=None, czm_props=None, scheme="uniform"):
    """Seeded initial weights.

    ``uniform``
        Every matrix drawn from ``U(-r, r)`` with ``r = 1/sqrt(fan_in)``; the
        raw decoder entries follow the same law.
    ``homogenized``
        Starts from a volume-average surrogate: each bulk point receives the
        macroscopic strain (divided by ``softplus(1)`` for prnn3) plus a
        ``U(-r, r)/4`` perturbation, and the decoder weights ``1/n_bulk`` on
        matching stress components and ``1e-3/n_bulk`` elsewhere. Cohesive
        rows and ``Wd`` are drawn as in ``uniform``.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    nb, nc = sizes.n_bulk, sizes.n_cohesive

    def uni(shape, fan_in):
        r = 1.0 / np.sqrt(max(fan_in, 1))
        return rng.uniform(-r, r, size=shape)

    W1 = uni((3 * nb + 2 * nc, 3), 3)
    n_dec = 3 * nb + 2 * nc if architecture == "prnn1" else 3 * nb
    W2 = uni((3, n_dec), n_dec)
    Wd = None if architecture == "prnn1" else uni((3 * nb, nc), nc)
    act_w = act_b = None
    if cohesive_mode == "leaky":
        act_w = uni((2 * nc,), 1)
        act_b = uni((2 * nc,), 1)
    if scheme == "homogenized":
        gain = 1.0 / softplus(1.0) if architecture == "prnn3" else 1.0
        W1[: 3 * nb] = gain * np.tile(np.eye(3), (nb, 1)) + 0.25 * W1[: 3 * nb]
        eff = np.full((3, n_dec), 1e-3 / nb)
        for i in range(3):
            eff[i, i:3 * nb:3] = 1.0 / nb
        W2 = inverse_softplus(eff)
    return NetworkParams(
        architecture, sizes, W1, W2, Wd, act_w, act_b, cohesive_mode,
        bulk_props or BulkProps(), czm_props or CzmProps(), seed,
    )


@dataclass
class NetworkState:
    bulk_states: BulkState
    cohesive_states: CohesiveState

    @classmethod
    def fresh(cls, params: NetworkParams, batch_shape=()):
        batch_shape = tuple(batch_shape)
        return cls(
            BulkState.virgin(batch_shape + (params.n_bulk,)),
            CohesiveState.virgin(batch_shape + (params.n_cohesive,)),
        )


@dataclass
class PathPrediction:
    stresses: np.ndarray
    local_strains: np.ndarray
    jumps: np.ndarray
    damage: np.ndarray
    bulk_stresses: np.ndarray
    tractions: np.ndarray

    def __len__(self):
        return self.stresses.shape[0]


# --------------------------------------------------------------------------
# Layer maps
# --------------------------------------------------------------------------

def encode(eps_macro, params: NetworkParams):
    """Bias-free encoder; returns bulk strains (..., nb, 3) and raw cohesive inputs (..., nc, 2)."""
    x = np.asarray(eps_macro, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"macroscopic strain must have 3 components, got {x.shape[-1]}")
    loc = x @ params.W1.T
    nb, nc = params.n_bulk, params.n_cohesive
    lead = x.shape[:-1]
    return loc[..., : 3 * nb].reshape(lead + (nb, 3)), loc[..., 3 * nb:].reshape(lead + (nc, 2))


def leaky_normal(x, w, b):
    """Leaky ramp ``w (x - b)`` above ``b``, slope ``0.01 w`` below."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= b, w * (x - b), LEAK * w * (x - b))


def leaky_shear(x, w, b):
    """Odd three-branch leaky activation for the shear jump."""
    x = np.asarray(x, dtype=float)
    return np.where(
        x >= b, w * (x - b + LEAK * b),
        np.where(x <= -b, w * (x + b - LEAK * b), LEAK * w * x),
    )


def _leaky_grads(pre, w, b):
    """d/dx, d/dw, d/db of the normal and shear activations, shape like ``pre`` (..., nc, 2)."""
    xn, xs = pre[..., 0], pre[..., 1]
    wn, ws = w[..., 0], w[..., 1]
    bn, bs = b[..., 0], b[..., 1]
    up_n = xn >= bn
    dn_dx = np.where(up_n, wn, LEAK * wn)
    dn_dw = np.where(up_n, xn - bn, LEAK * (xn - bn))
    dn_db = np.where(up_n, -wn, -LEAK * wn)
    up_s, lo_s = xs >= bs, xs <= -bs
    ds_dx = np.where(up_s | lo_s, ws, LEAK * ws)
    ds_dw = np.where(up_s, xs - (1 - LEAK) * bs, np.where(lo_s, xs + (1 - LEAK) * bs, LEAK * xs))
    ds_db = np.where(up_s, -(1 - LEAK) * ws, np.where(lo_s, (1 - LEAK) * ws, 0.0))
    st = lambda a, c: np.stack([a, c], axis=-1)  # noqa: E731
    return st(dn_dx, ds_dx), st(dn_dw, ds_dw), st(dn_db, ds_db)


def _activation_params(params: NetworkParams):
    nc = params.n_cohesive
    return softplus(params.act_w).reshape(nc, 2), softplus(params.act_b).reshape(nc, 2)


def cohesive_input(eps_macro, params: NetworkParams, mode=None):
    """Displacement jumps (..., nc, 2) handed to the cohesive points."""
    mode = mode or params.cohesive_mode
    _, pre = encode(eps_macro, params)
    if mode == "linear":
        return pre
    if mode != "leaky":
        raise ValueError(f"unknown cohesive mode {mode!r}")
    w, b = _activation_params(params)
    return np.stack([leaky_normal(pre[..., 0], w[:, 0], b[:, 0]),
                     leaky_shear(pre[..., 1], w[:, 1], b[:, 1])], axis=-1)


def bulk_input_prnn2(eps_macro, damage, params: NetworkParams):
    x = np.asarray(eps_macro, dtype=float)
    d = np.asarray(damage, dtype=float)
    flat = x @ params.W_bulk.T + d @ params.Wd.T
    return flat.reshape(flat.shape[:-1] + (params.n_bulk, 3))


def damage_amplifier(damage, params: NetworkParams):
    """``softplus(1 + Wd d)`` per bulk strain component, flattened (..., 3 nb)."""
    return softplus(1.0 + np.asarray(damage, dtype=float) @ params.Wd.T)


def bulk_input_prnn3(eps_macro, damage, params: NetworkParams):
    x = np.asarray(eps_macro, dtype=float)
    flat = damage_amplifier(damage, params) * (x @ params.W_bulk.T)
    return flat.reshape(flat.shape[:-1] + (params.n_bulk, 3))


def decoder_weights(params: NetworkParams):
    return softplus(params.W2)


def decode(stresses, params: NetworkParams, tractions=None):
    """Homogenize local stresses (..., nb, 3) (and PRNN1 tractions (..., nc, 2))."""
    s = np.asarray(stresses, dtype=float)
    lead = s.shape[:-2]
    z = s.reshape(lead + (-1,))
    if params.architecture == "prnn1":
        if tractions is None:
            raise ValueError("prnn1 decodes tractions together with bulk stresses")
        t = np.asarray(tractions, dtype=float)
        z = np.concatenate([z, t.reshape(lead + (-1,))], axis=-1)
    elif tractions is not None:
        raise ValueError(f"{params.architecture} does not decode cohesive tractions")
    if z.shape[-1] != params.W2.shape[1]:
        raise ValueError(f"decoder expects {params.W2.shape[1]} inputs, got {z.shape[-1]}")
    return z @ decoder_weights(params).T


# --------------------------------------------------------------------------
# Material layer on packed state arrays
# --------------------------------------------------------------------------
# bulk state array (..., 4) = plastic strain (3) + equivalent plastic strain
# cohesive state array (..., 2) = damage + max effective jump

def bulk_cell(strain, state_arr, props: BulkProps):
    """Packed J2 cell: returns (..., 7) = stress (3) + new state (4)."""
    shape = np.broadcast_shapes(strain.shape[:-1], state_arr.shape[:-1])
    strain = np.broadcast_to(strain, shape + (3,))
    eps_p = np.array(np.broadcast_to(state_arr[..., :3], shape + (3,)))
    alpha = np.array(np.broadcast_to(state_arr[..., 3], shape))
    s, ep, al, _ = _j2_core(strain, eps_p, alpha, props)
    return np.concatenate([s, ep, al[..., None]], axis=-1)


def cohesive_cell(jump, damage_arr, props: CzmProps):
    """Packed CZM cell: returns (..., 3) = traction (2) + new damage."""
    shape = np.broadcast_shapes(jump.shape[:-1], damage_arr.shape[:-1])
    jump = np.broadcast_to(jump, shape + (2,))
    d = np.broadcast_to(damage_arr[..., 0], shape)
    t, d_new, _, _ = _czm_core(jump, d, np.zeros(shape), props)
    return np.concatenate([t, d_new[..., None]], axis=-1)


def _max_jump(jump, prev):
    dn = np.maximum(jump[..., 0], 0.0)
    return np.maximum(prev, np.sqrt(dn * dn + jump[..., 1] ** 2))


def _cohesive_jumps(x, params):
    """Pre-activation and activated jumps, both (..., nc, 2)."""
    nc = params.n_cohesive
    pre = (x @ params.W_coh.T).reshape(x.shape[:-1] + (nc, 2))
    if params.cohesive_mode == "linear":
        return pre, pre
    w, b = _activation_params(params)
    jump = np.stack([leaky_normal(pre[..., 0], w[:, 0], b[:, 0]),
                     leaky_shear(pre[..., 1], w[:, 1], b[:, 1])], axis=-1)
    return pre, jump


def step_arrays(x, bulk_arr, coh_arr, params: NetworkParams):
    """One time step on packed arrays for a batch of paths.

    Parameters
    ----------
    x : (P, 3) macroscopic strains
    bulk_arr : (P, nb, 4)
    coh_arr : (P, nc, 2)

    Returns
    -------
    y, new_bulk, new_coh, record
    """
    pre, jump = _cohesive_jumps(x, params)
    c_out = cohesive_cell(jump, coh_arr[..., :1], params.czm_props)
    t, d = c_out[..., :2], c_out[..., 2]
    new_coh = np.stack([d, _max_jump(jump, coh_arr[..., 1])], axis=-1)
    if params.architecture == "prnn1":
        u = (x @ params.W_bulk.T).reshape(x.shape[:-1] + (params.n_bulk, 3))
    elif params.architecture == "prnn2":
        u = bulk_input_prnn2(x, d, params)
    else:
        u = bulk_input_prnn3(x, d, params)
    b_out = bulk_cell(u, bulk_arr, params.bulk_props)
    s, new_bulk = b_out[..., :3], b_out[..., 3:]
    y = decode(s, params, t if params.architecture == "prnn1" else None)
    record = {"local_strains": u, "jumps": jump, "damage": d, "bulk_stresses": s, "tractions": t,
              "bulk_state": new_bulk, "cohesive_state": new_coh}
    return y, new_bulk, new_coh, record


def forward_step(eps_macro, state: NetworkState, params: NetworkParams):
    """Advance one step; returns ``(stress, new_state, latent_record)``.

    Works on a single strain (3,) or a batch (P, 3) with a matching state.
    Cohesive points are updated first so their damage feeds the bulk points
    within the same step.
    """
    x = np.asarray(eps_macro, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    b_arr = state.bulk_states.to_array()
    c_arr = state.cohesive_states.to_array()
    if single:
        b_arr, c_arr = b_arr[None], c_arr[None]
    y, nb_arr, nc_arr, rec = step_arrays(xb, b_arr, c_arr, params)
    if single:
        y, nb_arr, nc_arr = y[0], nb_arr[0], nc_arr[0]
        rec = {k: v[0] for k, v in rec.items()}
    return y, NetworkState(BulkState.from_array(nb_arr), CohesiveState.from_array(nc_arr)), rec


def forward_batch(strains, params: NetworkParams, record=False):
    """Run many equally long paths (P, T, 3) at once; returns stresses (P, T, 3)."""
    strains = np.asarray(strains, dtype=float)
    P, T, _ = strains.shape
    bulk = np.zeros((P, params.n_bulk, 4))
    coh = np.zeros((P, params.n_cohesive, 2))
    out = np.empty((P, T, 3))
    recs = []
    for t in range(T):
        out[:, t], bulk, coh, rec = step_arrays(strains[:, t], bulk, coh, params)
        if record:
            recs.append(rec)
    if not record:
        return out
    stacked = {k: np.stack([r[k] for r in recs], axis=1) for k in recs[0]} if recs else {}
    return out, stacked


def forward_path(path, params: NetworkParams) -> PathPrediction:
    """Predict the stress history of one path from a fresh material state."""
    steps = path.steps if isinstance(path, StrainPath) else np.asarray(path, dtype=float)
    nb, nc = params.n_bulk, params.n_cohesive
    if steps.shape[0] == 0:
        z = np.zeros((0,))
        return PathPrediction(np.zeros((0, 3)), z.reshape(0, nb, 3), z.reshape(0, nc, 2),
                              z.reshape(0, nc), z.reshape(0, nb, 3), z.reshape(0, nc, 2))
    y, rec = forward_batch(steps[None], params, record=True)
    return PathPrediction(
        y[0], rec["local_strains"][0], rec["jumps"][0], rec["damage"][0],
        rec["bulk_stresses"][0], rec["tractions"][0],
    )
