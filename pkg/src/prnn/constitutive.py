"""Constitutive models shared by the teacher micromodel and the PRNN material layer.

All updates are pure functions of ``(input, state, props)`` and broadcast over
any number of leading dimensions, so a whole material layer (or a stack of
finite-difference perturbations of it) is evaluated in one call.

Voigt convention for plane stress: strain ``(exx, eyy, gxy)`` with engineering
shear ``gxy = 2 exy``, stress ``(sxx, syy, sxy)``. Cohesive jumps are
``(normal, shear)`` in mm, tractions in MPa.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "BulkProps",
    "CzmProps",
    "BulkState",
    "CohesiveState",
    "ReturnMappingError",
    "elastic_stiffness",
    "elastic_update",
    "j2_update",
    "yield_function",
    "czm_update",
    "czm_thresholds",
    "fd_step",
    "fd_tangent",
    "fd_jacobians",
    "near_branch",
    "j2_branch",
    "czm_branch",
]


class ReturnMappingError(RuntimeError):
    """Local Newton iteration of the plane-stress return mapping did not converge."""

    def __init__(self, message, residual_norm):
        super().__init__(f"{message} (residual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class BulkProps:
    """Isotropic elastoplastic matrix with linear isotropic hardening (MPa)."""

    youngs_modulus: float = 3130.0
    poisson_ratio: float = 0.37
    yield_stress: float = 64.8
    hardening_modulus: float = 100.0

    def __post_init__(self):
        vals = (self.youngs_modulus, self.poisson_ratio, self.yield_stress, self.hardening_modulus)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite bulk properties: {self}")
        if self.youngs_modulus <= 0:
            raise ValueError("youngs_modulus must be > 0")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in [0, 0.5)")
        if self.yield_stress <= 0:
            raise ValueError("yield_stress must be > 0")
        if self.hardening_modulus < 0:
            raise ValueError("hardening_modulus must be >= 0")

    @property
    def shear_modulus(self):
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))


@dataclass(frozen=True)
class CzmProps:
    """Bilinear mixed-mode cohesive law (strengths MPa, toughness N/mm, K N/mm^3).

    Defaults are the fiber-matrix interface values: equal strengths of 60 MPa,
    G_Ic = 0.874 N/mm, G_IIc = 1.717 N/mm, eta = 1, K = 5e7 N/mm^3.
    """

    normal_strength: float = 60.0
    shear_strength: float = 60.0
    g_ic: float = 0.874
    g_iic: float = 1.717
    eta: float = 1.0
    penalty_stiffness: float = 5.0e7

    def __post_init__(self):
        vals = (self.normal_strength, self.shear_strength, self.g_ic, self.g_iic,
                self.eta, self.penalty_stiffness)
        if not all(np.isfinite(vals)) or min(vals) <= 0:
            raise ValueError(f"cohesive properties must be finite and > 0: {self}")
        if self.onset_normal >= self.final_normal or self.onset_shear >= self.final_shear:
            raise ValueError("onset jump must be smaller than final jump in both pure modes")

    @property
    def onset_normal(self):
        return self.normal_strength / self.penalty_stiffness

    @property
    def onset_shear(self):
        return self.shear_strength / self.penalty_stiffness

    @property
    def final_normal(self):
        return 2.0 * self.g_ic / self.normal_strength

    @property
    def final_shear(self):
        return 2.0 * self.g_iic / self.shear_strength


@dataclass
class BulkState:
    """Plastic strain (Voigt, engineering shear) and equivalent plastic strain."""

    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(3))
    equivalent_plastic_strain: np.ndarray | float = 0.0

    @classmethod
    def virgin(cls, shape=()):
        return cls(np.zeros(tuple(shape) + (3,)), np.zeros(shape))

    def to_array(self):
        return np.concatenate(
            [self.plastic_strain, np.asarray(self.equivalent_plastic_strain)[..., None]], axis=-1
        )

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(arr[..., :3], arr[..., 3])


@dataclass
class CohesiveState:
    """Energy-ratio damage and the largest effective jump seen so far."""

    damage: np.ndarray | float = 0.0
    max_effective_jump: np.ndarray | float = 0.0

    @classmethod
    def virgin(cls, shape=()):
        return cls(np.zeros(shape), np.zeros(shape))

    def to_array(self):
        return np.stack(
            [np.asarray(self.damage, dtype=float), np.asarray(self.max_effective_jump, dtype=float)],
            axis=-1,
        )

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(arr[..., 0], arr[..., 1])


def _check_finite(x, name):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


# --------------------------------------------------------------------------
# Elasticity
# --------------------------------------------------------------------------

def elastic_stiffness(props: BulkProps) -> np.ndarray:
    """Plane-stress stiffness mapping ``(exx, eyy, gxy)`` to ``(sxx, syy, sxy)``."""
    E, nu = props.youngs_modulus, props.poisson_ratio
    c = E / (1.0 - nu * nu)
    return np.array([
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, 0.5 * c * (1.0 - nu)],
    ])


def elastic_update(strain, props: BulkProps) -> np.ndarray:
    strain = _check_finite(strain, "strain")
    return np.einsum("ij,...j->...i", elastic_stiffness(props), strain)


# --------------------------------------------------------------------------
# Plane-stress J2 plasticity
# --------------------------------------------------------------------------

_SQ2 = np.sqrt(2.0)
_SQ23 = np.sqrt(2.0 / 3.0)
# eigenvalues of the plane-stress deviatoric projector in the rotated basis
# a1 = (sxx + syy)/sqrt2, a2 = (sxx - syy)/sqrt2, a3 = sxy
_P_EIG = np.array([1.0 / 3.0, 1.0, 2.0])

J2_MAX_ITER = 50
J2_RTOL = 1e-12


def _rotate(s):
    return np.stack([(s[..., 0] + s[..., 1]) / _SQ2, (s[..., 0] - s[..., 1]) / _SQ2, s[..., 2]], axis=-1)


def _unrotate(a):
    return np.stack([(a[..., 0] + a[..., 1]) / _SQ2, (a[..., 0] - a[..., 1]) / _SQ2, a[..., 2]], axis=-1)


def _p_matrix():
    return np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, 0.0], [0.0, 0.0, 6.0]]) / 3.0


def yield_function(stress, eq_plastic_strain, props: BulkProps):
    """von Mises stress minus the current yield radius ``sy + H * ep``."""
    stress = np.asarray(stress, dtype=float)
    svm = np.sqrt(np.maximum(1.5 * np.einsum("...i,ij,...j->...", stress, _p_matrix(), stress), 0.0))
    return svm - (props.yield_stress + props.hardening_modulus * np.asarray(eq_plastic_strain))


def _j2_core(strain, eps_p, alpha, props):
    E, nu, H, sy = props.youngs_modulus, props.poisson_ratio, props.hardening_modulus, props.yield_stress
    G = props.shear_modulus
    C = elastic_stiffness(props)
    sig_tr = np.einsum("ij,...j->...i", C, strain - eps_p)
    a_tr = _rotate(sig_tr)
    q2_tr = np.einsum("...i,i->...", a_tr * a_tr, _P_EIG)
    kappa_n = sy + H * alpha
    # f_trial in the squared form: phi = q2/2 - kappa^2/3
    phi_tr = 0.5 * q2_tr - kappa_n ** 2 / 3.0
    plastic = phi_tr > 0.0

    stress = sig_tr.copy()
    eps_p_new = eps_p.copy()
    alpha_new = alpha.copy()
    if not np.any(plastic):
        return stress, eps_p_new, alpha_new, plastic

    a = a_tr[plastic]
    an = alpha[plastic]
    cc = np.array([E / (3.0 * (1.0 - nu)), 2.0 * G, 2.0 * G])
    pa2 = _P_EIG * a * a

    def residual(dg):
        den = 1.0 + dg[:, None] * cc
        q2 = np.sum(pa2 / den ** 2, axis=1)
        dq2 = -2.0 * np.sum(pa2 * cc / den ** 3, axis=1)
        q = np.sqrt(q2)
        kap = sy + H * (an + _SQ23 * dg * q)
        dq = dq2 / (2.0 * q)
        dkap = H * _SQ23 * (q + dg * dq)
        return 0.5 * q2 - kap ** 2 / 3.0, 0.5 * dq2 - 2.0 * kap * dkap / 3.0, kap

    # bracket the root: residual(0) > 0, residual decreasing to -kappa^2/3
    lo = np.zeros(a.shape[0])
    hi = np.full(a.shape[0], 1.0 / (2.0 * G))
    for _ in range(200):
        r_hi = residual(hi)[0]
        grow = r_hi > 0.0
        if not np.any(grow):
            break
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2.0 * hi, hi)
    dg = lo.copy()
    converged = np.zeros(a.shape[0], dtype=bool)
    res = np.zeros(a.shape[0])
    for _ in range(J2_MAX_ITER):
        res, dres, kap = residual(dg)
        scale = kap ** 2
        done = np.abs(res) <= J2_RTOL * scale
        # one extra Newton update after meeting the tolerance keeps the result
        # at round-off level, which the finite-difference tangents rely on
        newly = done & ~converged
        converged |= done
        pos = res > 0.0
        lo = np.where(pos, np.maximum(lo, dg), lo)
        hi = np.where(pos, hi, np.minimum(hi, dg))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = dg - res / dres
        bad = ~np.isfinite(step) | (step < lo) | (step > hi)
        step = np.where(bad, 0.5 * (lo + hi), step)
        active = ~converged | newly
        dg = np.where(active, step, dg)
        if np.all(converged) and not np.any(newly):
            break
    if not np.all(converged):
        raise ReturnMappingError("J2 return mapping failed to converge", float(np.max(np.abs(res) / kap ** 2)))

    den = 1.0 + dg[:, None] * cc
    xi_rot = a / den
    q = np.sqrt(np.sum(_P_EIG * xi_rot * xi_rot, axis=1))
    xi = _unrotate(xi_rot)
    stress[plastic] = xi
    eps_p_new[plastic] = eps_p[plastic] + dg[:, None] * (xi @ _p_matrix().T)
    alpha_new[plastic] = an + _SQ23 * dg * q
    return stress, eps_p_new, alpha_new, plastic


def j2_update(strain, state: BulkState, props: BulkProps):
    """Plane-stress J2 return mapping with linear isotropic hardening.

    The plastic multiplier is found by a bracketed local Newton iteration on
    the squared consistency condition (at most 50 iterations, residual
    ``1e-12 * kappa**2``).

    Returns
    -------
    stress : ndarray (..., 3)
    new_state : BulkState
    """
    strain = _check_finite(strain, "strain")
    eps_p = np.asarray(state.plastic_strain, dtype=float)
    alpha = np.asarray(state.equivalent_plastic_strain, dtype=float)
    shape = np.broadcast_shapes(strain.shape[:-1], eps_p.shape[:-1], alpha.shape)
    strain = np.broadcast_to(strain, shape + (3,))
    eps_p = np.array(np.broadcast_to(eps_p, shape + (3,)))
    alpha = np.array(np.broadcast_to(alpha, shape))
    stress, eps_p_new, alpha_new, _ = _j2_core(strain, eps_p, alpha, props)
    return stress, BulkState(eps_p_new, alpha_new)


def j2_branch(strain, state: BulkState, props: BulkProps):
    """Integer branch code: 0 elastic, 1 plastic."""
    strain = np.asarray(strain, dtype=float)
    C = elastic_stiffness(props)
    sig_tr = np.einsum("ij,...j->...i", C, strain - state.plastic_strain)
    return (yield_function(sig_tr, state.equivalent_plastic_strain, props) > 0.0).astype(int)


# --------------------------------------------------------------------------
# Bilinear cohesive zone model
# --------------------------------------------------------------------------

def czm_thresholds(normal_jump, shear_jump, props: CzmProps):
    """Mixed-mode onset and final effective jumps.

    Mode mixity uses only the opening part of the normal jump; thresholds are
    interpolated with the power law in the mixity ratio ``B**eta``.
    """
    dn = np.maximum(np.asarray(normal_jump, dtype=float), 0.0)
    ds = np.abs(np.asarray(shear_jump, dtype=float))
    tot = dn + ds
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(tot > 0.0, ds / np.where(tot > 0.0, tot, 1.0), 0.0)
    B = beta * beta / (1.0 + 2.0 * beta * beta - 2.0 * beta)
    Be = B ** props.eta
    n0, s0 = props.onset_normal, props.onset_shear
    nf, sf = props.final_normal, props.final_shear
    onset = np.sqrt(n0 * n0 + (s0 * s0 - n0 * n0) * Be)
    final = (n0 * nf + (s0 * sf - n0 * nf) * Be) / onset
    return onset, final, B


def _czm_core(jump, damage, max_jump, props):
    dn = jump[..., 0]
    ds = jump[..., 1]
    dn_pos = np.maximum(dn, 0.0)
    lam = np.sqrt(dn_pos * dn_pos + ds * ds)
    onset, final, _ = czm_thresholds(dn, ds, props)
    d_trial = (lam - onset) / (final - onset)
    d_new = np.minimum(np.maximum(damage, d_trial), 1.0)
    # secant stiffness loss of the bilinear law at the damage threshold jump
    r = onset + d_new * (final - onset)
    loss = d_new * final / r
    K = props.penalty_stiffness
    tn = np.where(dn > 0.0, K * (1.0 - loss) * dn, K * dn)
    ts = K * (1.0 - loss) * ds
    return np.stack([tn, ts], axis=-1), d_new, np.maximum(max_jump, lam), d_trial


def czm_update(jump, state: CohesiveState, props: CzmProps):
    """Bilinear traction-separation update.

    Damage is the dissipated energy over the mixed-mode toughness, which for
    the bilinear law is ``(lam - onset) / (final - onset)`` at the largest
    effective jump. It never decreases. Compressive normal jumps get the
    undamaged penalty response and do not drive damage.

    Returns
    -------
    traction : ndarray (..., 2)
    new_state : CohesiveState
    """
    jump = _check_finite(jump, "jump")
    d = np.asarray(state.damage, dtype=float)
    m = np.asarray(state.max_effective_jump, dtype=float)
    shape = np.broadcast_shapes(jump.shape[:-1], d.shape, m.shape)
    t, d_new, m_new, _ = _czm_core(
        np.broadcast_to(jump, shape + (2,)), np.broadcast_to(d, shape), np.broadcast_to(m, shape), props
    )
    return t, CohesiveState(d_new, m_new)


def czm_branch(jump, state: CohesiveState, props: CzmProps):
    """Integer branch code combining loading, saturation and jump signs."""
    jump = np.asarray(jump, dtype=float)
    *_, d_trial = _czm_core(jump, np.asarray(state.damage, float),
                            np.asarray(state.max_effective_jump, float), props)
    loading = d_trial > state.damage
    saturated = d_trial >= 1.0
    return (loading.astype(int) + 2 * saturated + 4 * (jump[..., 0] > 0) + 8 * (jump[..., 1] > 0))


# --------------------------------------------------------------------------
# Finite-difference sensitivities
# --------------------------------------------------------------------------

def fd_step(x, rel=1e-7):
    return rel * (1.0 + np.abs(x))


def fd_jacobians(fn: Callable, x, a, rel=1e-7):
    """Central-difference Jacobians of ``fn(x, a) -> out`` w.r.t. ``x`` and ``a``.

    ``x`` is the cell input (..., nx) and ``a`` the beginning-of-step internal
    variables (..., na); both are held at their converged values except for
    the single perturbed component. All ``2 (nx + na) + 1`` evaluations run in
    one vectorized call.

    Returns
    -------
    out : ndarray (..., nout)
        Unperturbed output.
    jac_x : ndarray (..., nout, nx)
    jac_a : ndarray (..., nout, na)
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    nx, na = x.shape[-1], a.shape[-1]
    z = np.concatenate([x, a], axis=-1)
    n = nx + na
    h = fd_step(z, rel)
    eye = np.eye(n)
    # stack layout: [base, +e_0, ..., +e_{n-1}, -e_0, ..., -e_{n-1}]
    delta = np.concatenate([np.zeros((1, n)), eye, -eye], axis=0)
    delta = delta.reshape((2 * n + 1,) + (1,) * (z.ndim - 1) + (n,))
    zs = z[None] + delta * h[None]
    out = fn(zs[..., :nx], zs[..., nx:])
    base = out[0]
    diff = (out[1:n + 1] - out[n + 1:]) / (2.0 * np.moveaxis(h, -1, 0)[..., None])
    jac = np.moveaxis(diff, 0, -1)
    return base, jac[..., :nx], jac[..., nx:]


def fd_tangent(update: Callable, x, state, props, h=None):
    """Central-difference Jacobian of a material update's output w.r.t. its input.

    ``update`` is one of :func:`elastic_update`, :func:`j2_update` or
    :func:`czm_update`; the state (if any) is held at the supplied
    beginning-of-step value for every perturbation. ``h`` defaults to
    ``1e-7 * (1 + |x_k|)`` per component.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if h is None:
        h = fd_step(x)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if np.any(h <= 0):
        raise ValueError("finite-difference step must be > 0")

    def call(xx):
        if state is None:
            return update(xx, props)
        return update(xx, state, props)[0]

    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        hk = h[..., k:k + 1]
        cols.append((call(x + hk * e) - call(x - hk * e)) / (2.0 * hk))
    return np.stack(cols, axis=-1)


def near_branch(branch_fn: Callable, x, state, props, radius):
    """True where the branch code changes inside a box of half-width ``radius``.

    Every input component and every internal variable is probed at ``+-radius``
    (scaled like :func:`fd_step`), which is how the finite-difference
    sensitivities would straddle a kink.
    """
    x = np.asarray(x, dtype=float)
    a = state.to_array()
    shape = np.broadcast_shapes(x.shape[:-1], a.shape[:-1])
    x = np.broadcast_to(x, shape + x.shape[-1:])
    a = np.broadcast_to(a, shape + a.shape[-1:])
    cls = type(state)
    base = branch_fn(x, cls.from_array(a), props)
    flag = np.zeros(shape, dtype=bool)
    for k in range(x.shape[-1] + a.shape[-1]):
        for sgn in (1.0, -1.0):
            xx, aa = x.copy(), a.copy()
            if k < x.shape[-1]:
                xx[..., k] += sgn * radius * (1.0 + np.abs(x[..., k]))
            else:
                j = k - x.shape[-1]
                aa[..., j] += sgn * radius * (1.0 + np.abs(a[..., j]))
            flag |= branch_fn(xx, cls.from_array(aa), props) != base
    return flag
