"""Loss and exact gradients.

Discrete networks (Euler ResNet, Verlet network) are differentiated by a
hand-written reverse sweep over the stored trajectory; per-step weight
gradients ``G`` are then pulled back to basis coefficients as ``G @ A.T``.
The neural ODE uses the continuous adjoint: the adjoint state and the
coefficient gradients are integrated together backward in time, with the
forward state read from the dense output of the forward solve.

Parameter sets and gradient bundles are plain dicts of arrays keyed like
:meth:`ModelConfig.param_shapes`.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .architectures import (
    Arch,
    LayerParams,
    ModelConfig,
    act_deriv_from_value,
    close_layer,
    hamiltonian_forward,
    initial_state,
    layer_preact,
    node_forward,
    resnet_forward,
    weights_at,
    _bump,
    act,
)
from .basis import basis_values, build_basis_matrix
from .integrators import StepControl, dopri5_solve_reverse

PARAM_KEYS = ("K_in", "b_in", "theta", "W_out", "b_out")


def loss(pred, target, params: Mapping | None = None, alpha: float = 0.0) -> float:
    """Batch mean of ``0.5 * ||pred - target||^2`` plus ``alpha/2 * ||params||^2``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    r = pred - target
    value = 0.5 * float(np.sum(r * r)) / r.shape[-1]
    if alpha and params is not None:
        value += 0.5 * alpha * sum(float(np.sum(np.square(p))) for p in params.values())
    return value


def residual_grad(pred, target):
    """d(loss)/d(pred) for the data term."""
    return (pred - target) / pred.shape[-1]


def _augmented(u, s):
    return np.vstack([u, np.full((1, u.shape[1]), s)])


def resnet_backward(trajectory, theta, cfg: ModelConfig, A, loss_grad_at_T, grid=None):
    """Reverse sweep through a forward-Euler trajectory.

    ``A`` is the basis matrix (``None`` for per-step weights). Returns the
    gradient for ``theta`` and the adjoint at the initial state.
    """
    grid = grid or cfg.grid()
    if len(trajectory) != cfg.N_steps + 1:
        raise ValueError("trajectory does not match the configured number of steps")
    c = cfg.channels
    dt = cfg.T / cfg.N_steps
    W = theta @ A if A is not None else theta
    s = grid.normalize(grid.array())
    G = np.zeros((cfg.n_layer_params, cfg.N_steps))
    a = loss_grad_at_T
    for j in reversed(range(cfg.N_steps)):
        u = trajectory[j]
        lp = LayerParams.from_vector(W[:, j], c)
        sz = act(layer_preact(u, s[j], lp), cfg.activation)
        delta = dt * a * act_deriv_from_value(sz, cfg.activation)
        G[:, j] = np.concatenate([(delta @ _augmented(u, s[j]).T).ravel(), delta.sum(axis=1)])
        a = a + lp.K[:, :c].T @ delta
    g_theta = G @ A.T if A is not None else G
    return g_theta, a


def hamiltonian_backward(trajectory, theta, cfg: ModelConfig, A, loss_grad_at_T, grid=None):
    """Reverse sweep mirroring the staggered Verlet updates.

    ``loss_grad_at_T`` is the pair (dL/dy_N, dL/dz_N). Returns the gradient
    for ``theta`` and the adjoint of the stacked initial state.
    """
    grid = grid or cfg.grid()
    if len(trajectory) != cfg.N_steps + 1:
        raise ValueError("trajectory does not match the configured number of steps")
    c = cfg.channels
    dt = cfg.T / cfg.N_steps
    W = theta @ A if A is not None else theta
    s = grid.normalize(grid.array())
    G = np.zeros((cfg.n_layer_params, cfg.N_steps))
    ay, az = loss_grad_at_T
    for j in reversed(range(cfg.N_steps)):
        y0, z0 = trajectory[j]
        y1, _ = trajectory[j + 1]
        lp = LayerParams.from_vector(W[:, j], c)
        Ku, kt = lp.K[:, :c], lp.K[:, c]
        shift = (kt * s[j] + lp.b)[:, None]

        # z_{j+1} = z_j - dt act(Ku y_{j+1} + shift)
        sz = act(Ku @ y1 + shift, cfg.activation)
        dz = -dt * az * act_deriv_from_value(sz, cfg.activation)
        ay = ay + Ku.T @ dz
        gK = dz @ y1.T
        gt = dz.sum(axis=1) * s[j]
        gb = dz.sum(axis=1)

        # y_{j+1} = y_j + dt act(Ku^T z_j + shift)
        sy = act(Ku.T @ z0 + shift, cfg.activation)
        dy = dt * ay * act_deriv_from_value(sy, cfg.activation)
        az = az + Ku @ dy
        gK = gK + z0 @ dy.T
        gt = gt + dy.sum(axis=1) * s[j]
        gb = gb + dy.sum(axis=1)

        G[:, j] = np.concatenate([np.hstack([gK, gt[:, None]]).ravel(), gb])
    g_theta = G @ A.T if A is not None else G
    return g_theta, np.vstack([ay, az])


def adjoint_rhs(a, u, t, theta, cfg: ModelConfig, grid=None):
    """``da/dt = -(df/du)^T a`` for the tanh/identity residual block."""
    grid = grid or cfg.grid()
    lp = weights_at(theta, cfg.basis, grid, t)
    s = float(grid.normalize(t))
    sz = act(layer_preact(u, s, lp), cfg.activation)
    delta = a * act_deriv_from_value(sz, cfg.activation)
    return -lp.K[:, : cfg.channels].T @ delta


def _open_grads(params, cfg, y, a0):
    u0 = act(params["K_in"] @ y + params["b_in"][:, None], cfg.activation)
    d0 = a0 * act_deriv_from_value(u0, cfg.activation)
    return d0 @ y.T, d0.sum(axis=1)


def _add_regularization(grads, params, alpha):
    if alpha:
        for k in grads:
            grads[k] = grads[k] + alpha * params[k]
    return grads


def node_gradient(y, c, params, cfg: ModelConfig, ctrl: StepControl = StepControl(), counter=None):
    """Loss and gradient of the neural ODE via the continuous adjoint.

    Returns ``(loss_value, grads, forward_record)``; ``grads`` carries one
    entry per parameter block.
    """
    if cfg.arch is not Arch.NODE:
        raise ValueError("node_gradient expects a neural ODE configuration")
    grid = cfg.grid()
    theta = params["theta"]
    u0 = initial_state(params, cfg, y)
    fwd = node_forward(u0, theta, cfg, ctrl, counter)
    uT = fwd.y_final
    pred = close_layer(uT, params["W_out"], params["b_out"])
    value = loss(pred, c, params, cfg.alpha)

    r = residual_grad(pred, c)
    grads = {"W_out": r @ uT.T, "b_out": r.sum(axis=1)}
    aT = params["W_out"].T @ r

    ch, B = uT.shape
    na = ch * B
    basis = cfg.basis
    d = basis.size

    def rhs(t, x):
        a = x[:na].reshape(ch, B)
        u = fwd(t)
        lp = weights_at(theta, basis, grid, t)
        s = float(grid.normalize(t))
        sz = act(layer_preact(u, s, lp), cfg.activation)
        delta = a * act_deriv_from_value(sz, cfg.activation)
        da = -lp.K[:, :ch].T @ delta
        gvec = np.concatenate([(delta @ _augmented(u, s).T).ravel(), delta.sum(axis=1)])
        dg = -np.outer(gvec, basis_values(basis, s))
        _bump(counter, 1)
        return np.concatenate([da.ravel(), dg.ravel()])

    x_T = np.concatenate([aT.ravel(), np.zeros(cfg.n_layer_params * d)])
    bwd = dopri5_solve_reverse(rhs, x_T, (cfg.T, 0.0), ctrl, keep_dense=False)
    x0 = bwd.y_final
    a0 = x0[:na].reshape(ch, B)
    grads["theta"] = x0[na:].reshape(cfg.n_layer_params, d)
    grads["K_in"], grads["b_in"] = _open_grads(params, cfg, y, a0)
    grads = {k: grads[k] for k in PARAM_KEYS}
    fwd.n_rhs_evals += bwd.n_rhs_evals
    return value, _add_regularization(grads, params, cfg.alpha), fwd


def loss_and_grad(params, cfg: ModelConfig, y, c, ctrl: StepControl = StepControl(), counter=None):
    """Objective value and its gradient for any architecture."""
    if cfg.arch is Arch.NODE:
        value, grads, _ = node_gradient(y, c, params, cfg, ctrl, counter)
        return value, grads

    grid = cfg.grid()
    A = build_basis_matrix(cfg.basis, grid) if cfg.basis.is_polynomial else None
    theta = params["theta"]
    u0 = initial_state(params, cfg, y)
    if cfg.arch is Arch.RESNET:
        uN, traj = resnet_forward(u0, theta, cfg, grid, counter)
    else:
        uN, zN, traj = hamiltonian_forward(u0, theta, cfg, grid, counter)
    pred = close_layer(uN, params["W_out"], params["b_out"])
    value = loss(pred, c, params, cfg.alpha)

    r = residual_grad(pred, c)
    grads = {"W_out": r @ uN.T, "b_out": r.sum(axis=1)}
    aN = params["W_out"].T @ r
    if cfg.arch is Arch.RESNET:
        grads["theta"], a0 = resnet_backward(traj, theta, cfg, A, aN, grid)
    else:
        grads["theta"], a0 = hamiltonian_backward(traj, theta, cfg, A, (aN, np.zeros_like(aN)), grid)
        a0 = a0[: cfg.channels]  # z_0 = 0 does not depend on the opening layer
    grads["K_in"], grads["b_in"] = _open_grads(params, cfg, y, a0)
    grads = {k: grads[k] for k in PARAM_KEYS}
    return value, _add_regularization(grads, params, cfg.alpha)


def finite_diff_gradient(
    loss_fn: Callable[[Mapping], float],
    params: Mapping,
    h: float = 1e-5,
    relative: bool = True,
    indices: Mapping | None = None,
) -> dict:
    """Central differences per scalar parameter.

    With ``relative`` the step for coordinate ``x`` is ``h * max(1, |x|)``.
    ``indices`` optionally restricts each block to a subset of flat indices;
    skipped entries are NaN.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    work = {k: np.array(v, dtype=float, copy=True) for k, v in params.items()}
    out = {}
    for k, arr in work.items():
        flat = arr.reshape(-1)
        g = np.full(flat.shape, np.nan) if indices and k in indices else np.zeros(flat.shape)
        idx = indices[k] if indices and k in indices else range(flat.size)
        for i in idx:
            x = flat[i]
            step = h * max(1.0, abs(x)) if relative else h
            flat[i] = x + step
            fp = loss_fn(work)
            flat[i] = x - step
            fm = loss_fn(work)
            flat[i] = x
            g[i] = (fp - fm) / (2 * step)
        out[k] = g.reshape(arr.shape)
    return out


def relative_error(analytic, reference) -> float:
    """``max|analytic - reference| / max|reference|`` over the entries present in ``reference``."""
    a = np.asarray(analytic, dtype=float).ravel()
    r = np.asarray(reference, dtype=float).ravel()
    mask = ~np.isnan(r)
    a, r = a[mask], r[mask]
    if a.size == 0:
        return 0.0
    num = float(np.max(np.abs(a - r)))
    den = float(np.max(np.abs(r)))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den
