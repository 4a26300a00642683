"""Network definitions: layer function, opening/closing maps and forward dynamics.

Every time-dependent layer shares the residual block

    f(u, s; K, b) = act(K @ [u; s] + b)

where ``s`` is normalized time appended as an extra input row. Weights
``(K, b)`` are flattened into one vector per layer; the columns of ``theta``
are either basis coefficients (polynomial kinds) or per-step weights
(kind=None).

Arrays are laid out channels x batch, as in the rest of the package.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisKind, Kind, TimeGrid, basis_values, build_basis_matrix
from .integrators import StepControl, dopri5_solve, verlet_step


class ConfigError(ValueError):
    pass


class UnsupportedConfigError(ConfigError):
    pass


class OffGridError(ValueError):
    pass


class Arch(str, enum.Enum):
    RESNET = "resnet"
    HAMILTONIAN = "hamiltonian"
    NODE = "node"


class Activation(str, enum.Enum):
    TANH = "tanh"
    IDENTITY = "identity"


def act(z, activation):
    if activation is Activation.TANH:
        return np.tanh(z)
    return z


def act_deriv_from_value(sz, activation):
    """Derivative of the activation given its output value."""
    if activation is Activation.TANH:
        return 1.0 - sz * sz
    return np.ones_like(sz)


@dataclass(frozen=True)
class ModelConfig:
    arch: Arch = Arch.RESNET
    channels: int = 15
    n_features: int = 15
    m_targets: int = 10
    T: float = 1.0
    N_steps: int = 12
    basis: BasisKind = BasisKind(Kind.LEGENDRE, 3)
    activation: Activation = Activation.TANH
    alpha: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        object.__setattr__(self, "activation", Activation(self.activation))
        for name in ("channels", "n_features", "m_targets", "N_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if self.arch is Arch.NODE and not self.basis.is_polynomial:
            raise UnsupportedConfigError(
                "the neural ODE needs weights at arbitrary times; basis 'none' is not "
                "supported (use degree 0 for constant-in-time weights)"
            )

    @property
    def n_layer_params(self) -> int:
        c = self.channels
        return c * (c + 1) + c

    @property
    def n_columns(self) -> int:
        return self.basis.size if self.basis.is_polynomial else self.N_steps

    @property
    def state_channels(self) -> int:
        return 2 * self.channels if self.arch is Arch.HAMILTONIAN else self.channels

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.T, self.N_steps)

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def param_shapes(self) -> dict:
        c = self.channels
        return {
            "K_in": (c, self.n_features),
            "b_in": (c,),
            "theta": (self.n_layer_params, self.n_columns),
            "W_out": (self.m_targets, c),
            "b_out": (self.m_targets,),
        }


def count_trainable(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in cfg.param_shapes().values())


@dataclass
class LayerParams:
    K: np.ndarray  # channels x (channels + 1); last column multiplies time
    b: np.ndarray

    @classmethod
    def from_vector(cls, vec, channels: int) -> "LayerParams":
        n = channels * (channels + 1)
        return cls(vec[:n].reshape(channels, channels + 1), vec[n:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.K.ravel(), self.b])


@dataclass
class EvalCounter:
    """Cumulative number of layer-function evaluations."""

    count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, n: int = 1):
        with self._lock:
            self.count += n


def _bump(counter, n=1):
    if counter is not None:
        counter.add(n)


def materialize(theta, basis: BasisKind, grid: TimeGrid) -> np.ndarray:
    """Per-step weight vectors as columns: ``theta @ A`` or ``theta`` itself."""
    if basis.is_polynomial:
        return theta @ build_basis_matrix(basis, grid)
    if theta.shape[1] != grid.N:
        raise ConfigError(f"expected {grid.N} per-step weight columns, got {theta.shape[1]}")
    return theta


def weights_vector_at(theta, basis: BasisKind, grid: TimeGrid, t: float) -> np.ndarray:
    if basis.is_polynomial:
        if theta.shape[1] != basis.size:
            raise ConfigError(f"theta has {theta.shape[1]} columns, basis needs {basis.size}")
        p = basis_values(basis, grid.normalize(t))
        return theta @ p
    pts = grid.array()
    j = int(np.searchsorted(pts, t, side="right")) - 1
    if j < 0 or abs(pts[j] - t) > 1e-12 * max(1.0, abs(grid.T)):
        raise OffGridError(f"per-step weights are only defined at grid times; got t={t}")
    return theta[:, j]


def weights_at(theta, basis: BasisKind, grid: TimeGrid, t: float) -> LayerParams:
    vec = weights_vector_at(theta, basis, grid, t)
    c = _channels_from_n(vec.shape[0])
    return LayerParams.from_vector(vec, c)


def _channels_from_n(n: int) -> int:
    # n = c^2 + 2c
    c = int(round(np.sqrt(n + 1) - 1))
    if c * (c + 2) != n:
        raise ConfigError(f"{n} is not a valid layer parameter count")
    return c


def _check_state(u, c):
    if u.ndim != 2 or u.shape[0] != c:
        raise ValueError(f"state must be {c} x batch, got {u.shape}")


def layer_preact(u, s, params: LayerParams):
    c = params.K.shape[0]
    _check_state(u, c)
    return params.K[:, :c] @ u + (params.K[:, c] * s + params.b)[:, None]


def layer_f(u, s, params: LayerParams, activation=Activation.TANH):
    """``act(K [u; s 1^T] + b 1^T)`` for normalized time ``s``."""
    return act(layer_preact(u, s, params), Activation(activation))


def open_layer(y, K_in, b_in, activation=Activation.TANH):
    if y.ndim != 2 or K_in.shape[1] != y.shape[0] or b_in.shape != (K_in.shape[0],):
        raise ValueError("opening layer shape mismatch")
    return act(K_in @ y + b_in[:, None], Activation(activation))


def close_layer(u, W_out, b_out):
    if u.ndim != 2 or W_out.shape[1] != u.shape[0] or b_out.shape != (W_out.shape[0],):
        raise ValueError("closing layer shape mismatch")
    return W_out @ u + b_out[:, None]


def _check_uniform(grid: TimeGrid, cfg: ModelConfig):
    if grid.N != cfg.N_steps:
        raise ValueError(f"grid has {grid.N} layer times, config has {cfg.N_steps} steps")
    dt = grid.T / cfg.N_steps
    if grid.t0 != 0.0 or not np.allclose(np.diff(np.append(grid.array(), grid.T)), dt, rtol=1e-12, atol=0):
        raise ValueError("discrete architectures need an equispaced grid on [0, T]")
    return dt


def resnet_forward(u0, theta, cfg: ModelConfig, grid: TimeGrid | None = None, counter=None):
    """Forward Euler sweep ``u_{j+1} = u_j + dt f(u_j, s_j, theta(t_j))``.

    Returns the final state and the full list of states u_0..u_N.
    """
    grid = grid or cfg.grid()
    dt = _check_uniform(grid, cfg)
    W = materialize(theta, cfg.basis, grid)
    s = grid.normalize(grid.array())
    c = cfg.channels
    u = u0
    traj = [u0]
    for j in range(cfg.N_steps):
        lp = LayerParams.from_vector(W[:, j], c)
        u = u + dt * layer_f(u, s[j], lp, cfg.activation)
        traj.append(u)
    _bump(counter, cfg.N_steps)
    return u, traj


def _ham_preacts(y, z, s, lp: LayerParams):
    c = lp.K.shape[0]
    Ku, kt = lp.K[:, :c], lp.K[:, c]
    shift = (kt * s + lp.b)[:, None]
    return Ku, shift


def hamiltonian_forward(u0, theta, cfg: ModelConfig, grid: TimeGrid | None = None, counter=None):
    """Verlet network on the stacked state ``[y; z]``.

    y_{j+1} = y_j + dt act(K_j^T z_j + k_j s_j + b_j)
    z_{j+1} = z_j - dt act(K_j y_{j+1} + k_j s_j + b_j)

    ``K_j`` is the square state block of the layer matrix and ``k_j`` its
    time column.
    """
    grid = grid or cfg.grid()
    if u0.shape[0] % 2:
        raise ConfigError("Hamiltonian state needs an even number of channels")
    c = u0.shape[0] // 2
    if c != cfg.channels:
        raise ValueError(f"state must be {2 * cfg.channels} x batch")
    dt = _check_uniform(grid, cfg)
    W = materialize(theta, cfg.basis, grid)
    s = grid.normalize(grid.array())
    y, z = u0[:c], u0[c:]
    traj = [(y, z)]
    for j in range(cfg.N_steps):
        lp = LayerParams.from_vector(W[:, j], c)
        Ku, shift = _ham_preacts(y, z, s[j], lp)
        y, z = verlet_step(
            y, z, s[j], dt,
            lambda zz, _s: act(Ku.T @ zz + shift, cfg.activation),
            lambda yy, _s: act(Ku @ yy + shift, cfg.activation),
        )
        traj.append((y, z))
    _bump(counter, 2 * cfg.N_steps)
    return y, z, traj


def hamiltonian_inverse(yN, zN, theta, cfg: ModelConfig, grid: TimeGrid | None = None):
    """Run the Verlet network backwards exactly, recovering (y_0, z_0)."""
    grid = grid or cfg.grid()
    dt = _check_uniform(grid, cfg)
    W = materialize(theta, cfg.basis, grid)
    s = grid.normalize(grid.array())
    c = cfg.channels
    y, z = yN, zN
    for j in reversed(range(cfg.N_steps)):
        lp = LayerParams.from_vector(W[:, j], c)
        Ku, shift = _ham_preacts(y, z, s[j], lp)
        z = z + dt * act(Ku @ y + shift, cfg.activation)
        y = y - dt * act(Ku.T @ z + shift, cfg.activation)
    return y, z


def node_rhs(u, t, theta, cfg: ModelConfig, grid: TimeGrid | None = None, counter=None):
    if not cfg.basis.is_polynomial:
        raise UnsupportedConfigError("node_rhs needs a polynomial basis")
    grid = grid or cfg.grid()
    lp = weights_at(theta, cfg.basis, grid, t)
    _bump(counter, 1)
    return layer_f(u, float(grid.normalize(t)), lp, cfg.activation)


def node_forward(u0, theta, cfg: ModelConfig, ctrl: StepControl = StepControl(), counter=None,
                 keep_dense=True):
    grid = cfg.grid()
    return dopri5_solve(
        lambda t, u: node_rhs(u, t, theta, cfg, grid, counter),
        u0, (0.0, cfg.T), ctrl, keep_dense=keep_dense,
    )


def initial_state(params, cfg: ModelConfig, y):
    u0 = open_layer(y, params["K_in"], params["b_in"], cfg.activation)
    if cfg.arch is Arch.HAMILTONIAN:
        u0 = np.vstack([u0, np.zeros_like(u0)])
    return u0


def predict(params, cfg: ModelConfig, y, ctrl: StepControl = StepControl(), counter=None):
    """Full map features -> targets (``m_targets x batch``)."""
    u0 = initial_state(params, cfg, y)
    theta = params["theta"]
    if cfg.arch is Arch.RESNET:
        uN, _ = resnet_forward(u0, theta, cfg, counter=counter)
    elif cfg.arch is Arch.HAMILTONIAN:
        uN, _, _ = hamiltonian_forward(u0, theta, cfg, counter=counter)
    else:
        uN = node_forward(u0, theta, cfg, ctrl, counter, keep_dense=False).y_final
    return close_layer(uN, params["W_out"], params["b_out"])
