import math

import numpy as np
import pytest

from polyode.architectures import ModelConfig, resnet_forward
from polyode.basis import BasisKind, build_basis_matrix
from polyode.gradients import (
    adjoint_rhs,
    finite_diff_gradient,
    hamiltonian_backward,
    loss,
    loss_and_grad,
    node_gradient,
    relative_error,
    resnet_backward,
)
from polyode.integrators import StepControl
from polyode.optimizer import init_params

LEG3 = BasisKind("legendre", 3)
MONO3 = BasisKind("monomial", 3)
NONE = BasisKind("none")


def toy_batch(cfg, n=6, seed=11):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (cfg.n_features, n)), rng.normal(size=(cfg.m_targets, n))


def perturbed_params(cfg, seed=0):
    # init_params keeps theta tiny; widen it so every block matters
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    params["theta"] = rng.normal(scale=0.3, size=params["theta"].shape)
    params["b_in"] = rng.normal(scale=0.1, size=params["b_in"].shape)
    params["b_out"] = rng.normal(scale=0.1, size=params["b_out"].shape)
    return params


def max_block_error(cfg, params, y, c, ctrl=StepControl(), h=1e-5, indices=None):
    _, g = loss_and_grad(params, cfg, y, c, ctrl)
    fd = finite_diff_gradient(lambda p: loss_and_grad(p, cfg, y, c, ctrl)[0], params, h=h, indices=indices)
    return max(relative_error(g[k], fd[k]) for k in g)


class TestLoss:
    def test_examples(self):
        t = np.random.default_rng(0).normal(size=(3, 4))
        assert loss(t, t) == 0.0
        e1 = np.zeros((3, 4))
        e1[0] = 1.0
        assert loss(t + e1, t) == pytest.approx(0.5)
        params = {"a": np.array([1.0, 1.0]), "b": np.array([[1.0]])}
        assert loss(t, t, params, alpha=2.0) == pytest.approx(3.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            loss(np.zeros((2, 3)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            loss(np.zeros((2, 3)), np.zeros((2, 3)), alpha=-1.0)


class TestDiscreteBackward:
    def test_zero_terminal_adjoint(self):
        cfg = ModelConfig(arch="resnet", channels=3, n_features=2, m_targets=2, N_steps=5, basis=LEG3)
        theta = np.random.default_rng(0).normal(size=cfg.param_shapes()["theta"])
        u0 = np.random.default_rng(1).normal(size=(3, 4))
        _, traj = resnet_forward(u0, theta, cfg)
        A = build_basis_matrix(cfg.basis, cfg.grid())
        g, a0 = resnet_backward(traj, theta, cfg, A, np.zeros((3, 4)))
        assert not g.any() and not a0.any()

        hcfg = ModelConfig(arch="hamiltonian", channels=3, n_features=2, m_targets=2, N_steps=5, basis=LEG3)
        from polyode.architectures import hamiltonian_forward

        _, _, htraj = hamiltonian_forward(np.vstack([u0, 0 * u0]), theta, hcfg)
        g, a0 = hamiltonian_backward(htraj, theta, hcfg, A, (np.zeros((3, 4)), np.zeros((3, 4))))
        assert not g.any() and not a0.any()

    def test_single_linear_layer(self):
        cfg = ModelConfig(arch="resnet", channels=1, n_features=1, m_targets=1, N_steps=1, T=0.5,
                          basis=NONE, activation="identity")
        k, kt, b = 0.7, -0.4, 0.3
        theta = np.array([[k], [kt], [b]])
        u0 = np.array([[2.0]])
        _, traj = resnet_forward(u0, theta, cfg)
        g, a0 = resnet_backward(traj, theta, cfg, None, np.array([[1.0]]))
        # u1 = u0 + dt (k u0 + kt * 0 + b)
        assert np.allclose(g[:, 0], [0.5 * 2.0, 0.0, 0.5])
        assert a0[0, 0] == pytest.approx(1 + 0.5 * k)

    def test_one_verlet_step_linear(self):
        cfg = ModelConfig(arch="hamiltonian", channels=1, n_features=1, m_targets=1, N_steps=1, T=0.25,
                          basis=NONE, activation="identity")
        from polyode.architectures import hamiltonian_forward

        k, b, dt = 0.8, 0.2, 0.25
        theta = np.array([[k], [0.0], [b]])
        y0, z0 = 1.5, -0.5
        _, _, traj = hamiltonian_forward(np.array([[y0], [z0]]), theta, cfg)
        ay, az = 0.3, -1.1
        g, a0 = hamiltonian_backward(traj, theta, cfg, None, (np.array([[ay]]), np.array([[az]])))
        y1 = y0 + dt * (k * z0 + b)
        # L = ay y1 + az z1 with z1 = z0 - dt (k y1 + b)
        dL_dk = ay * dt * z0 + az * (-dt * (y1 + k * dt * z0))
        dL_db = ay * dt + az * (-dt * (1 + k * dt))
        dL_dy0 = ay - az * dt * k
        dL_dz0 = ay * dt * k + az * (1 - dt * k * dt * k)
        assert g[0, 0] == pytest.approx(dL_dk, abs=1e-14)
        assert g[2, 0] == pytest.approx(dL_db, abs=1e-14)
        assert np.allclose(a0[:, 0], [dL_dy0, dL_dz0], atol=1e-14)

    def test_linear_in_terminal_adjoint(self):
        cfg = ModelConfig(arch="resnet", channels=3, n_features=2, m_targets=2, N_steps=6, basis=MONO3)
        rng = np.random.default_rng(5)
        theta = rng.normal(size=cfg.param_shapes()["theta"])
        _, traj = resnet_forward(rng.normal(size=(3, 4)), theta, cfg)
        A = build_basis_matrix(cfg.basis, cfg.grid())
        a1, a2 = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        g1, _ = resnet_backward(traj, theta, cfg, A, a1)
        g2, _ = resnet_backward(traj, theta, cfg, A, a2)
        g12, _ = resnet_backward(traj, theta, cfg, A, 2 * a1 - a2)
        assert np.allclose(g12, 2 * g1 - g2, atol=1e-13)

    def test_projection_through_basis(self):
        # the coefficient gradient is the per-step gradient pulled back by A^T
        cfg = ModelConfig(arch="resnet", channels=2, n_features=2, m_targets=2, N_steps=12, basis=LEG3)
        rng = np.random.default_rng(8)
        theta = rng.normal(size=cfg.param_shapes()["theta"])
        A = build_basis_matrix(cfg.basis, cfg.grid())
        _, traj = resnet_forward(rng.normal(size=(2, 3)), theta, cfg)
        aN = rng.normal(size=(2, 3))
        g_coef, _ = resnet_backward(traj, theta, cfg, A, aN)
        cfg_none = ModelConfig(arch="resnet", channels=2, n_features=2, m_targets=2, N_steps=12, basis=NONE)
        g_step, _ = resnet_backward(traj, theta @ A, cfg_none, None, aN)
        assert np.allclose(g_coef, g_step @ A.T, atol=1e-13)

    @pytest.mark.parametrize("arch", ["resnet", "hamiltonian"])
    @pytest.mark.parametrize("basis", [NONE, MONO3, LEG3], ids=["none", "mono3", "leg3"])
    def test_matches_finite_differences(self, arch, basis):
        cfg = ModelConfig(arch=arch, channels=3, n_features=3, m_targets=2, N_steps=12, basis=basis)
        params = perturbed_params(cfg)
        y, c = toy_batch(cfg)
        assert max_block_error(cfg, params, y, c) < 1e-6

    def test_regularization_adds_alpha_params(self):
        base = ModelConfig(arch="resnet", channels=2, n_features=2, m_targets=2, N_steps=4, basis=LEG3)
        reg = ModelConfig(arch="resnet", channels=2, n_features=2, m_targets=2, N_steps=4, basis=LEG3, alpha=0.3)
        params = perturbed_params(base)
        y, c = toy_batch(base)
        _, g0 = loss_and_grad(params, base, y, c)
        _, g1 = loss_and_grad(params, reg, y, c)
        for k in params:
            assert np.allclose(g1[k] - g0[k], 0.3 * params[k], atol=1e-14)


def test_finite_diff_helper():
    params = {"x": np.array([1.0, -2.0, 3.0])}
    fd = finite_diff_gradient(lambda p: float(np.sum(p["x"] ** 3)), params, h=1e-6)
    assert np.allclose(fd["x"], 3 * params["x"] ** 2, rtol=1e-8)
    part = finite_diff_gradient(lambda p: float(np.sum(p["x"] ** 2)), params, indices={"x": [1]})
    assert math.isnan(part["x"][0]) and part["x"][1] == pytest.approx(-4.0)
    assert relative_error(np.array([1.0, -4.0]), part["x"][:2]) < 1e-8
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda p: 0.0, params, h=0.0)


class TestAdjointRhs:
    cfg = ModelConfig(arch="node", channels=3, n_features=2, m_targets=2, basis=LEG3)

    def test_trivial(self):
        rng = np.random.default_rng(0)
        theta = rng.normal(size=self.cfg.param_shapes()["theta"])
        u = rng.normal(size=(3, 2))
        assert not adjoint_rhs(np.zeros((3, 2)), u, 0.3, theta, self.cfg).any()
        assert not adjoint_rhs(rng.normal(size=(3, 2)), u, 0.3, np.zeros_like(theta), self.cfg).any()

    def test_matches_jacobian_finite_differences(self):
        from polyode.architectures import node_rhs

        rng = np.random.default_rng(3)
        theta = rng.normal(scale=0.5, size=self.cfg.param_shapes()["theta"])
        u = rng.normal(size=(3, 1))
        a = rng.normal(size=(3, 1))
        t, h = 0.6, 1e-6
        J = np.zeros((3, 3))
        for i in range(3):
            e = np.zeros((3, 1))
            e[i] = h
            J[:, i] = ((node_rhs(u + e, t, theta, self.cfg) - node_rhs(u - e, t, theta, self.cfg)) / (2 * h))[:, 0]
        assert np.allclose(adjoint_rhs(a, u, t, theta, self.cfg)[:, 0], -J.T @ a[:, 0], atol=1e-7)


class TestNodeGradient:
    def test_zero_output_weights(self):
        cfg = ModelConfig(arch="node", channels=3, n_features=2, m_targets=2, basis=LEG3)
        params = perturbed_params(cfg)
        params["W_out"][:] = 0.0
        y, c = toy_batch(cfg)
        _, g, _ = node_gradient(y, c, params, cfg)
        assert not g["theta"].any() and not g["K_in"].any()

    def test_scalar_linear_closed_form(self):
        # du/dt = k u + b from u0 = y (identity opening); loss = 0.5 (u(T) - c)^2
        cfg = ModelConfig(arch="node", channels=1, n_features=1, m_targets=1, T=1.0,
                          basis=BasisKind("legendre", 0), activation="identity")
        k, b, y0, target = -0.6, 0.25, 0.8, 0.1
        params = {
            "K_in": np.array([[1.0]]), "b_in": np.zeros(1),
            "theta": np.array([[k], [0.0], [b]]),
            "W_out": np.array([[1.0]]), "b_out": np.zeros(1),
        }
        ctrl = StepControl(rtol=1e-12, atol=1e-12)
        value, g, _ = node_gradient(np.array([[y0]]), np.array([[target]]), params, cfg, ctrl)
        e = math.exp(k)
        uT = y0 * e + b * (e - 1) / k
        r = uT - target
        assert value == pytest.approx(0.5 * r * r, rel=1e-10)
        duT_dk = y0 * e + b * (e / k - (e - 1) / k ** 2)
        assert g["theta"][0, 0] == pytest.approx(r * duT_dk, abs=1e-6)
        assert g["theta"][2, 0] == pytest.approx(r * (e - 1) / k, abs=1e-6)
        # time column: du/dt gains kt * t, sensitivity = int_0^1 e^{k(1-t)} t dt
        sens_kt = (e - 1 - k) / k ** 2
        assert g["theta"][1, 0] == pytest.approx(r * sens_kt, abs=1e-6)
        assert g["K_in"][0, 0] == pytest.approx(r * e * y0, abs=1e-6)

    @pytest.mark.parametrize("basis", [LEG3, MONO3], ids=["leg3", "mono3"])
    def test_matches_finite_differences(self, basis):
        cfg = ModelConfig(arch="node", channels=3, n_features=2, m_targets=2, basis=basis)
        params = perturbed_params(cfg)
        y, c = toy_batch(cfg, n=4)
        ctrl = StepControl(rtol=1e-10, atol=1e-10)
        assert max_block_error(cfg, params, y, c, ctrl, h=1e-4) < 1e-4

    def test_counter_includes_backward_solve(self):
        from polyode.architectures import EvalCounter

        cfg = ModelConfig(arch="node", channels=2, n_features=2, m_targets=2, basis=LEG3)
        params = perturbed_params(cfg)
        y, c = toy_batch(cfg, n=3)
        cnt = EvalCounter()
        _, _, rec = node_gradient(y, c, params, cfg, counter=cnt)
        assert cnt.count == rec.n_rhs_evals
        assert rec.n_rhs_evals > 1 + 6 * (rec.n_accepted + rec.n_rejected)

    def test_rejects_discrete_config(self):
        cfg = ModelConfig(arch="resnet", channels=2, n_features=2, m_targets=2, basis=LEG3)
        y, c = toy_batch(cfg)
        with pytest.raises(ValueError):
            node_gradient(y, c, init_params(cfg), cfg)
