"""Neural ODE training cost: rhs evaluations needed to reach a target loss, per basis.

Writes one metrics CSV per (basis, seed) and prints the evaluation counts.
"""

import argparse
from pathlib import Path

from polyode.architectures import EvalCounter, ModelConfig
from polyode.basis import BasisKind
from polyode.data import split, synth_surrogate
from polyode.integrators import StepControl
from polyode.optimizer import Model, TrainConfig, init_params, train


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--target", type=float, default=0.6)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--channels", type=int, default=15)
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--out", default="runs/nfe")
    args = p.parse_args()

    tr, va, _ = split(synth_surrogate("smooth", 15, 10, 2486, seed=0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctrl = StepControl(rtol=args.rtol, atol=1e-8)
    for seed in (int(s) for s in args.seeds.split(",")):
        evals = {}
        for kind in ("legendre", "monomial"):
            cfg = ModelConfig(arch="node", channels=args.channels, n_features=15, m_targets=10,
                              basis=BasisKind(kind, args.degree))
            tcfg = TrainConfig(epochs=args.max_epochs, seed=seed, loss_tolerance=args.target)
            _, metrics = train(Model(cfg, init_params(cfg, seed)), (tr, va), tcfg, ctrl, EvalCounter())
            metrics.write_csv(out / f"{kind}_seed{seed}.csv")
            evals[kind] = metrics.evals_to_reach(args.target)
            print(f"seed {seed} {kind:<9} epochs {len(metrics.rows):>4} final {metrics.last[1]:.4f} "
                  f"evals to target {evals[kind]}")
        if all(evals.values()):
            print(f"seed {seed} monomial/legendre = {evals['monomial'] / evals['legendre']:.2f}")


if __name__ == "__main__":
    main()
