"""Final training loss across bases and degrees for the discrete networks.

Examples:
    python scripts/basis_comparison.py --arch hamiltonian --bases legendre --degrees 3,4,5,6 --baseline
    python scripts/basis_comparison.py --arch resnet --bases monomial,legendre --degrees 3 --seeds 0,1,2
"""

import argparse
import csv
import sys

from polyode.architectures import ModelConfig, count_trainable
from polyode.basis import BasisKind
from polyode.data import split, synth_surrogate
from polyode.optimizer import Model, TrainConfig, init_params, train


def run(arch, basis, seed, epochs, task):
    tr, va, _ = task
    cfg = ModelConfig(arch=arch, channels=15, n_features=15, m_targets=10, N_steps=12, basis=basis)
    _, metrics = train(Model(cfg, init_params(cfg, seed)), (tr, va), TrainConfig(epochs=epochs, seed=seed))
    return count_trainable(cfg), metrics.last


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--arch", choices=["resnet", "hamiltonian"], default="hamiltonian")
    p.add_argument("--bases", default="legendre")
    p.add_argument("--degrees", default="3,4,5,6")
    p.add_argument("--seeds", default="0")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--baseline", action="store_true", help="also train the per-step (unparameterized) network")
    args = p.parse_args()

    task = split(synth_surrogate("smooth", 15, 10, 2486, seed=0))
    configs = [BasisKind(k, int(d)) for k in args.bases.split(",") for d in args.degrees.split(",")]
    if args.baseline:
        configs.append(BasisKind("none"))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["arch", "basis", "degree", "seed", "n_trainable", "train_loss", "val_loss", "rhs_evals"])
    for seed in (int(s) for s in args.seeds.split(",")):
        for basis in configs:
            n, (_, tr, va, ev, _) = run(args.arch, basis, seed, args.epochs, task)
            w.writerow([args.arch, basis.kind.value, basis.degree, seed, n, f"{tr:.6f}", f"{va:.6f}", ev])
            sys.stdout.flush()


if __name__ == "__main__":
    main()
