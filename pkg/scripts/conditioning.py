"""Condition numbers of monomial and shifted-Legendre evaluation matrices."""

import argparse

from polyode.basis import BasisKind, TimeGrid, build_basis_matrix, condition_number


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--N", type=int, default=50, help="equispaced points on [0, 1]")
    p.add_argument("--max-degree", type=int, default=10)
    args = p.parse_args()

    grid = TimeGrid.linspace(0.0, 1.0, args.N)
    print(f"{'degree':>6} {'monomial':>14} {'legendre':>10} {'ratio':>12}")
    for d in range(args.max_degree + 1):
        km = condition_number(build_basis_matrix(BasisKind("monomial", d), grid).T)
        kl = condition_number(build_basis_matrix(BasisKind("legendre", d), grid).T)
        print(f"{d:>6} {km:>14.6g} {kl:>10.4f} {km / kl:>12.4g}")


if __name__ == "__main__":
    main()
