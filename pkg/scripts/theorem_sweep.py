"""Sweep the gradient-norm bound over batch size and temperature.

For each (n, tau) cell: 25 random toy instances, reporting the worst
observed grad-norm/bound ratio and the mean sigma. The bound should hold
everywhere; the ratio shows how loose it runs in practice (sigma shrinks
as similarities flatten, which is exactly the regime the bound rewards).
"""

import argparse

import numpy as np

from pseudopair.theory import random_instance, theorem_check


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=25, help="instances per cell")
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ns = [2, 4, 8, 16]
    taus = [0.2, 0.5, 1.0]
    rng = np.random.default_rng(args.seed)

    print(f"{'n':>4} {'tau':>5} {'worst grad/bound':>17} {'mean sigma':>11} ok")
    violations = 0
    for n in ns:
        for tau in taus:
            worst = 0.0
            sigmas = []
            for _ in range(args.trials):
                gen, H, E = random_instance(n, args.dim, seed=int(rng.integers(2**31)))
                rep = theorem_check(gen, H, E, tau)
                violations += 0 if rep.holds else 1
                worst = max(worst, rep.grad_norm / rep.bound)
                sigmas.append(rep.sigma)
            print(
                f"{n:>4} {tau:>5.2f} {worst:>17.4f} {np.mean(sigmas):>11.4f}"
                f" {'yes' if violations == 0 else 'NO'}"
            )
    print(f"\nviolations: {violations}")
    raise SystemExit(0 if violations == 0 else 1)


if __name__ == "__main__":
    main()
