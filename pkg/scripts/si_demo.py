"""Separability index on a strongly separable and a non-separable two-class sample.

Usage: python scripts/si_demo.py [--n 200] [--seed 3]
"""
import argparse

import numpy as np

from eventseg import flda


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    half = args.n // 2

    X = np.vstack([rng.normal(0, 0.5, (half, 2)), rng.normal(10, 0.5, (half, 2))])
    y = np.repeat([0, 1], half)
    w = flda.fisher_weights(X, y)
    sep = flda.separability_index(X[::2], y[::2], X[1::2], y[1::2], w)

    Xn = rng.normal(size=(args.n, 2))
    yn = rng.permutation(np.repeat([0, 1], half))
    wn = flda.fisher_weights(Xn, yn)
    non = flda.separability_index(Xn[:half], yn[:half], Xn[half:], yn[half:], wn)

    print(f"separable clusters:       SI = {sep:.3f}")
    print(f"shuffled labels (n={args.n}): SI = {non:.3f}  (chance level 0.5)")


if __name__ == "__main__":
    main()
