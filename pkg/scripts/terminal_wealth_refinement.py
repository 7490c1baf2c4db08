"""E|X*_T - xi_hat| / sqrt(dt) under grid refinement, with the dual budget residual.

    python3 scripts/terminal_wealth_refinement.py --steps 50 100 200 400
"""
import argparse
from dataclasses import dataclass

import numpy as np

from nlmv.duality import dual_terminal_wealth_check
from nlmv.model import MarketModel, TimeGrid


@dataclass
class Config:
    x0: float = 1.0
    K: float = 1.1
    paths: int = 100_000
    seed: int = 32


def main(cfg: Config, steps):
    model = MarketModel.constant(0.03, [0.2], [0.4], [[0.2]])
    print(f"{'N':>5} {'E|X-xi|':>10} {'/sqrt(dt)':>10} {'budget res':>11} {'3 s.e.':>9}")
    for N in steps:
        rep = dual_terminal_wealth_check(model, TimeGrid(1.0, N), cfg.x0, cfg.K, cfg.paths,
                                         cfg.seed)
        print(f"{N:5d} {rep.mean_abs_gap:10.3e} {rep.mean_abs_gap / np.sqrt(rep.dt):10.5f} "
              f"{rep.budget_residual:11.2e} {3 * rep.budget_se:9.2e}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[50, 100, 200, 400])
    ap.add_argument("--paths", type=int, default=Config.paths)
    a = ap.parse_args()
    main(Config(paths=a.paths), a.steps)
