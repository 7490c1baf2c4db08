"""Efficient frontier of the constant-coefficient example market, checked by simulation.

    python3 scripts/model_a_frontier.py --paths 200000 --out out/model_a
"""
import argparse
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from nlmv.frontier import frontier_csv, frontier_curve
from nlmv.model import MarketModel, TimeGrid, discount_factor
from nlmv.policy import simulate_wealth


@dataclass
class Config:
    r: float = 0.03
    theta_lower: float = 0.2
    theta_upper: float = 0.4
    sigma: float = 0.2
    T: float = 1.0
    N: int = 250
    x0: float = 1.0
    K_list: list = field(default_factory=lambda: [1.05, 1.1, 1.15, 1.2, 1.3])
    paths: int = 200_000
    seed: int = 20240601


def main(cfg: Config, out: Path):
    model = MarketModel.constant(cfg.r, [cfg.theta_lower], [cfg.theta_upper], [[cfg.sigma]])
    grid = TimeGrid(cfg.T, cfg.N)
    rho = discount_factor(model, 0.0, cfg.T)
    points = frontier_curve(model, grid, cfg.x0, cfg.K_list)
    print(f"riskless terminal wealth {cfg.x0 / rho:.6f}; P2(0) = {points[0].policy.sol2.P0:.8f}")
    print(f"{'K':>7} {'d*':>9} {'Var pred':>10} {'mean sim':>10} {'Var sim':>10} {'se Var':>8}")
    for p in points:
        rep = simulate_wealth(model, p.policy, cfg.x0, grid, cfg.paths, cfg.seed)
        print(f"{p.K:7.4f} {p.d_star:9.5f} {p.variance:10.6f} {rep.mean:10.6f} "
              f"{rep.variance:10.6f} {rep.se_variance:8.5f}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "frontier.csv").write_text(frontier_csv(points))
    print(f"wrote {out / 'frontier.csv'} (config: {asdict(cfg)})")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=Config.paths)
    ap.add_argument("--N", type=int, default=Config.N)
    ap.add_argument("--seed", type=int, default=Config.seed)
    ap.add_argument("--out", default="out/model_a")
    a = ap.parse_args()
    main(Config(paths=a.paths, N=a.N, seed=a.seed), Path(a.out))
