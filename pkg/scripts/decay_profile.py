"""Fixed-point tail profile and its double-exponential decay diagnostics.

    python3 scripts/decay_profile.py --d 2 --lam 1.0
"""
import argparse
import math
from dataclasses import dataclass

import numpy as np

from twochoice import analytic as an


@dataclass
class DecayConfig:
    d: int = 2
    lam: float = 1.0
    floor: float = 1e-17


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--d", type=int, default=DecayConfig.d)
    ap.add_argument("--lam", type=float, default=DecayConfig.lam)
    ap.add_argument("--floor", type=float, default=DecayConfig.floor)
    cfg = DecayConfig(**vars(ap.parse_args()))
    v = an.fixed_point(cfg.d, cfg.lam).values
    res = an.summed_residual(v, cfg.d, cfg.lam)
    print("i\tv(i)\tlower\tupper\tloglog_step\tresidual")
    prev = None
    for i in range(1, v.size):
        if v[i] < cfg.floor:
            break
        lo, hi, ok = an.recurrence_bracket(v[i - 1], i, cfg.d, cfg.lam)
        g = math.log(-math.log(v[i])) if v[i] < 1 else float("nan")
        step = g - prev if prev is not None else float("nan")
        prev = g
        print(f"{i}\t{v[i]:.6e}\t{lo if ok else float('nan'):.3e}\t{hi:.3e}\t"
              f"{step:.4f}\t{res[i - 1]:.1e}")
    print(f"# ln d = {np.log(cfg.d):.4f}")


if __name__ == "__main__":
    main()
