"""Tabulate predicted max-load levels over a range of n.

    python3 scripts/level_scan.py --k-min 3 --k-max 12 --out out/level_scan.tsv
"""
import argparse
import math
from dataclasses import dataclass

from twochoice import analytic as an


@dataclass
class ScanConfig:
    k_min: int = 3
    k_max: int = 12
    d: int = 2
    lam: float = 1.0
    out: str | None = None


def scan(cfg: ScanConfig) -> list[dict]:
    fp = an.fixed_point(cfg.d, cfg.lam)
    rows = []
    for k in range(cfg.k_min, cfg.k_max + 1):
        n = 10.0**k
        j = an.jstar_predict(n, cfg.d, cfg.lam, profile=fp)
        m = an.d1_levels(n, cfg.lam)
        lead, two = an.d1_level_expansion(n)
        ll = math.log(math.log(n))
        rows.append(dict(n=n, jstar=j.level, threshold=j.threshold,
                         jstar_offset=j.level - ll / math.log(cfg.d),
                         m=m.level, m_ratio=m.level * ll / math.log(n),
                         m_lead=lead, m_two_term=two))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    for name, val in vars(ScanConfig()).items():
        kind = float if isinstance(val, float) else (str if val is None else int)
        ap.add_argument("--" + name.replace("_", "-"), type=kind, default=val)
    cfg = ScanConfig(**vars(ap.parse_args()))
    rows = scan(cfg)
    keys = list(rows[0])
    lines = ["\t".join(keys)] + ["\t".join(f"{r[k]:.6g}" for k in keys) for r in rows]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)


if __name__ == "__main__":
    main()
