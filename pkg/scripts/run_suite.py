"""Run every experiment at acceptance scale and merge the results.

Each experiment lands in ``<out>/<name>/``; the merged report goes to
``<out>/report/``.  Use ``--quick`` for a reduced-size smoke run.

    python3 scripts/run_suite.py --out out/suite --seed 1
"""
import argparse
import os
import sys
from dataclasses import dataclass, field

from twochoice.cli import run


@dataclass
class SuiteConfig:
    out: str = "out/suite"
    seed: int = 1
    threads: int | None = None
    quick: bool = False
    only: list = field(default_factory=list)


FULL = {
    "equilibrium": ["--n", "1000", "--samples", "2000"],
    "equilibrium_d1": ["--n", "100000", "--d", "1", "--samples", "200"],
    "equilibrium_d2": ["--n", "100000", "--d", "2", "--samples", "200"],
    "couple": ["--n", "100", "--r0", "200", "--trials", "200"],
    "mixing": ["--n", "10000", "--trials", "1000", "--t-grid", "0,0.5,1,2,3,5,10,15"],
    "meanfield": ["--d", "1", "--t", "1", "--check-closed-form"],
    "fixedpoint": ["--d", "2"],
    "predict": ["--n", "100000", "--d", "2"],
    "driftwalk": ["--p", "0.1", "--a", "3", "--m", "560", "--width", "10",
                  "--trials", "1000000"],
    "chaos": ["--n", "1000", "--samples", "2000"],
    "sequential": ["--n", "10000", "--trials", "20"],
}

QUICK = {
    "equilibrium": ["--n", "300", "--samples", "100"],
    "couple": ["--n", "50", "--r0", "100", "--trials", "20"],
    "mixing": ["--n", "500", "--trials", "50", "--t-grid", "0,1,2,5"],
    "meanfield": ["--d", "1", "--t", "1", "--check-closed-form"],
    "fixedpoint": ["--d", "2"],
    "predict": ["--n", "100000"],
    "driftwalk": ["--trials", "10000"],
    "chaos": ["--n", "100", "--samples", "200"],
    "sequential": ["--n", "1000", "--trials", "5"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default=SuiteConfig.out)
    ap.add_argument("--seed", type=int, default=SuiteConfig.seed)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--only", nargs="*", default=[])
    cfg = SuiteConfig(**vars(ap.parse_args()))
    plan = QUICK if cfg.quick else FULL
    dirs, codes = [], {}
    for name, extra in plan.items():
        if cfg.only and name not in cfg.only:
            continue
        cmd = name.split("_")[0]
        out = os.path.join(cfg.out, name)
        argv = [cmd, *extra, "--seed", str(cfg.seed), "--out", out]
        if cfg.threads:
            argv += ["--threads", str(cfg.threads)]
        print(f"# {' '.join(argv)}", file=sys.stderr)
        codes[name] = run(argv)
        if os.path.exists(os.path.join(out, "result.json")):
            dirs.append(out)
    if dirs:
        run(["report", "--inputs", *dirs, "--out", os.path.join(cfg.out, "report")])
    for name, code in codes.items():
        print(f"{name}: exit {code}", file=sys.stderr)
    sys.exit(max(codes.values(), default=0))


if __name__ == "__main__":
    main()
