"""Run every subcommand with one config and collect the summaries in one table."""

import argparse
import json
import os

from wienergmc.cli import COMMANDS, main


def headline(name, summary):
    keys = [k for k, v in summary.items() if isinstance(v, (int, float, bool, str)) and not isinstance(v, dict)]
    return ", ".join(f"{k}={summary[k]}" for k in keys[:6])


def run(config, out_dir, threads=1, commands=None):
    for name in commands or COMMANDS:
        code = main([name, "--config", config, "--out-dir", out_dir, "--threads", str(threads)])
        if code != 0:
            print(f"{name:18s} exit {code}")
            continue
        with open(os.path.join(out_dir, name, "summary.json")) as fh:
            rec = json.load(fh)
        print(f"{name:18s} {headline(name, rec['summary'])}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/quick.ini")
    ap.add_argument("--out-dir", default="runs/all")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("commands", nargs="*")
    a = ap.parse_args()
    run(a.config, a.out_dir, a.threads, a.commands)
