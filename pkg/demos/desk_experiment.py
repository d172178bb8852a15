"""A small end-to-end run through the command-line tool.

Builds a synthetic benchmark, trains the three-branch detector, evaluates
it, reloads the checkpoint, and runs the post-processing robustness grid.
The defaults finish in a few minutes; pass ``--full`` for the 600-per-class
64x64 desk configuration used by the acceptance gate.

    python3 demos/desk_experiment.py [--full] [--workdir DIR]
"""

import argparse
import tempfile
import time
from pathlib import Path

from cgtrace.cli import main as cgtrace

ap = argparse.ArgumentParser()
ap.add_argument("--full", action="store_true")
ap.add_argument("--workdir")
args = ap.parse_args()

work = Path(args.workdir or tempfile.mkdtemp(prefix="cgtrace_demo_"))
n, size, epochs = (600, 64, 5) if args.full else (240, 64, 4)
config = work / "run.cfg"
work.mkdir(parents=True, exist_ok=True)
config.write_text(f"# desk run\nimage_size = {size}\nbatch_size = 16\nmax_epochs = {epochs}\n"
                  "renderer_steps = 20\n")


def step(title, argv):
    print(f"\n$ cgtrace {' '.join(argv)}")
    t0 = time.perf_counter()
    code = cgtrace(argv)
    print(f"[{title}: exit {code}, {time.perf_counter() - t0:.1f}s]")
    if code:
        raise SystemExit(code)


manifest, ckpt = str(work / "data" / "manifest.csv"), str(work / "model.ckpt")
step("synthesize", ["synth", "--n", str(n), "--size", str(size), "--out", str(work / "data"), "--seed", "0"])
step("train", ["train", "--manifest", manifest, "--config", str(config), "--out", ckpt,
               "--history", str(work / "history.csv")])
step("evaluate reloaded checkpoint", ["eval", "--manifest", manifest, "--checkpoint", ckpt])
step("robustness", ["robustness", "--manifest", manifest, "--checkpoint", ckpt])
print(f"\nartifacts in {work}")
