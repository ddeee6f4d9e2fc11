# %% [markdown]
# # The command line
#
# Everything above is also reachable through the `bnaf` command, which
# writes CSV files an external plotting tool can read.

# %%
import subprocess
import sys
import tempfile
from pathlib import Path


def bnaf(*args):
    proc = subprocess.run([sys.executable, "-m", "bnaf", *args], capture_output=True, text=True)
    return proc.returncode, proc.stdout.strip(), proc.stderr.strip()


out = Path(tempfile.mkdtemp())

# %%
bnaf("count-params", "--d", "2", "--k", "50", "--layers", "3")

# %%
bnaf("fit-density", "--data", "checkerboard", "--iters", "300", "--grid-res", "50", "--out", str(out / "fit"))
sorted(p.name for p in (out / "fit").iterdir())

# %%
(out / "fit" / "metrics.csv").read_text().splitlines()[:3]

# %%
code, _, _ = bnaf("eval-grid", "--checkpoint", str(out / "fit" / "checkpoint.bnaf"), "--res", "3",
                  "--out", str(out / "grid.csv"))
(out / "grid.csv").read_text()

# %%
(out / "rows.csv").write_text("y1,y2\n0.0,0.0\n1.5,-0.5\n")
bnaf("invert", "--checkpoint", str(out / "fit" / "checkpoint.bnaf"), "--in", str(out / "rows.csv"))

# %% [markdown]
# Bad input gives a usage error (exit code 2) and names the valid choices.

# %%
bnaf("fit-density", "--data", "moons", "--out", str(out / "nope"))
