# %% [markdown]
# # Configs and the command line
#
# Every builtin example is a JSON config; the CLI reads the same format.

# %%
import json
import tempfile
from pathlib import Path

from wardrop.cli import main
from wardrop.io import builtin_example, parse_config, read_trajectory_csv

print(json.dumps(builtin_example("parallel2"), indent=1)[:400])

# %%
work = Path(tempfile.mkdtemp())
main(["analyze", "builtin:braess", "--out", str(work / "braess.json"), "--quiet"])
print(json.loads((work / "braess.json").read_text())["equilibrium"]["flow"])

# %%
csv = work / "ode.csv"
main(["simulate-ode", "builtin:braess", "--horizon", "20", "--stride", "500", "--x0", "1,2,3",
      "--out", str(csv), "--quiet"])
header, data = read_trajectory_csv(csv)
print(header)
print(data[-1])
print(json.loads(csv.with_name("ode.manifest.json").read_text())["config_digest"])

# %%
cfg = parse_config("builtin:fig1b")
print(cfg.network, cfg.sim)
