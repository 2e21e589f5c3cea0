# %% [markdown]
# # Deterministic learning dynamics
#
# Replicator dynamics grow a path's share in proportion to how much it beats
# its user's average delay. The relative entropy to an equilibrium and the
# potential both decrease along trajectories.

# %%
import numpy as np

from wardrop.dynamics import SimConfig, bnn_rhs, integrate_ode, replicator_rhs
from wardrop.equilibria import solve_wardrop
from wardrop.io import parse_config

braess = parse_config("builtin:braess").network
q = solve_wardrop(braess).flow
cfg = SimConfig(rates=1.0, dt=0.01, horizon=50.0, q=q, stride=500)
traj = integrate_ode(braess, [1.0, 2.0, 3.0], cfg)
for t, x, h, g in zip(traj.times, traj.flows, traj.diagnostics["H_q"], traj.diagnostics["gap"]):
    print(f"t={t:5.1f} x={np.round(x, 4)} H={h:.3e} gap={g:.2e}")
print("largest per-step increase:", traj.max_uptick)

# %% [markdown]
# Unused paths stay unused under the replicator field, so (3,3,0) is a rest
# point. The excess-delay (BNN) field escapes it.

# %%
x = np.array([3.0, 3.0, 0.0])
print("replicator:", replicator_rhs(braess, x))
print("BNN:", bnn_rhs(braess, x))
traj = integrate_ode(braess, x, SimConfig(dt=0.002, horizon=5.0, stride=500), rhs="bnn")
print(traj.final.round(4))

# %% [markdown]
# On the reducible network the final flows depend on the start, but the loads agree.

# %%
fig1b = parse_config("builtin:fig1b").network
rng = np.random.default_rng(1)
traj = integrate_ode(fig1b, fig1b.random_flow(rng, batch=5), SimConfig(dt=0.05, horizon=200.0, stride=4000))
print(traj.final.round(3))
print(fig1b.loads(traj.final).round(6))
