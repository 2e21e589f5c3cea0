# %% [markdown]
# # Noisy learning: convergence, hitting times and recurrence
#
# Delays are perturbed by edge-level Brownian noise. With slow enough learning
# a strict equilibrium still attracts almost every run, and an interior one
# keeps the process concentrated nearby.

# %%
import numpy as np

from wardrop.dynamics import SimConfig, simulate_sde
from wardrop.equilibria import solve_wardrop
from wardrop.experiments import (estimate_hitting_time, estimate_invariant_measure, slow_learning_check,
                                 stability_probability)
from wardrop.io import parse_config
from wardrop.latency import NoiseSpec

cfg = parse_config("builtin:parallel2")
net, noise = cfg.network, cfg.noise
q = solve_wardrop(net).flow
print(slow_learning_check(net, q, 0.1, noise).verdicts[0])

# %%
sim = SimConfig(rates=0.1, dt=0.01, horizon=100.0, seed=3, stride=2000)
traj = simulate_sde(net, [0.5, 0.5], sim, noise, replicates=8)
print(traj.flows[:, :, 0].round(4))

# %% [markdown]
# Mean hitting time of a small ball around the strict equilibrium, against the bound.

# %%
rep = estimate_hitting_time(net, q, 0.2, [0.5, 0.5], SimConfig(rates=0.1, dt=0.01, seed=9), noise, 200)
print(rep.statistics["mean"], rep.bounds["hitting_time_bound"], rep.outcome)

# %%
rep = stability_probability(net, q, 0.05, SimConfig(rates=0.1, dt=0.01, seed=8), noise, replicates=100,
                            T=100.0, radius_grid=[0.1, 0.05, 0.01])
print(rep.statistics["by_radius"], rep.outcome)

# %% [markdown]
# Interior equilibrium on the irreducible two-user network. The learning rate
# is set so that the concentration radius is one quarter.

# %%
fig1a = parse_config("builtin:fig1a").network
qa = solve_wardrop(fig1a).flow
noise_a = NoiseSpec.uniform(fig1a, 0.02)
st = slow_learning_check(fig1a, qa, 1.0, noise_a).statistics
lam = st["m"] * st["rho"] * st["kappa"] ** 2 / (5 * st["sigma2"])
rep = estimate_invariant_measure(fig1a, qa, SimConfig(rates=lam, dt=0.02, seed=1), noise_a, T=400.0, burn_in=50.0)
print("theta_lambda:", rep.bounds["theta_lambda"])
print("occupancy:", {k: round(v, 3) for k, v in rep.statistics["occupancy"].items()})
print("mean Theta^2:", rep.statistics["theta2_average"], rep.outcome)
