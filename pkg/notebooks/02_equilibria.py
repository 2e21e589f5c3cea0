# %% [markdown]
# # Equilibria, the Braess disparity and social optima

# %%
import numpy as np

from wardrop.equilibria import (solve_social_optimum, solve_wardrop, verify_wardrop,
                                verify_worst_delay_equilibrium)
from wardrop.io import parse_config
from wardrop.latency import path_delays, rosenthal_potential

braess = parse_config("builtin:braess").network

# %% [markdown]
# The solver minimises the potential with Frank-Wolfe steps (with away steps) and
# stops on the relative Wardrop gap.

# %%
rep = solve_wardrop(braess)
print(rep.flow.round(6), rep.delays.round(6), f"gap={rep.gap:.1e}", rep.iterations, "iterations")
print("classification:", rep.classification, " essence:", round(rep.kappa, 4))

# %% [markdown]
# At (3,3,0) every traveller sees delay 83 while the unused path would take 70:
# not a Wardrop flow, yet nobody can lower their own worst delay.

# %%
x = np.array([3.0, 3.0, 0.0])
print(path_delays(braess, x).path)
print(verify_wardrop(braess, x).violations)
print("worst-delay check at (3,3,0):", verify_worst_delay_equilibrium(braess, x).passed)
print("worst-delay check at (2,2,2):", verify_worst_delay_equilibrium(braess, rep.flow).passed)
print("potential:", rosenthal_potential(braess, rep.flow), rosenthal_potential(braess, x))

# %% [markdown]
# The relative gap of Frank-Wolfe is not monotone, even though the potential is.

# %%
hist = solve_wardrop(braess, tol=1e-12).gap_history
print(hist[:6].round(4))
print("upticks:", int(np.sum(np.diff(hist) > 0)))

# %% [markdown]
# Social optimum: the equilibrium of marginal latencies. The Pigou pair shows
# the price of selfish routing.

# %%
pigou = parse_config("builtin:pigou").network
ne, so = solve_wardrop(pigou), solve_social_optimum(pigou)
print("equilibrium", ne.flow.round(6), ne.aggregate_delay)
print("optimum    ", so.flow.round(6), so.aggregate_delay)

# %% [markdown]
# A strict equilibrium: two parallel links where the fast one wins by 8.

# %%
p2 = parse_config("builtin:parallel2").network
rep = solve_wardrop(p2)
print(rep.classification, rep.margins)
