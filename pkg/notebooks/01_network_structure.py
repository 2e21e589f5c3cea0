# %% [markdown]
# # Networks, paths and redundancy
#
# A network is a set of edges with latency functions plus users, each sending a
# fixed rate of traffic between an origin and a destination. A flow assigns each
# user's rate to its paths. Edge loads only see the sum over paths, so some flow
# directions can be invisible to the edges: their number is the redundancy.

# %%
import numpy as np

from wardrop.io import parse_config
from wardrop.network import essence, projective_distance, redundancy, redundancy_lower_bound

braess = parse_config("builtin:braess").network
fig1a = parse_config("builtin:fig1a").network
fig1b = parse_config("builtin:fig1b").network
print(braess, fig1a, fig1b, sep="\n")

# %% [markdown]
# Path names are `u<user>.<label>`; the path-edge incidence matrix maps flows to loads.

# %%
print(braess.path_names)
print(braess.P.astype(int))
print("loads at (2,2,2):", braess.loads([2.0, 2.0, 2.0]))

# %% [markdown]
# Adding a third user to the two-user network creates one load-invisible direction.

# %%
for name, net in (("braess", braess), ("fig1a", fig1a), ("fig1b", fig1b)):
    info = redundancy(net)
    print(f"{name}: red={info.redundancy} lower bound={redundancy_lower_bound(net)}")
k = redundancy(fig1b).kernel[:, 0]
print(dict(zip(fig1b.path_names, np.round(k / np.abs(k).max(), 3))))

# %% [markdown]
# Moving along that direction leaves every edge load unchanged:

# %%
x = fig1b.barycenter()
print(fig1b.loads(x))
print(fig1b.loads(x + 0.2 * k))

# %% [markdown]
# The projective distance places a flow on the ray from an interior reference
# point to the boundary; the essence measures how much the loads must move to
# reach the boundary. It vanishes exactly on reducible networks.

# %%
q = fig1a.barycenter()
rng = np.random.default_rng(0)
print("Theta:", projective_distance(q, fig1a.random_flow(rng, batch=5)).round(3))
print("essence fig1a:", round(essence(fig1a, q).kappa, 4))
print("essence fig1b:", essence(fig1b, fig1b.barycenter()).kappa)
