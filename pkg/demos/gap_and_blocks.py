"""Look under the hood: the duality gap field and the block competitor.

The lower bound on v_eps comes from the gap E = c - phi - psi between the
cost and an optimal pair of Kantorovich potentials. Its Laplace integral
sum exp(-E/eps) d(mu x nu) shrinks like eps^(d/2) for the squared distance,
and v0 - eps log of that integral sits below v_eps.

The upper bound comes from smearing an optimal plan uniformly over the
blocks of a delta-mesh. The smeared plan keeps the marginals, its entropy is
at most the grid entropy of the target, and its cost grows by at most
Lipschitz constant times delta.

Run with ``python demos/gap_and_blocks.py``.
"""

import numpy as np

from eotr import CostModel, DensitySpec, SinkhornConfig, cost_matrix, grid_measure, solve_exact
from eotr.blocks import block_approximation, block_bound_check, grid_entropy, grid_partition
from eotr.costs import lipschitz_estimate
from eotr.gap import gap_field, laplace_floor, laplace_log_integral, laplace_slope_fit
from eotr.sinkhorn import solve_sinkhorn

c = CostModel("quadratic")
mu = grid_measure(DensitySpec.box([0.0], [1.0]), 512)
nu = grid_measure(DensitySpec.box([0.0], [1.0], kind="affine-ramp", intercept=1.0,
                                  slope=[1.0]), 512)
C = cost_matrix(c, mu, nu)
sol = solve_exact(C, mu, nu)
gap = gap_field(C, sol.duals)
print(f"v0 = {sol.v0:.6f}; the gap vanishes on {int(gap.zero_set_mask.sum())} of {C.size} pairs")

lap = laplace_slope_fit(gap, mu, nu, np.geomspace(1e-5, 1e-2, 10), floor=laplace_floor(c, mu))
print(f"Laplace integral ~ eps^{lap.slope:.3f} (expected exponent 1/2 in one dimension)")

lip = lipschitz_estimate(c, ([0.0], [1.0]), ([0.0], [1.0]))
print(f"\n{'eps':>8s} {'lower':>10s} {'v_eps':>10s} {'upper':>10s} {'H_eps(nu)':>10s}")
for eps in (0.1, 0.05, 0.02):
    v = solve_sinkhorn(C, mu, nu, SinkhornConfig(eps, tol=1e-10, eps_scaling=0.5)).v_eps
    lower = sol.v0 - eps * laplace_log_integral(gap, mu, nu, eps)
    blocks = block_approximation(sol.coupling, grid_partition(mu, eps), grid_partition(nu, eps))
    rep = block_bound_check(C, sol.coupling, blocks, lip, eps, eps, v_eps=v)
    upper = rep.cost_delta + eps * rep.entropy_delta
    print(f"{eps:8.3g} {lower:10.6f} {v:10.6f} {upper:10.6f} {grid_entropy(nu, eps):10.4f}")
