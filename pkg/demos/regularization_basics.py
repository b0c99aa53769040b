"""Forward integrals and quadratic variation by regularization, on one path and on an ensemble."""

import numpy as np

from pathreg.detcalc import EpsSchedule, Mode, forward_integral_det, quadratic_variation_det
from pathreg.pathgrid import GridPath
from pathreg import stochcalc as sc

# %% A smooth path: the forward integral is the Stieltjes integral
f = GridPath.from_function(np.sin, 0.0, 1.0, 4096)
res = forward_integral_det(f, f, Mode.HALF_OPEN, EpsSchedule.from_multiples(f.dt, (8, 4, 2, 1)))
print("int sin d^- sin =", res.value, " exact:", np.sin(1.0) ** 2 / 2, " converged:", res.converged)
for eps, v in res.per_eps:
    print(f"  eps={eps:.2e}  approximant={v:.6f}")

# %% The closed interval also sees the jump from zero at the left end
g = GridPath.from_function(lambda t: 2.0 + t, 0.0, 1.0, 4096)
one = g.with_values(np.ones(g.values.size))
print("half-open:", forward_integral_det(one, g).value, " closed:", forward_integral_det(one, g, Mode.CLOSED).value)

# %% Quadratic variation of a random walk sample and of the smooth path
rng = np.random.default_rng(0)
n = 2 ** 14
w = GridPath(0.0, 1.0, np.concatenate([[0.0], np.cumsum(rng.standard_normal(n)) / np.sqrt(n)]))
print("[w]_1 =", quadratic_variation_det(w).values[-1], " [sin]_1 =", quadratic_variation_det(f).values[-1])

# %% Ensembles: Brownian motion and a Holder mixture share [X]_t = t
grid = sc.Grid(1.0, 2048)
sched = EpsSchedule.from_multiples(grid.dt, (4, 2, 1))
for model in (sc.BrownianMotion(), sc.HolderMix(0.8)):
    X = sc.simulate(model, grid, seed=1, n_paths=500)
    qv = sc.quadratic_variation_sp(X, sched)
    print(type(model).__name__, "median [X]_1 =", np.median(qv.paths[:, -1]),
          " successive-eps fractions:", qv.diagnostics.successive[:, 0])

# %% Ito formula for F(x) = x^2 without any martingale theory
X = sc.simulate(sc.BrownianMotion(), grid, seed=2, n_paths=200)
r = sc.ito_residual(sc.SQUARE, X, sched)
print("median sup residual:", np.median(r.sup))
