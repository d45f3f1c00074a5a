"""
Compare GMRES residuals with the field-of-values envelope.

On the first stimulated Newton system the preconditioned Schur operator
T = M^{-1} S is sampled in the energy inner product of the symmetric part to
estimate c (smallest Rayleigh quotient) and C (largest ratio of |Tu|^2 to
|u|^2).  Every GMRES residual, measured in that same norm, must stay below
(1 - c^2/C)^{m/2}.  The constants from the abstract theory are printed too:
at desk scale they do not give a usable rate.
"""
import numpy as np

from bidomain_bddc.assembly import Discretization, State
from bidomain_bddc.geometry import build_conductivity, build_fibers
from bidomain_bddc.harness import build_mesh, build_protocol, preset
from bidomain_bddc.partition import decompose
from bidomain_bddc.solvers import LinearStack
from bidomain_bddc.theory import compute_constants, envelope_diagnostic

cfg = preset("slab-paper")
cfg.geometry.elems = (8, 8, 8)
cfg.geometry.lengths = (0.16, 0.16, 0.16)
mesh = build_mesh(cfg.geometry)
tensors = build_conductivity(build_fibers(mesh))
disc = Discretization(mesh, tensors)
dec = decompose(mesh, 2, 2, 2)
rest = State.rest(mesh.n_nodes)
rhs = -disc.residual(rest, rest, cfg.tau, *build_protocol(cfg, mesh).currents(disc, 0.0))

for scaling in ("rho", "deluxe"):
    cfg.scaling = scaling
    rep = envelope_diagnostic(LinearStack(disc, dec, cfg.linear()), rest, cfg.tau, rhs)
    print(f"{scaling}: c = {rep.c_emp:.3f}, C = {rep.C_emp:.3f}, rate = {rep.rate:.3f}")
    for m in range(0, len(rep.ratios), 3):
        print(f"  m = {m:2d}  ratio {rep.ratios[m]:.2e}  bound {rep.bound[m]:.2e}")
    print(f"  violations: {len(rep.violations)}, skew form: {rep.z_form_max:.1e}")

k = compute_constants(rest, dec, tensors, cfg.tau)
print(f"theory at rest: K^2 = {k.K2:.2e}, Phi = {k.Phi:.3e}, c = {k.c:.3e}, C = {k.C:.3e}")
print("informative" if k.informative else "the theoretical rate is not informative here")
print(f"(1 - c^2/C) from theory: {1 - k.c**2 / k.C if np.isfinite(k.c) else float('nan'):.3e}")
