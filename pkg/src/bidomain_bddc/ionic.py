"""Rogers-McCulloch membrane kinetics and the coercivity diagnostics of the Jacobian."""
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidConfigError

__all__ = ["IonicParams", "CoercivityReport", "i_ion", "r_gate", "partials", "coercivity_check"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IonicParams:
    G: float = 1.2
    v_th: float = 13.0
    v_p: float = 100.0
    eta1: float = 4.4
    eta2: float = 0.012
    C_m: float = 1.0
    chi: float = 1.0

    def validate(self):
        values = (self.G, self.v_th, self.v_p, self.eta1, self.eta2, self.C_m, self.chi)
        if min(values) <= 0:
            raise InvalidConfigError("ionic parameters must be positive")
        if not self.v_th < self.v_p:
            raise InvalidConfigError("need v_th < v_p")

    @property
    def capacitance(self):
        """The product chi * C_m multiplying the time derivative of v."""
        return self.chi * self.C_m


DEFAULT = IonicParams()


def i_ion(v, w, p=DEFAULT):
    return p.G * v * (1.0 - v / p.v_th) * (1.0 - v / p.v_p) + p.eta1 * v * w


def r_gate(v, w, p=DEFAULT):
    return p.eta2 * (v / p.v_p - w)


def partials(v, w, p=DEFAULT):
    """Return ``(dI/dv, dI/dw, dR/dv, dR/dw)`` evaluated at ``(v, w)``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    # d/dv of G v (1 - v/a)(1 - v/b) = G (1 - 2v(1/a + 1/b) + 3v^2/(ab))
    a, b = p.v_th, p.v_p
    di_dv = p.G * (1.0 - 2.0 * v * (1.0 / a + 1.0 / b) + 3.0 * v**2 / (a * b)) + p.eta1 * w
    di_dw = p.eta1 * v
    dr_dv = np.full_like(v, p.eta2 / p.v_p)
    dr_dw = np.full_like(v, -p.eta2)
    return di_dv, di_dw, dr_dv, dr_dw


@dataclass
class CoercivityReport:
    """
    Nodewise minima of the three hypothesis expressions

    ``chi C_m + tau dI/dv``, ``1 - tau dR/dw`` and ``dI/dw - dR/dv``.
    The first two must be positive and the third non-negative for the
    symmetric part of the Jacobian to be coercive.
    """

    min_capacitive: float
    min_gating: float
    min_coupling: float
    capacitive_ok: bool
    gating_ok: bool
    coupling_ok: bool
    violations: dict

    @property
    def c1(self):
        return self.min_capacitive

    @property
    def c2(self):
        return self.min_gating

    @property
    def ok(self):
        return self.capacitive_ok and self.gating_ok and self.coupling_ok


def coercivity_check(v, w, tau, p=DEFAULT, coords=None):
    """
    Evaluate the coercivity hypotheses at every node of the state ``(v, w)``.

    Violations are reported and logged, never raised: the coupling condition
    fails at rest by a margin of ``eta2 / v_p`` and this is harmless.
    """
    di_dv, di_dw, dr_dv, dr_dw = partials(v, w, p)
    cap = p.capacitance + tau * di_dv
    gate = 1.0 - tau * dr_dw
    coup = di_dw - dr_dv
    violations = {
        "capacitive": np.flatnonzero(cap <= 0),
        "gating": np.flatnonzero(gate <= 0),
        "coupling": np.flatnonzero(coup < 0),
    }
    report = CoercivityReport(
        float(cap.min()),
        float(gate.min()),
        float(coup.min()),
        bool(cap.min() > 0),
        bool(gate.min() > 0),
        bool(coup.min() >= 0),
        violations,
    )
    for name in ("capacitive", "gating"):
        bad = violations[name]
        if len(bad):
            where = coords[bad[0]] if coords is not None else bad[0]
            logger.warning("%s coercivity hypothesis fails at %d nodes (first at %s)", name, len(bad), where)
    return report
