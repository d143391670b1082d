"""Numerical tolerances shared by every solver stage."""

# primal feasibility of LP rows / bounds
FEAS_TOL = 1e-7
# generic float comparison
CMP_TOL = 1e-9
# residual above which an LP answer is rejected outright
RESIDUAL_FAIL = 1e-6
# z-atoms lighter than this are dropped when building distributions
ATOM_TOL = 1e-12


def snap01(values, tol=1e-10):
    """Clamp values within ``tol`` of 0 or 1 onto those endpoints (in place)."""
    values[abs(values) <= tol] = 0.0
    values[abs(values - 1.0) <= tol] = 1.0
    return values


def approx_interval(value, tol=FEAS_TOL):
    """Integer interval ``[floor, ceil]`` of ``value``, collapsing near-integers."""
    import math

    r = round(value)
    if abs(value - r) <= tol:
        return int(r), int(r)
    return math.floor(value), math.ceil(value)
