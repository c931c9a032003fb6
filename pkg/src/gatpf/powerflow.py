"""AC power flow: injection/current formulas and a Newton-Raphson solver.

The closed-form helpers work on rectangular voltages ``U = mu + j*omega``.
All of them accept either a single voltage vector of length ``n`` or a
``(k, n)`` stack of instances.
"""

from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .case import AdmittanceMatrix, BusType, PowerCase, build_ybus
from .errors import DimensionMismatch, NonConvergence, SingularJacobian

DENSE_LIMIT = 200


class Start(enum.Enum):
    FLAT = "flat"
    CASE = "case"


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 20
    start: Start = Start.FLAT

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class PfSolution:
    mu: np.ndarray
    omega: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int
    max_mismatch: float
    converged: bool = True
    trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def voltage(self) -> np.ndarray:
        return self.mu + 1j * self.omega


def _gb(Y):
    if isinstance(Y, AdmittanceMatrix):
        return Y.G, Y.B, Y.n
    Y = Y if sp.issparse(Y) else np.asarray(Y)
    return Y.real, Y.imag, Y.shape[0]


def _matvec(M, x):
    # x is (n,) or (k, n); returns the same shape
    return (M @ x.T).T if x.ndim == 2 else M @ x


def _check(n, *vectors):
    shape = np.shape(vectors[0])
    for v in vectors:
        if np.shape(v) != shape or np.shape(v)[-1] != n:
            raise DimensionMismatch(
                f"expected vectors of length {n} with equal shapes, got {[np.shape(u) for u in vectors]}"
            )


def compute_injections(Y, mu, omega):
    """Active/reactive injections from the rectangular power flow equations."""
    G, B, n = _gb(Y)
    mu = np.asarray(mu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check(n, mu, omega)
    g_mu, g_om = _matvec(G, mu), _matvec(G, omega)
    b_mu, b_om = _matvec(B, mu), _matvec(B, omega)
    p = mu * g_mu + omega * g_om + omega * b_mu - mu * b_om
    q = omega * g_mu - mu * g_om - mu * b_mu - omega * b_om
    return p, q


def conjugate_currents(Y, mu, omega):
    """Real and imaginary parts of the conjugate current injection ``conj(Y U)``."""
    G, B, n = _gb(Y)
    mu = np.asarray(mu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check(n, mu, omega)
    ir = _matvec(G, mu) - _matvec(B, omega)
    ii = -_matvec(B, mu) - _matvec(G, omega)
    return ir, ii


def recover_power(mu, omega, ir, ii):
    """``S = U * conj(I)`` split into (P, Q), given the conjugate current parts."""
    mu, omega, ir, ii = (np.asarray(v, dtype=float) for v in (mu, omega, ir, ii))
    _check(np.shape(mu)[-1] if np.ndim(mu) else 0, mu, omega, ir, ii)
    return mu * ir - omega * ii, mu * ii + omega * ir


# --------------------------------------------------------------------------
# Newton-Raphson

@dataclass(frozen=True)
class BusSets:
    ref: int
    pv: np.ndarray
    pq: np.ndarray

    @property
    def pvpq(self) -> np.ndarray:
        return np.concatenate([self.pv, self.pq])


def bus_sets(case: PowerCase) -> BusSets:
    """Slack/PV/PQ index sets; a PV bus with no in-service generator acts as PQ."""
    ix = case.index
    has_gen = np.zeros(case.n_bus, dtype=bool)
    for g in case.gens:
        if g.status:
            has_gen[ix[g.bus]] = True
    types = case.bus_types
    ref = int(np.flatnonzero(types == BusType.SLACK)[0])
    pv = np.flatnonzero((types == BusType.PV) & has_gen)
    pq = np.flatnonzero((types == BusType.PQ) | ((types == BusType.PV) & ~has_gen))
    return BusSets(ref, pv, pq)


def specified_power(case: PowerCase) -> np.ndarray:
    """Net complex injection ``sum(Pg) - (Pd + jQd)`` per bus (generator Q is free)."""
    ix = case.index
    s = np.array([-(b.pd + 1j * b.qd) for b in case.buses])
    for g in case.gens:
        if g.status:
            s[ix[g.bus]] += g.pg
    return s


def initial_voltage(case: PowerCase, start: Start = Start.FLAT) -> np.ndarray:
    sets = bus_sets(case)
    if start == Start.FLAT:
        vm = np.ones(case.n_bus)
        va = np.zeros(case.n_bus)
        va[sets.ref] = case.buses[sets.ref].va
    else:
        vm = np.array([b.vm for b in case.buses])
        va = np.array([b.va for b in case.buses])
    ix = case.index
    seen = set()
    for g in case.gens:
        k = ix[g.bus]
        if g.status and k not in seen and (k == sets.ref or k in set(sets.pv.tolist())):
            vm[k] = g.vg
            seen.add(k)
    return vm * np.exp(1j * va)


def _jacobian(Y, V, pvpq, pq, dense):
    I = Y @ V
    Vnorm = V / np.abs(V)
    if dense:
        Yd = Y.toarray() if sp.issparse(Y) else Y
        dS_dVm = (V[:, None] * np.conj(Yd * Vnorm[None, :])) + np.diag(np.conj(I) * Vnorm)
        dS_dVa = 1j * V[:, None] * np.conj(np.diag(I) - Yd * V[None, :])
        J11 = dS_dVa[np.ix_(pvpq, pvpq)].real
        J12 = dS_dVm[np.ix_(pvpq, pq)].real
        J21 = dS_dVa[np.ix_(pq, pvpq)].imag
        J22 = dS_dVm[np.ix_(pq, pq)].imag
        return np.block([[J11, J12], [J21, J22]])
    dV = sp.diags(V)
    dS_dVm = dV @ np.conj(Y @ sp.diags(Vnorm)) + sp.diags(np.conj(I) * Vnorm)
    dS_dVa = 1j * dV @ np.conj(sp.diags(I) - Y @ dV)
    dS_dVm, dS_dVa = dS_dVm.tocsr(), dS_dVa.tocsr()
    J11 = dS_dVa[pvpq][:, pvpq].real
    J12 = dS_dVm[pvpq][:, pq].real
    J21 = dS_dVa[pq][:, pvpq].imag
    J22 = dS_dVm[pq][:, pq].imag
    return sp.bmat([[J11, J12], [J21, J22]], format="csc")


def newton_raphson(Y, sbus, V0, sets: BusSets, tol=1e-8, max_iter=20):
    """Polar Newton-Raphson on the mismatch ``V*conj(YV) - Sbus``.

    Returns ``(V, iterations, trace)``; raises on divergence or a singular
    Jacobian.
    """
    Y = Y.matrix if isinstance(Y, AdmittanceMatrix) else Y
    pv, pq = sets.pv, sets.pq
    pvpq = np.concatenate([pv, pq])
    npvpq = len(pvpq)
    dense = Y.shape[0] < DENSE_LIMIT
    if dense:
        Y = Y.toarray() if sp.issparse(Y) else np.asarray(Y)
    V = np.array(V0, dtype=complex)
    vm, va = np.abs(V), np.angle(V)

    def mismatch(V):
        mis = V * np.conj(Y @ V) - sbus
        return np.concatenate([mis[pvpq].real, mis[pq].imag])

    F = mismatch(V)
    err = float(np.max(np.abs(F))) if len(F) else 0.0
    trace = [(0, err)]
    it = 0
    while err > tol:
        if it >= max_iter or not np.isfinite(err):
            raise NonConvergence(
                f"no convergence after {it} iterations (max mismatch {err:.3e})", trace
            )
        J = _jacobian(Y, V, pvpq, pq, dense)
        try:
            if dense:
                dx = np.linalg.solve(J, -F)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", spla.MatrixRankWarning)
                    dx = spla.spsolve(J, -F)
        except (np.linalg.LinAlgError, spla.MatrixRankWarning) as exc:
            raise SingularJacobian(f"singular Jacobian at iteration {it + 1}") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"non-finite Newton step at iteration {it + 1}")
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        V = vm * np.exp(1j * va)
        it += 1
        F = mismatch(V)
        err = float(np.max(np.abs(F))) if len(F) else 0.0
        trace.append((it, err))
    return V, it, trace


def solve_nr(case: PowerCase, opts: SolverOptions | None = None, ybus: AdmittanceMatrix | None = None) -> PfSolution:
    """Solve the AC power flow of ``case``.

    Slack voltage is held at its setpoint, PV magnitudes at their generator
    setpoints. The realized slack P and PV Q are back-filled from the converged
    state, so ``(p, q) == compute_injections(Y, mu, omega)``.
    """
    opts = opts or SolverOptions()
    Y = ybus if ybus is not None else build_ybus(case)
    sets = bus_sets(case)
    V0 = initial_voltage(case, opts.start)
    V, it, trace = newton_raphson(Y, specified_power(case), V0, sets, opts.tol, opts.max_iter)
    mu, omega = V.real.copy(), V.imag.copy()
    p, q = compute_injections(Y, mu, omega)
    return PfSolution(mu, omega, p, q, iterations=it, max_mismatch=trace[-1][1], trace=trace)


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "max_mismatch"])
        for it, err in trace:
            w.writerow([it, repr(float(err))])
