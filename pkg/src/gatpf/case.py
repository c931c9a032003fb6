"""Network case data: parsing, validation, serialization and Y-bus assembly.

Case files follow a subset of the MATPOWER text format::

    mpc.baseMVA = 100;
    mpc.bus = [ ... ];      % 13 columns
    mpc.gen = [ ... ];      % >= 8 columns
    mpc.branch = [ ... ];   % >= 11 columns

Everything is converted to per-unit on ``baseMVA`` and angles to radians at
parse time.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CaseSyntaxError, ValidationError

BUS_COLS = 13
GEN_COLS = 8
BRANCH_COLS = 11

BUNDLED_CASES = ("case9", "case14", "case30", "case57", "case118", "case300")


class BusType(enum.IntEnum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    btype: BusType
    pd: float = 0.0
    qd: float = 0.0
    gs: float = 0.0
    bs: float = 0.0
    vm: float = 1.0
    va: float = 0.0


@dataclass(frozen=True)
class Gen:
    bus: int
    pg: float = 0.0
    vg: float = 1.0
    status: bool = True


@dataclass(frozen=True)
class Branch:
    fbus: int
    tbus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    status: bool = True


@dataclass(frozen=True)
class PowerCase:
    base_mva: float
    buses: tuple[Bus, ...]
    gens: tuple[Gen, ...]
    branches: tuple[Branch, ...]
    case_id: str = "case"

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return sum(1 for br in self.branches if br.status)

    @cached_property
    def index(self) -> dict[int, int]:
        """Bus id -> row position."""
        return {bus.id: k for k, bus in enumerate(self.buses)}

    @cached_property
    def bus_types(self) -> np.ndarray:
        return np.array([int(b.btype) for b in self.buses], dtype=int)

    def active_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.status]

    def edge_list(self) -> list[tuple[int, int]]:
        """In-service branch endpoints as 0-based bus positions."""
        ix = self.index
        return [(ix[br.fbus], ix[br.tbus]) for br in self.active_branches()]

    def replace(self, **changes) -> PowerCase:
        return replace(self, **changes)

    def validate(self) -> PowerCase:
        validate_case(self)
        return self


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Sparse complex bus admittance matrix ``Y = G + jB``."""

    matrix: sp.csr_matrix = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def G(self) -> sp.csr_matrix:
        return self.matrix.real.tocsr()

    @cached_property
    def B(self) -> sp.csr_matrix:
        return self.matrix.imag.tocsr()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def entries(self) -> dict[tuple[int, int], complex]:
        coo = self.matrix.tocoo()
        return {(int(i), int(j)): complex(v) for i, j, v in zip(coo.row, coo.col, coo.data)}

    def pattern(self) -> np.ndarray:
        """Boolean structural sparsity pattern (n x n)."""
        m = self.matrix.copy()
        m.data = np.ones_like(m.data)
        return m.toarray().real.astype(bool)


def validate_case(case: PowerCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate bus id(s): {dup}")
    n_slack = sum(1 for b in case.buses if b.btype == BusType.SLACK)
    if n_slack != 1:
        raise ValidationError(f"expected exactly one slack bus, found {n_slack}")
    for b in case.buses:
        if not b.vm > 0:
            raise ValidationError(f"bus {b.id}: vm must be positive")
    types = {b.id: b.btype for b in case.buses}
    for g in case.gens:
        if g.bus not in types:
            raise ValidationError(f"generator at unknown bus {g.bus}")
        if g.status and types[g.bus] == BusType.PQ:
            raise ValidationError(f"in-service generator at PQ bus {g.bus}")
    for br in case.branches:
        if br.fbus not in types or br.tbus not in types:
            raise ValidationError(f"branch {br.fbus}-{br.tbus} references an unknown bus")
        if br.fbus == br.tbus:
            raise ValidationError(f"branch {br.fbus}-{br.tbus} is a self-loop")
        if br.r < 0:
            raise ValidationError(f"branch {br.fbus}-{br.tbus}: negative resistance")
        if br.r == 0 and br.x == 0:
            raise ValidationError(f"branch {br.fbus}-{br.tbus}: zero impedance")
        if not br.tap > 0:
            raise ValidationError(f"branch {br.fbus}-{br.tbus}: tap must be positive")
    if not is_connected(case.n_bus, case.edge_list()):
        raise ValidationError("branch graph over in-service branches is not connected")


def is_connected(n: int, edges) -> bool:
    if n <= 1:
        return True
    edges = np.asarray(list(edges), dtype=int).reshape(-1, 2)
    adj = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


# --------------------------------------------------------------------------
# parsing

_SCALAR_RE = re.compile(r"^\s*(?:mpc\.)?baseMVA\s*=\s*([^;]+);")
_MATRIX_START_RE = re.compile(r"^\s*(?:mpc\.)?(\w+)\s*=\s*\[(.*)$")
_FUNC_RE = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)")


def _read_matrices(text: str):
    base_mva = None
    case_id = None
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    pending = ""

    def flush_rows(chunk: str, lineno: int):
        for piece in chunk.split(";"):
            piece = piece.strip()
            if not piece:
                continue
            try:
                values = [float(tok) for tok in piece.replace(",", " ").split()]
            except ValueError:
                raise CaseSyntaxError(f"non-numeric entry in {current} row: {piece!r}", lineno)
            matrices[current].append((lineno, values))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0]
        if current is None:
            if case_id is None and (m := _FUNC_RE.match(line)):
                case_id = m.group(1)
                continue
            if m := _SCALAR_RE.match(line):
                try:
                    base_mva = float(m.group(1))
                except ValueError:
                    raise CaseSyntaxError(f"bad baseMVA value {m.group(1)!r}", lineno)
                continue
            if m := _MATRIX_START_RE.match(line):
                current = m.group(1)
                matrices[current] = []
                pending = m.group(2)
            else:
                continue
        else:
            pending = line
        if "]" in pending:
            body, _ = pending.split("]", 1)
            flush_rows(body, lineno)
            current = None
        else:
            flush_rows(pending, lineno)
    if current is not None:
        raise CaseSyntaxError(f"unterminated matrix {current!r}")
    return base_mva, case_id, matrices


def _rows(matrices, name, ncols):
    if name not in matrices:
        raise CaseSyntaxError(f"missing matrix {name!r}")
    rows = matrices[name]
    for lineno, values in rows:
        if len(values) < ncols:
            raise CaseSyntaxError(
                f"{name} row has {len(values)} columns, expected at least {ncols}", lineno
            )
    return rows


def parse_case(text: str, case_id: str | None = None) -> PowerCase:
    """Parse MATPOWER-style case text into a validated per-unit :class:`PowerCase`."""
    base_mva, fn_name, matrices = _read_matrices(text)
    if base_mva is None:
        raise CaseSyntaxError("missing baseMVA")
    if not base_mva > 0:
        raise ValidationError("baseMVA must be positive")

    buses = []
    for lineno, v in _rows(matrices, "bus", BUS_COLS):
        try:
            btype = BusType(int(v[1]))
        except ValueError:
            raise ValidationError(f"line {lineno}: unsupported bus type {v[1]:g}")
        buses.append(Bus(
            id=int(v[0]), btype=btype,
            pd=v[2] / base_mva, qd=v[3] / base_mva,
            gs=v[4] / base_mva, bs=v[5] / base_mva,
            vm=v[7], va=math.radians(v[8]),
        ))
    gens = [
        Gen(bus=int(v[0]), pg=v[1] / base_mva, vg=v[5], status=v[7] > 0)
        for _, v in _rows(matrices, "gen", GEN_COLS)
    ]
    branches = [
        Branch(
            fbus=int(v[0]), tbus=int(v[1]), r=v[2], x=v[3], b=v[4],
            tap=v[8] if v[8] != 0 else 1.0, shift=math.radians(v[9]), status=v[10] > 0,
        )
        for _, v in _rows(matrices, "branch", BRANCH_COLS)
    ]
    case = PowerCase(
        base_mva=base_mva, buses=tuple(buses), gens=tuple(gens), branches=tuple(branches),
        case_id=case_id or fn_name or "case",
    )
    validate_case(case)
    return case


def load_case(path) -> PowerCase:
    path = Path(path)
    return parse_case(path.read_text(), case_id=None)


def load_bundled(name: str) -> PowerCase:
    """Load one of the bundled IEEE cases (``case9`` ... ``case300``)."""
    if name not in BUNDLED_CASES:
        raise KeyError(f"no bundled case {name!r}; available: {', '.join(BUNDLED_CASES)}")
    text = resources.files("gatpf").joinpath("cases", f"{name}.m").read_text()
    return parse_case(text)


def _exact_inverse(value: float, forward, backward) -> float:
    """Find ``y`` near ``forward(value)`` with ``backward(y) == value`` bit-for-bit."""
    y = forward(value)
    if backward(y) == value:
        return y
    lo = hi = y
    for _ in range(64):
        lo = np.nextafter(lo, -np.inf)
        hi = np.nextafter(hi, np.inf)
        for cand in (lo, hi):
            if backward(float(cand)) == value:
                return float(cand)
    return y


def _fmt(v: float) -> str:
    return repr(float(v))


def serialize_case(case: PowerCase) -> str:
    """Render a case back to text; ``parse_case(serialize_case(c)) == c``."""
    base = case.base_mva

    def to_mw(v):
        return _exact_inverse(v, lambda x: x * base, lambda y: y / base)

    def to_deg(v):
        return _exact_inverse(v, math.degrees, math.radians)

    lines = [f"function mpc = {case.case_id}", "", f"mpc.baseMVA = {_fmt(base)};", "",
             "%\tbus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in case.buses:
        row = [b.id, int(b.btype), to_mw(b.pd), to_mw(b.qd), to_mw(b.gs), to_mw(b.bs),
               1, b.vm, to_deg(b.va), 0, 1, 1.1, 0.9]
        lines.append("\t" + "\t".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + ";")
    lines += ["];", "", "%\tbus Pg Qg Qmax Qmin Vg mBase status", "mpc.gen = ["]
    for g in case.gens:
        row = [g.bus, _fmt(to_mw(g.pg)), "0", "0", "0", _fmt(g.vg), _fmt(base), str(int(g.status))]
        lines.append("\t" + "\t".join(str(v) for v in row) + ";")
    lines += ["];", "", "%\tfbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for br in case.branches:
        row = [str(br.fbus), str(br.tbus), _fmt(br.r), _fmt(br.x), _fmt(br.b), "0", "0", "0",
               _fmt(br.tap), _fmt(to_deg(br.shift)), str(int(br.status))]
        lines.append("\t" + "\t".join(row) + ";")
    lines += ["];", ""]
    return "\n".join(lines)


# --------------------------------------------------------------------------
# admittance matrix

def build_ybus(case: PowerCase) -> AdmittanceMatrix:
    """Assemble Y with the pi-model (series admittance, split charging, tap/shift)."""
    n = case.n_bus
    ix = case.index
    act = case.active_branches()
    f = np.array([ix[br.fbus] for br in act], dtype=int)
    t = np.array([ix[br.tbus] for br in act], dtype=int)
    r = np.array([br.r for br in act])
    x = np.array([br.x for br in act])
    b = np.array([br.b for br in act])
    tap = np.array([br.tap for br in act]) * np.exp(1j * np.array([br.shift for br in act]))

    ys = 1.0 / (r + 1j * x)
    ytt = ys + 0.5j * b
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap

    shunt = np.array([bus.gs + 1j * bus.bs for bus in case.buses])
    diag = np.arange(n)
    rows = np.concatenate([f, t, f, t, diag])
    cols = np.concatenate([f, t, t, f, diag])
    vals = np.concatenate([yff, ytt, yft, ytf, shunt])
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex).tocsr()
    Y.sum_duplicates()
    return AdmittanceMatrix(Y)
