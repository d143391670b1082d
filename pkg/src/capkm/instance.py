"""Problem instances: data model, text format, generators, validation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

TRIANGLE_TOL = 1e-9


class ParseError(ValueError):
    """Malformed instance text; the message names the line and field."""

    def __init__(self, line, msg):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


@dataclass(frozen=True, eq=False)
class Instance:
    """Facilities with integer capacities, clients, budget k and a metric.

    Points are indexed facilities first (0..nf-1), then clients
    (nf..nf+nc-1).  ``dist`` is the full symmetric table over both.
    """

    facility_ids: tuple
    capacities: np.ndarray
    client_ids: tuple
    k: int
    dist: np.ndarray
    coords: np.ndarray = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        caps = np.asarray(self.capacities)
        if caps.size and not np.all(caps == np.round(caps)):
            raise ValueError("capacities must be integers")
        caps = caps.astype(np.int64).reshape(-1)
        dist = np.array(self.dist, dtype=float)
        nf, nc = len(self.facility_ids), len(self.client_ids)
        if caps.size != nf:
            raise ValueError("one capacity per facility required")
        if nf < 1 or nc < 1:
            raise ValueError("need at least one facility and one client")
        if np.any(caps < 1):
            raise ValueError("capacity must be a positive integer")
        if not 1 <= int(self.k) <= nf:
            raise ValueError("k out of range")
        if dist.shape != (nf + nc, nf + nc):
            raise ValueError("metric must be (nf+nc) x (nf+nc)")
        if len(set(self.facility_ids)) != nf or len(set(self.client_ids)) != nc:
            raise ValueError("duplicate ids")
        caps.flags.writeable = False
        dist.flags.writeable = False
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "facility_ids", tuple(str(i) for i in self.facility_ids))
        object.__setattr__(self, "client_ids", tuple(str(i) for i in self.client_ids))
        if self.coords is not None:
            xy = np.array(self.coords, dtype=float).reshape(nf + nc, 2)
            xy.flags.writeable = False
            object.__setattr__(self, "coords", xy)

    @classmethod
    def from_points(cls, fac_xy, cli_xy, capacities, k, fac_ids=None, cli_ids=None, name=""):
        fac_xy = np.asarray(fac_xy, dtype=float).reshape(-1, 2)
        cli_xy = np.asarray(cli_xy, dtype=float).reshape(-1, 2)
        xy = np.vstack([fac_xy, cli_xy])
        diff = xy[:, None, :] - xy[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        fac_ids = fac_ids or [f"f{i}" for i in range(len(fac_xy))]
        cli_ids = cli_ids or [f"c{j}" for j in range(len(cli_xy))]
        return cls(tuple(fac_ids), capacities, tuple(cli_ids), k, dist, xy, name)

    @property
    def nf(self):
        return len(self.facility_ids)

    @property
    def nc(self):
        return len(self.client_ids)

    @property
    def d_fc(self):
        """Facility-by-client distances."""
        return self.dist[: self.nf, self.nf:]

    @property
    def d_cc(self):
        return self.dist[self.nf:, self.nf:]

    @property
    def d_ff(self):
        return self.dist[: self.nf, : self.nf]

    def structurally_equal(self, other, tol=0.0):
        return (
            self.facility_ids == other.facility_ids
            and self.client_ids == other.client_ids
            and self.k == other.k
            and np.array_equal(self.capacities, other.capacities)
            and np.allclose(self.dist, other.dist, rtol=0.0, atol=tol)
        )

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return self.structurally_equal(other)

    __hash__ = object.__hash__


# ------------------------------------------------------------------ text IO

def _tokens(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def _num(tok, line, what, kind=float):
    try:
        v = kind(tok)
    except ValueError:
        raise ParseError(line, f"{what}: cannot read {tok!r}") from None
    if kind is float and not math.isfinite(v):
        raise ParseError(line, f"{what}: not finite")
    return v


def parse_instance(text):
    """Read the line-oriented ``CKM`` format."""
    lines = list(_tokens(text))
    if not lines:
        raise ParseError(0, "empty instance")
    no, head = lines[0]
    if head[0] != "CKM" or len(head) != 4:
        raise ParseError(no, "header must be 'CKM nf nc k'")
    nf = _num(head[1], no, "nf", int)
    nc = _num(head[2], no, "nc", int)
    k = _num(head[3], no, "k", int)
    if nf < 1:
        raise ParseError(no, "nf must be positive")
    if nc < 1:
        raise ParseError(no, "nc must be positive")
    if not 1 <= k <= nf:
        raise ParseError(no, "k out of range")

    fids, caps, cids, xy = [], [], [], []
    pos = 1
    for want, tag in ((nf, "F"), (nc, "C")):
        for _ in range(want):
            if pos >= len(lines):
                raise ParseError(0, f"expected {want} '{tag}' lines, file ended")
            no, tok = lines[pos]
            pos += 1
            if tok[0] != tag:
                raise ParseError(no, f"expected '{tag}' record, got {tok[0]!r}")
            body = tok[1:]
            if tag == "F":
                if len(body) not in (2, 4):
                    raise ParseError(no, "facility record is 'F id u [x y]'")
                fids.append(body[0])
                u = _num(body[1], no, "capacity", int)
                if u < 1:
                    raise ParseError(no, "capacity must be a positive integer")
                caps.append(u)
                rest = body[2:]
            else:
                if len(body) not in (1, 3):
                    raise ParseError(no, "client record is 'C id [x y]'")
                cids.append(body[0])
                rest = body[1:]
            xy.append([_num(t, no, "coordinate") for t in rest] if rest else None)

    has_xy = [p is not None for p in xy]
    if any(has_xy) and not all(has_xy):
        raise ParseError(0, "coordinates must be given for every point or none")
    dist = coords = None
    if pos < len(lines):
        no, tok = lines[pos]
        if tok[0] != "D":
            raise ParseError(no, f"unexpected record {tok[0]!r}")
        if all(has_xy):
            raise ParseError(no, "coordinates and explicit metric are mutually exclusive")
        vals = [(no, t) for t in tok[1:]]
        for no2, tok2 in lines[pos + 1:]:
            vals.extend((no2, t) for t in tok2)
        n = nf + nc
        if len(vals) != n * n:
            raise ParseError(no, f"metric block needs {n * n} entries, found {len(vals)}")
        dist = np.array([_num(t, ln, "metric entry") for ln, t in vals]).reshape(n, n)
        if np.any(dist < 0):
            raise ParseError(no, "metric entries must be nonnegative")
    elif all(has_xy):
        coords = np.array(xy, dtype=float)
    else:
        raise ParseError(0, "no coordinates and no metric block")

    if len(set(fids)) != nf:
        raise ParseError(0, "duplicate facility id")
    if len(set(cids)) != nc:
        raise ParseError(0, "duplicate client id")
    if coords is not None:
        return Instance.from_points(coords[:nf], coords[nf:], caps, k, fids, cids)
    return Instance(tuple(fids), caps, tuple(cids), k, dist)


def serialize_instance(inst):
    out = [f"CKM {inst.nf} {inst.nc} {inst.k}"]
    xy = inst.coords
    for i, (fid, u) in enumerate(zip(inst.facility_ids, inst.capacities)):
        tail = f" {float(xy[i, 0])!r} {float(xy[i, 1])!r}" if xy is not None else ""
        out.append(f"F {fid} {int(u)}{tail}")
    for j, cid in enumerate(inst.client_ids):
        tail = f" {float(xy[inst.nf + j, 0])!r} {float(xy[inst.nf + j, 1])!r}" if xy is not None else ""
        out.append(f"C {cid}{tail}")
    if xy is None:
        out.append("D")
        for row in inst.dist:
            out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def load_instance(path):
    with open(path, encoding="utf-8") as fh:
        inst = parse_instance(fh.read())
    stem = os.path.splitext(os.path.basename(path))[0]
    return replace(inst, name=stem) if not inst.name else inst


def save_instance(inst, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_instance(inst))


# --------------------------------------------------------------- generators

def gen_euclidean(nf, nc, k, cap_lo, cap_hi, seed):
    """Uniform points in the unit square with uniform integer capacities."""
    if nf < 1 or nc < 1:
        raise ValueError("nf and nc must be at least 1")
    if not 1 <= k <= nf:
        raise ValueError("k out of range")
    if not 1 <= cap_lo <= cap_hi:
        raise ValueError("need 1 <= cap_lo <= cap_hi")
    rng = np.random.default_rng(seed)
    fac = rng.random((nf, 2))
    cli = rng.random((nc, 2))
    caps = rng.integers(cap_lo, cap_hi + 1, size=nf)
    return Instance.from_points(fac, cli, caps, k,
                                name=f"euclid-{nf}-{nc}-{k}-{cap_lo}-{cap_hi}-{seed}")


def gen_gap_instance(u, D=1.0):
    """u isolated groups of 2 facilities (capacity u) and 2u-1 clients."""
    if u < 2:
        raise ValueError("u must be at least 2")
    if not D > 0:
        raise ValueError("inter-group distance must be positive")
    per = 2 * u - 1
    fids = [f"f{g}_{a}" for g in range(u) for a in range(2)]
    cids = [f"c{g}_{a}" for g in range(u) for a in range(per)]
    label = np.array([g for g in range(u) for _ in range(2)]
                     + [g for g in range(u) for _ in range(per)])
    dist = np.where(label[:, None] == label[None, :], 0.0, float(D))
    return Instance(tuple(fids), [u] * (2 * u), tuple(cids), 2 * u - 1, dist,
                    name=f"gap-{u}-{D:g}")


def gen_battery_instance(seed, max_nf=10, max_nc=20):
    """Seeded random instance for batteries: capacities around |C|/k.

    Every fourth seed draws k close to |F|.  Redraws (deterministically)
    until the k largest capacities cover the clients.
    """
    rng = np.random.default_rng(1000 + seed)
    nf = int(rng.integers(3, max_nf + 1))
    nc = int(rng.integers(4, max_nc + 1))
    if seed % 4:
        k = int(rng.integers(2, nf + 1))
    else:
        k = int(rng.integers(max(2, nf - 2), nf + 1))
    base = math.ceil(nc / k)
    for t in range(100):
        inst = gen_euclidean(nf, nc, k, max(1, base - 1), base + 2, seed * 100 + t)
        if topk_capacity(inst) >= nc:
            return inst
    raise RuntimeError(f"no feasible draw for seed {seed}")


# --------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    severity: str = "error"

    def __str__(self):
        return f"{self.severity}: {self.kind}: {self.message}"


def topk_capacity(inst, k=None, scale=1.0):
    """Sum of the k largest (optionally scaled and ceiled) capacities."""
    k = inst.k if k is None else k
    caps = np.ceil(scale * inst.capacities - 1e-9) if scale != 1.0 else inst.capacities
    return float(np.sort(caps)[::-1][:k].sum())


def validate(inst, tol=TRIANGLE_TOL, limit=20):
    """List metric breaches and a capacity warning; empty means ok."""
    out = []
    d = inst.dist
    n = d.shape[0]
    names = list(inst.facility_ids) + list(inst.client_ids)
    if np.any(np.abs(np.diag(d)) > tol):
        p = int(np.argmax(np.abs(np.diag(d))))
        out.append(Violation("diagonal", f"d({names[p]},{names[p]}) = {d[p, p]:g}"))
    if np.any(d < -tol):
        a, b = np.argwhere(d < -tol)[0]
        out.append(Violation("negative", f"d({names[a]},{names[b]}) = {d[a, b]:g}"))
    asym = np.argwhere(np.abs(d - d.T) > tol)
    for a, b in asym[:limit]:
        if a < b:
            out.append(Violation("symmetry", f"d({names[a]},{names[b]}) != d({names[b]},{names[a]})"))
    found = 0
    for m in range(n):
        bad = np.argwhere(d > d[:, m][:, None] + d[m, :][None, :] + tol)
        for a, b in bad:
            if found >= limit:
                break
            out.append(Violation(
                "triangle",
                f"d({names[a]},{names[b]}) = {d[a, b]:g} > d({names[a]},{names[m]}) + "
                f"d({names[m]},{names[b]}) = {d[a, m] + d[m, b]:g}"))
            found += 1
        if found >= limit:
            break
    cap = topk_capacity(inst)
    if cap < inst.nc:
        out.append(Violation("capacity",
                             f"k={inst.k} largest capacities sum to {cap:g} < {inst.nc} clients",
                             severity="warning"))
    return out
