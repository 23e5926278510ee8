"""Protograph LDPC codes: lifting, syndromes, and BP syndrome decoding.

The shipped family uses 180-column accumulator protographs (dual-diagonal
parity part, irregular information columns: 65% degree 3 plus 35% degree 13
at high rates, degree 10 from rate 0.8667 down), lifted quasi-cyclically
with a greedy progressive edge-growth style shift search that keeps the
lifted graph 4-cycle-free.  All production block lengths divide cleanly:
46080 = 180*256, 460800 = 180*2560, and tail blocks 1800*k = 180*10k.  Rate
ladder granularity is 1/180, fine enough to keep reconciliation
inefficiency inside its target band; check count per protograph ranges over
15..90 (rates 0.5 to 0.9167).  Dense high-rate protographs may have no
4-cycle-free lift at small factors; the ladder skips those rungs for short
tail blocks.

Decoding is exact tanh-domain sum-product adapted to syndrome targets: the
check-node sign is flipped wherever the target syndrome bit is 1.  Messages
are clamped at +-30; hard-decision ties resolve to bit 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .passlink import ConfigError

LLR_CLAMP = 30.0
DEFAULT_FAMILY_SEED = 20220718


@dataclass(frozen=True)
class Protograph:
    """Base matrix with integer edge multiplicities, checks x variables."""

    base: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if not self.base or not self.base[0]:
            raise ConfigError("empty protograph")
        width = len(self.base[0])
        if any(len(r) != width for r in self.base):
            raise ConfigError("ragged protograph rows")
        if any(e < 0 for r in self.base for e in r):
            raise ConfigError("negative multiplicity")
        cols = np.array(self.base).sum(axis=0)
        if np.any(cols == 0):
            raise ConfigError("zero-degree variable node in protograph")

    @property
    def n_rows(self) -> int:
        return len(self.base)

    @property
    def n_cols(self) -> int:
        return len(self.base[0])

    @property
    def design_rate(self) -> float:
        return 1.0 - self.n_rows / self.n_cols

    def edge_list(self) -> list[tuple[int, int]]:
        """(row, col) per edge, multiplicities expanded, row-major order."""
        out = []
        for r, row in enumerate(self.base):
            for c, mult in enumerate(row):
                out.extend([(r, c)] * mult)
        return out


DEFAULT_INFO_PROFILE = ((0.65, 3), (0.35, 10))
HIGH_RATE_PROFILE = ((0.65, 3), (0.35, 13))


def ladder_profile(n_checks: int) -> tuple[tuple[float, int], ...]:
    """Info-column degree profile for a ladder rung.

    High rates get heavier high-degree columns (clearly better waterfall
    there, measured at the operating QBER); lower rates keep degree 10,
    which stays liftable down to small factors for short tail blocks.
    """
    return HIGH_RATE_PROFILE if n_checks < 24 else DEFAULT_INFO_PROFILE


def ira_protograph(n_checks: int, n_cols: int = 180,
                   profile: tuple[tuple[float, int], ...] = DEFAULT_INFO_PROFILE,
                   seed: int = DEFAULT_FAMILY_SEED) -> Protograph:
    """Accumulator protograph: dual-diagonal parity part plus irregular
    information columns drawn from a (fraction, degree) profile with balanced
    row quotas.  Deterministic for a given seed."""
    if not 1 < n_checks < n_cols:
        raise ConfigError("check count must be in (1, n_cols)")
    n_info = n_cols - n_checks
    degrees: list[int] = []
    for frac, deg in profile[:-1]:
        degrees.extend([deg] * int(round(frac * n_info)))
    degrees.extend([profile[-1][1]] * (n_info - len(degrees)))
    if len(degrees) != n_info or max(degrees) > n_checks:
        raise ConfigError("info profile incompatible with check count")
    rng = np.random.Generator(np.random.Philox([seed, n_checks, n_cols]))
    base = np.zeros((n_checks, n_cols), dtype=int)
    # parity accumulator: check i joins parity columns i-1 and i
    for i in range(n_checks):
        base[i, n_info + i] = 1
        if i > 0:
            base[i, n_info + i - 1] = 1
    # balanced row quotas for the info edges
    total = sum(degrees)
    quota = np.full(n_checks, total // n_checks)
    quota[: total % n_checks] += 1
    pool = list(np.repeat(np.arange(n_checks), quota))
    rng.shuffle(pool)
    cols = []
    pos = 0
    for d in degrees:
        cols.append(list(pool[pos:pos + d]))
        pos += d
    # repair duplicate rows within a column by swapping with a column that
    # holds a row this one lacks and lacks the duplicated row; preserves the
    # balanced row quotas exactly and strictly reduces the duplicate count
    for _ in range(20_000):
        bad = [c for c in range(n_info) if len(set(cols[c])) != len(cols[c])]
        if not bad:
            break
        for c in bad:
            seen: set[int] = set()
            dup_j = -1
            for j, v in enumerate(cols[c]):
                if v in seen:
                    dup_j = j
                    break
                seen.add(v)
            v = cols[c][dup_j]
            missing = [r for r in range(n_checks) if r not in set(cols[c])]
            rng.shuffle(missing)
            done = False
            for v2 in missing:
                for c2 in rng.permutation(n_info):
                    if c2 == c:
                        continue
                    have = cols[c2]
                    if v2 in have and v not in have:
                        have[have.index(v2)] = v
                        cols[c][dup_j] = v2
                        done = True
                        break
                if done:
                    break
            if not done:
                raise ConfigError("could not balance info columns without repeats")
    for c in range(n_info):
        for r in cols[c]:
            base[r, c] = 1
    return Protograph(tuple(tuple(int(x) for x in row) for row in base))


@dataclass
class LiftedCode:
    """Quasi-cyclic lift of a protograph: H is m x n over GF(2)."""

    proto: Protograph
    z: int
    shifts: np.ndarray          # per protograph edge
    seed: int
    edge_row: np.ndarray        # lifted edge endpoints, row-sorted
    edge_col: np.ndarray
    row_bounds: np.ndarray      # reduceat boundaries for rows
    col_perm: np.ndarray        # permutation sorting edges by column
    col_bounds: np.ndarray
    col_of_edge_sorted: np.ndarray

    @property
    def n(self) -> int:
        return self.proto.n_cols * self.z

    @property
    def m(self) -> int:
        return self.proto.n_rows * self.z

    @property
    def rate(self) -> float:
        return 1.0 - self.m / self.n

    @property
    def n_edges(self) -> int:
        return len(self.edge_row)


def _four_cycle_conflicts(proto_edges: list[tuple[int, int]], shifts: np.ndarray,
                          z: int) -> list[tuple[int, int]]:
    """Pairs of protograph edge indices closing a 4-cycle in the lift.

    Two columns sharing two rows close a cycle iff their shift differences
    over that row pair agree mod z; parallel edges (same cell) always need
    distinct shifts.
    """
    by_col: dict[int, list[tuple[int, int]]] = {}
    for idx, (r, c) in enumerate(proto_edges):
        by_col.setdefault(c, []).append((r, idx))
    conflicts = []
    pair_diffs: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for c, entries in by_col.items():
        for a in range(len(entries)):
            for b in range(a + 1, len(entries)):
                (r1, i1), (r2, i2) = entries[a], entries[b]
                if r1 == r2:
                    # parallel edges: equal shifts collapse to a double edge
                    if (shifts[i1] - shifts[i2]) % z == 0:
                        conflicts.append((i1, i2))
                    continue
                key = (min(r1, r2), max(r1, r2))
                d = (shifts[i1] - shifts[i2]) % z if r1 < r2 else (shifts[i2] - shifts[i1]) % z
                pair_diffs.setdefault(key, []).append((d, i1, i2))
    for key, entries in pair_diffs.items():
        seen: dict[int, tuple[int, int]] = {}
        for d, i1, i2 in entries:
            if d in seen:
                conflicts.append((i1, seen[d][0]))
            else:
                seen[d] = (i1, i2)
    return conflicts


def _greedy_shift_search(edges: list[tuple[int, int]], z: int,
                         rng: np.random.Generator, col_tries: int = 60) -> np.ndarray | None:
    """Progressive assignment of circulant shifts avoiding every 4-cycle.

    Columns are processed in descending degree order (highest-degree columns
    face the tightest constraints and get first pick); per edge the candidate
    shifts are tried in a seeded random order and the first conflict-free one
    is committed.  Returns None when some column exhausts its retry budget.
    """
    by_col: dict[int, list[tuple[int, int]]] = {}
    for idx, (r, c) in enumerate(edges):
        by_col.setdefault(c, []).append((r, idx))
    order = sorted(by_col, key=lambda c: (-len(by_col[c]), c))
    shifts = np.zeros(len(edges), dtype=np.int64)
    used: dict[tuple[int, int], set[int]] = {}
    for c in order:
        entries = by_col[c]
        for _ in range(col_tries):
            committed: list[tuple[int, int, int]] = []   # (row, idx, shift)
            new_diffs: list[tuple[tuple[int, int], int]] = []
            ok = True
            for r, idx in entries:
                placed = False
                for s in rng.permutation(z):
                    s = int(s)
                    trial: list[tuple[tuple[int, int], int]] = []
                    good = True
                    for r2, _, s2 in committed:
                        if r2 == r:
                            if (s - s2) % z == 0:
                                good = False
                                break
                            key, d = (r, r), (min(s - s2, s2 - s) % z)
                        elif r2 < r:
                            key, d = (r2, r), (s2 - s) % z
                        else:
                            key, d = (r, r2), (s - s2) % z
                        if d in used.get(key, ()) or (key, d) in trial:
                            good = False
                            break
                        trial.append((key, d))
                    if good:
                        committed.append((r, idx, s))
                        new_diffs.extend(trial)
                        placed = True
                        break
                if not placed:
                    ok = False
                    break
            if ok:
                for key, d in new_diffs:
                    used.setdefault(key, set()).add(d)
                for _, idx, s in committed:
                    shifts[idx] = s
                break
        else:
            return None
    return shifts


def lift(proto: Protograph, z: int, seed: int = DEFAULT_FAMILY_SEED,
         min_girth: int = 6, max_tries: int = 40) -> LiftedCode:
    """Quasi-cyclic expansion; shifts come from a seeded greedy search that
    avoids 4-cycles, verified afterwards by an exhaustive pair scan.

    With min_girth <= 4 the search degenerates to random shifts (needed only
    for tiny test codes whose lift factor cannot avoid 4-cycles).
    """
    if z < 1:
        raise ConfigError("lift factor must be positive")
    edges = proto.edge_list()
    rng = np.random.Generator(np.random.Philox([seed, z, proto.n_rows, proto.n_cols]))
    if min_girth >= 6:
        shifts = None
        for _ in range(max_tries):
            shifts = _greedy_shift_search(edges, z, rng)
            if shifts is not None:
                break
        if shifts is None:
            raise ConfigError(f"no 4-cycle-free lift found for z={z} "
                              f"({proto.n_rows}x{proto.n_cols}) after {max_tries} tries")
        if _four_cycle_conflicts(edges, shifts, z):
            raise ConfigError("greedy shift search left a 4-cycle")
    else:
        shifts = rng.integers(0, z, size=len(edges))

    erow = np.array([r for r, _ in edges], dtype=np.int64)
    ecol = np.array([c for _, c in edges], dtype=np.int64)
    i = np.arange(z)
    # proto edge (r, c, s) lifts to rows r*z+i, cols c*z+(i+s) mod z
    lrow = (erow[:, None] * z + i[None, :]).ravel()
    lcol = (ecol[:, None] * z + (i[None, :] + shifts[:, None]) % z).ravel()
    order = np.argsort(lrow, kind="stable")
    lrow, lcol = lrow[order], lcol[order]
    m = proto.n_rows * z
    if len(np.unique(lrow)) != m:
        raise ConfigError("protograph leaves empty check rows")
    row_bounds = np.searchsorted(lrow, np.arange(m))
    col_perm = np.argsort(lcol, kind="stable")
    col_sorted = lcol[col_perm]
    n = proto.n_cols * z
    col_bounds = np.searchsorted(col_sorted, np.arange(n))
    return LiftedCode(proto=proto, z=z, shifts=shifts, seed=seed,
                      edge_row=lrow, edge_col=lcol, row_bounds=row_bounds,
                      col_perm=col_perm, col_bounds=col_bounds,
                      col_of_edge_sorted=col_sorted)


def syndrome(code: LiftedCode, bits: np.ndarray) -> np.ndarray:
    """s = H . bits over GF(2)."""
    bits = np.asarray(bits)
    if len(bits) != code.n:
        raise ConfigError(f"bit vector length {len(bits)} != n = {code.n}")
    acc = np.zeros(code.m, dtype=np.int64)
    np.add.at(acc, code.edge_row, bits[code.edge_col].astype(np.int64))
    return (acc & 1).astype(np.uint8)


@dataclass
class DecodeResult:
    error_pattern: np.ndarray
    success: bool
    iterations: int


def _phi(x: np.ndarray) -> np.ndarray:
    # self-inverse Gallager function -ln tanh(x/2), clamped away from 0
    return -np.log(np.tanh(np.maximum(x, 1e-12) * 0.5))


def decode(code: LiftedCode, target_syndrome: np.ndarray, llr: np.ndarray,
           max_iters: int = 100, clamp: float = LLR_CLAMP,
           patience: int = 0, schedule: str = "flooding") -> DecodeResult:
    """Sum-product syndrome decoding.

    ``llr`` refers to the error vector: positive means "error unlikely".
    Success requires the hard decision to reproduce the target syndrome
    exactly; no randomness is involved, ties resolve to 0.  With a nonzero
    ``patience`` the loop gives up once the unsatisfied-check count has not
    reached a new minimum for that many iterations (a stalled decode almost
    never recovers, and rate-ladder descent wants fast failures).

    ``schedule`` picks the message update order: "flooding" updates all
    checks at once, "layered" sweeps check layers serially (one protograph
    row at a time) and typically needs noticeably fewer sweeps.  Both
    compute the same exact tanh-domain check rule.
    """
    s = np.asarray(target_syndrome, dtype=np.uint8)
    llr = np.asarray(llr, dtype=float)
    if len(s) != code.m or len(llr) != code.n:
        raise ConfigError("syndrome/llr length mismatch")
    if not np.all(np.isfinite(llr)):
        raise ConfigError("llr must be finite")
    if schedule not in ("flooding", "layered"):
        raise ConfigError(f"unknown schedule {schedule!r}")
    llr = np.clip(llr, -clamp, clamp)
    if schedule == "layered":
        return _decode_layered(code, s, llr, max_iters, clamp, patience)

    erow, ecol = code.edge_row, code.edge_col
    rb, cb = code.row_bounds, code.col_bounds
    cperm = code.col_perm
    sign_flip = s[erow].astype(bool)

    m_cv = np.zeros(code.n_edges)
    llr_edge = llr[ecol]
    best_mis = code.m + 1
    best_it = 0
    for it in range(1, max_iters + 1):
        # variable update: total per column minus own message
        col_sum = np.add.reduceat(m_cv[cperm], cb)
        m_vc = llr_edge + col_sum[ecol] - m_cv
        np.clip(m_vc, -clamp, clamp, out=m_vc)

        total = llr + col_sum
        hard = (total < 0.0)
        chk = np.add.reduceat(hard[ecol].astype(np.int64), rb) & 1
        mis = int(np.count_nonzero(chk.astype(np.uint8) != s))
        if mis == 0:
            return DecodeResult(hard.astype(np.uint8), True, it)
        if mis < best_mis:
            best_mis, best_it = mis, it
        elif patience and it - best_it >= patience:
            return DecodeResult(hard.astype(np.uint8), False, it)

        # check update in sign/magnitude form
        mag = _phi(np.abs(m_vc))
        neg = (m_vc < 0.0)
        row_mag = np.add.reduceat(mag, rb)
        row_neg = np.add.reduceat(neg.astype(np.int64), rb)
        excl_neg = (row_neg[erow] - neg) & 1
        sign = np.where(excl_neg.astype(bool) ^ sign_flip, -1.0, 1.0)
        m_cv = sign * _phi(row_mag[erow] - mag)
        np.clip(m_cv, -clamp, clamp, out=m_cv)

    col_sum = np.add.reduceat(m_cv[cperm], cb)
    total = llr + col_sum
    hard = (total < 0.0)
    chk = np.add.reduceat(hard[ecol].astype(np.int64), rb) & 1
    ok = bool(np.array_equal(chk.astype(np.uint8), s))
    return DecodeResult(hard.astype(np.uint8), ok, max_iters)


def _decode_layered(code: LiftedCode, s: np.ndarray, llr: np.ndarray,
                    max_iters: int, clamp: float, patience: int) -> DecodeResult:
    """Serial sweep over check layers; one iteration = one full sweep.

    Edges are row-sorted, so the checks of protograph row r occupy one
    contiguous slice; posteriors are kept per variable and updated in place
    as each layer's check messages are replaced.
    """
    erow, ecol = code.edge_row, code.edge_col
    rb = code.row_bounds
    z = code.z
    n_layers = code.proto.n_rows
    layers = []
    for r0 in range(n_layers):
        lo = rb[r0 * z]
        hi = rb[(r0 + 1) * z] if (r0 + 1) * z < code.m else code.n_edges
        local_rb = (rb[r0 * z:(r0 + 1) * z] - lo).astype(np.int64)
        rows_local = (erow[lo:hi] - r0 * z).astype(np.int64)
        cols = ecol[lo:hi]
        # a lifted column repeats inside one layer only for parallel
        # protograph edges; those need the buffered scatter-add
        dup = len(np.unique(cols)) < len(cols)
        layers.append((lo, hi, local_rb, rows_local,
                       s[r0 * z:(r0 + 1) * z].astype(bool), cols, dup))

    m_cv = np.zeros(code.n_edges)
    total = llr.copy()
    best_mis = code.m + 1
    best_it = 0
    for it in range(1, max_iters + 1):
        for lo, hi, local_rb, rows_local, s_layer, cols, dup in layers:
            m_vc = total[cols] - m_cv[lo:hi]
            np.clip(m_vc, -clamp, clamp, out=m_vc)
            mag = _phi(np.abs(m_vc))
            neg = (m_vc < 0.0)
            row_mag = np.add.reduceat(mag, local_rb)
            row_neg = np.add.reduceat(neg.astype(np.int64), local_rb)
            excl_neg = (row_neg[rows_local] - neg) & 1
            sign = np.where(excl_neg.astype(bool) ^ s_layer[rows_local], -1.0, 1.0)
            new_cv = sign * _phi(row_mag[rows_local] - mag)
            np.clip(new_cv, -clamp, clamp, out=new_cv)
            if dup:
                np.add.at(total, cols, new_cv - m_cv[lo:hi])
            else:
                total[cols] += new_cv - m_cv[lo:hi]
            m_cv[lo:hi] = new_cv
        hard = (total < 0.0)
        chk = np.add.reduceat(hard[ecol].astype(np.int64), rb) & 1
        mis = int(np.count_nonzero(chk.astype(np.uint8) != s))
        if mis == 0:
            return DecodeResult(hard.astype(np.uint8), True, it)
        if mis < best_mis:
            best_mis, best_it = mis, it
        elif patience and it - best_it >= patience:
            return DecodeResult(hard.astype(np.uint8), False, it)
    hard = (total < 0.0)
    chk = np.add.reduceat(hard[ecol].astype(np.int64), rb) & 1
    ok = bool(np.array_equal(chk.astype(np.uint8), s))
    return DecodeResult(hard.astype(np.uint8), ok, max_iters)


class CodeLibrary:
    """Rate ladder of accumulator protographs with cached lifts.

    Rates are 1 - n_checks/180 for n_checks in [min_checks, max_checks];
    the ladder is fine (1/180 steps) so the first rate at or below the
    reconciliation target is never far from it.
    """

    def __init__(self, n_cols: int = 180, min_checks: int = 15,
                 max_checks: int = 90, seed: int = DEFAULT_FAMILY_SEED):
        if not 1 < min_checks <= max_checks < n_cols:
            raise ConfigError("bad ladder bounds")
        self.n_cols = n_cols
        self.seed = seed
        self.check_counts = list(range(min_checks, max_checks + 1))
        self._protos: dict[int, Protograph] = {}
        self._lifts: dict[tuple[int, int], LiftedCode | None] = {}

    @property
    def rates(self) -> list[float]:
        return [1.0 - mc / self.n_cols for mc in self.check_counts]

    def initial_index(self, target_rate: float) -> int:
        """Index of the highest ladder rate at most target_rate (ladder is
        descending in index order here: index 0 = highest rate)."""
        for idx, mc in enumerate(self.check_counts):
            if 1.0 - mc / self.n_cols <= target_rate:
                return idx
        return len(self.check_counts) - 1

    def protograph(self, idx: int) -> Protograph:
        mc = self.check_counts[idx]
        if mc not in self._protos:
            self._protos[mc] = ira_protograph(mc, self.n_cols,
                                              profile=ladder_profile(mc),
                                              seed=self.seed)
        return self._protos[mc]

    def code(self, idx: int, z: int) -> LiftedCode | None:
        """Lifted code at ladder index idx, or None when no 4-cycle-free
        lift exists at this factor (possible for high rates at small z;
        the rate ladder simply skips such rungs).  Results are cached."""
        mc = self.check_counts[idx]
        key = (mc, z)
        if key not in self._lifts:
            try:
                self._lifts[key] = lift(self.protograph(idx), z, seed=self.seed)
            except ConfigError:
                self._lifts[key] = None
        return self._lifts[key]

    def code_for_length(self, idx: int, n: int) -> LiftedCode | None:
        if n % self.n_cols:
            raise ConfigError(f"block length {n} not a multiple of {self.n_cols}")
        return self.code(idx, n // self.n_cols)

    def __len__(self) -> int:
        return len(self.check_counts)


def save_alist(path, code: LiftedCode) -> None:
    """Text alist (MacKay convention, 1-based indices) plus a metadata sidecar."""
    n, m = code.n, code.m
    cols: list[list[int]] = [[] for _ in range(n)]
    rows: list[list[int]] = [[] for _ in range(m)]
    for r, c in zip(code.edge_row, code.edge_col):
        cols[c].append(int(r) + 1)
        rows[r].append(int(c) + 1)
    dc = max(len(x) for x in cols)
    dr = max(len(x) for x in rows)
    with open(path, "w") as fh:
        fh.write(f"{n} {m}\n{dc} {dr}\n")
        fh.write(" ".join(str(len(x)) for x in cols) + "\n")
        fh.write(" ".join(str(len(x)) for x in rows) + "\n")
        for x in cols:
            fh.write(" ".join(str(v) for v in sorted(x) + [0] * (dc - len(x))) + "\n")
        for x in rows:
            fh.write(" ".join(str(v) for v in sorted(x) + [0] * (dr - len(x))) + "\n")
    meta = {"z": code.z, "seed": code.seed, "rate": code.rate,
            "proto_rows": code.proto.n_rows, "proto_cols": code.proto.n_cols}
    with open(str(path) + ".meta", "w") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")


def load_alist(path) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Edge lists (row, col) and dimensions (m, n) from an alist file."""
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    n, m = int(next(it)), int(next(it))
    next(it), next(it)
    col_deg = [int(next(it)) for _ in range(n)]
    [int(next(it)) for _ in range(m)]
    erow, ecol = [], []
    dc = max(col_deg)
    for c in range(n):
        vals = [int(next(it)) for _ in range(dc)]
        for v in vals:
            if v:
                erow.append(v - 1)
                ecol.append(c)
    return np.asarray(erow), np.asarray(ecol), m, n
