"""
Fourier Disjoint Weight.

The k²·C_in·C_out real parameters of one standard convolution weight are read
as the Hermitian-symmetric spectrum of an M×N grid (M = k·C_in, N = k·C_out).
Indices are sorted from low to high frequency and split into n contiguous
groups; each group, inverse transformed on its own and cut into k×k tiles,
gives one spatial weight. Disjoint spectral supports make the n weights exactly
orthogonal.

Parameter layout follows the sorted unit order: a self-conjugate index owns one
real slot, a conjugate pair owns a (real, imaginary) couple read by its first
member and conjugated by its partner. Groups are therefore contiguous slices of
the parameter vector.
"""
from functools import lru_cache
from typing import NamedTuple, Tuple

import numpy as np

from .autodiff import defop
from .numerics import ConsistencyError, centered_indices, conjugate_index, real_part
from .utils import as_rng, fmt_shape


class IndexTable(NamedTuple):
    k: int
    c_in: int
    c_out: int
    m: int
    n: int
    u: np.ndarray  # centered indices, sorted by (radius, u, v)
    v: np.ndarray
    radius: np.ndarray
    unit: np.ndarray  # unit id of each sorted entry
    units: Tuple[tuple, ...]  # sorted entry positions of each unit
    unit_sizes: np.ndarray  # real parameters per unit (1 or 2)
    offsets: np.ndarray  # first parameter slot of each unit, plus the total
    real_slot: np.ndarray
    imag_slot: np.ndarray
    imag_sign: np.ndarray  # +1 first member of a pair, -1 partner, 0 self-conjugate

    @property
    def size(self):
        return self.m * self.n

    @property
    def unit_count(self):
        return len(self.units)

    def is_self_conjugate(self, unit):
        return len(self.units[unit]) == 1

    def indices(self, unit):
        """
        Centered (u, v) indices of a unit.
        """
        return [(int(self.u[e]), int(self.v[e])) for e in self.units[unit]]


class GroupAssignment(NamedTuple):
    table: IndexTable
    n: int
    group: np.ndarray  # group id of each unit
    unit_bounds: np.ndarray  # n + 1 boundaries over the unit order
    param_bounds: np.ndarray  # n + 1 boundaries over the parameter vector

    def param_counts(self):
        return np.diff(self.param_bounds)

    def group_units(self, i):
        return list(range(self.unit_bounds[i], self.unit_bounds[i + 1]))


def _frozen(*arrays):
    for arr in arrays:
        arr.flags.writeable = False
    return arrays


#
# Index tables
#
def unit_count(k, c_in, c_out):
    """
    Number of units of the k·C_in × k·C_out grid, in closed form.
    """
    m, n = k * c_in, k * c_out
    fixed = (1 + (m % 2 == 0)) * (1 + (n % 2 == 0))
    return fixed + (m * n - fixed) // 2


@lru_cache(64)
def build_index_table(k, c_in, c_out) -> IndexTable:
    """
    Enumerate the Fourier indices of the k·C_in × k·C_out grid.

    Entries are sorted by ascending (u² + v², u, v) over centered indices and
    grouped into conjugate units.
    """
    if min(k, c_in, c_out) < 1:
        raise ValueError(
            f"extents must be positive, got k={k}, C_in={c_in}, C_out={c_out}"
        )

    m, n = k * c_in, k * c_out
    uu, vv = np.meshgrid(centered_indices(m), centered_indices(n), indexing="ij")
    u, v = uu.ravel(), vv.ravel()
    order = np.lexsort((v, u, u ** 2 + v ** 2))
    u, v = u[order], v[order]
    position = {(a, b): i for i, (a, b) in enumerate(zip(u.tolist(), v.tolist()))}

    unit = np.full(m * n, -1)
    units = []
    cu, cv = conjugate_index(u, v, m, n)
    for i in range(m * n):
        if unit[i] >= 0:
            continue
        j = position[int(cu[i]), int(cv[i])]
        unit[i] = unit[j] = len(units)
        units.append((i,) if i == j else (i, j))

    sizes = np.array([len(members) for members in units])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    real_slot = offsets[unit]
    imag_slot = real_slot.copy()
    imag_sign = np.zeros(m * n, dtype=int)
    for members in units:
        if len(members) == 2:
            first, second = members
            imag_slot[first] = imag_slot[second] = real_slot[first] + 1
            imag_sign[first], imag_sign[second] = 1, -1

    if offsets[-1] != m * n:
        raise ConsistencyError(f"units cover {offsets[-1]} slots of a {m}×{n} grid")

    radius = np.sqrt(u ** 2 + v ** 2)
    arrays = _frozen(u, v, radius, unit, sizes, offsets, real_slot, imag_slot, imag_sign)
    return IndexTable(k, c_in, c_out, m, n, *arrays[:4], tuple(units), *arrays[4:])


#
# Grouping
#
def _feasible(cum, n, lo, hi):
    """
    reach[g][j] tells if units j… can be cut into g groups with sums in [lo, hi].
    """
    size = len(cum)
    start = np.searchsorted(cum, cum + lo, side="left")
    stop = np.searchsorted(cum, cum + hi, side="right")
    reach = [np.arange(size) == size - 1]
    for _ in range(n):
        prefix = np.concatenate([[0], np.cumsum(reach[-1])])
        reach.append(prefix[np.minimum(stop, size)] - prefix[np.minimum(start, size)] > 0)
    return reach, start, stop


def _balanced_bounds(sizes, n):
    cum = np.concatenate([[0], np.cumsum(sizes)])
    total = int(cum[-1])
    for spread in range(0, total + 1):
        low = max(1, -(-total // n) - spread)
        for lo in range(total // n, low - 1, -1):
            reach, start, stop = _feasible(cum, n, lo, lo + spread)
            if not reach[n][0]:
                continue

            bounds = [0]
            for g in range(n, 0, -1):
                j = bounds[-1]
                candidates = np.flatnonzero(reach[g - 1][start[j] : stop[j]])
                bounds.append(int(start[j] + candidates[-1]))
            return np.array(bounds)
    raise ConsistencyError(f"no balanced split of {len(sizes)} units into {n} groups")


def assign_groups(table: IndexTable, n) -> GroupAssignment:
    """
    Split the sorted units into n contiguous groups of balanced real parameter
    count (a pair counts 2, a self-conjugate index counts 1).

    Group 0 holds the lowest frequencies. Among the splits with the smallest
    max - min spread, earlier groups take the larger share.
    """
    units = table.unit_count
    if not 1 <= n <= units:
        raise ValueError(
            f"group count n={n} must be within 1…{units} (the unit count)"
        )

    bounds = _balanced_bounds(table.unit_sizes, n)
    group = np.repeat(np.arange(n), np.diff(bounds))
    param_bounds = table.offsets[bounds]
    group, bounds, param_bounds = _frozen(group, bounds, param_bounds)
    return GroupAssignment(table, n, group, bounds, param_bounds)


#
# Grid conversions
#
def reassemble(spatial, k, c_in, c_out):
    """
    Cut a (k·C_in)×(k·C_out) grid into k×k tiles: tile (r, c) becomes the filter
    at input channel r, output channel c of a k×k×C_in×C_out weight.
    """
    spatial = np.asarray(spatial)
    batch = spatial.ndim - 2
    tiles = spatial.reshape(spatial.shape[:-2] + (c_in, k, c_out, k))
    axes = (*range(batch), batch + 1, batch + 3, batch, batch + 2)
    return tiles.transpose(axes)


def disassemble(weight):
    """
    Inverse of reassemble.
    """
    weight = np.asarray(weight)
    k, _, c_in, c_out = weight.shape[-4:]
    batch = weight.ndim - 4
    axes = (*range(batch), batch + 2, batch, batch + 3, batch + 1)
    return weight.transpose(axes).reshape(weight.shape[:-4] + (k * c_in, k * c_out))


def _grid_positions(table):
    return np.mod(table.u, table.m), np.mod(table.v, table.n)


def unpack_bank(params, table: IndexTable):
    """
    Scatter bank parameters into the Hermitian M×N complex grid (FFT layout).
    """
    params = np.asarray(params, dtype=float)
    if params.shape[-1:] != (table.size,):
        raise ValueError(
            f"bank of shape {fmt_shape(params.shape)} does not match a "
            f"{table.m}×{table.n} grid"
        )
    imag = table.imag_sign * params[..., table.imag_slot]
    values = params[..., table.real_slot] + 1j * imag
    grid = np.zeros(params.shape[:-1] + (table.m, table.n), dtype=complex)
    pu, pv = _grid_positions(table)
    grid[..., pu, pv] = values
    return grid


def pack_grid(grid, table: IndexTable):
    """
    Read bank parameters from a Hermitian grid (FFT layout).

    Only the first member of each unit is read, so unpack_bank(pack_grid(g)) == g
    holds exactly for Hermitian g.
    """
    pu, pv = _grid_positions(table)
    values = np.asarray(grid)[..., pu, pv]
    first = table.imag_sign >= 0
    pair = table.imag_sign > 0
    params = np.zeros(values.shape[:-1] + (table.size,))
    params[..., table.real_slot[first]] = values[..., first].real
    params[..., table.imag_slot[pair]] = values[..., pair].imag
    return params


def init_bank(table: IndexTable, rng=None):
    """
    Spectral initialization with Kaiming fan-in variance.

    A k×k×C_in×C_out weight is sampled with deviation √(2 / (k²·C_in)) and its
    spectrum is kept as the initial bank, so the ungrouped bank materializes
    that very weight.
    """
    rng = as_rng(rng)
    k, c_in, c_out = table.k, table.c_in, table.c_out
    std = np.sqrt(2.0 / (k * k * c_in))
    weight = rng.normal(0.0, std, (k, k, c_in, c_out))
    return pack_grid(np.fft.fft2(disassemble(weight)), table)


#
# Materialization
#
def _group_masks(assignment: GroupAssignment):
    slots = np.arange(assignment.table.size)
    lo, hi = assignment.param_bounds[:-1, None], assignment.param_bounds[1:, None]
    return (slots >= lo) & (slots < hi)


def materialize_weights(params, assignment: GroupAssignment, group=None):
    """
    Materialize the spatial weights of a bank.

    Return an n×k×k×C_in×C_out stack, or a single k×k×C_in×C_out weight if a
    group index is given.
    """
    table = assignment.table
    params = np.asarray(params, dtype=float)
    if params.shape != (table.size,):
        raise ValueError(
            f"expect a bank of {table.size} parameters, got {fmt_shape(params.shape)}"
        )
    masks = _group_masks(assignment)
    if group is not None:
        masks = masks[group]
    grid = unpack_bank(np.where(masks, params, 0.0), table)
    spatial = real_part(np.fft.ifft2(grid), "fdw materialization")
    return reassemble(spatial, table.k, table.c_in, table.c_out)


def bank_adjoint(grad, assignment: GroupAssignment, group=None):
    """
    Gradient over bank parameters of ⟨grad, materialize_weights(params, …)⟩.
    """
    table = assignment.table
    grad = np.asarray(grad, dtype=float)
    pu, pv = _grid_positions(table)
    inverse = np.fft.ifft2(disassemble(grad))

    if group is None:
        entry_group = assignment.group[table.unit]
        values = inverse[entry_group, pu, pv]
    else:
        values = inverse[..., pu, pv] * (assignment.group[table.unit] == group)

    out = np.zeros(table.size)
    np.add.at(out, table.real_slot, values.real)
    np.add.at(out, table.imag_slot, -table.imag_sign * values.imag)
    return out


def fdw_adjoint(grad, assignment: GroupAssignment, i):
    """
    Backward of the map from group i's coefficients to its spatial weight W_i.

    Return the gradient over the group's parameter slice.
    """
    lo, hi = assignment.param_bounds[i], assignment.param_bounds[i + 1]
    return bank_adjoint(grad, assignment, group=i)[lo:hi]


def mix_weights(weights, pi):
    """
    Attention-weighted mixture Σ_i π_i·W_i.

    π may carry leading batch axes, giving one mixed weight per sample.
    """
    weights = np.asarray(weights, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if pi.shape[-1:] != weights.shape[:1]:
        raise ValueError(
            f"attention of shape {fmt_shape(pi.shape)} does not match "
            f"{len(weights)} weights"
        )
    if not np.all(np.isfinite(pi)):
        raise ValueError("attention coefficients must be finite")
    flat = weights.reshape(len(weights), -1)
    return (pi @ flat).reshape(pi.shape[:-1] + weights.shape[1:])


@defop("fdw-materialize", linear=True)
def _materialize(params, assignment, group=None):
    return materialize_weights(params, assignment, group)


@_materialize.defvjp
def _(g, out, params, assignment, group=None):
    return (bank_adjoint(g, assignment, group),)
