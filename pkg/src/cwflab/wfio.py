"""Wave-function serialization.

Two interchangeable formats (see README for the byte-level layout):

* CSV with header ``x,re,im`` (1-D) or ``x,y,re,im`` (2-D, C-order rows,
  x outer loop). Floats are written with repr so values round-trip.
* Binary dump: ASCII magic ``CWF1``, one byte ndim, one byte norm tag
  (0 = unnormalized, 1 = normalized), two padding bytes, then per axis
  ``x_min, x_max`` as little-endian float64 and ``n_points`` as
  little-endian uint64, then the amplitudes as little-endian complex128
  (re, im pairs) in C order.
"""

import struct

import numpy as np

from .errors import ValidationError
from .qgrid import Grid1D, WaveFunction1D, WaveFunction2D

_MAGIC = b"CWF1"
_TAGS = ("unnormalized", "normalized")


def write_csv(wf, path):
    with open(path, "w", newline="") as fh:
        if isinstance(wf, WaveFunction1D):
            fh.write("x,re,im\n")
            for x, a in zip(wf.grid.points, wf.amplitudes):
                fh.write(f"{float(x)!r},{float(a.real)!r},{float(a.imag)!r}\n")
        elif isinstance(wf, WaveFunction2D):
            fh.write("x,y,re,im\n")
            for i, x in enumerate(wf.grid_x.points):
                for y, a in zip(wf.grid_y.points, wf.amplitudes[i]):
                    fh.write(f"{float(x)!r},{float(y)!r},{float(a.real)!r},{float(a.imag)!r}\n")
        else:
            raise ValidationError(f"cannot serialize {type(wf).__name__}")


def _grid_from_axis(values: np.ndarray) -> Grid1D:
    n = values.size
    dx = (values[-1] - values[0]) / (n - 1)
    return Grid1D(float(values[0]), float(values[0] + n * dx), n)


def read_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] == 3:
        grid = _grid_from_axis(data[:, 0])
        return WaveFunction1D(grid, data[:, 1] + 1j * data[:, 2])
    if data.shape[1] == 4:
        x = data[:, 0]
        n_y = int(np.searchsorted(x > x[0], True))
        if n_y == 0 or data.shape[0] % n_y:
            raise ValidationError("CSV rows do not form an x-major rectangle")
        n_x = data.shape[0] // n_y
        grid_x = _grid_from_axis(x.reshape(n_x, n_y)[:, 0])
        grid_y = _grid_from_axis(data[:n_y, 1])
        amp = (data[:, 2] + 1j * data[:, 3]).reshape(n_x, n_y)
        return WaveFunction2D(grid_x, grid_y, amp)
    raise ValidationError(f"unexpected CSV column count {data.shape[1]}")


def write_binary(wf, path):
    if isinstance(wf, WaveFunction1D):
        grids, amp = [wf.grid], wf.amplitudes
    elif isinstance(wf, WaveFunction2D):
        grids, amp = [wf.grid_x, wf.grid_y], wf.amplitudes
    else:
        raise ValidationError(f"cannot serialize {type(wf).__name__}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BBxx", len(grids), _TAGS.index(wf.norm_tag)))
        for g in grids:
            fh.write(struct.pack("<ddQ", g.x_min, g.x_max, g.n_points))
        fh.write(np.ascontiguousarray(amp).astype("<c16").tobytes())


def read_binary(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValidationError(f"{path} is not a wave-function dump")
        ndim, tag_idx = struct.unpack("<BBxx", fh.read(4))
        grids = []
        for _ in range(ndim):
            x_min, x_max, n = struct.unpack("<ddQ", fh.read(24))
            grids.append(Grid1D(x_min, x_max, int(n)))
        shape = tuple(g.n_points for g in grids)
        amp = np.frombuffer(fh.read(), dtype="<c16").reshape(shape)
    tag = _TAGS[tag_idx]
    if ndim == 1:
        return WaveFunction1D(grids[0], amp, tag)
    if ndim == 2:
        return WaveFunction2D(grids[0], grids[1], amp, tag)
    raise ValidationError(f"unsupported ndim {ndim}")
