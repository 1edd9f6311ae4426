"""Binary snapshot and trajectory files.

Layouts (all integers little-endian unsigned, floats IEEE f64 LE):

Snapshot block (also a standalone file)::

    magic   b"NCHS"
    u32     format version (1)
    u32 u32 nx ny
    f64 f64 lx ly
    f64     time
    u32     field count
    repeat: u8 name length, name bytes (utf-8), u8 role, payload f64 C-order

Roles: 0 = cell center (nx, ny), 1 = x-face (nx+1, ny), 2 = y-face
(nx, ny+1), 3 = node (nx+1, ny+1).

Trajectory container::

    magic   b"NCHT"
    u32     format version (1)
    u32 u32 nx ny
    f64 f64 lx ly
    f64     dt
    u32 u32 snapshot count, control-slab count
    f64 f64 control box lower, upper (inf when unbounded)
    u16     provenance length, provenance bytes (utf-8)
    snapshot blocks (ux, uy, phi, pressure), then control blocks (vx, vy)

Writes go through a temp file in the target directory and an atomic rename,
so readers never observe a half-written file; malformed input raises
StorageError with the byte offset where parsing stopped.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from typing import Optional

import numpy as np

from ..controls import ControlField
from ..forward import StateSnapshot, Trajectory
from ..geometry import Grid, ScalarField, VectorField

SNAPSHOT_MAGIC = b"NCHS"
TRAJECTORY_MAGIC = b"NCHT"
FORMAT_VERSION = 1

_ROLE_CENTER = 0
_ROLE_XFACE = 1
_ROLE_YFACE = 2
_ROLE_NODE = 3


class StorageError(ValueError):
    """Malformed or truncated data file."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


def _role_shape(grid: Grid, role: int) -> tuple[int, int]:
    if role == _ROLE_CENTER:
        return (grid.nx, grid.ny)
    if role == _ROLE_XFACE:
        return (grid.nx + 1, grid.ny)
    if role == _ROLE_YFACE:
        return (grid.nx, grid.ny + 1)
    if role == _ROLE_NODE:
        return (grid.nx + 1, grid.ny + 1)
    raise StorageError(f"unknown field role {role}")


class _Reader:
    """Sequential parser over bytes with offset-tagged errors."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StorageError(
                f"file truncated: wanted {n} bytes, {len(self.data) - self.pos} left",
                offset=self.pos,
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, shape: tuple[int, int]) -> np.ndarray:
        n = shape[0] * shape[1]
        raw = self.take(8 * n)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    def done(self) -> bool:
        return self.pos == len(self.data)


def _pack_field(out: list[bytes], name: str, role: int, data: np.ndarray) -> None:
    nb = name.encode("utf-8")
    if len(nb) > 255:
        raise StorageError(f"field name too long: {name!r}")
    out.append(struct.pack("<B", len(nb)))
    out.append(nb)
    out.append(struct.pack("<B", role))
    out.append(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _snapshot_bytes(snap: StateSnapshot) -> bytes:
    grid = snap.grid
    out: list[bytes] = [
        SNAPSHOT_MAGIC,
        struct.pack("<IIIdddI", FORMAT_VERSION, grid.nx, grid.ny,
                    grid.lx, grid.ly, snap.time, 4),
    ]
    _pack_field(out, "ux", _ROLE_XFACE, snap.u.x)
    _pack_field(out, "uy", _ROLE_YFACE, snap.u.y)
    _pack_field(out, "phi", _ROLE_CENTER, snap.phi.data)
    _pack_field(out, "pressure", _ROLE_CENTER, snap.pressure.data)
    return b"".join(out)


def _control_block_bytes(grid: Grid, time: float, vx: np.ndarray, vy: np.ndarray) -> bytes:
    out: list[bytes] = [
        SNAPSHOT_MAGIC,
        struct.pack("<IIIdddI", FORMAT_VERSION, grid.nx, grid.ny,
                    grid.lx, grid.ly, time, 2),
    ]
    _pack_field(out, "vx", _ROLE_XFACE, vx)
    _pack_field(out, "vy", _ROLE_YFACE, vy)
    return b"".join(out)


def _read_snapshot_block(r: _Reader) -> tuple[Grid, float, dict[str, np.ndarray]]:
    start = r.pos
    magic = r.take(4)
    if magic != SNAPSHOT_MAGIC:
        raise StorageError(f"bad snapshot magic {magic!r}", offset=start)
    version, nx, ny, lx, ly, time, nfields = r.unpack("IIIdddI")
    if version != FORMAT_VERSION:
        raise StorageError(f"unsupported snapshot version {version}", offset=start)
    if nx < 1 or ny < 1 or not (lx > 0.0 and ly > 0.0):
        raise StorageError(f"bad grid header nx={nx} ny={ny} lx={lx} ly={ly}", offset=start)
    grid = Grid(nx, ny, lx, ly)
    fields: dict[str, np.ndarray] = {}
    for _ in range(nfields):
        (nlen,) = r.unpack("B")
        name = r.take(nlen).decode("utf-8")
        (role,) = r.unpack("B")
        fields[name] = r.array(_role_shape(grid, role))
    return grid, time, fields


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".nchs-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_snapshot(path: str, snap: StateSnapshot) -> None:
    _atomic_write(path, _snapshot_bytes(snap))


def load_snapshot(path: str) -> StateSnapshot:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    grid, time, fields = _read_snapshot_block(r)
    if not r.done():
        raise StorageError("trailing bytes after snapshot", offset=r.pos)
    try:
        u = VectorField(grid, fields["ux"], fields["uy"], noslip=False)
        phi = ScalarField(grid, fields["phi"])
        pressure = ScalarField(grid, fields["pressure"])
    except KeyError as exc:
        raise StorageError(f"snapshot is missing field {exc}") from exc
    return StateSnapshot(time, u, phi, pressure)


def save_trajectory(path: str, traj: Trajectory) -> None:
    grid = traj.grid
    ctrl = traj.control
    n_ctrl = ctrl.n_steps if ctrl is not None else 0
    lower = float(np.min(ctrl.lower)) if ctrl is not None else -math.inf
    upper = float(np.max(ctrl.upper)) if ctrl is not None else math.inf
    prov = traj.provenance.encode("utf-8")[:65535]
    out: list[bytes] = [
        TRAJECTORY_MAGIC,
        struct.pack("<IIIdddIIddH", FORMAT_VERSION, grid.nx, grid.ny,
                    grid.lx, grid.ly, traj.dt, len(traj.snapshots), n_ctrl,
                    lower, upper, len(prov)),
        prov,
    ]
    for snap in traj.snapshots:
        out.append(_snapshot_bytes(snap))
    if ctrl is not None:
        for n in range(n_ctrl):
            out.append(_control_block_bytes(grid, n * traj.dt, ctrl.vx[n], ctrl.vy[n]))
    _atomic_write(path, b"".join(out))


def load_trajectory(path: str) -> Trajectory:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic = r.take(4)
    if magic != TRAJECTORY_MAGIC:
        raise StorageError(f"bad trajectory magic {magic!r}", offset=0)
    (version, nx, ny, lx, ly, dt, n_snaps, n_ctrl,
     lower, upper, prov_len) = r.unpack("IIIdddIIddH")
    if version != FORMAT_VERSION:
        raise StorageError(f"unsupported trajectory version {version}", offset=4)
    provenance = r.take(prov_len).decode("utf-8")
    grid = Grid(nx, ny, lx, ly)
    if n_snaps < 1:
        raise StorageError("trajectory has no snapshots", offset=r.pos)

    snaps: list[StateSnapshot] = []
    for _ in range(n_snaps):
        sgrid, time, fields = _read_snapshot_block(r)
        if (sgrid.nx, sgrid.ny) != (nx, ny):
            raise StorageError(
                f"snapshot grid {sgrid.nx}x{sgrid.ny} does not match container {nx}x{ny}",
                offset=r.pos,
            )
        try:
            snaps.append(StateSnapshot(
                time,
                VectorField(grid, fields["ux"], fields["uy"], noslip=False),
                ScalarField(grid, fields["phi"]),
                ScalarField(grid, fields["pressure"]),
            ))
        except KeyError as exc:
            raise StorageError(f"snapshot is missing field {exc}", offset=r.pos) from exc

    control = None
    if n_ctrl > 0:
        vx = np.empty((n_ctrl, nx + 1, ny))
        vy = np.empty((n_ctrl, nx, ny + 1))
        for n in range(n_ctrl):
            _, _, fields = _read_snapshot_block(r)
            try:
                vx[n] = fields["vx"]
                vy[n] = fields["vy"]
            except KeyError as exc:
                raise StorageError(f"control block missing field {exc}", offset=r.pos) from exc
        control = ControlField(grid, vx, vy, lower, upper)
    if not r.done():
        raise StorageError("trailing bytes after trajectory", offset=r.pos)
    return Trajectory(grid, dt, snaps, control=control, provenance=provenance)


def save_control(path: str, control: ControlField, dt: float,
                 provenance: str = "") -> None:
    """Store a bare control as a trajectory container with no states."""
    grid = control.grid
    lower = float(np.min(control.lower))
    upper = float(np.max(control.upper))
    prov = provenance.encode("utf-8")[:65535]
    out: list[bytes] = [
        TRAJECTORY_MAGIC,
        struct.pack("<IIIdddIIddH", FORMAT_VERSION, grid.nx, grid.ny,
                    grid.lx, grid.ly, dt, 0, control.n_steps,
                    lower, upper, len(prov)),
        prov,
    ]
    for n in range(control.n_steps):
        out.append(_control_block_bytes(grid, n * dt, control.vx[n], control.vy[n]))
    _atomic_write(path, b"".join(out))


def load_control(path: str) -> tuple[ControlField, float]:
    """Read a control stored by save_control; returns (control, dt)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic = r.take(4)
    if magic != TRAJECTORY_MAGIC:
        raise StorageError(f"bad trajectory magic {magic!r}", offset=0)
    (version, nx, ny, lx, ly, dt, n_snaps, n_ctrl,
     lower, upper, prov_len) = r.unpack("IIIdddIIddH")
    if version != FORMAT_VERSION:
        raise StorageError(f"unsupported trajectory version {version}", offset=4)
    r.take(prov_len)
    if n_snaps != 0:
        raise StorageError("expected a bare control file (no snapshots)")
    if n_ctrl < 1:
        raise StorageError("control file holds no control slabs")
    grid = Grid(nx, ny, lx, ly)
    vx = np.empty((n_ctrl, nx + 1, ny))
    vy = np.empty((n_ctrl, nx, ny + 1))
    for n in range(n_ctrl):
        _, _, fields = _read_snapshot_block(r)
        vx[n] = fields["vx"]
        vy[n] = fields["vy"]
    if not r.done():
        raise StorageError("trailing bytes after control blocks", offset=r.pos)
    return ControlField(grid, vx, vy, lower, upper), dt
