"""Diagnostic tables and plot-ready field dumps.

The CSV layout is versioned through its header comment so downstream
tooling can detect drift.  Interval-based columns (dissipations, powers,
the energy-identity residual) describe the interval starting at the row's
time; the final row carries ``nan`` there because no interval follows it.
"""

from __future__ import annotations

import csv
import io
import math
import os
from typing import Optional

import numpy as np

from ..forward import EnergyReport, Trajectory, bound_violation, energy_report, mass
from ..geometry import ScalarField
from ..kernels import DiscreteKernel
from ..material import MaterialLaws

REPORT_HEADER = "# nchs-report v1"
_COLUMNS = (
    "t",
    "mass",
    "bound_violation",
    "kinetic_energy",
    "phase_energy",
    "mixing_dissipation",
    "viscous_dissipation",
    "nonlocal_power",
    "transport_power",
    "control_power",
    "energy_residual",
)


def report_rows(traj: Trajectory, er: EnergyReport) -> list[dict[str, float]]:
    rows = []
    n = traj.n_steps
    for k, snap in enumerate(traj.snapshots):
        interval = k < n
        rows.append({
            "t": float(snap.time),
            "mass": mass(snap.phi),
            "bound_violation": bound_violation(snap.phi),
            "kinetic_energy": float(er.kinetic[k]),
            "phase_energy": float(er.phase[k]),
            "mixing_dissipation": float(er.mixing_dissipation[k]) if interval else math.nan,
            "viscous_dissipation": float(er.viscous_dissipation[k]) if interval else math.nan,
            "nonlocal_power": float(er.nonlocal_power[k]) if interval else math.nan,
            "transport_power": float(er.transport_power[k]) if interval else math.nan,
            "control_power": float(er.control_power[k]) if interval else math.nan,
            "energy_residual": float(er.residual[k]) if interval else math.nan,
        })
    return rows


def render_report(traj: Trajectory, er: EnergyReport) -> str:
    buf = io.StringIO()
    buf.write(REPORT_HEADER + "\n")
    writer = csv.DictWriter(buf, fieldnames=_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report_rows(traj, er):
        writer.writerow({k: repr(v) for k, v in row.items()})
    return buf.getvalue()


def write_report(path: str, traj: Trajectory, dk: DiscreteKernel,
                 laws: MaterialLaws) -> EnergyReport:
    """Evaluate the energy ledger along a trajectory and write the CSV."""
    er = energy_report(traj, dk, laws)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_report(traj, er))
    return er


def _write_scalar_dat(path: str, field: ScalarField) -> None:
    grid = field.grid
    x, y = grid.cell_centers()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x y value\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                fh.write(f"{x[i, j]:.9e} {y[i, j]:.9e} {field.data[i, j]:.9e}\n")
            fh.write("\n")


def dump_fields(traj: Trajectory, outdir: str, every: int = 1) -> list[str]:
    """Write plot-ready scanline tables of phi and the speed magnitude.

    One file pair per selected snapshot, named by the time index; rows are
    grouped per x-scanline with blank separators so surface/heatmap plotting
    tools ingest them directly.
    """
    if every < 1:
        raise ValueError(f"every must be >= 1, got {every}")
    os.makedirs(outdir, exist_ok=True)
    grid = traj.grid
    written: list[str] = []
    for k, snap in enumerate(traj.snapshots):
        if k % every != 0 and k != traj.n_steps:
            continue
        phi_path = os.path.join(outdir, f"phi_{k:06d}.dat")
        _write_scalar_dat(phi_path, snap.phi)
        cx = 0.5 * (snap.u.x[1:, :] + snap.u.x[:-1, :])
        cy = 0.5 * (snap.u.y[:, 1:] + snap.u.y[:, :-1])
        speed = ScalarField(grid, np.hypot(cx, cy))
        speed_path = os.path.join(outdir, f"speed_{k:06d}.dat")
        _write_scalar_dat(speed_path, speed)
        written.extend([phi_path, speed_path])
    return written


def summarize(traj: Trajectory, er: EnergyReport) -> str:
    """Short human-oriented closing summary for console output."""
    m0 = mass(traj.snapshots[0].phi)
    mN = mass(traj.final.phi)
    worst_bound = max(bound_violation(s.phi) for s in traj.snapshots)
    worst_div = max(s.div_defect() for s in traj.snapshots)
    lines = [
        f"steps:            {traj.n_steps} x dt={traj.dt:g} (T={traj.times[-1]:g})",
        f"mass drift:       {abs(mN - m0):.3e}",
        f"max bound excess: {worst_bound:.3e}",
        f"max divergence:   {worst_div:.3e}",
        f"energy:           {er.energy[0]:.6e} -> {er.energy[-1]:.6e}",
        f"identity defect:  l1(dt) = {er.l1_residual:.3e}",
    ]
    return "\n".join(lines)
