"""Cell-centered 1D mesh and assembly of the nonlinear diffusion operator.

Unknowns live at cell centers; Dirichlet data enters through half-cell
transmissibilities folded into a right-hand-side vector, so the assembled
matrix acts on cell values only.  The matrix is symmetric positive
definite for any temperature state because the conductivity is bounded
below by a positive constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constitutive import conductivity
from .errors import DegenerateProbe

HARMONIC = "harmonic"
ARITHMETIC = "arithmetic"


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered mesh over an interval of given length."""

    num_cells: int
    length: float = 1.0

    def __post_init__(self):
        if self.num_cells < 2:
            raise ValueError(f"need at least two cells, got {self.num_cells}")
        if self.length <= 0.0:
            raise ValueError(f"domain length must be positive, got {self.length}")

    @property
    def h(self):
        return self.length / self.num_cells

    @property
    def centers(self):
        h = self.h
        return (np.arange(self.num_cells) + 0.5) * h


@dataclass(frozen=True)
class StiffnessAssembly:
    """Symmetric tridiagonal diffusion matrix plus Dirichlet contributions.

    ``diag`` holds the main diagonal, ``off`` the single sub/super
    diagonal, ``bc_rhs`` the boundary data times the half-cell
    transmissibilities (nonzero only in the first and last entries).
    """

    diag: np.ndarray
    off: np.ndarray
    bc_rhs: np.ndarray

    def matvec(self, x):
        y = self.diag * x
        if self.off.size:
            y[:-1] += self.off * x[1:]
            y[1:] += self.off * x[:-1]
        return y


def face_transmissibilities(k, h, face_average=HARMONIC):
    """Interior-face transmissibilities from cell conductivities."""
    if face_average == HARMONIC:
        k_face = 2.0 * k[:-1] * k[1:] / (k[:-1] + k[1:])
    elif face_average == ARITHMETIC:
        k_face = 0.5 * (k[:-1] + k[1:])
    else:
        raise ValueError(f"unknown face averaging {face_average!r}")
    return k_face / (h * h)


def assemble(u, material, grid, ud_left, ud_right, face_average=HARMONIC):
    """Assemble the diffusion matrix at temperature state ``u``.

    Interior faces use the chosen average of the two adjacent cell
    conductivities; boundary faces use the adjacent cell's conductivity
    over half a cell, which is where the Dirichlet values enter.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.num_cells,):
        raise ValueError(f"state length {u.shape} does not match grid {grid.num_cells}")
    h = grid.h
    k = conductivity(u, material)
    t_int = face_transmissibilities(k, h, face_average)
    t_left = 2.0 * k[0] / (h * h)
    t_right = 2.0 * k[-1] / (h * h)

    diag = np.zeros(grid.num_cells)
    diag[:-1] += t_int
    diag[1:] += t_int
    diag[0] += t_left
    diag[-1] += t_right

    bc_rhs = np.zeros(grid.num_cells)
    bc_rhs[0] = t_left * ud_left
    bc_rhs[-1] = t_right * ud_right
    return StiffnessAssembly(diag=diag, off=-t_int, bc_rhs=bc_rhs)


def boundary_transmissibilities(asm):
    """Recover (t_left, t_right) from an assembled matrix."""
    if asm.off.size:
        return asm.diag[0] + asm.off[0], asm.diag[-1] + asm.off[-1]
    # single-cell matrices split the two boundary faces evenly
    return 0.5 * asm.diag[0], 0.5 * asm.diag[0]


def lipschitz_probe(u1, u2, xi, material, grid, face_average=HARMONIC):
    """Empirical ratio ||(A(u1)-A(u2)) xi|| / (||u1-u2|| ||xi||).

    Sampling this over many state pairs estimates how strongly the matrix
    reacts to temperature changes, which feeds the contraction
    diagnostics.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    xi = np.asarray(xi, dtype=float)
    du = np.linalg.norm(u1 - u2)
    nxi = np.linalg.norm(xi)
    if du == 0.0 or nxi == 0.0:
        raise DegenerateProbe("probe needs distinct states and a nonzero vector")
    a1 = assemble(u1, material, grid, 0.0, 0.0, face_average)
    a2 = assemble(u2, material, grid, 0.0, 0.0, face_average)
    diff = a1.matvec(xi) - a2.matvec(xi)
    return float(np.linalg.norm(diff) / (du * nxi))
