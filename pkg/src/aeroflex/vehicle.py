"""Configured aircraft/wing models.

Global frame: x downstream (freestream direction), y toward the port tip,
z up; gravity = (0, 0, -g).  The body frame coincides with these axes at
identity attitude (wind-tunnel convention: the trimmed aircraft is at rest in
a uniform wind U along +x).  The wing spans y in [-L, +L]; strip frames have
columns (chordwise, spanwise, normal up).

Two model flavours share all machinery:

* cantilever wing: clamped root at y = 0, tip at y = +L (validation cases);
* free-flying aircraft: full span, centre node rigidly attached to the body
  frame (its elastic DOFs eliminated), rigid fuselage mass at the centre.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aero import AeroConstants, StripSet
from .beam import BeamMesh, CrossSection, scale_stiffness
from .rigid import GRAVITY, mass_line_inertia


@dataclass
class TailSpec:
    """Idealized massless stabilizer supplying the pitch moment closure.

    Acts as a pure couple about the CG: couple = -arm * force, with the force
    responding quasi-steadily to local incidence, pitch rate and gust.  The
    product volume = S_t * CL_alpha_t [m^2/rad] sets its strength.
    """

    arm: float = 5.0
    volume: float = 21.4


@dataclass
class Aircraft:
    """Geometry, structural section and flight condition of the study vehicle."""

    semi_span: float = 16.0
    chord: float = 1.0
    elastic_axis_offset: float = 0.0  # semi-chords aft of mid-chord
    section: CrossSection = None
    fuselage_mass: float = 50.0
    aspect_ratio: float = 32.0
    tail: TailSpec = field(default_factory=TailSpec)
    U: float = 25.0
    rho: float = 0.0889
    consts: AeroConstants = field(default_factory=AeroConstants)

    def __post_init__(self):
        if self.section is None:
            self.section = CrossSection(
                EA=1e8, GA2=1e8, GA3=1e8, GJ=1e4, EI2=2e4, EI3=4e6, mu=0.75, j_t=0.1
            )

    @property
    def b(self):
        return 0.5 * self.chord

    @property
    def wing_mass(self):
        return self.section.mu * 2.0 * self.semi_span

    @property
    def total_mass(self):
        return self.wing_mass + self.fuselage_mass

    @property
    def weight(self):
        return self.total_mass * GRAVITY

    @property
    def q_inf(self):
        return 0.5 * self.rho * self.U**2

    @property
    def wing_area(self):
        return self.chord * 2.0 * self.semi_span


def cantilever_mesh(aircraft: Aircraft, n_nodes: int, sigma: float = 1.0) -> BeamMesh:
    """Clamped-root semi-span wing along +y (root at the origin)."""
    sec = scale_stiffness(aircraft.section, sigma)
    return BeamMesh.straight([0, 0, 0], [0, aircraft.semi_span, 0], n_nodes, sec,
                             clamped_nodes=(0,))


def aircraft_mesh(aircraft: Aircraft, n_nodes_semi: int, sigma: float = 1.0) -> BeamMesh:
    """Full-span wing attached to the body frame at mid-span.

    2*n_nodes_semi - 1 nodes; the centre node is clamped into the body frame
    (elastic displacements are measured relative to it).
    """
    sec = scale_stiffness(aircraft.section, sigma)
    n_total = 2 * n_nodes_semi - 1
    mesh = BeamMesh.straight(
        [0, -aircraft.semi_span, 0], [0, aircraft.semi_span, 0], n_total, sec,
        clamped_nodes=(n_nodes_semi - 1,),
    )
    return mesh


def strips_for_mesh(aircraft: Aircraft, mesh: BeamMesh) -> StripSet:
    """One aerodynamic strip per element, collocated at the element midpoint."""
    i1, i2 = mesh.elements[:, 0], mesh.elements[:, 1]
    s_mid = 0.5 * (mesh.r0[i1, 1] + mesh.r0[i2, 1])
    n = mesh.n_elements
    return StripSet(
        s=s_mid,
        b=np.full(n, aircraft.b),
        ds=mesh.l_ref.copy(),
        a=np.full(n, aircraft.elastic_axis_offset),
        AR=aircraft.aspect_ratio,
        consts=aircraft.consts,
        rho=aircraft.rho,
    )


# Strip alignment: strip axes in material coordinates.  Material triad has
# e1 = span (+y), e2 = -x, e3 = +z, so chordwise (+x) = -e2, span = e1,
# normal = e3.
STRIP_ALIGNMENT = np.array(
    [
        [0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
    ]
)


def rigid_mass_properties(aircraft: Aircraft, mesh: BeamMesh):
    """Total mass and undeformed inertia about the body origin (mid-span)."""
    i1, i2 = mesh.elements[:, 0], mesh.elements[:, 1]
    mid = 0.5 * (mesh.r0[i1] + mesh.r0[i2])
    mu_ds = np.array([s.mu for s in mesh.sections]) * mesh.l_ref
    rotary = []
    for e, sec in enumerate(mesh.sections):
        R0e = mesh.R0[mesh.elements[e, 0]]
        rotary.append(mesh.l_ref[e] * (R0e @ sec.J_rho @ R0e.T))
    J0 = mass_line_inertia(mu_ds, mid, rotary)
    m = float(np.sum(mu_ds)) + aircraft.fuselage_mass
    return m, J0
