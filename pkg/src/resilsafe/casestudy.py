"""Packaged example systems: interconnected rooms and an LTI synchronization net.

The room model is a circular building of N rooms exchanging heat with their
neighbors, the environment, and a heater:

    xdot_i = (1/delta) * ( w (x_{i+1} + x_{i-1} - 2 x_i)
                           + y (T_e - x_i) + z (T_h - x_i) u_i )

with w=0.45, y=0.045, z=0.09, delta=0.1, T_e=-1, T_h=50.  Room 1 (index 0)
is compromised; rooms 2 and 3 are protected.  The neighbor exchange is the
coupled dynamics; the environment leak and heater are the self dynamics.

Scenario 1 constrains the average temperature to [15, 20] through one
barrier; scenario 2 gives each room its own temperature band and protects
the compromised room's band through a translated local constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, PolyMatrix, PolyVector, xvar
from .system import InterconnectedSystem, SafetyDomainSampler, SubsystemModel

W, Y, Z = 0.45, 0.045, 0.09
DELTA = 0.1
T_ENV, T_HEAT = -1.0, 50.0


@dataclass(frozen=True)
class EtaSpec:
    """Extended class-K function choice per constraint: eta(h) = kappa*h or kappa*h^3."""

    kind: str = "linear"
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cubic"):
            raise ValueError(f"unknown eta kind {self.kind!r}")
        if self.kappa <= 0:
            raise ValueError("eta gain must be positive")


@dataclass
class SynthesisConfig:
    eta: list[EtaSpec] = field(default_factory=list)       # one per constraint
    alpha: dict | None = None                              # (i, k) -> weight, None = uniform
    policy_degree: int = 1
    multiplier_degree: int = 2
    envelope: list[Polynomial] = field(default_factory=list)
    envelope_eta: EtaSpec = field(default_factory=lambda: EtaSpec("linear", 20.0))


@dataclass
class SimConfig:
    dt: float = 0.1
    steps: int = 50
    x0: np.ndarray | None = None
    scheme: str = "euler"


@dataclass
class SystemDocument:
    """A system plus synthesis and simulation defaults, as read from a file."""

    system: InterconnectedSystem
    synthesis: SynthesisConfig
    sim: SimConfig
    name: str = "system"


def _room(idx: int, n_rooms: int, input_box) -> SubsystemModel:
    own = xvar(idx)
    x = Polynomial.variable(own)
    prev_i = (idx - 1) % n_rooms
    next_i = (idx + 1) % n_rooms
    cpl_scope = [xvar(prev_i), xvar(idx), xvar(next_i)]
    xp = Polynomial.variable(xvar(prev_i), cpl_scope)
    xn = Polynomial.variable(xvar(next_i), cpl_scope)
    xo = Polynomial.variable(own, cpl_scope)

    f_slf = PolyVector([(Y / DELTA) * (T_ENV - x)])
    g_slf = PolyMatrix([[(Z / DELTA) * (T_HEAT - x)]])
    f_cpl = PolyVector([(W / DELTA) * (xn + xp - 2.0 * xo)])
    return SubsystemModel(
        name=f"room{idx + 1}", n=1, r=1,
        f_slf=f_slf, g_slf=g_slf, f_cpl=f_cpl, g_cpl=None,
        input_box=(tuple(input_box),),
    )


def average_band_barrier(n_rooms: int = 3, lo: float = 15.0, hi: float = 20.0) -> Polynomial:
    scope = [xvar(i) for i in range(n_rooms)]
    s = Polynomial.zero(scope)
    for v in scope:
        s = s + Polynomial.variable(v, scope)
    avg = s.scale(1.0 / n_rooms)
    return (avg - lo) * (Polynomial.constant(hi, scope) - avg)


def room_band_barrier(idx: int, lo: float, hi: float) -> Polynomial:
    x = Polynomial.variable(xvar(idx))
    return (Polynomial.constant(hi, [xvar(idx)]) - x) * (x - lo)


def three_rooms_scenario1(u1_max: float = 0.6) -> SystemDocument:
    """Average-temperature band with room 1 compromised."""
    rooms = (
        _room(0, 3, (0.0, u1_max)),
        _room(1, 3, (-2.0, 2.0)),
        _room(2, 3, (-2.0, 2.0)),
    )
    system = InterconnectedSystem(
        subsystems=rooms,
        protected=frozenset({1, 2}),
        vulnerable=frozenset({0}),
        safety=(average_band_barrier(),),
        sampler=SafetyDomainSampler(box=((15.0, 20.0),) * 3, resolution=11),
    )
    synth = SynthesisConfig(eta=[EtaSpec("linear", 10.0)])
    sim = SimConfig(dt=0.05, steps=50, x0=np.array([16.0, 16.0, 16.0]))
    return SystemDocument(system, synth, sim, name="three-rooms-scenario1")


# Operating envelope for the protected rooms in scenario 2.  The translated
# constraint for the compromised room bounds the neighbor heat supply
# x2 + x3; holding both protected rooms in a narrow band just above their
# lower temperature limits keeps that supply inside the admissible range for
# every compromised input in [0, u1_max].
ENVELOPE_WIDTH = 0.2


def three_rooms_scenario2(u1_max: float = 0.6) -> SystemDocument:
    rooms = (
        _room(0, 3, (0.0, u1_max)),
        _room(1, 3, (-2.0, 2.0)),
        _room(2, 3, (-2.0, 2.0)),
    )
    bands = ((10.0, 16.0), (15.0, 22.0), (14.0, 25.0))
    system = InterconnectedSystem(
        subsystems=rooms,
        protected=frozenset({1, 2}),
        vulnerable=frozenset({0}),
        safety=(
            room_band_barrier(0, 10.0, 16.0),
            room_band_barrier(1, 15.0, 22.0),
            room_band_barrier(2, 14.0, 25.0),
        ),
        sampler=SafetyDomainSampler(box=bands, resolution=11),
    )
    envelope = [
        room_band_barrier(1, 15.0, 15.0 + ENVELOPE_WIDTH),
        room_band_barrier(2, 14.0, 14.0 + ENVELOPE_WIDTH),
    ]
    synth = SynthesisConfig(
        eta=[EtaSpec("linear", 10.0), EtaSpec("linear", 5.0), EtaSpec("linear", 5.0)],
        envelope=envelope,
        envelope_eta=EtaSpec("linear", 20.0),
    )
    sim = SimConfig(dt=0.005, steps=50, x0=np.array([10.0, 15.0, 14.0]))
    return SystemDocument(system, synth, sim, name="three-rooms-scenario2")


def three_rooms(scenario: int, u1_max: float = 0.6) -> SystemDocument:
    if scenario == 1:
        return three_rooms_scenario1(u1_max)
    if scenario == 2:
        return three_rooms_scenario2(u1_max)
    raise ValueError(f"unknown scenario {scenario}; expected 1 or 2")


def lti_synchronization(A: np.ndarray, b_diag, c, protected) -> SystemDocument:
    """Synchronization network xdot = A x + B u with one ellipsoid constraint.

    A has zero row sums off the diagonal convention a_ii = -sum_{j!=i} a_ij < 0;
    B is diagonal.  The safe set is h(x) = 1 - sum_i c_i x_i^2 >= 0 and each
    input is box constrained to [-1, 1].
    """
    A = np.asarray(A, dtype=float)
    b_diag = np.asarray(b_diag, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    N = A.shape[0]
    if A.shape != (N, N) or b_diag.size != N or c.size != N:
        raise ValueError("inconsistent synchronization system dimensions")
    if (c <= 0).any():
        raise ValueError("ellipsoid weights must be positive")

    subsystems = []
    all_x = [xvar(i) for i in range(N)]
    for i in range(N):
        xi = Polynomial.variable(xvar(i))
        f_slf = PolyVector([A[i, i] * xi])
        g_slf = PolyMatrix([[Polynomial.constant(b_diag[i], [xvar(i)])]])
        cpl = Polynomial.zero(all_x)
        for j in range(N):
            if j != i and A[i, j] != 0.0:
                cpl = cpl + A[i, j] * Polynomial.variable(xvar(j), all_x)
        subsystems.append(SubsystemModel(
            name=f"node{i + 1}", n=1, r=1,
            f_slf=f_slf, g_slf=g_slf, f_cpl=PolyVector([cpl]), g_cpl=None,
            input_box=((-1.0, 1.0),),
        ))

    h = Polynomial.constant(1.0, all_x)
    for i in range(N):
        h = h - c[i] * Polynomial.variable(xvar(i), all_x) ** 2

    box = tuple((-1.0 / np.sqrt(c[i]), 1.0 / np.sqrt(c[i])) for i in range(N))
    protected = frozenset(protected)
    system = InterconnectedSystem(
        subsystems=tuple(subsystems),
        protected=protected,
        vulnerable=frozenset(range(N)) - protected,
        safety=(h,),
        sampler=SafetyDomainSampler(box=box, resolution=11),
    )
    return SystemDocument(system, SynthesisConfig(eta=[EtaSpec("linear", 1.0)]),
                          SimConfig(), name="lti-synchronization")


def closed_form_lti_indices(doc: SystemDocument) -> tuple[dict[int, float], float]:
    """The analytic index bounds for the synchronization example.

    gamma_i = -b_ii^2 c_i / (2 |a_ii|) for each vulnerable node, and
    beta = -(max vulnerable c / min c) * sum of vulnerable |a_ii|.
    """
    sys = doc.system
    gammas = {}
    cs, adiag, bdiag = {}, {}, {}
    for i, s in enumerate(sys.subsystems):
        xi = xvar(i)
        h = sys.safety[0]
        from .poly import Monomial
        cs[i] = -h.coefficient(Monomial({xi: 2}))
        adiag[i] = s.f_slf[0].coefficient(Monomial({xi: 1}))
        bdiag[i] = s.g_slf[0, 0].coefficient(Monomial())
    for i in sorted(sys.vulnerable):
        gammas[i] = -bdiag[i] ** 2 * cs[i] / (2.0 * abs(adiag[i]))
    cmax_vuln = max(cs[i] for i in sys.vulnerable)
    cmin = min(cs.values())
    beta = -(cmax_vuln / cmin) * sum(abs(adiag[i]) for i in sys.vulnerable)
    return gammas, beta
