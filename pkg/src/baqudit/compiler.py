"""Star-topology compilation of unitaries into Givens rotations.

A Givens step on leaf i acts on the (hub, i) pair as

    G(theta, phi) = [[cos theta,              e^{i phi} sin theta],
                     [-e^{-i phi} sin theta,  cos theta          ]]

and is played as a physical pulse of Bloch angle 2*theta and phase phi + pi/2 (see
:func:`to_pulse_sequence`).  Diagonal frame changes (virtual Z) are free.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, NumericalError
from .simulator import PulseSequence, TransitionSpec, VirtualZ

EPS_SKIP = 1e-12
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class GivensStep:
    i: int
    theta: float
    phi: float = 0.0

    def block(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        e = np.exp(1j * self.phi)
        return np.array([[c, e * s], [-np.conj(e) * s, c]])

    def adjoint(self) -> "GivensStep":
        return GivensStep(self.i, -self.theta, self.phi)


@dataclass(frozen=True)
class Frame:
    """Virtual-Z: multiplies amplitude k by exp(i z[k])."""

    z: tuple[float, ...]

    def adjoint(self) -> "Frame":
        return Frame(tuple(-x for x in self.z))


Op = Union[GivensStep, Frame]


@dataclass(frozen=True)
class StarCircuit:
    """Time-ordered ops on a d-level system whose pulses all touch ``hub``."""

    dim: int
    ops: tuple[Op, ...]
    hub: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        check_star(self.ops, self.dim, self.hub)

    @property
    def steps(self) -> list[GivensStep]:
        return [o for o in self.ops if isinstance(o, GivensStep)]

    @property
    def n_pulses(self) -> int:
        return len(self.steps)

    def unitary(self) -> np.ndarray:
        return ops_unitary(self.ops, self.dim, self.hub)

    def adjoint(self) -> "StarCircuit":
        return StarCircuit(self.dim, tuple(o.adjoint() for o in reversed(self.ops)), self.hub, self.name + "^dag")

    def then(self, other: "StarCircuit") -> "StarCircuit":
        if other.dim != self.dim or other.hub != self.hub:
            raise ConfigError("cannot concatenate circuits with different dimension or hub")
        return StarCircuit(self.dim, self.ops + other.ops, self.hub, f"{self.name}+{other.name}")


def check_star(ops: Iterable[Op], dim: int, hub: int = 0) -> None:
    for o in ops:
        if isinstance(o, GivensStep):
            if o.i == hub or not 0 <= o.i < dim:
                raise NumericalError(f"step on leaf {o.i} violates the star constraint (hub {hub})")
        elif len(o.z) != dim:
            raise ConfigError("frame has wrong length")


def apply_step(M: np.ndarray, step: GivensStep, hub: int = 0) -> np.ndarray:
    """G @ M for a Givens step acting on rows (hub, i); returns a new array."""
    out = M.copy()
    g = step.block()
    r0, ri = M[hub].copy(), M[step.i].copy()
    out[hub] = g[0, 0] * r0 + g[0, 1] * ri
    out[step.i] = g[1, 0] * r0 + g[1, 1] * ri
    return out


def ops_unitary(ops: Iterable[Op], dim: int, hub: int = 0) -> np.ndarray:
    U = np.eye(dim, dtype=complex)
    for o in ops:
        if isinstance(o, Frame):
            U = np.exp(1j * np.asarray(o.z))[:, None] * U
        else:
            U = apply_step(U, o, hub)
    return U


def aligned_cost(U: np.ndarray, T: np.ndarray) -> float:
    """min over global phase g of ||e^{ig} U - T||_F^2 = 2d - 2|tr(U^dag T)|."""
    return float(max(2 * U.shape[0] - 2 * abs(np.trace(U.conj().T @ T)), 0.0))


def frobenius_residual(U: np.ndarray, T: np.ndarray) -> float:
    """Global-phase-aligned Frobenius distance."""
    tr = np.trace(U.conj().T @ T)
    ph = tr / abs(tr) if abs(tr) > 0 else 1.0
    return float(np.linalg.norm(U * ph - T))


def _check_unitary(U: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] < 2:
        raise ConfigError("target must be a square matrix of size >= 2")
    if np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) > tol:
        raise ConfigError("target is not unitary within 1e-10")
    return U


# ---------------------------------------------------------------------------
# Decomposition


def _zeroing(a: complex, b: complex, real: bool) -> tuple[float, float]:
    """(theta, phi) such that G(theta, phi) sends (a, b) to (r e^{i arg a}, 0)."""
    if real:
        return float(np.arctan2(b.real, a.real)), 0.0
    theta = float(np.arctan2(abs(b), abs(a)))
    arg_a = np.angle(a) if abs(a) > 0 else 0.0
    return theta, float(arg_a - np.angle(b))


def star_decompose(U: np.ndarray, order: Sequence[int] | None = None,
                   eps: float = EPS_SKIP) -> tuple[list[GivensStep], np.ndarray]:
    """Reduce U to a diagonal V by star Givens rotations (initial sweep + swap cycles).

    Returns the recorded rotations R = [G_0, ..., G_{N-1}] with
    G_{N-1} ... G_0 U = V.  Real inputs use two-argument arctangent angles with zero
    phases; complex inputs use phase-carrying rotations that zero the same entries.
    """
    V = _check_unitary(U).copy()
    d = V.shape[0]
    order = list(range(1, d)) if order is None else [int(k) for k in order]
    if sorted(order) != list(range(1, d)):
        raise ConfigError(f"order must be a permutation of 1..{d - 1}")
    real = bool(np.max(np.abs(V.imag)) < 1e-14)
    if real:
        V = V.real.astype(complex)
    rec: list[GivensStep] = []

    def rotate(i: int, col: int) -> None:
        nonlocal V
        if abs(V[i, col]) > eps:
            th, ph = _zeroing(V[0, col], V[i, col], real)
            g = GivensStep(i, th, ph)
            V = apply_step(V, g)
            rec.append(g)

    for i in reversed(order):
        rotate(i, 0)
    for pos, k in enumerate(order):
        swap = GivensStep(k, np.pi / 2)
        V = apply_step(V, swap)
        rec.append(swap)
        for i in reversed(order[pos + 1:]):
            rotate(i, k)
        V = apply_step(V, swap)
        rec.append(swap)
    off = V - np.diag(np.diag(V))
    if np.max(np.abs(off)) > 1e-9:
        raise NumericalError(f"decomposition left a non-diagonal residual ({np.max(np.abs(off)):.2e})")
    return rec, np.diag(np.diag(V))


def decomposition_circuit(U: np.ndarray, order: Sequence[int] | None = None) -> StarCircuit:
    """Time-ordered circuit reproducing U: frame(V) then adjoint rotations in reverse."""
    rec, V = star_decompose(U, order)
    ops: list[Op] = [Frame(tuple(np.angle(np.diag(V))))]
    ops += [g.adjoint() for g in reversed(rec)]
    return StarCircuit(U.shape[0], tuple(ops))


def expected_step_count(d: int) -> int:
    return (d - 1) * (d + 4) // 2


# ---------------------------------------------------------------------------
# Fusion


def _wrap(theta: float) -> float:
    """Angle reduced to (-pi, pi]."""
    t = float(np.mod(theta + np.pi, TWO_PI) - np.pi)
    return np.pi if t == -np.pi else t


def fuse_adjacent(ops: Sequence[Op], tol: float = 1e-12) -> list[Op]:
    """Merge back-to-back rotations on the same leaf with a common phase axis."""
    out: list[Op] = []
    for o in ops:
        if isinstance(o, GivensStep) and out and isinstance(out[-1], GivensStep) and out[-1].i == o.i:
            prev = out[-1]
            dphi = np.mod(o.phi - prev.phi + np.pi, TWO_PI) - np.pi
            if abs(dphi) < tol:
                sign = 1.0
            elif abs(abs(dphi) - np.pi) < tol:
                sign = -1.0
            else:
                out.append(o)
                continue
            out[-1] = GivensStep(o.i, _wrap(prev.theta + sign * o.theta), prev.phi)
            if abs(out[-1].theta) < tol:
                out.pop()
            continue
        if isinstance(o, GivensStep):
            o = GivensStep(o.i, _wrap(o.theta), o.phi)
            if abs(o.theta) < tol:
                continue
        out.append(o)
    return out


# ---------------------------------------------------------------------------
# Continuous optimisation


def canonical_form(ops: Sequence[Op], dim: int, hub: int = 0) -> tuple[list[GivensStep], np.ndarray]:
    """Rewrite ops as G_M ... G_1 diag(e^{iz}) by pushing every frame to the start."""
    z = np.zeros(dim)
    steps: list[GivensStep] = []
    for o in reversed(ops):
        if isinstance(o, Frame):
            z = z + np.asarray(o.z)
        else:
            # D G = G' D with G' = D G D^dag
            steps.append(GivensStep(o.i, o.theta, o.phi + z[hub] - z[o.i]))
    steps.reverse()
    # frames after a step were pushed through it above; the accumulated z is applied first
    return steps, z


def _unpack(x: np.ndarray, leaves: Sequence[int], d: int, hub: int):
    m = len(leaves)
    theta, phi = x[:m], x[m:2 * m]
    z = np.zeros(d)
    free = [k for k in range(d) if k != hub]
    z[free] = x[2 * m:]
    return theta, phi, z


def cost_and_grad(x: np.ndarray, leaves: Sequence[int], T: np.ndarray, hub: int = 0):
    """Aligned Frobenius cost 2d - 2|tr(T^dag U)| and its gradient."""
    d = T.shape[0]
    theta, phi, z = _unpack(x, leaves, d, hub)
    m = len(leaves)
    c, s = np.cos(theta), np.sin(theta)
    e = np.exp(1j * phi)
    A = np.diag(np.exp(1j * z))
    fwd = [A]
    for k in range(m):
        i = leaves[k]
        r0, ri = A[hub].copy(), A[i].copy()
        A = A.copy()
        A[hub] = c[k] * r0 + e[k] * s[k] * ri
        A[i] = -np.conj(e[k]) * s[k] * r0 + c[k] * ri
        fwd.append(A)
    B = T.conj().T.copy()
    f = np.trace(B @ A)
    gt = np.zeros(m, dtype=complex)
    gp = np.zeros(m, dtype=complex)
    for k in range(m - 1, -1, -1):
        i = leaves[k]
        Ap = fwd[k]
        # X[b, a] = Ap[b, :] . B[:, a] for a, b in {hub, i}
        x00 = Ap[hub] @ B[:, hub]
        x0i = Ap[hub] @ B[:, i]
        xi0 = Ap[i] @ B[:, hub]
        xii = Ap[i] @ B[:, i]
        ek, ck, sk = e[k], c[k], s[k]
        # dG/dtheta entries (00, 0i, i0, ii)
        gt[k] = -sk * x00 + ek * ck * xi0 - np.conj(ek) * ck * x0i - sk * xii
        gp[k] = 1j * ek * sk * xi0 + 1j * np.conj(ek) * sk * x0i
        b0, bi = B[:, hub].copy(), B[:, i].copy()
        B[:, hub] = ck * b0 - np.conj(ek) * sk * bi
        B[:, i] = ek * sk * b0 + ck * bi
    gz_full = 1j * np.diag(B) * np.exp(1j * z)
    gz = np.array([gz_full[k] for k in range(d) if k != hub])
    af = abs(f)
    cost = max(2 * d - 2 * af, 0.0)
    if af == 0:
        return cost, np.zeros_like(x)
    w = np.conj(f) / af
    grad = -2 * np.real(w * np.concatenate([gt, gp, gz]))
    return float(cost), grad


@dataclass
class OptimizeResult:
    steps: list[GivensStep]
    z: np.ndarray
    cost: float
    converged: bool
    restarts: int = 0

    def circuit(self, dim: int, hub: int = 0, name: str = "") -> StarCircuit:
        return StarCircuit(dim, (Frame(tuple(self.z)),) + tuple(self.steps), hub, name)


def optimize_continuous(
    ops: Sequence[Op],
    target: np.ndarray,
    hub: int = 0,
    tol: float = 1e-12,
    restarts: int = 5,
    seed: int = 0,
    maxiter: int = 2000,
) -> OptimizeResult:
    """Box-constrained L-BFGS-B over all angles, phases and the leading frame.

    Stops early once the aligned cost is below ``tol``; otherwise retries from up to
    ``restarts`` randomly perturbed starting points and keeps the best result.
    """
    T = np.asarray(target, dtype=complex)
    d = T.shape[0]
    steps, z0 = canonical_form(ops, d, hub)
    if not steps:
        raise ConfigError("need at least one step to optimise")
    leaves = [s.i for s in steps]
    x0 = np.concatenate([
        np.mod([s.theta for s in steps], TWO_PI),
        np.mod([s.phi for s in steps], TWO_PI),
        np.mod([z0[k] - z0[hub] for k in range(d) if k != hub], TWO_PI),
    ])
    bounds = [(0.0, TWO_PI)] * x0.size
    rng = np.random.default_rng(seed)

    def run(start: np.ndarray):
        return minimize(cost_and_grad, start, args=(leaves, T, hub), jac=True, method="L-BFGS-B",
                        bounds=bounds, options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-12})

    best_x, best_c = x0, cost_and_grad(x0, leaves, T, hub)[0]
    used = 0
    if best_c > tol:
        res = run(x0)
        if res.fun < best_c:
            best_x, best_c = res.x, float(res.fun)
        while best_c > tol and used < restarts:
            used += 1
            start = np.clip(best_x + rng.normal(0.0, 0.5, size=x0.size), 0.0, TWO_PI)
            res = run(start)
            if res.fun < best_c:
                best_x, best_c = res.x, float(res.fun)
    theta, phi, z = _unpack(best_x, leaves, d, hub)
    out = [GivensStep(i, float(t), float(p)) for i, t, p in zip(leaves, theta, phi)]
    return OptimizeResult(out, z, float(best_c), best_c <= tol, used)


def eliminate_pulses(
    ops: Sequence[Op],
    target: np.ndarray,
    eps: float = 1e-3,
    hub: int = 0,
    restarts: int = 5,
    seed: int = 0,
) -> OptimizeResult:
    """Greedy deletion: drop step m, re-optimise, keep the deletion if cost < eps.

    The scan restarts from the first step after every accepted deletion and ends
    when no single deletion stays below eps.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    T = np.asarray(target, dtype=complex)
    d = T.shape[0]
    steps, z = canonical_form(ops, d, hub)
    current = OptimizeResult(steps, z, aligned_cost(ops_unitary((Frame(tuple(z)),) + tuple(steps), d, hub), T), True)
    changed = True
    while changed and len(current.steps) > 1:
        changed = False
        for m in range(len(current.steps)):
            trial = [Frame(tuple(current.z))] + current.steps[:m] + current.steps[m + 1:]
            res = optimize_continuous(trial, T, hub, tol=eps * 1e-3, restarts=restarts, seed=seed + m)
            if res.cost < eps:
                current = res
                changed = True
                break
    return current


@dataclass
class CompileReport:
    initial_count: int
    fused_count: int
    final_count: int
    residual: float
    cost: float
    stage_seconds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "initial_count": self.initial_count,
            "fused_count": self.fused_count,
            "final_count": self.final_count,
            "residual_frobenius": self.residual,
            "cost": self.cost,
            "stage_seconds": dict(self.stage_seconds),
        }


def compile_unitary(
    U: np.ndarray,
    order: Sequence[int] | None = None,
    eps: float = 1e-3,
    seed: int = 0,
    compress: bool = True,
    restarts: int = 5,
) -> tuple[StarCircuit, CompileReport]:
    """Decompose, fuse and (optionally) compress a unitary into a star circuit."""
    U = _check_unitary(U)
    d = U.shape[0]
    times = {}
    t0 = time.perf_counter()
    circ = decomposition_circuit(U, order)
    times["decompose"] = time.perf_counter() - t0
    n0 = circ.n_pulses
    resid0 = frobenius_residual(circ.unitary(), U)
    if resid0 > 1e-10:
        raise NumericalError(f"decomposition residual {resid0:.2e} exceeds 1e-10")
    t0 = time.perf_counter()
    fused = StarCircuit(d, tuple(fuse_adjacent(circ.ops)))
    times["fuse"] = time.perf_counter() - t0
    n1 = fused.n_pulses
    final = fused
    if compress and n1 > 1:
        t0 = time.perf_counter()
        res = eliminate_pulses(fused.ops, U, eps, restarts=restarts, seed=seed)
        times["eliminate"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        polished = optimize_continuous([Frame(tuple(res.z))] + res.steps, U, tol=1e-14, restarts=0, seed=seed)
        if polished.cost <= res.cost:
            res = polished
        times["polish"] = time.perf_counter() - t0
        final = res.circuit(d)
        if frobenius_residual(final.unitary(), U) ** 2 > max(aligned_cost(fused.unitary(), U), eps):
            final = fused
    Uf = final.unitary()
    report = CompileReport(n0, n1, final.n_pulses, frobenius_residual(Uf, U), aligned_cost(Uf, U), times)
    return final, report


# ---------------------------------------------------------------------------
# Named circuits


def hadamard(n: int) -> np.ndarray:
    h = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    out = np.eye(1)
    for _ in range(n):
        out = np.kron(out, h)
    return out


def _ry(i: int, angle: float) -> GivensStep:
    # R_y(angle) between hub and leaf i is G(angle / 2)
    return GivensStep(i, angle / 2)


_T1 = 2 * np.arcsin(np.sqrt(1 / 3))
_T2 = 2 * np.arcsin(np.sqrt(2 / 3))
_PI = np.pi

HADAMARD2_REFERENCE = [(3, -_PI / 2), (1, _T1), (2, -4 * _PI / 3), (1, _PI + _T2), (3, _PI / 2)]
# the last entry carries +3pi/2; with -3pi/2 the list realises H(x)3 followed by a
# signed swap of |000> and |110>
HADAMARD3_REFERENCE = [
    (6, 3 * _PI / 2), (1, _PI), (3, _PI), (5, 3 * _PI / 2), (4, _T1), (2, 2 * _PI / 3),
    (4, _PI + _T1), (5, _PI), (7, -_PI), (3, -_PI / 2),
    (1, _PI / 2), (2, _PI / 2), (4, _PI), (7, -3 * _PI / 2), (1, _PI), (5, 3 * _PI / 2),
    (3, -_PI), (6, -3 * _PI / 2), (7, 3 * _PI / 2), (1, _PI), (6, 3 * _PI / 2),
]


def _with_sign_frames(steps: Sequence[GivensStep], target: np.ndarray, name: str) -> StarCircuit:
    """Wrap real steps in free frames so that the circuit equals ``target`` exactly."""
    d = target.shape[0]
    U = ops_unitary(steps, d)
    # U = diag(l) target diag(r) with unit-modulus l, r; read off row and column 0
    ratio = np.divide(U, target, out=np.zeros_like(U), where=np.abs(target) > 1e-12)
    r = ratio[0]
    l = ratio[:, 0] / ratio[0, 0]
    if np.max(np.abs(np.outer(l, r) * target - U)) > 1e-9:
        raise NumericalError(f"{name} reference is not frame-equivalent to its target")
    ops = (Frame(tuple(-np.angle(r))),) + tuple(steps) + (Frame(tuple(-np.angle(l))),)
    circ = StarCircuit(d, ops, 0, name)
    if frobenius_residual(circ.unitary(), target) > 1e-9:
        raise NumericalError(f"{name} frame correction failed")
    return circ


def superposition_angles(d: int) -> list[float]:
    """Bloch angles 2 arcsin(sqrt(1/(d-j+1))), j = 1..d-1."""
    return [2 * np.arcsin(np.sqrt(1.0 / (d - j + 1))) for j in range(1, d)]


def superposition_circuit(d: int) -> StarCircuit:
    """d-1 rotations taking |0> to the uniform superposition with equal signs."""
    if d < 2:
        raise ConfigError("dimension must be >= 2")
    steps = [_ry(d - j, a) for j, a in zip(range(1, d), superposition_angles(d))]
    # each rotation leaves -sin on its leaf; a pi frame on the leaves restores + signs
    ops = tuple(steps) + (Frame(tuple([0.0] + [np.pi] * (d - 1))),)
    return StarCircuit(d, ops, 0, f"superposition({d})")


def hadamard_circuit(n: int) -> StarCircuit:
    if n == 2:
        return _with_sign_frames([_ry(i, a) for i, a in HADAMARD2_REFERENCE], hadamard(2), "H2")
    if n == 3:
        return _with_sign_frames([_ry(i, a) for i, a in HADAMARD3_REFERENCE], hadamard(3), "H3")
    raise ConfigError("reference Hadamard sequences exist for n = 2 and 3")


def bv_oracle_phases(n: int, key: int) -> tuple[float, ...]:
    return tuple(np.pi * (bin(x & key).count("1") % 2) for x in range(2**n))


def bv_circuit(n: int, key: int, fast: bool | None = None) -> StarCircuit:
    """Bernstein-Vazirani: prepare, apply the phase oracle as a frame, undo H(x)n."""
    if not 0 <= key < 2**n:
        raise ConfigError(f"key must lie in [0, {2**n - 1}]")
    fast = (n >= 3) if fast is None else fast
    H = hadamard_circuit(n)
    prep = superposition_circuit(2**n) if fast else H
    oracle = StarCircuit(2**n, (Frame(bv_oracle_phases(n, key)),), 0, "oracle")
    return StarCircuit(2**n, prep.ops + oracle.ops + H.adjoint().ops, 0, f"BV({n},{key})")


def cccnot_circuit() -> StarCircuit:
    """Single pi swap of |1110> and |1111>, with |1110> as the star hub."""
    return StarCircuit(16, (GivensStep(15, np.pi / 2), Frame(tuple([0.0] * 14 + [0.0, np.pi]))), 14, "CCCNOT")


def build_named_circuit(name: str) -> StarCircuit:
    """Names: H2, H3, superposition(d), CCCNOT, BV(n,key)."""
    key = name.replace(" ", "")
    if key in ("H2", "H⊗2"):
        return hadamard_circuit(2)
    if key in ("H3", "H⊗3"):
        return hadamard_circuit(3)
    if key == "CCCNOT":
        return cccnot_circuit()
    if key.startswith("superposition(") and key.endswith(")"):
        return superposition_circuit(int(key[14:-1]))
    if key.startswith("BV(") and key.endswith(")"):
        n, k = key[3:-1].split(",")
        return bv_circuit(int(n), int(k, 0) if not k.isdigit() else int(k))
    raise ConfigError(f"unknown circuit name {name!r}")


# ---------------------------------------------------------------------------
# Physical mapping


def shorten_rotations(circ: StarCircuit) -> StarCircuit:
    """Bring every rotation angle into [-pi/2, pi/2].

    G(theta) = G(theta - pi) P with P = -1 on the (hub, leaf) pair; P commutes with the
    step and is absorbed into a free frame.
    """
    ops: list[Op] = []
    for o in circ.ops:
        if isinstance(o, GivensStep):
            th = _wrap(o.theta)
            if abs(th) > np.pi / 2:
                z = [0.0] * circ.dim
                z[circ.hub] = z[o.i] = np.pi
                ops += [GivensStep(o.i, th - np.sign(th) * np.pi, o.phi), Frame(tuple(z))]
                continue
            o = GivensStep(o.i, th, o.phi)
        ops.append(o)
    return StarCircuit(circ.dim, tuple(ops), circ.hub, circ.name)


def to_pulse_sequence(
    circ: StarCircuit,
    transitions: Mapping[int, TransitionSpec] | None = None,
    gap_us: float = 0.0,
    labels: Sequence[str] = (),
    default_pi_time: float = 30.0,
) -> PulseSequence:
    """Map a star circuit onto pulses.

    ``transitions`` maps each leaf index to the physical link between hub and leaf.  If
    omitted, generic field-insensitive links with ``default_pi_time`` are used, the hub
    playing the lower level.
    """
    d, hub = circ.dim, circ.hub
    leaves = sorted({s.i for s in circ.steps})
    if transitions is None:
        transitions = {i: TransitionSpec(f"{hub}-{i}", hub, i, 0.0, default_pi_time) for i in leaves}
    specs = {}
    for i in leaves:
        if i not in transitions:
            raise ConfigError(f"no transition for leaf {i}")
        t = transitions[i]
        if {t.lower, t.upper} != {hub, i}:
            raise ConfigError(f"transition {t.id} does not join hub {hub} and leaf {i}")
        specs[t.id] = t
    ops: list = []
    for o in shorten_rotations(circ).ops:
        if isinstance(o, Frame):
            ops.append(VirtualZ(tuple(o.z)))
            continue
        t = transitions[o.i]
        # G(theta, phi) on (lower, upper) is a pulse of angle 2 theta and phase phi + pi/2;
        # with the hub on the upper level the step reads G(theta, pi - phi) on (lower, upper)
        phi = o.phi if t.lower == hub else np.pi - o.phi
        ops.append((t.id, 2 * o.theta, phi + np.pi / 2))
    meta = {"circuit": circ.name, "hub": hub}
    return PulseSequence.build(d, specs, ops, gap_us, labels, meta)
