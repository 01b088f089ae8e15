"""Random reservoir circuits: gate library, family samplers, simulation, Pauli tools.

Conventions
-----------
* Qubit 0 is the leftmost tensor factor, i.e. the most significant bit of a
  basis index: ``X`` on qubit 0 maps ``|00>`` to ``|10>`` (index 0 -> 2).
* A multi-qubit gate's first target is the most significant bit of its local
  matrix index; for ``CNOT`` the targets are ``(control, target)``.
* Sampling uses Philox (counter-based) generators. Gate ``i`` of a circuit
  with seed ``s`` draws from the stream keyed by ``(s, i)``; the random gate
  ordering of the diagonal families uses the reserved stream ``(s, 2^64 - 1)``.

Text format (one circuit per file)::

    <family> <n> <depth> <seed>
    <KIND> <targets...> [: <params...>]

Parameters are printed with 17 significant digits, which round-trips doubles
exactly. ``MG`` carries 16 numbers (real and imaginary parts of ``A`` then ``B``,
row-major); ``DIAG`` carries ``2^k`` phases for ``k`` targets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FAMILIES",
    "CircuitSpec",
    "Gate",
    "apply_circuit",
    "circuit_unitary",
    "diagonal_middle",
    "haar_2x2",
    "matchgate_matrix",
    "pauli_decompose",
    "pauli_features",
    "pauli_transfer",
    "sample_circuit",
]

MAX_QUBITS = 12

_SQ2 = 1.0 / math.sqrt(2.0)
FIXED_GATES = {
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "S": np.diag([1.0, 1j]),
    "T": np.diag([1.0, np.exp(1j * math.pi / 4)]),
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
}
ARITY = {"H": 1, "X": 1, "S": 1, "T": 1, "CNOT": 2, "MG": 2}

GATE_SETS = {
    "G1": ("CNOT", "H", "X"),
    "G2": ("CNOT", "H", "S"),
    "G3": ("CNOT", "H", "T"),
    "MG": ("MG",),
}
DIAGONAL_FAMILIES = ("D2", "D3", "DN")
FAMILIES = ("G1", "G2", "G3", "MG", "D2", "D3", "DN")
# "ID" is a diagnostic no-op reservoir, not one of the seven families
ALL_FAMILIES = FAMILIES + ("ID",)

_ORDER_STREAM = 2**64 - 1


class CircuitError(ValueError):
    pass


class BudgetError(MemoryError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    params: tuple[float, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.targets)

    def matrix(self) -> np.ndarray:
        if self.kind in FIXED_GATES:
            return FIXED_GATES[self.kind]
        if self.kind == "MG":
            p = np.asarray(self.params)
            blocks = (p[0::2] + 1j * p[1::2]).reshape(2, 2, 2)
            return matchgate_matrix(blocks[0], blocks[1])
        if self.kind == "DIAG":
            return np.diag(np.exp(1j * np.asarray(self.params)))
        raise CircuitError(f"unknown gate kind {self.kind!r}")

    @property
    def is_diagonal(self) -> bool:
        return self.kind in ("DIAG", "S", "T")

    def to_line(self) -> str:
        line = " ".join([self.kind, *map(str, self.targets)])
        if self.params:
            line += " : " + " ".join(f"{x:.17g}" for x in self.params)
        return line

    @classmethod
    def from_line(cls, line: str) -> Gate:
        head, _, tail = line.partition(":")
        tokens = head.split()
        params = tuple(float(x) for x in tail.split())
        return cls(tokens[0], tuple(int(t) for t in tokens[1:]), params)


def matchgate_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``A`` acts on span{|00>, |11>}, ``B`` on span{|01>, |10>}."""
    g = np.zeros((4, 4), dtype=complex)
    g[np.ix_([0, 3], [0, 3])] = a
    g[np.ix_([1, 2], [1, 2])] = b
    return g


def haar_2x2(rng: np.random.Generator) -> np.ndarray:
    """Haar-random element of U(2): QR of a complex Ginibre matrix, phases of R fixed."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))[None, :]


@dataclass(frozen=True)
class CircuitSpec:
    n: int
    family: str
    gates: tuple[Gate, ...]
    seed: int = 0
    depth: int = 0

    def to_text(self) -> str:
        lines = [f"{self.family} {self.n} {self.depth} {self.seed}"]
        lines += [g.to_line() for g in self.gates]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> CircuitSpec:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        family, n, depth, seed = lines[0].split()
        gates = tuple(Gate.from_line(ln) for ln in lines[1:])
        return cls(int(n), family, gates, int(seed), int(depth))


def _stream(seed: int, index: int) -> np.random.Generator:
    key = (seed % 2**64) * 2**64 + index
    return np.random.Generator(np.random.Philox(key=key))


def _sample_gate(kind: str, n: int, rng: np.random.Generator, nearest_neighbor: bool) -> Gate:
    if ARITY[kind] == 1:
        return Gate(kind, (int(rng.integers(n)),))
    if kind == "MG" and nearest_neighbor:
        i = int(rng.integers(n - 1))
        pair = (i, i + 1)
    else:
        c = int(rng.integers(n))
        t = int(rng.integers(n - 1))
        pair = (c, t + (t >= c))
    if kind == "CNOT":
        return Gate(kind, pair)
    a, b = haar_2x2(rng), haar_2x2(rng)
    b = b * np.sqrt(np.linalg.det(a) / np.linalg.det(b))
    z = np.concatenate([a.ravel(), b.ravel()])
    params = np.column_stack([z.real, z.imag]).ravel()
    return Gate("MG", pair, tuple(float(x) for x in params))


def sample_circuit(
    family: str, n: int, depth: int = 40, seed: int = 0, nearest_neighbor: bool = False
) -> CircuitSpec:
    """Draw a random circuit from one of the reservoir families.

    ``G1``/``G2``/``G3``/``MG`` get ``depth`` gates, each with a uniformly chosen
    kind and uniformly chosen distinct targets. ``D2``/``D3``/``DN`` ignore
    ``depth``: a Hadamard layer, one diagonal gate with i.i.d. uniform phases per
    k-subset of qubits in random order, and a closing Hadamard layer.
    """
    if n < 2:
        raise CircuitError("circuits need at least 2 qubits")
    if family in GATE_SETS:
        if depth < 1:
            raise CircuitError("depth must be at least 1")
        kinds = GATE_SETS[family]
        gates = []
        for i in range(depth):
            rng = _stream(seed, i)
            kind = kinds[int(rng.integers(len(kinds)))]
            gates.append(_sample_gate(kind, n, rng, nearest_neighbor))
        return CircuitSpec(n, family, tuple(gates), seed, depth)
    if family in DIAGONAL_FAMILIES:
        k = {"D2": 2, "D3": 3, "DN": n}[family]
        if n < k:
            raise CircuitError(f"{family} needs at least {k} qubits")
        combos = list(itertools.combinations(range(n), k))
        order = _stream(seed, _ORDER_STREAM).permutation(len(combos))
        layer = [Gate("H", (q,)) for q in range(n)]
        diag = []
        for i, c in enumerate(order):
            phases = _stream(seed, i).uniform(0.0, 2.0 * math.pi, 2**k)
            diag.append(Gate("DIAG", combos[c], tuple(float(x) for x in phases)))
        return CircuitSpec(n, family, tuple(layer + diag + layer), seed, 0)
    if family == "ID":
        return CircuitSpec(n, family, (), seed, 0)
    raise CircuitError(f"unknown family {family!r}; expected one of {ALL_FAMILIES}")


def _check_gate(g: Gate, n: int) -> None:
    if len(set(g.targets)) != len(g.targets) or any(not 0 <= t < n for t in g.targets):
        raise CircuitError(f"invalid targets {g.targets} for {n} qubits")


def _local_index(idx: np.ndarray, targets: tuple[int, ...], n: int) -> np.ndarray:
    loc = np.zeros_like(idx)
    for t in targets:
        loc = (loc << 1) | ((idx >> (n - 1 - t)) & 1)
    return loc


def _check_budget(n: int, max_qubits: int | None) -> None:
    if n > (MAX_QUBITS if max_qubits is None else max_qubits):
        raise BudgetError(f"{n} qubits exceed the dense budget")


def circuit_unitary(c: CircuitSpec, max_qubits: int | None = None) -> np.ndarray:
    """Dense ``U = G_last ... G_first`` built from index-arithmetic gate embeddings."""
    n = c.n
    _check_budget(n, max_qubits)
    dim = 2**n
    idx = np.arange(dim)
    u = np.eye(dim, dtype=complex)
    for g in c.gates:
        _check_gate(g, n)
        m = g.matrix()
        loc = _local_index(idx, g.targets, n)
        if g.is_diagonal:
            u *= np.diag(m)[loc][:, None]
            continue
        mask = 0
        for t in g.targets:
            mask |= 1 << (n - 1 - t)
        rest = idx & ~mask
        # basis index with the target bits replaced by local value j
        spread = np.array([_deposit(j, g.targets, n) for j in range(2**g.arity)])
        out = np.zeros_like(u)
        for j in range(2**g.arity):
            src = rest | spread[j]
            out += m[loc, j][:, None] * u[src]
        u = out
    return u


def _deposit(local: int, targets: tuple[int, ...], n: int) -> int:
    k = len(targets)
    out = 0
    for pos, t in enumerate(targets):
        if (local >> (k - 1 - pos)) & 1:
            out |= 1 << (n - 1 - t)
    return out


def diagonal_middle(c: CircuitSpec) -> CircuitSpec:
    """The diagonal section of a D-family circuit (Hadamard layers stripped)."""
    if c.family not in DIAGONAL_FAMILIES:
        raise CircuitError("only diagonal families have a diagonal middle section")
    return CircuitSpec(c.n, c.family, c.gates[c.n : len(c.gates) - c.n], c.seed, c.depth)


def _apply_gate(state: np.ndarray, g: Gate, n: int) -> np.ndarray:
    """Contract the gate into axes ``g.targets`` of a ``(2,)*n + batch`` tensor."""
    k = g.arity
    m = g.matrix().reshape((2,) * (2 * k))
    out = np.tensordot(m, state, axes=(list(range(k, 2 * k)), list(g.targets)))
    return np.moveaxis(out, list(range(k)), list(g.targets))


def apply_circuit(c: CircuitSpec, psi) -> np.ndarray:
    """Apply the circuit gate by gate without forming ``U``.

    ``psi`` is one state of length ``2^n`` or a batch of shape ``(m, 2^n)``.
    """
    psi = np.asarray(psi, dtype=complex)
    n = c.n
    if psi.shape[-1] != 2**n or psi.ndim > 2:
        raise CircuitError(f"state shape {psi.shape} does not match {n} qubits")
    batch = psi.shape[:-1]
    state = psi.reshape(-1, 2**n).T.reshape((2,) * n + (-1,))
    for g in c.gates:
        _check_gate(g, n)
        state = _apply_gate(state, g, n)
    return state.reshape(2**n, -1).T.reshape(batch + (2**n,))


def pauli_features(psi, n: int) -> np.ndarray:
    """``(<X_0>, <Z_0>, ..., <X_{n-1}>, <Z_{n-1}>)`` for one state or a batch."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape[-1] != 2**n:
        raise CircuitError(f"state shape {psi.shape} does not match {n} qubits")
    flat = psi.reshape(-1, 2**n)
    out = np.empty((flat.shape[0], 2 * n))
    for q in range(n):
        t = flat.reshape(-1, 2**q, 2, 2 ** (n - q - 1))
        up, down = t[:, :, 0, :], t[:, :, 1, :]
        out[:, 2 * q] = 2.0 * np.einsum("bij,bij->b", up.conj(), down).real
        out[:, 2 * q + 1] = (np.abs(up) ** 2 - np.abs(down) ** 2).sum(axis=(1, 2))
    return out.reshape(psi.shape[:-1] + (2 * n,))


_PAULI_LABELS = "IXYZ"


def pauli_decompose(m: np.ndarray, tol: float = 1e-10) -> dict[str, complex]:
    """Coefficients ``alpha_P = Tr(P M) / 2^n`` with ``|alpha_P| > tol``.

    Labels list qubit 0 first, e.g. ``"ZI"`` is ``Z`` on qubit 0. Runs in
    ``O(n 4^n)`` by transforming one qubit's row/column index pair at a time.
    """
    m = np.asarray(m, dtype=complex)
    n = int(round(math.log2(m.shape[0])))
    # axes: (r_0..r_{n-1}, c_0..c_{n-1}) -> per qubit (r_q, c_q)
    t = m.reshape((2,) * (2 * n))
    t = np.transpose(t, [ax for q in range(n) for ax in (q, n + q)]).reshape((4,) * n)
    # map (m00, m01, m10, m11) -> (I, X, Y, Z) coefficients
    w = 0.5 * np.array(
        [[1, 0, 0, 1], [0, 1, 1, 0], [0, 1j, -1j, 0], [1, 0, 0, -1]],
        dtype=complex,
    )
    for q in range(n):
        t = np.moveaxis(np.tensordot(w, t, axes=([1], [q])), 0, q)
    coeffs = {}
    for index in zip(*np.nonzero(np.abs(t) > tol)):
        coeffs["".join(_PAULI_LABELS[i] for i in index)] = complex(t[index])
    return coeffs


def pauli_transfer(c: CircuitSpec, pauli: str, qubit: int, max_qubits: int = 8) -> dict[str, float]:
    """Expansion of ``U P_qubit U^dagger`` in the n-qubit Pauli basis (sparse, real)."""
    _check_budget(c.n, max_qubits)
    if pauli not in "XYZ" or len(pauli) != 1:
        raise CircuitError(f"expected a single-qubit Pauli label, got {pauli!r}")
    label = "I" * qubit + pauli + "I" * (c.n - qubit - 1)
    p = np.array([[1.0]])
    mats = {"I": np.eye(2), "X": FIXED_GATES["X"], "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1.0, -1.0])}
    for ch in label:
        p = np.kron(p, mats[ch])
    u = circuit_unitary(c)
    conj = u @ p @ u.conj().T
    return {k: v.real for k, v in pauli_decompose(conj).items()}
