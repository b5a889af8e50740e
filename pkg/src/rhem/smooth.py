"""Thin-plate regression spline bases, tensor-product smooths and their penalties.

Effect kinds for a covariate ``x`` observed at (transformed) time ``t``:

* ``LE``    -- ``beta * x``
* ``TVE``   -- ``alpha(t) * x`` with ``alpha`` a spline in time
* ``NLE``   -- ``f(x)`` with a sum-to-zero constraint over the design rows
* ``TVNLE`` -- ``f(t, x)`` tensor product of a time and a covariate marginal;
  the covariate marginal is sum-to-zero constrained so no pure function of
  time is representable (it would cancel within every stratum anyway).
"""

from __future__ import annotations

import enum
import re
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

DEFAULT_DIM = 10


class EffectKind(enum.Enum):
    LE = "le"
    TVE = "tve"
    NLE = "nle"
    TVNLE = "tvnle"


@dataclass(frozen=True)
class SmoothSpec:
    covariate: str
    kind: EffectKind = EffectKind.LE
    L: int = DEFAULT_DIM
    Q: int = DEFAULT_DIM

    def __post_init__(self):
        if self.kind in (EffectKind.TVE, EffectKind.TVNLE) and self.L < 3:
            raise ValueError("time basis needs L >= 3")
        if self.kind in (EffectKind.NLE, EffectKind.TVNLE) and self.Q < 3:
            raise ValueError("covariate basis needs Q >= 3")

    @classmethod
    def parse(cls, line: str) -> "SmoothSpec":
        """Parse ``covariate = tvnle(L=10,Q=10)``-style lines."""
        m = re.fullmatch(r"\s*([^=\s]+)\s*=\s*(\w+)\s*(?:\((.*)\))?\s*", line)
        if not m:
            raise ValueError(f"cannot parse effect spec {line!r}")
        name, kind, args = m.group(1), EffectKind(m.group(2).lower()), m.group(3)
        kw = {}
        if args and args.strip():
            for part in args.split(","):
                key, val = (s.strip() for s in part.split("="))
                if key not in ("L", "Q"):
                    raise ValueError(f"unknown basis argument {key!r}")
                kw[key] = int(val)
        return cls(name, kind, **kw)

    def to_line(self) -> str:
        if self.kind is EffectKind.LE:
            return f"{self.covariate} = le"
        if self.kind is EffectKind.TVE:
            return f"{self.covariate} = tve(L={self.L})"
        if self.kind is EffectKind.NLE:
            return f"{self.covariate} = nle(Q={self.Q})"
        return f"{self.covariate} = tvnle(L={self.L},Q={self.Q})"


def parse_spec_file(text: str) -> list[SmoothSpec]:
    specs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            specs.append(SmoothSpec.parse(line))
    return specs


def _tps_kernel(r):
    return np.abs(r) ** 3 / 12.0


class ThinPlateBasis:
    """One-dimensional thin-plate regression spline (second-derivative penalty).

    Columns are ``dim - 2`` penalized radial directions followed by the
    unpenalized null space ``{1, z}`` where ``z`` is the input rescaled to the
    knot range.
    """

    def __init__(self, knots: np.ndarray, radial: np.ndarray, lo: float, width: float, penalty: np.ndarray):
        self.knots = knots
        self.radial = radial
        self.lo = lo
        self.width = width
        self.penalty = penalty

    @property
    def dim(self) -> int:
        return self.penalty.shape[0]

    @classmethod
    def fit(cls, values, dim: int = DEFAULT_DIM) -> "ThinPlateBasis":
        values = np.asarray(values, dtype=float)
        uniq = np.unique(values)
        if len(uniq) < dim:
            warnings.warn(f"only {len(uniq)} distinct values; basis dimension reduced from {dim}", stacklevel=2)
            dim = len(uniq)
        if dim < 3:
            raise ValueError("need at least 3 distinct values for a thin-plate basis")
        cap = max(4 * dim, 200)
        if len(uniq) > cap:
            knots = np.unique(np.quantile(values, np.linspace(0, 1, cap), method="inverted_cdf"))
            if len(knots) < dim:
                knots = uniq[np.round(np.linspace(0, len(uniq) - 1, cap)).astype(int)]
        else:
            knots = uniq
        lo, width = float(knots[0]), float(knots[-1] - knots[0])
        z = (knots - lo) / width
        E = _tps_kernel(z[:, None] - z[None, :])
        T = np.column_stack([np.ones_like(z), z])
        w, U = linalg.eigh(E)
        top = np.argsort(-np.abs(w), kind="stable")[:dim]
        top.sort()
        Uk, Dk = U[:, top], w[top]
        Qc, _ = linalg.qr(Uk.T @ T)  # dim x dim
        Z = Qc[:, 2:]
        radial = Uk @ Z
        Sw = Z.T @ (Dk[:, None] * Z)
        Sw = 0.5 * (Sw + Sw.T)
        S = np.zeros((dim, dim))
        S[: dim - 2, : dim - 2] = Sw
        return cls(z, radial, lo, width, S)

    def evaluate(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.lo) / self.width
        K = _tps_kernel(z[:, None] - self.knots[None, :])
        return np.column_stack([K @ self.radial, np.ones_like(z), z])

    def state(self) -> dict:
        return {"knots": self.knots, "radial": self.radial, "penalty": self.penalty,
                "range": np.array([self.lo, self.width])}

    @classmethod
    def from_state(cls, st: Mapping[str, np.ndarray]) -> "ThinPlateBasis":
        lo, width = st["range"]
        return cls(np.asarray(st["knots"]), np.asarray(st["radial"]), float(lo), float(width),
                   np.asarray(st["penalty"]))


def sum_to_zero(X: np.ndarray) -> np.ndarray:
    """Orthonormal reparameterization ``Z`` with ``1' X Z = 0`` (drops one direction)."""
    c = X.sum(axis=0)[:, None]
    Qf, _ = linalg.qr(c)
    return Qf[:, 1:]


def _scale_penalty(S: np.ndarray, X: np.ndarray) -> float:
    """Multiplier bringing ``S`` to the scale of the design (max-row-sum norms)."""
    xn = np.max(np.sum(np.abs(X), axis=1)) ** 2 if X.size else 1.0
    sn = np.max(np.sum(np.abs(S), axis=1))
    return float(xn / sn) if sn > 0 else 1.0


def row_kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


class Block:
    """A realized smooth term: design evaluation rule plus local penalties."""

    spec: SmoothSpec
    penalties: list[np.ndarray]
    penalty_labels: list[str]

    @property
    def n_coef(self) -> int:
        raise NotImplementedError

    def design(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> dict:
        raise NotImplementedError


class LinearBlock(Block):
    def __init__(self, spec: SmoothSpec):
        self.spec = spec
        self.penalties = []
        self.penalty_labels = []

    @property
    def n_coef(self):
        return 1

    def design(self, t, x):
        return np.asarray(x, dtype=float)[:, None]

    def state(self):
        return {}


class TVEBlock(Block):
    def __init__(self, spec, time_basis: ThinPlateBasis, scale: float):
        self.spec = spec
        self.time_basis = time_basis
        self.scale = scale
        self.penalties = [time_basis.penalty * scale]
        self.penalty_labels = [f"{spec.covariate}:time"]

    @property
    def n_coef(self):
        return self.time_basis.dim

    def design(self, t, x):
        return self.time_basis.evaluate(t) * np.asarray(x, dtype=float)[:, None]

    def state(self):
        st = {f"time.{k}": v for k, v in self.time_basis.state().items()}
        st["scale"] = np.array([self.scale])
        return st


class NLEBlock(Block):
    def __init__(self, spec, cov_basis: ThinPlateBasis, Z: np.ndarray, scale: float):
        self.spec = spec
        self.cov_basis = cov_basis
        self.Z = Z
        self.scale = scale
        self.penalties = [Z.T @ cov_basis.penalty @ Z * scale]
        self.penalty_labels = [f"{spec.covariate}:x"]

    @property
    def n_coef(self):
        return self.Z.shape[1]

    def design(self, t, x):
        return self.cov_basis.evaluate(x) @ self.Z

    def state(self):
        st = {f"cov.{k}": v for k, v in self.cov_basis.state().items()}
        st["Z"] = self.Z
        st["scale"] = np.array([self.scale])
        return st


class TVNLEBlock(Block):
    def __init__(self, spec, time_basis: ThinPlateBasis, cov_basis: ThinPlateBasis, Z: np.ndarray,
                 scales: tuple[float, float]):
        self.spec = spec
        self.time_basis = time_basis
        self.cov_basis = cov_basis
        self.Z = Z
        self.scales = scales
        L, q = time_basis.dim, Z.shape[1]
        Sx = Z.T @ cov_basis.penalty @ Z
        self.penalties = [np.kron(time_basis.penalty, np.eye(q)) * scales[0],
                          np.kron(np.eye(L), Sx) * scales[1]]
        self.penalty_labels = [f"{spec.covariate}:time", f"{spec.covariate}:x"]

    @property
    def n_coef(self):
        return self.time_basis.dim * self.Z.shape[1]

    def design(self, t, x):
        return row_kron(self.time_basis.evaluate(t), self.cov_basis.evaluate(x) @ self.Z)

    def state(self):
        st = {f"time.{k}": v for k, v in self.time_basis.state().items()}
        st.update({f"cov.{k}": v for k, v in self.cov_basis.state().items()})
        st["Z"] = self.Z
        st["scale"] = np.array(self.scales)
        return st


def _sub(st, prefix):
    return {k[len(prefix):]: v for k, v in st.items() if k.startswith(prefix)}


def block_from_state(spec: SmoothSpec, st: Mapping[str, np.ndarray]) -> Block:
    if spec.kind is EffectKind.LE:
        return LinearBlock(spec)
    if spec.kind is EffectKind.TVE:
        return TVEBlock(spec, ThinPlateBasis.from_state(_sub(st, "time.")), float(st["scale"][0]))
    if spec.kind is EffectKind.NLE:
        return NLEBlock(spec, ThinPlateBasis.from_state(_sub(st, "cov.")), np.asarray(st["Z"]),
                        float(st["scale"][0]))
    return TVNLEBlock(spec, ThinPlateBasis.from_state(_sub(st, "time.")),
                      ThinPlateBasis.from_state(_sub(st, "cov.")), np.asarray(st["Z"]),
                      (float(st["scale"][0]), float(st["scale"][1])))


def build_block(spec: SmoothSpec, t: np.ndarray, x: np.ndarray) -> Block:
    """Construct the block for ``spec`` from the design rows' (t, x) values."""
    if spec.kind is EffectKind.LE:
        return LinearBlock(spec)
    if spec.kind is EffectKind.TVE:
        tb = ThinPlateBasis.fit(t, spec.L)
        Xd = tb.evaluate(t) * x[:, None]
        return TVEBlock(spec, tb, _scale_penalty(tb.penalty, Xd))
    cb = ThinPlateBasis.fit(x, spec.Q)
    Bx = cb.evaluate(x)
    Z = sum_to_zero(Bx)
    if spec.kind is EffectKind.NLE:
        Xd = Bx @ Z
        return NLEBlock(spec, cb, Z, _scale_penalty(Z.T @ cb.penalty @ Z, Xd))
    tb = ThinPlateBasis.fit(t, spec.L)
    Xd = row_kron(tb.evaluate(t), Bx @ Z)
    q = Z.shape[1]
    st = _scale_penalty(np.kron(tb.penalty, np.eye(q)), Xd)
    sx = _scale_penalty(np.kron(np.eye(tb.dim), Z.T @ cb.penalty @ Z), Xd)
    return TVNLEBlock(spec, tb, cb, Z, (st, sx))


@dataclass
class PenaltyBlock:
    start: int
    stop: int
    S: np.ndarray
    label: str
    block: int


@dataclass
class BasisRealization:
    blocks: list[Block]
    X: np.ndarray
    offsets: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.offsets:
            self.offsets = list(np.cumsum([0] + [b.n_coef for b in self.blocks]))

    @property
    def n_coef(self) -> int:
        return int(self.offsets[-1])

    @property
    def specs(self) -> list[SmoothSpec]:
        return [b.spec for b in self.blocks]

    @property
    def penalties(self) -> list[PenaltyBlock]:
        out = []
        for k, b in enumerate(self.blocks):
            for S, lab in zip(b.penalties, b.penalty_labels):
                out.append(PenaltyBlock(self.offsets[k], self.offsets[k + 1], S, lab, k))
        return out

    def block_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def block_index(self, covariate: str) -> int:
        for k, b in enumerate(self.blocks):
            if b.spec.covariate == covariate:
                return k
        raise KeyError(f"no smooth block for covariate {covariate!r}")

    def coef_labels(self) -> list[tuple[str, str, int]]:
        return [(b.spec.covariate, b.spec.kind.value, i) for b in self.blocks for i in range(b.n_coef)]

    def design_for(self, covariates: Mapping[str, np.ndarray], time: np.ndarray) -> np.ndarray:
        return np.column_stack([b.design(time, np.asarray(covariates[b.spec.covariate], dtype=float))
                                for b in self.blocks])


def realize(specs: Sequence[SmoothSpec], covariates: Mapping[str, np.ndarray], time) -> BasisRealization:
    """Build every block from the design rows and stack their columns."""
    seen = set()
    for s in specs:
        if s.covariate in seen:
            raise ValueError(f"duplicate effect spec for {s.covariate!r}")
        seen.add(s.covariate)
    time = np.asarray(time, dtype=float)
    blocks = []
    for s in specs:
        if s.covariate not in covariates:
            raise KeyError(f"design has no column {s.covariate!r}")
        blocks.append(build_block(s, time, np.asarray(covariates[s.covariate], dtype=float)))
    X = np.column_stack([b.design(time, np.asarray(covariates[b.spec.covariate], dtype=float))
                         for b in blocks]) if blocks else np.zeros((len(time), 0))
    return BasisRealization(blocks, X)
