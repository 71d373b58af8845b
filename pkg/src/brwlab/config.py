"""Validated experiment configurations (JSON in, pydantic models out)."""

from __future__ import annotations

from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .dynamics import RateProfile
from .kernel import Kernel, blz_kernel, make_stencil_kernel, nearest_neighbor_kernel

U64 = Annotated[int, Field(ge=0, lt=2**64)]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BLZKernel(Strict):
    kind: Literal["blz"] = "blz"
    d: int = Field(1, ge=1, le=4)
    alpha: float = Field(0.5, ge=0)
    beta: float = Field(0.5, ge=0)

    def build(self) -> Kernel:
        return blz_kernel(self.d, self.alpha, self.beta)


class NNKernel(Strict):
    kind: Literal["nn"]
    d: int = Field(1, ge=1, le=4)
    rate: float = Field(1.0, gt=0)

    def build(self) -> Kernel:
        return nearest_neighbor_kernel(self.d, self.rate)


class StencilEntry(Strict):
    offset: list[int]
    rate: float = Field(ge=0)


class StencilKernel(Strict):
    kind: Literal["stencil"]
    d: int = Field(ge=1, le=4)
    entries: list[StencilEntry] = Field(min_length=1)

    def build(self) -> Kernel:
        return make_stencil_kernel(self.d, {tuple(e.offset): e.rate for e in self.entries})


KernelSpec = Annotated[Union[BLZKernel, NNKernel, StencilKernel], Field(discriminator="kind")]


class BoxGraph(Strict):
    kind: Literal["box"] = "box"
    m: int = Field(10, ge=0)
    center: list[int] | None = None


class GiantGraph(Strict):
    kind: Literal["giant"]
    L: int = Field(ge=1)
    p: float = Field(ge=0, le=1)
    percolation_seed: U64 | None = None


GraphSpec = Annotated[Union[BoxGraph, GiantGraph], Field(discriminator="kind")]


class ProfileSpec(Strict):
    kind: Literal["brw", "ktype", "logistic", "table"] = "brw"
    lam: float | None = Field(None, ge=0)
    k: int | None = Field(None, ge=1)
    N: float | None = Field(None, gt=0)
    values: list[float] | None = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = {"brw": ["lam"], "ktype": ["lam", "k"], "logistic": ["lam", "N"], "table": ["values"]}
        missing = [f for f in need[self.kind] if getattr(self, f) is None]
        if missing:
            raise ValueError(f"profile kind {self.kind!r} needs {', '.join(missing)}")
        return self

    def build(self, lam: float | None = None) -> RateProfile:
        lam = self.lam if lam is None else lam
        if self.kind == "brw":
            return RateProfile.brw(lam)
        if self.kind == "ktype":
            return RateProfile.ktype(lam, self.k)
        if self.kind == "logistic":
            return RateProfile.logistic(lam, self.N)
        return RateProfile.table(self.values)


class FamilySpec(Strict):
    """A profile family indexed by ``lam``."""

    kind: Literal["brw", "ktype", "logistic"] = "brw"
    k: int | None = Field(None, ge=1)
    N: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "ktype" and self.k is None:
            raise ValueError("family kind 'ktype' needs k")
        if self.kind == "logistic" and self.N is None:
            raise ValueError("family kind 'logistic' needs N")
        return self

    def build(self, lam: float) -> RateProfile:
        return ProfileSpec(kind=self.kind, lam=lam, k=self.k, N=self.N).build()


class Base(Strict):
    seed: U64 = 0
    out: str | None = None


def _increasing(v, name):
    if any(b <= a for a, b in zip(v, v[1:])):
        raise ValueError(f"{name} must be strictly increasing")
    return v


class SpectralSweep(Base):
    experiment: Literal["spectral-sweep"] = "spectral-sweep"
    kernel: KernelSpec = BLZKernel()
    m_list: list[int] = Field(default_factory=lambda: list(range(1, 9)), min_length=1)
    n_max: int = Field(20, ge=2)

    @field_validator("m_list")
    @classmethod
    def _m(cls, v):
        if min(v) < 1:
            raise ValueError("box radii must be >= 1")
        return _increasing(v, "m_list")


class Survive(Base):
    experiment: Literal["survive"] = "survive"
    kernel: KernelSpec = BLZKernel()
    graph: GraphSpec = BoxGraph()
    profile: ProfileSpec = ProfileSpec(kind="brw", lam=1.5)
    T: float = Field(20.0, gt=0)
    W: float | None = Field(None, gt=0)
    trials: int = Field(100, ge=1)
    max_population: int = Field(10**6, ge=1)


class Bisect(Base):
    experiment: Literal["bisect"] = "bisect"
    kernel: KernelSpec = BLZKernel()
    graph: GraphSpec = BoxGraph()
    family: FamilySpec = FamilySpec()
    lam_range: tuple[float, float] = (0.5, 3.0)
    tol: float = Field(0.05, gt=0)
    theta: float = Field(0.05, gt=0, lt=1)
    trials: int = Field(100, ge=1)
    max_doublings: int = Field(8, ge=0)
    T: float = Field(20.0, gt=0)
    W: float | None = Field(None, gt=0)
    max_population: int = Field(10**6, ge=1)


class KSweep(Base):
    experiment: Literal["k-sweep"] = "k-sweep"
    kernel: KernelSpec = BLZKernel()
    graph: GraphSpec = BoxGraph()
    lam: float = Field(1.5, ge=0)
    k_list: list[int] = Field(default_factory=lambda: [1, 2, 4, 8], min_length=1)
    T: float = Field(20.0, gt=0)
    W: float | None = Field(None, gt=0)
    trials: int = Field(100, ge=1)
    max_population: int = Field(10**6, ge=1)

    @field_validator("k_list")
    @classmethod
    def _k(cls, v):
        if min(v) < 1:
            raise ValueError("k must be >= 1")
        return _increasing(v, "k_list")


class PercGeom(Base):
    experiment: Literal["perc-geom"] = "perc-geom"
    d: int = Field(2, ge=1, le=4)
    L: int = Field(50, ge=1)
    p_list: list[float] = Field(default_factory=lambda: [0.7], min_length=1)
    samples: int = Field(10, ge=1)
    m: int = Field(1, ge=0)
    M: int | None = Field(None, ge=1)
    min_chain: int = Field(10, ge=2)

    @field_validator("p_list")
    @classmethod
    def _p(cls, v):
        if any(not 0 <= p <= 1 for p in v):
            raise ValueError("every p must lie in [0, 1]")
        return v


class BlockEvent(Base):
    experiment: Literal["block-event"] = "block-event"
    kernel: KernelSpec = BLZKernel()
    x: list[int] | None = None
    m: int = Field(5, ge=0)
    gamma: list[list[int]] = Field(default_factory=lambda: [[1]] * 5)
    gamma_prime: list[list[int]] = Field(default_factory=lambda: [[-1]] * 5)
    ell_list: list[int] = Field(default_factory=lambda: [1, 5, 25], min_length=1)
    lam: float = Field(2.0, ge=0)
    T: float = Field(15.0, gt=0)
    trials: int = Field(100, ge=1)
    max_population: int = Field(10**5, ge=1)


class OrientedPerc(Base):
    experiment: Literal["oriented-perc"] = "oriented-perc"
    law: Literal["joint", "independent"] = "joint"
    eps_list: list[float] = Field(default_factory=lambda: [0.0, 0.05, 1.0], min_length=1)
    rows: int = Field(200, ge=1)
    cols: int | None = Field(None, ge=1)
    trials: int = Field(100, ge=1)

    @field_validator("eps_list")
    @classmethod
    def _eps(cls, v):
        if any(not 0 <= e <= 1 for e in v):
            raise ValueError("every eps must lie in [0, 1]")
        return v


class OracleCheck(Base):
    experiment: Literal["oracle-check"] = "oracle-check"
    kernel: KernelSpec = NNKernel(kind="nn")
    graph: GraphSpec = BoxGraph(m=1)
    lam_list: list[float] = Field(default_factory=lambda: [0.5, 1.2], min_length=1)
    t_list: list[float] = Field(default_factory=lambda: [1.0, 2.0], min_length=1)
    trials: int = Field(100_000, ge=1)
    low_power_trials: int = Field(1000, ge=1)
    tol: float = Field(1e-10, gt=0)


EXPERIMENTS: dict[str, type[Base]] = {
    "spectral-sweep": SpectralSweep,
    "survive": Survive,
    "bisect": Bisect,
    "k-sweep": KSweep,
    "perc-geom": PercGeom,
    "block-event": BlockEvent,
    "oriented-perc": OrientedPerc,
    "oracle-check": OracleCheck,
}


def parse_config(kind: str, data: dict) -> Base:
    """Validate ``data`` as a config for experiment ``kind`` (raises pydantic ValidationError)."""
    data = dict(data)
    if "experiment" in data and data["experiment"] != kind:
        raise ValueError(f"config is for experiment {data['experiment']!r}, not {kind!r}")
    data["experiment"] = kind
    return EXPERIMENTS[kind].model_validate(data)
