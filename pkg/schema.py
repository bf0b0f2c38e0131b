from typing import Literal

from pydantic import BaseModel, Field, field_validator

from hho2d.cases import CASES
from hho2d.configuration import HHOConfig


class RunConfig(BaseModel):
    command: Literal["run", "convergence", "flag-layer", "check"] = "run"
    mesh: list[str] = Field(default_factory=lambda: ["gen:rect:16"], min_length=1)
    k: int = Field(default=1, ge=0, le=3)
    k_list: list[int] | None = None
    eps: list[float] = Field(default_factory=lambda: [1.0], min_length=1)
    case: str = "smooth-square"
    hp: bool = False
    hp_symmetric: bool = False
    subedges: int = Field(default=30, ge=1)
    exact_arcs: bool = True
    solver: Literal["direct", "cg"] = "direct"
    cond: bool = False
    cond_method: Literal["auto", "dense", "lanczos"] = "auto"
    theta: float = Field(default=0.3, gt=0.0, lt=1.0)
    l2_field: Literal["reconstruction", "cell"] = "reconstruction"
    orthonormal: bool = False
    serial: bool = False
    workers: int = Field(default=1, ge=1)
    out: str | None = None
    plot: bool = False
    seed: int = 42
    suite: Literal["quadrature", "local", "assembly", "norms", "all"] = "all"
    mutate_sign: bool = False
    quiet: bool = False

    @field_validator("eps")
    @classmethod
    def _eps_nonnegative(cls, value):
        for eps in value:
            if not eps >= 0:
                raise ValueError(f"every eps must be >= 0, got {eps}")
        return value

    @field_validator("k_list")
    @classmethod
    def _k_range(cls, value):
        if value is not None:
            if not value:
                raise ValueError("k_list must not be empty")
            for k in value:
                if not 0 <= k <= 3:
                    raise ValueError(f"k must lie in [0, 3], got {k}")
        return value

    @field_validator("case")
    @classmethod
    def _known_case(cls, value):
        if value not in CASES:
            raise ValueError(f"unknown case {value!r}, choose from {sorted(CASES)}")
        return value

    @property
    def degrees(self):
        return self.k_list or [self.k]

    def hho_config(self, k, eps):
        return HHOConfig(
            k=k,
            eps=eps,
            hp_scaling=self.hp,
            hp_symmetric=self.hp_symmetric,
            n_subedges=self.subedges,
            exact_arcs=self.exact_arcs,
            orthonormal=self.orthonormal,
            l2_field=self.l2_field,
            solver=self.solver,
            serial=self.serial,
            workers=self.workers,
            mutate_sign=self.mutate_sign,
        )

    @classmethod
    def from_sources(cls, command, file_fields=None, flag_fields=None):
        """Command defaults, then the config file, then explicit flags."""
        fields = dict(COMMAND_DEFAULTS.get(command, {}))
        fields.update(file_fields or {})
        fields.update(flag_fields or {})
        fields["command"] = command
        return cls(**fields)


COMMAND_DEFAULTS = {
    "convergence": {"mesh": ["gen:rect:4,8,16"]},
    "flag-layer": {"mesh": ["gen:annulus:24"], "case": "layer-annulus", "eps": [1e-1, 1e-2, 1e-3]},
}
