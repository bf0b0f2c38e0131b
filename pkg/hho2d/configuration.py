from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class HHOConfig(BaseModel):
    """
    Discretization options shared by the local builders, the assembler and the analysis tools.
    'hp_scaling' replaces every h_K^{-1} penalty weight by (k+1)^2 h_K^{-1}; 'hp_symmetric' also divides
    the h_K-weighted normal-derivative term by (k+1)^2.
    'l2_field' selects which field the L2 error measures: the post-processed reconstruction or the cell unknown.
    """
    model_config = ConfigDict(frozen=True)

    k: int = Field(default=1, ge=0)
    eps: float = Field(default=1.0, ge=0.0)
    hp_scaling: bool = False
    hp_symmetric: bool = False
    n_subedges: int = Field(default=30, ge=1)
    exact_arcs: bool = True
    orthonormal: bool = False
    l2_field: Literal["reconstruction", "cell"] = "reconstruction"
    solver: Literal["direct", "cg"] = "direct"
    serial: bool = True
    workers: int = Field(default=1, ge=1)
    cache_local: bool = True
    # test hook: drops the orientation signs s_{K,F} when gathering and scattering face unknowns
    mutate_sign: bool = False

    @property
    def cell_degree(self):
        return self.k + 2

    @property
    def quad_degree(self):
        return 2 * (self.k + 2) + 2

    @property
    def error_quad_degree(self):
        return 2 * (self.k + 2) + 4
