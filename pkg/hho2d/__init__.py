from hho2d.configuration import HHOConfig
from hho2d.errors import (
    ConditioningError,
    ConfigError,
    HHOError,
    LocalSolveError,
    MeshError,
    MeshGeometryError,
    MeshParseError,
    MeshTopologyError,
    QuadratureError,
    SolverError,
    UnsupportedFaceError,
)
from hho2d.mesh import (
    ArcGeometry,
    Cell,
    Face,
    Mesh2D,
    Point2,
    build_annulus_mesh,
    build_rect_mesh,
    face_frame,
    load_mesh,
    snap_boundary_to_arcs,
)
from hho2d.quadrature import QuadRule, cell_quadrature, face_quadrature
from hho2d.basis import CellBasis, FaceBasis, ProjectionOperator, cell_mass_matrix, project_cell, project_face
from hho2d.local_operators import (
    BoundaryData,
    LocalDofLayout,
    LocalElement,
    LocalOperatorSet,
    build_lifting,
    build_local_bilinear,
    build_reconstruction,
    build_reconstruction_dual,
    build_stab_boundary,
    build_stab_interior,
    energy_seminorm,
    energy_seminorm_matrix,
    local_geometry_key,
    local_rhs,
    reduce,
    sigma_K,
)
from hho2d.assembly import (
    CondensedSystem,
    DofMap,
    HhoSolution,
    assemble,
    assemble_full,
    condition_number,
    interpolate,
    solve,
    solve_full,
)
from hho2d.cases import ManufacturedCase, get_case
from hho2d.analysis import (
    ErrorReport,
    LayerFlagReport,
    cell_field_summary,
    convergence_rates,
    discrete_energy_distance,
    energy_error,
    flag_boundary_layer,
    hessian_scaling_fit,
    l2_error,
    layer_region_touches_boundary,
    reconstruct,
    stability_ratio_bounds,
    stability_spreads,
    stability_sweep,
)
from hho2d.poisson import solve_poisson_reference
