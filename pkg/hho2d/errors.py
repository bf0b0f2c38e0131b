class HHOError(Exception):
    """Base class for every error raised by the solver library."""


class ConfigError(HHOError):
    pass


class MeshError(HHOError):
    pass


class MeshParseError(MeshError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MeshTopologyError(MeshError):
    pass


class MeshGeometryError(MeshError):
    pass


class QuadratureError(MeshGeometryError):
    pass


class UnsupportedFaceError(MeshError):
    pass


class SolverError(HHOError):
    pass


class LocalSolveError(SolverError):
    def __init__(self, message, cell_id=None):
        if cell_id is not None:
            message = f"cell {cell_id}: {message}"
        super().__init__(message)
        self.cell_id = cell_id


class ConditioningError(SolverError):
    pass
