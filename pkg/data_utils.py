import os
import logging

from hho2d.errors import ConfigError, MeshError
from hho2d.mesh import build_annulus_mesh, build_rect_mesh, load_mesh

logger = logging.getLogger(__name__)

GENERATORS = {
    "rect": build_rect_mesh,
    "annulus": build_annulus_mesh,
}


def parse_source(source):
    """
    Expand one mesh source into a list of (label, loader) pairs.
    'gen:rect:16' is the 16 x 16 unit-square mesh, 'gen:rect:4,8,16' a refinement family,
    'gen:annulus:8' the curved annulus mesh with 8 radial layers; anything else is a mesh file path.
    """
    if not source.startswith("gen:"):
        return [(source, lambda path=source: _load_file(path))]
    parts = source.split(":")
    if len(parts) != 3 or parts[1] not in GENERATORS:
        raise ConfigError(f"malformed mesh generator {source!r}, expected gen:<{'|'.join(GENERATORS)}>:<n>[,<n>...]")
    build = GENERATORS[parts[1]]
    try:
        sizes = [int(n) for n in parts[2].split(",")]
    except ValueError as e:
        raise ConfigError(f"malformed mesh generator {source!r}: sizes must be integers") from e
    for n in sizes:
        if n < 1:
            raise ConfigError(f"mesh generator {source!r}: sizes must be >= 1")
    return [(f"gen:{parts[1]}:{n}", lambda n=n: build(n)) for n in sizes]


def _load_file(path):
    if not os.path.isfile(path):
        raise MeshError(f"mesh file not found: {path}")
    return load_mesh(path)


class MeshFamily:
    """An indexable family of meshes, built lazily and kept once built."""

    def __init__(self, sources):
        if isinstance(sources, str):
            sources = [sources]
        self.entries = [entry for source in sources for entry in parse_source(source)]
        if not self.entries:
            raise ConfigError("no mesh given")
        self._meshes = {}

    def label(self, index):
        return self.entries[index][0]

    def __getitem__(self, index):
        if index not in self._meshes:
            label, loader = self.entries[index]
            mesh = loader()
            logger.debug(f"mesh {label}: {mesh.summary()}")
            self._meshes[index] = mesh
        return self._meshes[index]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]
