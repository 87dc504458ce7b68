"""Pattern tuples: neighbourhoods of grid-adjacent feature maps.

A pattern ``(g, shapes)`` groups ``g`` feature maps. Each shape is a walk of
``g - 1`` unit steps starting from an anchor cell; a walk that leaves the grid
or revisits a cell yields no placement for that anchor.

Library files hold one pattern per line::

    P4_S2: down,left,left
    P2_S1: right; down
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import DimensionError, ValidationError

DIRECTIONS = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}


@dataclass(frozen=True)
class PatternSpec:
    pattern_id: str
    g: int
    shapes: tuple

    def __post_init__(self):
        if self.g < 2:
            raise ValidationError(f"{self.pattern_id}: g must be >= 2")
        if not self.shapes:
            raise ValidationError(f"{self.pattern_id}: needs at least one shape")
        for shape in self.shapes:
            if len(shape) != self.g - 1:
                raise ValidationError(f"{self.pattern_id}: shape {shape} should have {self.g - 1} steps")
            for d in shape:
                if d not in DIRECTIONS:
                    raise ValidationError(f"{self.pattern_id}: unknown direction {d!r}")


@dataclass(frozen=True)
class PatternPlacement:
    anchor: int
    members: tuple


def parse_library(text) -> dict:
    lib = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValidationError(f"pattern library line {lineno}: expected 'id: shape; shape'")
        pid, rest = (part.strip() for part in line.split(":", 1))
        shapes = tuple(
            tuple(d.strip() for d in shape.split(",") if d.strip()) for shape in rest.split(";") if shape.strip()
        )
        if not shapes:
            raise ValidationError(f"pattern library line {lineno}: {pid} has no shapes")
        if pid in lib:
            raise ValidationError(f"pattern library line {lineno}: duplicate id {pid}")
        lib[pid] = PatternSpec(pid, len(shapes[0]) + 1, shapes)
    return lib


def format_library(lib) -> str:
    return "".join(f"{p.pattern_id}: {'; '.join(','.join(s) for s in p.shapes)}\n" for p in lib.values())


def load_library(path=None) -> dict:
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                return parse_library(fh.read())
        except OSError as exc:
            from .errors import DataIOError

            raise DataIOError(f"cannot read pattern library {path}: {exc}") from exc
    return parse_library(resources.files("mcua").joinpath("patterns.txt").read_text(encoding="utf-8"))


def walk(grid, shape, anchor):
    """Member indices of ``shape`` walked from ``anchor``, or None if it leaves the grid."""
    col, row = grid.coords(anchor)
    members = [anchor]
    for d in shape:
        dc, dr = DIRECTIONS[d]
        col, row = col + dc, row + dr
        if not (0 <= col < grid.cols and 0 <= row < grid.rows):
            return None
        idx = grid.index(col, row)
        if idx in members:
            return None
        members.append(idx)
    return tuple(members)


@lru_cache(maxsize=64)
def _shape_trie(shapes):
    """Prefix tree of step sequences; node = (children by direction, shape positions ending here)."""
    root = ({}, [])
    for k, shape in enumerate(shapes):
        node = root
        for d in shape:
            node = node[0].setdefault(d, ({}, []))
        node[1].append(k)
    return root


def get_pattern_indices(grid, spec: PatternSpec, anchor: int):
    """Placements of every shape from ``anchor``, in the order the shapes are listed.

    Shapes sharing a prefix share its walk, so a step that leaves the grid
    prunes every shape below it at once.
    """
    if not 0 <= anchor < grid.count:
        raise ValidationError(f"anchor {anchor} outside a grid of {grid.count} cells")
    cols, rows = grid.cols, grid.rows
    found = []

    def descend(node, col, row, members):
        for k in node[1]:
            found.append((k, tuple(members)))
        for d, child in node[0].items():
            dc, dr = DIRECTIONS[d]
            c, r = col + dc, row + dr
            if 0 <= c < cols and 0 <= r < rows:
                idx = r * cols + c
                if idx not in members:
                    members.append(idx)
                    descend(child, c, r, members)
                    members.pop()

    col, row = grid.coords(anchor)
    descend(_shape_trie(spec.shapes), col, row, [anchor])
    found.sort()
    return [PatternPlacement(anchor, m) for _, m in found]


def all_placements(grid, spec: PatternSpec):
    """Placements from every anchor in index order, deduplicated by member sequence."""
    seen, out = set(), []
    for anchor in range(grid.count):
        for p in get_pattern_indices(grid, spec, anchor):
            if p.members not in seen:
                seen.add(p.members)
                out.append(p)
    return out


def concat_pattern_maps(maps, placement: PatternPlacement) -> np.ndarray:
    """Channel-wise concatenation of the member maps in walk order.

    ``maps`` is indexable by grid index and holds (C_f, h_f, w_f) arrays.
    """
    members = [np.asarray(maps[i]) for i in placement.members]
    first = members[0].shape
    for m in members[1:]:
        if m.shape != first:
            raise DimensionError(f"feature map shapes differ: {first} vs {m.shape}")
    return np.concatenate(members, axis=0)


def stack_placements(maps, placements) -> np.ndarray:
    """(P, g*C_f, h_f, w_f) array of all placements for one image."""
    maps = np.asarray(maps)
    idx = np.array([p.members for p in placements], dtype=np.int64)
    p, g = idx.shape
    _, c, h, w = maps.shape
    return maps[idx].reshape(p, g * c, h, w)
