"""Exact desk-scale computations for substitution tilings and their
translation groupoids: windows and patch classes, fibrewise invariance
counting, Ornstein-Weiss style quasitilings, clopen tower decompositions,
and sparse-operator verifiers for the associated operator algebra."""

from importlib import resources

from .tiling import (
    Patch,
    PatchClass,
    Prototile,
    SubstitutionRule,
    Tile,
    Window,
    enumerate_patch_classes,
    grid_window,
    inflate,
    load_rule,
    patch_around,
    repetitivity_radius,
    rule_from_dict,
    sample_window,
    tiling_metric,
)

__all__ = [
    "Patch",
    "PatchClass",
    "Prototile",
    "SubstitutionRule",
    "Tile",
    "Window",
    "enumerate_patch_classes",
    "fixture_path",
    "fixture_rule",
    "grid_window",
    "inflate",
    "load_rule",
    "patch_around",
    "repetitivity_radius",
    "rule_from_dict",
    "sample_window",
    "tiling_metric",
]


def fixture_path(name: str):
    """Path to a bundled tiling-spec fixture (sq, pd, chair)."""
    return resources.files("tilealg.fixtures").joinpath(f"{name}.json")


def fixture_rule(name: str) -> SubstitutionRule:
    with resources.as_file(fixture_path(name)) as p:
        return load_rule(p)
