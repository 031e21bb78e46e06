"""Stored reference optima for the desk-scale test problems."""

from pathlib import Path

FIXTURE_DIR = Path(__file__).parent


def fixture_path(name, scale, seed) -> Path:
    return FIXTURE_DIR / f"{name}_s{int(scale)}_seed{int(seed)}.fstar"
