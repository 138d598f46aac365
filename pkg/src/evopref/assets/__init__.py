"""Bundled data assets: task prompts, seed heuristics, sandbox scaffolds."""

from __future__ import annotations

from importlib import resources

_PLACEHOLDER = "{{HEURISTIC}}"


def _read(relpath: str) -> str:
    return resources.files(__package__).joinpath(relpath).read_text(encoding="utf-8")


def load_prompt(kind: str) -> str:
    return _read(f"prompts/{kind}.txt")


def load_seed(kind: str) -> str:
    return _read(f"seeds/{kind}.py")


def load_scaffold_template(kind: str) -> str:
    return _read(f"scaffolds/{kind}.py.tmpl")


def placeholder() -> str:
    return _PLACEHOLDER
