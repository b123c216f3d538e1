"""Versioned prompt catalog.

Templates are plain text files shipped with the package, with
``{{placeholder}}`` slots. The catalog digest is recorded in run metadata so
any prompt edit is visible in run audit trails.
"""

from __future__ import annotations

import hashlib
import re
from importlib import resources

_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")


class PromptCatalog:
    def __init__(self, templates: dict[str, str]):
        self._templates = dict(templates)

    @classmethod
    def load(cls) -> "PromptCatalog":
        templates = {}
        prompt_dir = resources.files("tabrec") / "prompts"
        for entry in prompt_dir.iterdir():
            if entry.name.endswith(".txt"):
                templates[entry.name[: -len(".txt")]] = entry.read_text(encoding="utf-8")
        if not templates:
            raise RuntimeError("prompt catalog is empty")
        return cls(templates)

    @property
    def names(self) -> list[str]:
        return sorted(self._templates)

    @property
    def digest(self) -> str:
        hasher = hashlib.sha256()
        for name in sorted(self._templates):
            hasher.update(name.encode("utf-8"))
            hasher.update(b"\x00")
            hasher.update(self._templates[name].encode("utf-8"))
            hasher.update(b"\x00")
        return hasher.hexdigest()

    def render(self, template_name: str, /, **subs: str) -> str:
        template = self._templates[template_name]

        def replace(match: re.Match) -> str:
            key = match.group(1)
            if key not in subs:
                raise KeyError(f"template {template_name!r}: no value for placeholder {key!r}")
            return str(subs[key])

        return _PLACEHOLDER_RE.sub(replace, template)
