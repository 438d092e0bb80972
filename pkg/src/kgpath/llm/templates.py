"""Prompt templates stored as plain-text files with ``{{placeholder}}`` markers.

A template file may open with ``#! key: value`` header lines. ``output`` is
``json`` or ``text`` and decides how responses are parsed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from kgpath.errors import ConfigError

_PLACEHOLDER_RE = re.compile(r"\{\{\s*(\w+)\s*\}\}")


@dataclass(frozen=True)
class Template:
    id: str
    body: str
    output: str = "text"
    version: str = "1"

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))

    def render(self, variables: dict[str, str]) -> str:
        missing = self.placeholders - set(variables)
        if missing:
            raise ConfigError(f"template {self.id!r} missing variables: {sorted(missing)}")
        return _PLACEHOLDER_RE.sub(lambda m: str(variables[m.group(1)]), self.body)

    @classmethod
    def parse(cls, template_id: str, raw: str) -> "Template":
        meta = {}
        lines = raw.splitlines(keepends=True)
        while lines and lines[0].startswith("#!"):
            key, _, value = lines.pop(0)[2:].partition(":")
            meta[key.strip()] = value.strip()
        output = meta.get("output", "text")
        if output not in ("text", "json"):
            raise ConfigError(f"template {template_id!r}: unknown output kind {output!r}")
        return cls(template_id, "".join(lines), output, meta.get("version", "1"))


class TemplateRegistry:
    def __init__(self, templates: dict[str, Template] | None = None):
        self._templates = dict(templates or {})

    @classmethod
    def builtin(cls) -> "TemplateRegistry":
        reg = cls()
        for entry in resources.files("kgpath.prompts").iterdir():
            if entry.name.endswith(".txt"):
                reg.add(Template.parse(entry.name[:-4], entry.read_text(encoding="utf-8")))
        return reg

    @classmethod
    def from_dir(cls, path: str | Path) -> "TemplateRegistry":
        reg = cls.builtin()
        for p in sorted(Path(path).glob("*.txt")):
            reg.add(Template.parse(p.stem, p.read_text(encoding="utf-8")))
        return reg

    def add(self, template: Template) -> None:
        self._templates[template.id] = template

    def get(self, template_id: str) -> Template:
        try:
            return self._templates[template_id]
        except KeyError:
            raise ConfigError(f"no template registered under {template_id!r}") from None

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def ids(self) -> list[str]:
        return sorted(self._templates)
