"""Plain-text prompt templates.

A template file holds a ``### SYSTEM`` block and a ``### USER`` block;
``$name`` placeholders are filled with :class:`string.Template`, so braces
in conversation text need no escaping.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Optional

TEMPLATE_NAMES = ("merge", "consolidate", "refine", "refine_direct", "answer")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: Template
    user: Template

    def render(self, **values: str) -> tuple[str, str]:
        return self.system.substitute(values), self.user.substitute(values)


def parse_template(name: str, text: str) -> PromptTemplate:
    system, user = [], []
    current = None
    for line in text.splitlines():
        marker = line.strip().upper()
        if marker == "### SYSTEM":
            current = system
        elif marker == "### USER":
            current = user
        elif current is not None:
            current.append(line)
    if not user:
        # no markers: the whole file is the user prompt
        user, system = text.splitlines(), []
    return PromptTemplate(name, Template("\n".join(system).strip()), Template("\n".join(user).strip()))


def load_templates(prompts_dir: Optional[str | Path] = None) -> dict[str, PromptTemplate]:
    """Load every template, preferring files in ``prompts_dir`` over the packaged ones."""
    out = {}
    for name in TEMPLATE_NAMES:
        text = None
        if prompts_dir is not None:
            p = Path(prompts_dir) / f"{name}.txt"
            if p.exists():
                text = p.read_text(encoding="utf-8")
        if text is None:
            text = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
        out[name] = parse_template(name, text)
    return out
