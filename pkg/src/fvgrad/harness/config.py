"""Flat key-value experiment configuration with section headers.

One setting per line, `key = value` under `[section]` headers; comments start
with `#`.  Chosen over nested formats for diff-friendliness and bit-exact
archival of reruns.
"""

from __future__ import annotations

from ..io import sha256_text

__all__ = ["ExperimentConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


class ExperimentConfig:
    def __init__(self, sections, text=""):
        self.sections = sections
        self.text = text

    @property
    def hash(self):
        lines = []
        for sec in sorted(self.sections):
            for k in sorted(self.sections[sec]):
                lines.append(f"{sec}.{k} = {self.sections[sec][k]}")
        return sha256_text("\n".join(lines))

    def has(self, section, key):
        return key in self.sections.get(section, {})

    def get(self, section, key, default=None, required=False):
        try:
            return self.sections[section][key]
        except KeyError:
            if required:
                raise ConfigError(f"missing [{section}] {key}")
            return default

    def get_float(self, section, key, default=None, required=False):
        v = self.get(section, key, default, required)
        return v if v is None else float(v)

    def get_int(self, section, key, default=None, required=False):
        v = self.get(section, key, default, required)
        return v if v is None else int(v)

    def get_list(self, section, key, default=()):
        v = self.get(section, key)
        if v is None:
            return list(default)
        return v.split()

    def section(self, name):
        return dict(self.sections.get(name, {}))


def parse_config(text):
    sections = {}
    current = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected `key = value`, got {raw!r}")
        if current is None:
            raise ConfigError(f"line {ln}: setting outside any [section]")
        k, v = line.split("=", 1)
        sections[current][k.strip()] = v.strip()
    return ExperimentConfig(sections, text)


def load_config(path):
    with open(path) as f:
        return parse_config(f.read())
