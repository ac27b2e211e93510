"""Paired-image manifests: ``category<TAB>lq<TAB>hq`` per line, ``#`` comments."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

from ..degrade import CATEGORIES
from ..imaging import read_image

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    category: str
    lq_path: str
    hq_path: str


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    base_dir: str = "."

    def resolve(self, rel):
        return rel if os.path.isabs(rel) else os.path.join(self.base_dir, rel)

    def __len__(self):
        return len(self.entries)

    def categories(self):
        seen = []
        for e in self.entries:
            if e.category not in seen:
                seen.append(e.category)
        return seen

    def load_pairs(self):
        return [(read_image(self.resolve(e.lq_path)), read_image(self.resolve(e.hq_path))) for e in self.entries]


def parse_manifest(path, check_paths=True):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            cat, lq, hq = parts
            if cat not in CATEGORIES:
                raise ManifestError(f"{path}:{lineno}: unknown category {cat!r}")
            entry = Entry(cat, lq, hq)
            if check_paths:
                for p in (lq, hq):
                    full = p if os.path.isabs(p) else os.path.join(base, p)
                    if not os.path.exists(full):
                        raise ManifestError(f"{path}:{lineno}: missing file {p}")
            entries.append(entry)
    if not entries:
        log.warning("manifest %s is empty", path)
    return Manifest(entries, base)


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        fh.write("# category\tlq\thq\n")
        for e in manifest.entries:
            fh.write(f"{e.category}\t{e.lq_path}\t{e.hq_path}\n")
