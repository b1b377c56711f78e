"""Bone label taxonomy: 40 labels, each tagged with an anatomical group.

Downstream logic (curve relabeling, screening rules) keys on the group tags
only, so a replacement taxonomy file works as long as it uses the same tags.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

GROUPS = (
    "VertebralBodyCervical", "VertebralBodyThoracic", "VertebralBodyLumbar",
    "VertebralArchLeft", "VertebralArchRight", "RibLeft", "RibRight", "Ilium", "Other",
)
# groups that get a fitted curve; the three body groups share one curve
CURVE_GROUPS = ("VertebralBody", "VertebralArchLeft", "VertebralArchRight", "RibLeft", "RibRight")
BODY_GROUPS = ("VertebralBodyCervical", "VertebralBodyThoracic", "VertebralBodyLumbar")
N_LABELS = 40


def curve_group(group: str) -> str | None:
    if group in BODY_GROUPS:
        return "VertebralBody"
    return group if group in CURVE_GROUPS else None


@dataclass(frozen=True)
class Taxonomy:
    labels: tuple[str, ...]
    groups: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) != N_LABELS:
            raise ValueError(f"taxonomy needs exactly {N_LABELS} labels, got {len(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("taxonomy labels must be unique")
        if len(self.groups) != len(self.labels):
            raise ValueError("every label needs a group")
        bad = sorted(set(self.groups) - set(GROUPS))
        if bad:
            raise ValueError(f"unknown groups {bad}")

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def group_of(self, label_index: int) -> str:
        return self.groups[label_index]

    def curve_group_of(self, label_index: int) -> str | None:
        return curve_group(self.groups[label_index])

    def members(self, *groups: str) -> list[int]:
        return [i for i, g in enumerate(self.groups) if g in groups]

    def curve_members(self, cgroup: str) -> list[int]:
        return [i for i in range(len(self.labels)) if self.curve_group_of(i) == cgroup]

    def to_csv(self) -> str:
        return "".join(f"{i},{l},{g}\n" for i, (l, g) in enumerate(zip(self.labels, self.groups)))

    @classmethod
    def from_csv(cls, text: str) -> "Taxonomy":
        labels, groups = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3 or not parts[0].isdigit() or int(parts[0]) != len(labels):
                raise ValueError(f"taxonomy line {lineno}: expected 'index,label,group' in order")
            labels.append(parts[1])
            groups.append(parts[2])
        return cls(tuple(labels), tuple(groups))


def load_taxonomy(path=None) -> Taxonomy:
    if path is None:
        text = resources.files("skelscreen").joinpath("data/taxonomy.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return Taxonomy.from_csv(text)


DEFAULT = load_taxonomy()
