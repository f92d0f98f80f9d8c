"""Deterministic synthetic log corpora for desk-scale testing.

Each component carries an ordered template program; a session interleaves
the programs round-robin, fills wildcards with seeded random values, and
spaces messages one gap apart. Anomalies are injected deviations:

  permute_subsequence  rotate one component's template order left by one,
                       e.g. a normal order a,b,c becomes b,c,a
  insert_rare_template splice in a template that never occurs in normal
                       sessions

Given the same spec and seed the corpus is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .ingest import LABEL_ANOMALY, LABEL_NORMAL, RawRecord, Session

ANOMALY_CLASSES = ("permute_subsequence", "insert_rare_template")


@dataclass(frozen=True)
class ComponentGrammar:
    name: str
    templates: tuple[str, ...]  # emitted in this order within a session


@dataclass(frozen=True)
class SynthSpec:
    components: tuple[ComponentGrammar, ...]
    num_sessions: int
    anomaly_rate: float = 0.0
    anomaly_classes: tuple[str, ...] = ("permute_subsequence",)
    start_time: int = 1_000_000
    session_gap: int = 1_000
    message_gap: int = 1
    rare_template: str = "unexpected fault code <*> raised"

    def __post_init__(self):
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise DataError(f"anomaly rate must be in [0, 1], got {self.anomaly_rate}")
        if not self.components:
            raise DataError("need at least one component grammar")
        unknown = set(self.anomaly_classes) - set(ANOMALY_CLASSES)
        if unknown:
            raise DataError(f"unknown anomaly classes: {sorted(unknown)}")


def _interleave(components: tuple[ComponentGrammar, ...],
                programs: dict[str, tuple[str, ...]]) -> list[tuple[str, str]]:
    """Round-robin (component, template) order; exhausted components drop out."""
    cursors = {c.name: 0 for c in components}
    out = []
    remaining = sum(len(p) for p in programs.values())
    while remaining:
        for comp in components:
            prog = programs[comp.name]
            i = cursors[comp.name]
            if i < len(prog):
                out.append((comp.name, prog[i]))
                cursors[comp.name] += 1
                remaining -= 1
    return out


def _rotated(program: tuple[str, ...]) -> tuple[str, ...]:
    return program[1:] + program[:1]


def _permutable(components: tuple[ComponentGrammar, ...]) -> list[ComponentGrammar]:
    return [c for c in components if len(c.templates) >= 2 and _rotated(c.templates) != c.templates]


def _fill(template: str, rng: np.random.Generator) -> str:
    while "<*>" in template:
        template = template.replace("<*>", str(int(rng.integers(1, 100000))), 1)
    return template


def generate_synthetic(spec: SynthSpec, seed: int) -> list[Session]:
    """Build exactly floor(rate * n) anomalous sessions among n, labels exact."""
    rng = np.random.default_rng(seed)
    n = spec.num_sessions
    n_anomalous = int(spec.anomaly_rate * n)
    anomalous_ids = set(rng.choice(n, size=n_anomalous, replace=False).tolist()) if n_anomalous else set()

    if anomalous_ids and "permute_subsequence" in spec.anomaly_classes and not _permutable(spec.components):
        raise DataError("permute_subsequence needs a component whose rotated program differs")

    sessions = []
    for s_idx in range(n):
        is_anomalous = s_idx in anomalous_ids
        programs = {c.name: c.templates for c in spec.components}
        injected_insert = None
        if is_anomalous:
            kind = spec.anomaly_classes[int(rng.integers(len(spec.anomaly_classes)))]
            if kind == "permute_subsequence":
                victims = _permutable(spec.components)
                victim = victims[int(rng.integers(len(victims)))]
                programs[victim.name] = _rotated(victim.templates)
            else:
                comp = spec.components[int(rng.integers(len(spec.components)))]
                injected_insert = comp.name

        order = _interleave(spec.components, programs)
        if injected_insert is not None:
            pos = int(rng.integers(len(order) + 1))
            order.insert(pos, (injected_insert, spec.rare_template))

        start = spec.start_time + s_idx * spec.session_gap
        messages = [
            RawRecord(
                timestamp=start + i * spec.message_gap,
                component=comp,
                content=_fill(template, rng),
                label=LABEL_ANOMALY if is_anomalous else LABEL_NORMAL,
            )
            for i, (comp, template) in enumerate(order)
        ]
        sessions.append(
            Session(
                id=f"synth-{s_idx:06d}",
                messages=messages,
                label=LABEL_ANOMALY if is_anomalous else LABEL_NORMAL,
            )
        )
    return sessions


# A small grammar mirroring the cloud-service scenario that motivates the
# detector: one component's normal order a,b,c flips to b,c,a in anomalous
# sessions while other components are untouched. Five distinct templates
# across three components; two templates are shared between components.
FIG1_STYLE_SPEC = SynthSpec(
    components=(
        ComponentGrammar(
            name="api.server",
            templates=(
                "api request received from <*>",
                "api response sent to <*> with status <*>",
                "api request received from <*>",
                "api response sent to <*> with status <*>",
            ),
        ),
        ComponentGrammar(
            name="scheduler.manager",
            templates=(
                "data request for instance <*>",
                "instance <*> state updated",
                "data request for instance <*>",
            ),
        ),
        ComponentGrammar(
            name="compute.wsgi.server",
            templates=(
                "data request for instance <*>",
                "instance <*> state updated",
                "stopping compute node <*>",
            ),
        ),
    ),
    num_sessions=200,
)
