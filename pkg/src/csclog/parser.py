"""Log template mining with a fixed-depth parse tree.

Messages are tokenized on whitespace, purely numeric tokens are masked to
the "<*>" wildcard, and the tree routes by token count and then leading
tokens down to a leaf of candidate clusters. A candidate wins when the
fraction of position-wise matching non-wildcard tokens reaches the
similarity threshold; otherwise a new template is registered. Matching a
candidate refines its template: positions that disagree become wildcards.

A frozen store stops registering and refining; content that matches
nothing comes back as UNSEEN_TEMPLATE_ID.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from . import UNSEEN_TEMPLATE_ID
from .errors import ArtifactError

WILDCARD = "<*>"

STORE_FORMAT_VERSION = 1


def _is_numeric(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def tokenize(content: str) -> list[str]:
    """Whitespace tokens with numeric tokens pre-masked to wildcards."""
    return [WILDCARD if _is_numeric(t) else t for t in content.split()]


@dataclass
class LogTemplate:
    id: int
    tokens: list[str]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self):
        self.children: dict = {}
        self.clusters: list[LogTemplate] = []


class ParseResult(NamedTuple):
    template_id: int
    parameters: list[str]


@dataclass
class TemplateStore:
    """Append-only template collection behind the fixed-depth tree.

    `depth` counts the routing levels including the token-count level, as
    the classic implementation does: depth 4 routes by count plus the
    first two tokens.
    """

    depth: int = 4
    similarity_threshold: float = 0.5
    frozen: bool = False
    templates: list[LogTemplate] = field(default_factory=list)
    _root: _Node = field(default_factory=_Node, repr=False)

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError(f"similarity threshold must be in (0, 1], got {self.similarity_threshold}")

    def __len__(self) -> int:
        return len(self.templates)

    @property
    def num_templates(self) -> int:
        return len(self.templates)

    # -- tree plumbing ------------------------------------------------------

    def _route_tokens(self, tokens: list[str]) -> list[str]:
        return tokens[: self.depth - 2]

    def _find_leaf(self, tokens: list[str]) -> _Node | None:
        node = self._root.children.get(len(tokens))
        if node is None:
            return None
        for token in self._route_tokens(tokens):
            child = node.children.get(token)
            if child is None:
                child = node.children.get(WILDCARD)
            if child is None:
                return None
            node = child
        return node

    def _insert_leaf(self, tokens: list[str]) -> _Node:
        node = self._root.children.setdefault(len(tokens), _Node())
        for token in self._route_tokens(tokens):
            node = node.children.setdefault(token, _Node())
        return node

    @staticmethod
    def _similarity(template: list[str], tokens: list[str]) -> tuple[float, int]:
        matching = 0
        wildcards = 0
        for a, b in zip(template, tokens):
            if a == WILDCARD:
                wildcards += 1
            elif a == b:
                matching += 1
        return matching / len(template), wildcards

    def _best_match(self, leaf: _Node, tokens: list[str]) -> LogTemplate | None:
        best = None
        best_key = (-1.0, -1)
        for cluster in leaf.clusters:
            key = self._similarity(cluster.tokens, tokens)
            if key > best_key:
                best_key = key
                best = cluster
        if best is not None and best_key[0] >= self.similarity_threshold:
            return best
        return None

    # -- public surface -----------------------------------------------------

    def parse_message(self, content: str) -> ParseResult:
        """Assign content to a template, creating one if the store is mutable.

        Parameters are the tokens at the matched template's wildcard slots
        (after any refinement this message triggered).
        """
        if not content.strip():
            raise ValueError("cannot parse empty content")
        raw = content.split()
        tokens = tokenize(content)
        leaf = self._find_leaf(tokens)
        match = self._best_match(leaf, tokens) if leaf is not None else None

        if match is None:
            if self.frozen:
                return ParseResult(UNSEEN_TEMPLATE_ID, [])
            template = LogTemplate(id=len(self.templates), tokens=list(tokens))
            self.templates.append(template)
            self._insert_leaf(tokens).clusters.append(template)
            return ParseResult(template.id, self._parameters(template.tokens, raw))

        if not self.frozen:
            for pos, (a, b) in enumerate(zip(match.tokens, tokens)):
                if a != WILDCARD and a != b:
                    match.tokens[pos] = WILDCARD
        return ParseResult(match.id, self._parameters(match.tokens, raw))

    @staticmethod
    def _parameters(template_tokens: list[str], tokens: list[str]) -> list[str]:
        return [tok for tmpl, tok in zip(template_tokens, tokens) if tmpl == WILDCARD]

    def freeze(self) -> "TemplateStore":
        self.frozen = True
        return self

    def template_text(self, template_id: int) -> str:
        return self.templates[template_id].text

    # -- persistence --------------------------------------------------------

    def dumps(self) -> str:
        lines = [
            json.dumps(
                {
                    "version": STORE_FORMAT_VERSION,
                    "depth": self.depth,
                    "threshold": self.similarity_threshold,
                    "frozen": self.frozen,
                },
                sort_keys=True,
            )
        ]
        lines.extend(
            json.dumps({"id": t.id, "text": t.text}, sort_keys=True) for t in self.templates
        )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "TemplateStore":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ArtifactError("empty template store file")
        header = json.loads(lines[0])
        if header.get("version") != STORE_FORMAT_VERSION:
            raise ArtifactError(f"unsupported template store version: {header.get('version')}")
        store = cls(depth=header["depth"], similarity_threshold=header["threshold"])
        for line in lines[1:]:
            rec = json.loads(line)
            if rec["id"] != len(store.templates):
                raise ArtifactError("template ids must be dense and ordered")
            template = LogTemplate(id=rec["id"], tokens=rec["text"].split(" "))
            store.templates.append(template)
            store._insert_leaf(template.tokens).clusters.append(template)
        store.frozen = bool(header["frozen"])
        return store

    @classmethod
    def load(cls, path) -> "TemplateStore":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def freeze(store: TemplateStore) -> TemplateStore:
    """Module-level alias for TemplateStore.freeze."""
    return store.freeze()


# -- parsed-session representation used by every downstream stage -----------


@dataclass(frozen=True)
class ParsedMessage:
    template_id: int
    component: str
    timestamp: int


@dataclass
class ParsedSession:
    id: str
    label: str
    messages: list[ParsedMessage]


def parse_sessions(sessions: Iterable, store: TemplateStore) -> list[ParsedSession]:
    """Map raw sessions onto template ids using (and possibly growing) the store."""
    out = []
    for session in sessions:
        msgs = [
            ParsedMessage(
                template_id=store.parse_message(m.content).template_id,
                component=m.component,
                timestamp=m.timestamp,
            )
            for m in session.messages
        ]
        out.append(ParsedSession(id=session.id, label=session.label, messages=msgs))
    return out
