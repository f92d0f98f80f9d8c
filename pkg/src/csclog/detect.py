"""Sliding-window anomaly detection over a trained model.

A window is flagged when the true next template is missing from the k
most probable predictions (ties broken by ascending template id); a
session is anomalous when the flagged-window count reaches the
threshold. Sessions too short to give a full window are judged through
one left-padded window so every session gets a verdict.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import PAD_COMPONENT, PAD_TEMPLATE_ID, UNSEEN_TEMPLATE_ID
from .model import AttentionState, CSCLogModel
from .parser import ParsedMessage, ParsedSession
from .train import WindowSample, make_samples


def rank_ties(probs: np.ndarray, k: int) -> list[int]:
    """Top min(k, n) template ids by probability, ties to the smaller id."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    return sorted(range(p.size), key=lambda i: (-p[i], i))[: min(k, p.size)]


@dataclass(frozen=True)
class WindowVerdict:
    offset: int
    flagged: int  # 1 when the true template missed the top-k set
    target: int
    topk: tuple[int, ...]


@dataclass
class DetectionVerdict:
    session_id: str
    windows: list[WindowVerdict]
    alpha: int
    padded: bool = False

    @property
    def window_flags(self) -> list[int]:
        return [w.flagged for w in self.windows]

    @property
    def anomalous_window_count(self) -> int:
        return sum(w.flagged for w in self.windows)

    @property
    def verdict(self) -> str:
        return "anomaly" if self.anomalous_window_count >= self.alpha else "normal"

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "verdict": self.verdict,
            "count": self.anomalous_window_count,
            "padded": self.padded,
            "windows": [
                {"offset": w.offset, "y_t": w.flagged, "true": w.target, "topk": list(w.topk)}
                for w in self.windows
            ],
        }


def classify_window(
    model: CSCLogModel, state: AttentionState, sample: WindowSample, k: int
) -> WindowVerdict:
    """Eq.-style top-k check; an UNSEEN target always flags."""
    n_event = model.config.num_templates
    if not 1 <= k <= n_event:
        raise ValueError(f"k must be in [1, {n_event}], got {k}")
    out = model.forward(sample.window, state, training=False)
    top = tuple(rank_ties(out.probs.data, k))
    if sample.target == UNSEEN_TEMPLATE_ID:
        flagged = 1
    else:
        flagged = 0 if sample.target in top else 1
    return WindowVerdict(offset=sample.origin[1], flagged=flagged, target=sample.target, topk=top)


def padded_window(session: ParsedSession, window_length: int) -> WindowSample:
    """One left-padded window for a session with N <= N_w messages: predict
    the last message from everything before it, padding up to length."""
    msgs = session.messages
    pad_count = window_length - (len(msgs) - 1)
    first_ts = msgs[0].timestamp
    pads = [ParsedMessage(PAD_TEMPLATE_ID, PAD_COMPONENT, first_ts)] * pad_count
    return WindowSample(
        window=tuple(pads + list(msgs[:-1])),
        target=msgs[-1].template_id,
        origin=(session.id, 0),
    )


def classify_sequence(
    model: CSCLogModel,
    state: AttentionState,
    session: ParsedSession,
    window_length: int,
    k: int,
    alpha: int,
) -> DetectionVerdict:
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    samples = make_samples([session], window_length)
    padded = False
    if not samples:
        samples = [padded_window(session, window_length)]
        padded = True
    windows = [classify_window(model, state, s, k) for s in samples]
    return DetectionVerdict(session_id=session.id, windows=windows, alpha=alpha, padded=padded)


def detect_sessions(
    model: CSCLogModel,
    state: AttentionState,
    sessions: Sequence[ParsedSession],
    window_length: int,
    k: int,
    alpha: int,
) -> list[DetectionVerdict]:
    return [
        classify_sequence(model, state, s, window_length, k, alpha) for s in sessions
    ]
