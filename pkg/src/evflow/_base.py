"""Shared plumbing for the sklearn-style stream estimators."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .events import FLOW_DTYPE, SensorGeometry, split_columns, validate_events


class EventTransformerBase(BaseEstimator, TransformerMixin):
    """Base for estimators that map an event stream to per-event records.

    Subclasses keep constructor params verbatim (sklearn convention), resolve
    them in fit(), and implement stream_state() / stream_chunk() so that one
    stream can be processed either in a single transform() call or chunk by
    chunk with bounded memory.
    """

    def _geometry(self):
        return SensorGeometry(self.width, self.height)

    def fit(self, X=None, y=None):
        """Validate parameters; no data-dependent state is learned."""
        self._resolve()
        if X is not None and len(X):
            validate_events(X, self._geometry())
        self.is_fitted_ = True
        return self

    def _resolve(self):  # pragma: no cover - overridden
        raise NotImplementedError

    def stream_state(self):  # pragma: no cover - overridden
        raise NotImplementedError

    def stream_chunk(self, events, state):  # pragma: no cover - overridden
        raise NotImplementedError

    def transform(self, X):
        """Process one complete stream with fresh state."""
        self._resolve()
        validate_events(X, self._geometry())
        return self.stream_chunk(X, self.stream_state())

    def predict(self, X):
        return self.transform(X)


def empty_flow_records(events):
    """Flow records aligned to the input events, initialized invalid."""
    out = np.zeros(len(events), dtype=FLOW_DTYPE)
    for name in ("t", "x", "y", "p"):
        out[name] = events[name]
    out["lifetime_ms"] = np.nan
    return out


def columns(events):
    return split_columns(events)
