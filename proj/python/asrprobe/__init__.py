"""Python bindings for the asrprobe core.

Results come back as plain dicts in the same layout as the CLI's report.json.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

from . import _core
from ._core import (  # noqa: F401
    ConfigError,
    FormatError,
    ProtocolError,
    ScoringError,
    TransportError,
    cycle_seed,
    pmi,
    priming_sequence,
    surprisal_bits,
)

__version__ = _core.__version__

PRIME_PATTERNS = ("AAB", "ABA", "ABB")


def run_experiment(
    scorer: str | Callable[[list[int], int], float],
    *,
    setting: str = "random-random",
    seed: int = 0,
    cycles: int = 256,
    runs: int = 3,
    probes: int = 16,
    workers: int = 1,
    rankings: Sequence[str] = (),
    max_drop_rate: float = 0.001,
    vocabulary: Sequence[str] | None = None,
    separator: str = ".",
) -> dict:
    """Run a priming experiment and return the report as a dict.

    `scorer` is either a spec string ("uniform:1000", "oracle:0.9", "exec:...")
    or a callable (context ids, target id) -> log2 probability, in which case
    `vocabulary` lists the token surfaces by id.
    """
    if callable(scorer):
        if vocabulary is None:
            raise ValueError("a callable scorer needs a vocabulary")
        out = _core.run_with_callable_json(
            scorer, list(vocabulary), separator, setting, seed, cycles, runs, probes,
            list(rankings), max_drop_rate)
    else:
        out = _core.run_experiment_json(
            scorer, setting, seed, cycles, runs, probes, workers, list(rankings), max_drop_rate)
    return json.loads(out)


def mine_pmi(
    documents: Iterable[Sequence[int]],
    *,
    patterns: Sequence[str] = PRIME_PATTERNS,
    min_count: int = 20,
    top: int = 32,
    workers: int = 1,
    exclude: Sequence[int] = (),
    corpus_id: str = "",
) -> dict[str, dict]:
    """Rank sameness tri-grams by PMI; returns {pattern: ranking document}."""
    docs = [list(d) for d in documents]
    texts = _core.mine_pmi_json(docs, list(patterns), min_count, top, workers, list(exclude),
                                corpus_id)
    return {p: json.loads(t) for p, t in zip(patterns, texts)}


def classify(report: dict) -> dict:
    """Recompute the verdict of a report dict."""
    return json.loads(_core.classify_json(json.dumps(report)))["verdict"]


def render(reports: Sequence[dict], fmt: str = "text") -> str:
    """Render reports side by side as text, csv or json."""
    return _core.render_json([json.dumps(r) for r in reports], fmt)
