"""Small hand-built automata used across the test suite."""

from moma.model import build_ma

ALPHA, BETA, GAMMA, ETA = "alpha", "beta", "gamma", "eta"


def delayed_choice():
    """Initial delay, then alpha to an absorbing s2 or beta to a delayed s4."""
    return build_ma(
        5, 0,
        actions={1: [(ALPHA, {2: 1.0}), (BETA, {3: 1.0})]},
        rates={0: (1.0, {1: 1.0}), 2: (1.0, {2: 1.0}), 3: (1.0, {4: 1.0}), 4: (1.0, {4: 1.0})},
        labels={2: ["s2"], 4: ["s4"], 3: ["s3"]},
    )


def branching_chain():
    return build_ma(
        7, 0,
        actions={
            3: [(ALPHA, {6: 1.0}), (BETA, {4: 1.0})],
            4: [(GAMMA, {1: 1.0}), (ETA, {5: 0.7, 2: 0.3})],
        },
        rates={
            0: (1.0, {3: 1.0}),
            1: (1.0, {1: 1.0}),
            2: (1.0, {2: 1.0}),
            5: (5.0, {4: 0.4, 5: 0.6}),
            6: (1.0, {6: 1.0}),
        },
        labels={s: [f"s{s}"] for s in range(7)},
    )
