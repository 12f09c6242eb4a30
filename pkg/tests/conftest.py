"""Shared fixtures: small families with known chord structure.

The expensive executed runs (multichord, Morse demo) are session-scoped so
the whole suite pays for each of them once.  Config fixtures hand out deep
copies, so tests may mutate them freely.
"""

import copy
import json

import pytest

from gftrees import pipeline as pl

# One transverse chord at value 4/3: fiber critical points of
# e^3/3 + (x^2-1)e sit at e = +-sqrt(1-x^2), and the difference function
# has its only positive critical value at x = 0.
UNKNOT = {
    "mode": "gf",
    "family": {
        "n": 1, "N": 1, "label": "unknot",
        "core": "e1^3/3 + (x1^2 - 1)*e1",
        "slope": [1],
        "inner_box": [[-1.5, 1.5], [-2, 2]],
        "outer_box": [[-2.5, 2.5], [-3, 3]],
    },
}

# Same shape translated in the base; used for the deformation tests.
UNKNOT_MOVED = {
    "mode": "gf",
    "family": {
        "n": 1, "N": 1, "label": "unknot-moved",
        "core": "e1^3/3 + ((x1 - 0.1)^2 - 1)*e1",
        "slope": [1],
        "inner_box": [[-1.5, 1.5], [-2, 2]],
        "outer_box": [[-2.5, 2.5], [-3, 3]],
    },
}

# Double-well coefficient: three chords (one of grading 1, two of grading 2)
# with a nonzero differential, so the ring collapses to a single class.
MULTI = {
    "mode": "gf",
    "family": {
        "n": 1, "N": 1, "label": "multichord",
        "core": "e1^3/3 + (0.5*(x1^2 - 1)^2 - 1 + 0.1*x1)*e1",
        "slope": [1],
        "inner_box": [[-1.7, 1.7], [-2.2, 2.2]],
        "outer_box": [[-2.5, 2.5], [-3.2, 3.2]],
    },
    "seeds": {"rng": 11},
}

# Shallower double well: both wells clear the zero level, giving two chords
# of grading 2, no differential, and a rank-2 map under deformation.
TWOWELL = {
    "mode": "gf",
    "family": {
        "n": 1, "N": 1, "label": "twowell",
        "core": "e1^3/3 + (0.5*(x1^2 - 1)^2 - 0.4 + 0.05*x1)*e1",
        "slope": [1],
        "inner_box": [[-1.7, 1.7], [-2.2, 2.2]],
        "outer_box": [[-2.5, 2.5], [-3.2, 3.2]],
    },
    "seeds": {"rng": 11},
}

TWOWELL_MOVED = {
    "mode": "gf",
    "family": {
        "n": 1, "N": 1, "label": "twowell-moved",
        "core": "e1^3/3 + (0.5*((x1 - 0.1)^2 - 1)^2 - 0.4 + 0.05*(x1 - 0.1))*e1",
        "slope": [1],
        "inner_box": [[-1.7, 1.7], [-2.2, 2.2]],
        "outer_box": [[-2.5, 2.5], [-3.2, 3.2]],
    },
    "seeds": {"rng": 11},
}

# Fiber twist that is the identity outside the outer box: bump(e1) kills it
# for |e1| >= 2 and bump(x1) for |x1| >= 2, and its fiber derivative
# 1 + 0.3*bump'(e1)*bump(x1) stays positive.
FPD_COMPONENT = "e1 + 0.3*bump(e1)*bump(x1)"


def _copy(cfg):
    return json.loads(json.dumps(cfg))


@pytest.fixture
def unknot_config():
    return _copy(UNKNOT)


@pytest.fixture
def unknot_moved_config():
    return _copy(UNKNOT_MOVED)


@pytest.fixture
def multi_config():
    return _copy(MULTI)


@pytest.fixture
def twowell_config():
    return _copy(TWOWELL)


@pytest.fixture
def twowell_moved_config():
    return _copy(TWOWELL_MOVED)


@pytest.fixture(scope="session")
def unknot_run():
    return pl.gf_run(_copy(UNKNOT))


@pytest.fixture(scope="session")
def multi_run():
    # keep_trees so the in-bounds audit can replay every recorded tree
    return pl.gf_run(_copy(MULTI), keep_trees=True)


@pytest.fixture(scope="session")
def morse_run():
    return pl.MorseRun().execute()
