import math
from collections import namedtuple

import singer

from webweave.web.exceptions import UnsupportedLawError

LOGGER = singer.get_logger()

SIMPLE = "simple"
GENERAL = "general"

IncrementLaw = namedtuple("IncrementLaw", ("name", "support", "weights"))

SIMPLE_LAW = IncrementLaw(SIMPLE, (-1, 1), (0.5, 0.5))


def law_mean(law):
    return math.fsum(s * w for s, w in zip(law.support, law.weights))


def law_variance(law):
    mean = law_mean(law)
    return math.fsum(w * (s - mean) ** 2 for s, w in zip(law.support, law.weights))


def check_law(law):
    """Reject laws the walk constructions cannot use.

    The checks run against the declared law, never against a sample.
    """
    if len(law.support) == 0 or len(law.support) != len(law.weights):
        raise UnsupportedLawError(f"Law {law.name!r} needs a non-empty support with one weight per value.")
    if any(int(s) != s for s in law.support):
        raise UnsupportedLawError(f"Law {law.name!r} has a non-integer support value: {law.support}")
    if any(w < 0 for w in law.weights) or not math.isclose(math.fsum(law.weights), 1.0, abs_tol=1e-12):
        raise UnsupportedLawError(f"Law {law.name!r} weights must be nonnegative and sum to 1: {law.weights}")
    if not math.isclose(law_mean(law), 0.0, abs_tol=1e-12):
        raise UnsupportedLawError(f"Law {law.name!r} has nonzero mean {law_mean(law)!r}.")
    if law_variance(law) <= 0:
        raise UnsupportedLawError(f"Law {law.name!r} has zero variance.")
    if law.name == SIMPLE and tuple(law.support) != (-1, 1):
        raise UnsupportedLawError(f"The simple law steps by -1/+1 only, got {law.support}.")
    return law


def parse_law(config):
    """Build an IncrementLaw from its config block.

    ``{"name": "simple"}`` or
    ``{"name": "general", "support": [-3, 3], "weights": [0.5, 0.5]}``.
    """
    name = (config or {}).get("name")
    if name == SIMPLE:
        return SIMPLE_LAW
    if name == GENERAL:
        raw = config.get("support", ())
        if not all(float(s).is_integer() for s in raw):
            raise UnsupportedLawError(f"Law {name!r} has a non-integer support value: {list(raw)}")
        support = tuple(int(s) for s in raw)
        weights = config.get("weights")
        if weights is None and support:
            weights = [1.0 / len(support)] * len(support)
        law = check_law(IncrementLaw(GENERAL, support, tuple(float(w) for w in weights or ())))
        LOGGER.debug("Parsed %s law on support %s with weights %s", law.name, law.support, law.weights)
        return law

    raise UnsupportedLawError(f"Cannot create an increment law from config: {config!r}")


def law_to_dict(law):
    return {"name": law.name, "support": list(law.support), "weights": list(law.weights)}
