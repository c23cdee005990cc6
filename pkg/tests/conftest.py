import random

import pytest

from govtelem.model import (
    Classification,
    GovernanceMetadata,
    GovernanceTelemetryEvent,
    Jurisdiction,
    Sensitivity,
    Verified,
)


def make_event(
    timestamp=1.0,
    source="order",
    receiver="inventory",
    operation="reserve_stock",
    context=None,
    classification=Classification.OPERATIONAL,
    jurisdiction=Jurisdiction.EU,
    sensitivity=Sensitivity.LOW,
    lineage=("order",),
    verified=Verified.UNKNOWN,
    nonce=42,
    signature=None,
):
    return GovernanceTelemetryEvent(
        timestamp=timestamp,
        source=source,
        receiver=receiver,
        operation=operation,
        context=context if context is not None else {},
        governance=GovernanceMetadata(
            classification=classification,
            jurisdiction=jurisdiction,
            sensitivity=sensitivity,
            lineage=tuple(lineage),
            verified=verified,
        ),
        nonce=nonce,
        signature=signature,
    )


def random_event(rng: random.Random) -> GovernanceTelemetryEvent:
    context = {}
    for i in range(rng.randrange(0, 4)):
        key = f"k{i}"
        kind = rng.randrange(3)
        if kind == 0:
            context[key] = rng.choice(["a", "b", "some text", ""])
        elif kind == 1:
            context[key] = rng.randrange(-(2**40), 2**40)
        else:
            context[key] = rng.uniform(-1e6, 1e6)
    lineage = tuple(f"agent{rng.randrange(8)}" for _ in range(rng.randrange(1, 5)))
    return make_event(
        timestamp=rng.uniform(0.001, 1e7),
        source=f"agent{rng.randrange(8)}",
        receiver=f"peer{rng.randrange(8)}",
        operation=rng.choice(["reserve_stock", "charge_payment", "op_x"]),
        context=context,
        classification=rng.choice(list(Classification)),
        jurisdiction=rng.choice(list(Jurisdiction)),
        sensitivity=rng.choice(list(Sensitivity)),
        lineage=lineage,
        nonce=rng.getrandbits(64),
    )


@pytest.fixture
def event():
    return make_event()
