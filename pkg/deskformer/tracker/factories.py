import factory
import factory.fuzzy
import numpy as np

from matching.factories import BoundingBoxFactory
from tracker.logic import TrackState


class TrackStateFactory(factory.Factory):
    identity = factory.Sequence(lambda n: n + 1)
    query = factory.LazyFunction(lambda: np.zeros(4))
    box = factory.SubFactory(BoundingBoxFactory)
    score = factory.fuzzy.FuzzyFloat(0.4, 1.0)

    class Meta:
        model = TrackState
