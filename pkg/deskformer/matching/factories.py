import factory
import factory.fuzzy

from matching.boxes import BoundingBox, LabeledObject


class BoundingBoxFactory(factory.Factory):
    cx = factory.fuzzy.FuzzyFloat(0.2, 0.8)
    cy = factory.fuzzy.FuzzyFloat(0.2, 0.8)
    w = factory.fuzzy.FuzzyFloat(0.05, 0.3)
    h = factory.fuzzy.FuzzyFloat(0.05, 0.3)

    class Meta:
        model = BoundingBox


class LabeledObjectFactory(factory.Factory):
    identity = factory.Sequence(lambda n: n + 1)
    box = factory.SubFactory(BoundingBoxFactory)
    label = 0

    class Meta:
        model = LabeledObject
