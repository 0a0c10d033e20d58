"""Hand-worked accuracy cases shared by the unit and acceptance suites.

Each case lists the scoring terms next to the numerator and denominator
obtained by substituting them into the accuracy ratio by hand: the
numerator adds the qualified inter-group links, every per-resource
qualified attribute count, and the qualified intra-group links; the
denominator adds the inter-group link count and, per group, requested
count times conditions per resource plus the intra-group link count.
"""
from elcore_sim.metrics import GroupTerms, RaaTerms


def terms(inter, gamma, groups):
    return RaaTerms(inter, gamma, tuple(GroupTerms(*g) for g in groups))


# (terms, hand numerator, hand denominator)
RAA_CASES = [
    (terms(0, 0, [(1, 1, 0, (1,), 0)]), 1, 1),
    (terms(0, 0, [(1, 1, 0, (), 0)]), 0, 1),
    (terms(0, 0, [(2, 2, 1, (2, 2), 1)]), 5, 5),
    (terms(0, 0, [(2, 2, 1, (2, 1), 1)]), 4, 5),
    (terms(0, 0, [(4, 1, 3, (1, 1, 1, 1), 2)]), 6, 7),
    (terms(1, 0, [(2, 2, 1, (2, 1), 1), (2, 1, 0, (1, 1), 0)]), 6, 8),
    (terms(0, 0, [(4, 1, 3, (1, 1), 1)]), 3, 7),
    (terms(2, 1, [(3, 2, 2, (2, 2, 1), 2), (2, 3, 1, (3, 0), 0)]), 11, 17),
    (terms(1, 0, [(2, 1, 1, (0, 0), 0)]), 0, 4),
    (terms(2, 2, [(1, 1, 0, (0,), 0)]), 2, 3),
    (terms(0, 0, [(8, 3, 7, (3,) * 8, 7)]), 31, 31),
    (terms(0, 0, [(8, 3, 7, (3, 3, 3, 2, 2, 1, 0, 0), 5)]), 19, 31),
    (terms(0, 0, [(5, 2, 4, (2, 2), 1)]), 5, 14),
    (terms(0, 0, [(3, 4, 2, (4, 3, 2), 0)]), 9, 14),
    (terms(2, 1, [(1, 2, 0, (2,), 0), (1, 2, 0, (1,), 0),
                  (2, 1, 1, (1, 1), 1)]), 7, 9),
    (terms(0, 0, [(10, 1, 0, (1,) * 10, 0)]), 10, 10),
    (terms(0, 0, [(10, 1, 0, (1,) * 4, 0)]), 4, 10),
    (terms(0, 0, [(1, 1, 0, (0,), 0)]), 0, 1),
    (terms(0, 0, [(2, 5, 1, (5, 4), 0)]), 9, 11),
    (terms(1, 1, [(1, 3, 0, (2,), 0), (1, 3, 0, (3,), 0)]), 6, 7),
    (terms(3, 2, [(2, 2, 1, (1, 2), 0), (3, 1, 2, (1, 1, 0), 1),
                  (1, 4, 0, (4,), 0)]), 12, 17),
    (terms(0, 0, [(6, 2, 5, (2, 2, 2, 1, 1, 2), 3)]), 13, 17),
    (terms(0, 0, [(1, 6, 0, (5,), 0)]), 5, 6),
    (terms(4, 0, [(2, 1, 1, (1, 0), 1), (2, 1, 1, (0, 1), 0)]), 3, 10),
]
