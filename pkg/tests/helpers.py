"""Random instance builders shared by several test modules."""

import numpy as np

from pixalign.warp import triangulate


def jittered(template, rng, amount):
    """Template plus uniform jitter, halved until no reference triangle flips."""
    tri = triangulate(template).triangles
    j = rng.uniform(-amount, amount, size=template.shape)
    while True:
        p = template + j
        a, b, c = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
        area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        if (area > 0).all():
            return p
        j *= 0.5


def labelled_instance(r, d=None, C=None):
    """Gaussian classes in ``d`` dims with a nonsingular within-class scatter."""
    d = d or int(r.integers(1, 7))
    C = C or int(r.integers(2, 5))
    per = r.integers(2, 8, size=C)
    while per.sum() - C < d or per.sum() > 30:
        per = r.integers(2, 8, size=C)
    centres = r.normal(0, 3, size=(C, d))
    X = np.vstack([centres[c] + r.normal(0, 1, size=(n, d)) for c, n in enumerate(per)])
    y = np.repeat(np.arange(C), per)
    return X, y
