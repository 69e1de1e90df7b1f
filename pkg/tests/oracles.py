"""Brute-force reference implementations used only by the tests."""

import numpy as np
import scipy.linalg


def in_circumcircle(a, b, c, d):
    """True when ``d`` lies strictly inside the circumcircle of triangle abc.

    Solves for the circumcentre directly rather than using the incircle
    determinant, so it shares no code path with the triangulator.
    """
    A = 2.0 * np.array([[b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]])
    rhs = np.array([b @ b - a @ a, c @ c - a @ a])
    centre = np.linalg.solve(A, rhs)
    r2 = np.sum((a - centre) ** 2)
    return np.sum((d - centre) ** 2) < r2 * (1 - 1e-9)


def delaunay_violations(points, triangles):
    pts = np.asarray(points, dtype=np.float64)
    bad = []
    for t in triangles:
        a, b, c = pts[t]
        for k in range(len(pts)):
            if k in t:
                continue
            if in_circumcircle(a, b, c, pts[k]):
                bad.append((tuple(t), k))
    return bad


def total_scatter(X, labels):
    """Scatter of all samples about the mean of the class means."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels)
    mu = np.mean([X[y == c].mean(axis=0) for c in np.unique(y)], axis=0)
    D = X - mu
    return D.T @ D


def scatter_loops(X, labels):
    """Within/between scatter by explicit per-sample outer products."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    d = X.shape[1]
    means = {c: X[y == c].mean(axis=0) for c in classes}
    mu = np.mean(list(means.values()), axis=0)
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for x, c in zip(X, y):
        Sw += np.outer(x - means[c], x - means[c])
    for c in classes:
        Sb += np.sum(y == c) * np.outer(means[c] - mu, means[c] - mu)
    return Sw, Sb


def lda_directions(X, labels, r):
    """Top ``r`` eigenvectors of the dense generalized problem S_b v = l S_w v."""
    Sw, Sb = scatter_loops(X, labels)
    lam, V = scipy.linalg.eig(Sb, Sw)
    lam = lam.real
    order = np.argsort(-lam)
    V = V[:, order[:r]].real
    return lam[order[:r]], V / np.linalg.norm(V, axis=0)


def angle(u, v):
    """Angle between two lines (sign-insensitive), radians."""
    c = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(min(1.0, c)))


def roc_table(genuine, impostor):
    """``{t: (far, vr)}`` by direct counting at every observed score."""
    g = list(genuine)
    im = list(impostor)
    out = {}
    for t in sorted(set(g) | set(im), reverse=True):
        out[t] = (sum(s >= t for s in im) / len(im), sum(s >= t for s in g) / len(g))
    return out


def affine_map_from_triangles(src, dst):
    """``M`` (2x3) with ``dst = M @ [x, y, 1]`` for the three vertex pairs."""
    A = np.c_[src, np.ones(3)]
    return np.linalg.solve(A, dst).T
