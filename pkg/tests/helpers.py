"""Small geometry generators shared by several test modules."""

import numpy as np

from poseuq import Pose, TriangleMesh


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose.from_quaternion(q).rotation


def random_pose(rng, z_range=(0.5, 1.0), lateral=0.1):
    t = np.array(
        [
            rng.uniform(-lateral, lateral),
            rng.uniform(-lateral, lateral),
            rng.uniform(*z_range),
        ]
    )
    return Pose.from_rt(random_rotation(rng), t)


def random_hull_mesh(rng, n_points, scale=0.05):
    """Closed random mesh from a convex hull; n_points vertices gives at
    most 2 n_points - 4 triangles."""
    from scipy.spatial import ConvexHull

    pts = rng.normal(size=(n_points, 3)) * scale
    hull = ConvexHull(pts)
    return TriangleMesh(vertices=pts, triangles=hull.simplices)
