"""Independent reference computations used by the test-suite.

Everything here is written with plain loops / explicit matrices and shares no
code path with the package implementation it checks.
"""

import math

import numpy as np


def homogeneous_projection(K, T, p):
    """Full ``K @ T @ [p, 1]`` product followed by perspective division."""
    hom = K @ (T @ np.append(p, 1.0))
    cam_z = (T @ np.append(p, 1.0))[2]
    return hom[0] / hom[2], hom[1] / hom[2], cam_z


def backproject_all_pixels(depth, K, T):
    """World point for every pixel via explicit inverse matrices (canonical K only)."""
    h, w = depth.shape
    Kinv = np.linalg.inv(K[:, :3])
    Tinv = np.linalg.inv(T)
    vs, us = np.mgrid[0:h, 0:w]
    rays = np.stack([us.ravel(), vs.ravel(), np.ones(h * w)])
    cam = (Kinv @ rays) * depth.ravel()
    world = Tinv @ np.vstack([cam, np.ones(h * w)])
    return world[:3].T.reshape(h, w, 3)


def brute_force_correspondences(centroids, depth, K, T, raster_h, raster_w, thresh, max_range=10.0):
    """Enumerate every (raster cell, voxel) pair and apply the acceptance rule directly."""
    h, w = depth.shape
    fy, fx = h // raster_h, w // raster_w
    surface = backproject_all_pixels(depth, K, T)
    hits = []  # per voxel: (pixel u, pixel v, distance) or None
    for c in centroids:
        u, v, z = homogeneous_projection(K, T, c)
        if z <= 0:
            hits.append(None)
            continue
        pu, pv = math.floor(round(u, 9) + 0.5), math.floor(round(v, 9) + 0.5)
        if not (0 <= pu < w and 0 <= pv < h and 0 < depth[pv, pu] <= max_range):
            hits.append(None)
            continue
        hits.append((pu, pv, math.sqrt(sum((c[k] - surface[pv, pu, k]) ** 2 for k in range(3)))))
    best = {}
    for cell in range(raster_h * raster_w):
        cy, cx = divmod(cell, raster_w)
        for j, hit in enumerate(hits):
            if hit is None:
                continue
            pu, pv, dist = hit
            if not (cx * fx <= pu < (cx + 1) * fx and cy * fy <= pv < (cy + 1) * fy):
                continue
            key = (round(dist, 12), j)  # picometre ties go to the lower index
            if dist <= thresh and (cell not in best or key < best[cell]):
                best[cell] = key
    return {(cell, j) for cell, (_, j) in best.items()}


def brute_force_radius(query, reference, radius):
    out = []
    for q in query:
        out.append([j for j, r in enumerate(reference) if math.dist(q, r) <= radius])
    return out


def dense_pixel_voxel_loss(f2d, f3d, pairs, tau):
    """Symmetric pair-level InfoNCE built from the full similarity matrix."""
    a = f2d[[p for p, _ in pairs]]
    b = f3d[[v for _, v in pairs]]
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    logits = (a @ b.T) / tau
    m = len(pairs)
    total = 0.0
    for i in range(m):
        row = logits[i]
        col = logits[:, i]
        total -= row[i] - math.log(sum(math.exp(x) for x in row))
        total -= col[i] - math.log(sum(math.exp(x) for x in col))
    return total / m


def masked_softmax_ce(scores, labels, covered, temperature):
    total, count = 0.0, 0
    for i, (row, y) in enumerate(zip(scores, labels)):
        if not covered[i]:
            continue
        z = [s / temperature for s in row]
        mx = max(z)
        lse = mx + math.log(sum(math.exp(x - mx) for x in z))
        total += lse - z[y]
        count += 1
    return total / count


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])


def random_pose_matrix(rng, scale=2.0):
    T = np.eye(4)
    T[:3, :3] = random_rotation(rng)
    T[:3, 3] = rng.uniform(-scale, scale, 3)
    return T


def render_plane_depth(K, T, normal, offset, h, w, max_range=10.0):
    """Analytic depth of the plane ``normal . x = offset`` seen by camera ``T``."""
    R, t = T[:3, :3], T[:3, 3]
    center = -R.T @ t
    depth = np.zeros((h, w))
    for v in range(h):
        for u in range(w):
            d_cam = np.array([(u - K[0, 2]) / K[0, 0], (v - K[1, 2]) / K[1, 1], 1.0])
            denom = normal @ (R.T @ d_cam)
            if abs(denom) < 1e-12:
                continue
            s = (offset - normal @ center) / denom
            if 0 < s <= max_range:
                depth[v, u] = s
    return depth
