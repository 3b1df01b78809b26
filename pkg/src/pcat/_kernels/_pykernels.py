"""Pure numpy implementations of the hot loops.

These define the reference semantics; ``_ckernels`` must agree with them.
"""
import numpy as np


def nearest_segment(xy, px, py):
    """Closest point on the polyline ``xy`` to ``(px, py)``.

    Returns ``(segment, t, distance, qx, qy)`` where ``t`` in [0, 1] is the
    position along the segment. Ties go to the lowest segment index.
    """
    xy = np.asarray(xy, dtype=float)
    x0 = xy[:-1, 0]
    y0 = xy[:-1, 1]
    dx = xy[1:, 0] - x0
    dy = xy[1:, 1] - y0
    len2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(len2 > 0.0, ((px - x0) * dx + (py - y0) * dy) / len2, 0.0)
    low = t <= 0.0
    high = t >= 1.0
    t = np.where(low, 0.0, np.where(high, 1.0, t))
    qx = np.where(low, x0, np.where(high, xy[1:, 0], x0 + t * dx))
    qy = np.where(low, y0, np.where(high, xy[1:, 1], y0 + t * dy))
    d = np.hypot(px - qx, py - qy)
    if d.size == 0:
        return -1, 0.0, float("inf"), float("nan"), float("nan")
    i = int(np.argmin(d))
    return i, float(t[i]), float(d[i]), float(qx[i]), float(qy[i])


def best_split(x, y, min_leaf):
    """Best standard-deviation-reduction split of sorted ``x`` for labels ``y``.

    Returns ``(sdr, threshold, k)``: the first ``k`` rows go left
    (``x < threshold``). ``k == -1`` when no admissible split exists.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < 2 * min_leaf or min_leaf < 1:
        return float("-inf"), float("nan"), -1
    csum = np.cumsum(y)
    csq = np.cumsum(y * y)
    total, total_sq = csum[-1], csq[-1]
    mean = total / n
    var = total_sq / n - mean * mean
    sd_all = np.sqrt(var) if var > 0.0 else 0.0

    k = np.arange(min_leaf, n - min_leaf + 1)
    valid = x[k - 1] < x[k]
    k = k[valid]
    if k.size == 0:
        return float("-inf"), float("nan"), -1
    left, left_sq = csum[k - 1], csq[k - 1]
    kf = k.astype(float)
    rf = (n - k).astype(float)
    m_l = left / kf
    v_l = left_sq / kf - m_l * m_l
    sd_l = np.sqrt(np.where(v_l > 0.0, v_l, 0.0))
    right = total - left
    right_sq = total_sq - left_sq
    m_r = right / rf
    v_r = right_sq / rf - m_r * m_r
    sd_r = np.sqrt(np.where(v_r > 0.0, v_r, 0.0))
    sdr = sd_all - (kf / n) * sd_l - (rf / n) * sd_r
    j = int(np.argmax(sdr))
    best_k = int(k[j])
    a, b = x[best_k - 1], x[best_k]
    thr = a + (b - a) / 2.0
    if not thr > a:
        thr = b
    return float(sdr[j]), float(thr), best_k
