import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.lib.stride_tricks import sliding_window_view

from conftest import EXTENT, phantom_with
from tactilesense.errors import DegenerateGrid, LostTarget, NonConvergent
from tactilesense.interrogation import (COARSE, REFINED, CandidateLocation, DetectConfig, FineConfig, RoiSpec,
                                        coarse_interrogate, detect_regions, localization_error,
                                        merge_candidates, plan_grid, refine_location)
from tactilesense.phantom import InclusionSpec, PhantomSpec, SensorConfig, TactileSimulator

REFERENCE_ROI = RoiSpec(EXTENT, (38.25, 38.25, 25.0))


# --- plan_grid -----------------------------------------------------------------------

def test_first_row_contains_reported_waypoints():
    plan = plan_grid(REFERENCE_ROI, 15, 15)
    first_row = [y for x, y in plan.waypoints if x == 38.25]
    for y in (38.25, 53.25, 68.25, 113.25):
        assert min(abs(yy - y) for yy in first_row) < 1e-9
    assert plan.waypoints[0] == (38.25, 38.25)


def enumerate_oracle(rx, ry, xs, ys, dx, dy):
    count = 0
    for i in range(10_000):
        x = xs + i * dx
        if not x < rx:
            break
        for j in range(10_000):
            y = ys + j * dy
            if not y < ry:
                break
            count += 1
    return count


def test_waypoint_count_matches_enumeration():
    plan = plan_grid(REFERENCE_ROI, 15, 15)
    assert len(plan) == enumerate_oracle(165.1, 215.9, 38.25, 38.25, 15, 15) == 108


def test_single_waypoint_plan():
    roi = RoiSpec(EXTENT, (EXTENT[0] / 2, EXTENT[1] / 2, 25.0))
    plan = plan_grid(roi, EXTENT[0] / 2, EXTENT[1] / 2)
    assert plan.waypoints == ((EXTENT[0] / 2, EXTENT[1] / 2),)


def test_degenerate_spacing():
    with pytest.raises(DegenerateGrid):
        plan_grid(REFERENCE_ROI, 0.0, 15)
    with pytest.raises(DegenerateGrid):
        plan_grid(REFERENCE_ROI, 15, 300)


def test_roi_start_strictly_inside():
    with pytest.raises(ValueError):
        RoiSpec(EXTENT, (0.0, 10.0, 25.0))


@settings(max_examples=60, deadline=None)
@given(st.floats(1, 160), st.floats(1, 210), st.floats(1, 60), st.floats(1, 60))
def test_grid_raster_structure(xs, ys, dx, dy):
    roi = RoiSpec(EXTENT, (min(xs, 165.0), min(ys, 215.8), 25.0))
    plan = plan_grid(roi, dx, dy)
    pts = np.array(plan.waypoints)
    assert np.all((pts >= 0) & (pts <= EXTENT))
    assert len(plan) == enumerate_oracle(*EXTENT, roi.start[0], roi.start[1], dx, dy)
    for a, b in zip(plan.waypoints, plan.waypoints[1:]):
        if a[0] == b[0]:
            assert b[1] - a[1] == pytest.approx(dy)
        else:
            assert b[0] - a[0] == pytest.approx(dx) and b[1] == roi.start[1]


# --- detect_regions ---------------------------------------------------------------------

def disk_image(shape, centers, radius, value=200):
    v, u = np.indices(shape)
    img = np.zeros(shape, dtype=np.uint8)
    for cu, cv in centers:
        img[(u - cu) ** 2 + (v - cv) ** 2 <= radius ** 2] = value
    return img


def flood_fill_oracle(img, thr):
    """Brute-force 3x3 median, threshold and BFS over 8-neighbours."""
    padded = np.pad(img, 1, mode="edge")
    med = np.median(sliding_window_view(padded, (3, 3)), axis=(2, 3))
    mask = med > thr
    seen = np.zeros_like(mask)
    sizes = []
    h, w = mask.shape
    for sv in range(h):
        for su in range(w):
            if mask[sv, su] and not seen[sv, su]:
                q = deque([(sv, su)])
                seen[sv, su] = True
                n = 0
                while q:
                    v, u = q.popleft()
                    n += 1
                    for dv in (-1, 0, 1):
                        for du in (-1, 0, 1):
                            a, b = v + dv, u + du
                            if 0 <= a < h and 0 <= b < w and mask[a, b] and not seen[a, b]:
                                seen[a, b] = True
                                q.append((a, b))
                sizes.append(n)
    return sorted(sizes, reverse=True)


def test_blank_image_no_regions():
    assert detect_regions(np.zeros((64, 80), dtype=np.uint8), 1, 4.0) == []


def test_single_disk_geometry():
    img = disk_image((256, 320), [(160.3, 120.7)], 50)
    (r,) = detect_regions(img, 25, 100)
    assert abs(r.equivalent_diameter_px - 100) <= 2
    assert r.equivalent_diameter_px == pytest.approx(2 * math.sqrt(r.pixel_count / math.pi))
    assert abs(r.centroid_px[0] - 160.3) <= 0.5 and abs(r.centroid_px[1] - 120.7) <= 0.5


def test_two_disks_match_flood_fill():
    img = disk_image((200, 300), [(70, 100), (200, 90)], 40)
    img = np.maximum(img, disk_image((200, 300), [(200, 90)], 30, value=250))
    regions = detect_regions(img, 10, 100)
    assert len(regions) == 2
    assert [r.pixel_count for r in regions] == flood_fill_oracle(img, 100)


def test_small_regions_dropped_and_sorted():
    img = disk_image((200, 300), [(60, 60), (200, 140)], 20)
    img = np.maximum(img, disk_image((200, 300), [(150, 60)], 30))
    img = np.maximum(img, disk_image((200, 300), [(250, 40)], 3))
    regions = detect_regions(img, 20, 100)
    assert len(regions) == 3
    counts = [r.pixel_count for r in regions]
    assert counts == sorted(counts, reverse=True)
    # equal-area disks: lower centroid row first
    assert regions[1].centroid_px[1] < regions[2].centroid_px[1]


def test_region_roi_coordinates():
    from tactilesense.phantom import TactileFrame
    img = disk_image((256, 320), [(159.5 + 50, 127.5)], 30)
    frame = TactileFrame(img, 5.0, (80.0, 100.0, -3.0))
    (r,) = detect_regions(frame, 10, 100, mm_per_pixel=0.12)
    assert r.centroid_roi == pytest.approx((80.0 + 6.0, 100.0), abs=0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(-35, 35), st.integers(-30, 30))
def test_translation_equivariance(a, b):
    # shifts keep every disk at least 2 px inside the frame, clear of the filter's edge handling
    base = disk_image((220, 300), [(140, 110), (60, 60)], 22)
    base = np.maximum(base, disk_image((220, 300), [(230, 150)], 15, value=120))
    shifted = np.roll(np.roll(base, b, axis=0), a, axis=1)
    r0 = detect_regions(base, 5, 100)
    r1 = detect_regions(shifted, 5, 100)
    assert len(r0) == len(r1)
    for x, y in zip(sorted(r0, key=lambda r: r.centroid_px), sorted(r1, key=lambda r: r.centroid_px)):
        assert y.centroid_px[0] - x.centroid_px[0] == pytest.approx(a, abs=1e-9)
        assert y.centroid_px[1] - x.centroid_px[1] == pytest.approx(b, abs=1e-9)
        assert x.pixel_count == y.pixel_count


# --- coarse interrogation -------------------------------------------------------------------

def reference_phantom():
    hard = InclusionSpec((44.5, 51.5, -6.0), 18.9, 628.0)
    soft = InclusionSpec((40.0, 118.5, -6.0), 15.3, 94.4)
    return phantom_with(hard, soft, layer=12.0)


def make_sim(phantom, noise=0.0, seed=0, start=(38.25, 38.25, 25.0)):
    return TactileSimulator(phantom, SensorConfig.reduced(pos_noise_bound=noise), seed=seed, start=start)


def test_coarse_empty_phantom():
    sim = make_sim(PhantomSpec(EXTENT))
    res = coarse_interrogate(sim, plan_grid(REFERENCE_ROI, 15, 15), 5.0, z_safe=25.0)
    assert res.candidates == [] and len(res.visits) == 108


def test_coarse_noise_free_contains_nearest_waypoints():
    ph = reference_phantom()
    plan = plan_grid(REFERENCE_ROI, 15, 15)
    res = coarse_interrogate(make_sim(ph), plan, 5.0, z_safe=25.0)
    cands = {c.xy_roi for c in res.candidates}
    assert all(c.source == COARSE for c in res.candidates)
    for inc in ph.inclusions:
        near = sorted(plan.waypoints, key=lambda p: math.dist(p, inc.center_roi[:2]))[:2]
        assert set(near) <= cands
    # one inclusion shows up at several waypoints
    assert len(cands) > len(ph.inclusions)


def test_coarse_retracts_between_waypoints():
    sim = make_sim(reference_phantom())
    plan = plan_grid(REFERENCE_ROI, 60, 80)
    coarse_interrogate(sim, plan, 5.0, z_safe=25.0)
    assert sim.pose[2] == 25.0


# --- fine interrogation -------------------------------------------------------------------------

def single(xy=(80.0, 100.0), d=15.3, e=94.4, layer=6.0):
    return phantom_with(InclusionSpec((xy[0], xy[1], -6.0), d, e), layer=layer)


def test_centered_candidate_one_iteration():
    sim = make_sim(single(), start=(80, 100, 25))
    out = refine_location(sim, CandidateLocation((80.0, 100.0)), z_safe=25.0)
    assert out.iterations == 1 and out.xy_roi == (80.0, 100.0) and out.source == REFINED


@pytest.mark.parametrize("dx,dy", [(10, 0), (0, -10), (7, 7), (-6, 8)])
def test_converges_from_ten_mm(dx, dy):
    sim = make_sim(single(), start=(80, 100, 25))
    out = refine_location(sim, CandidateLocation((80.0 + dx, 100.0 + dy)), z_safe=25.0)
    assert localization_error(out.xy_roi, (80, 100)) <= 2.1
    offs = [it.offset_norm_px for it in out.trace]
    assert all(b < a for a, b in zip(offs, offs[1:]))


def test_lost_target():
    sim = make_sim(single(), start=(80, 100, 25))
    with pytest.raises(LostTarget):
        refine_location(sim, CandidateLocation((20.0, 20.0)), z_safe=25.0)


def test_non_convergent():
    sim = make_sim(single(), start=(80, 100, 25))
    with pytest.raises(NonConvergent):
        refine_location(sim, CandidateLocation((90.0, 100.0)), FineConfig(max_iters=1), z_safe=25.0)


# --- merge / error ------------------------------------------------------------------------------

def C(x, y):
    return CandidateLocation((x, y), REFINED)


def test_merge_reported_pair():
    assert localization_error((38.20, 62.00), (44.00, 62.40)) == pytest.approx(5.8, abs=0.05)
    out = merge_candidates([C(38.20, 62.00), C(44.00, 62.40)])
    assert [c.xy_roi for c in out] == [(44.00, 62.40)]


def test_merge_distinct_pair():
    assert localization_error((44.0, 62.4), (44.0, 125.0)) == pytest.approx(62.6, abs=0.01)
    assert len(merge_candidates([C(44.0, 62.4), C(44.0, 125.0)])) == 2


def test_merge_empty_and_chain():
    assert merge_candidates([]) == []
    out = merge_candidates([C(0, 0), C(5, 0), C(10, 0), C(50, 50)])
    assert [c.xy_roi for c in out] == [(10, 0), (50, 50)]


def test_merge_threshold_strict():
    assert len(merge_candidates([C(0, 0), C(6, 0)], 6.0)) == 2


def component_count(points, thr):
    left = set(range(len(points)))
    n = 0
    while left:
        n += 1
        stack = [left.pop()]
        while stack:
            i = stack.pop()
            near = {j for j in left if math.dist(points[i], points[j]) < thr}
            left -= near
            stack.extend(near)
    return n


pts = st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), max_size=12)


@settings(max_examples=80, deadline=None)
@given(pts)
def test_merge_properties(p):
    cands = [C(x, y) for x, y in p]
    out = merge_candidates(cands)
    assert len(out) <= len(cands)
    assert all(o in cands for o in out)
    assert len(out) == component_count(p, 6.0)
    dup = merge_candidates(cands + cands)
    assert sorted(c.xy_roi for c in dup) == sorted(c.xy_roi for c in out)


@pytest.mark.parametrize("a,b,expect", [((44.00, 62.40), (44.50, 51.50), 10.9),
                                         ((44.00, 125.00), (40.00, 118.50), 7.63)])
def test_localization_error_values(a, b, expect):
    assert localization_error(a, b) == pytest.approx(expect, abs=0.05)


def test_localization_error_identical():
    assert localization_error((3.0, 4.0), (3.0, 4.0)) == 0.0


# --- end to end (noise free) -----------------------------------------------------------------------

@settings(max_examples=4, deadline=None)
@given(st.integers(0, 10_000))
def test_unique_count_equals_truth(seed):
    rng = np.random.default_rng(seed)
    extent = (100.0, 100.0)
    incs = []
    while len(incs) < rng.integers(1, 4):
        c = rng.uniform(20, 80, 2)
        if all(math.dist(c, i.center_roi[:2]) >= 30 for i in incs):
            incs.append(InclusionSpec((c[0], c[1], -6.0), float(rng.uniform(14, 20)), float(rng.choice([94.4, 628.0]))))
    ph = PhantomSpec(extent, inclusion_layer_depth=6.0, inclusions=tuple(incs))
    roi = RoiSpec(extent, (10.0, 10.0, 25.0))
    sim = make_sim(ph, start=roi.start)
    res = coarse_interrogate(sim, plan_grid(roi, 15, 15), 5.0, z_safe=25.0)
    refined = []
    for c in res.candidates:
        try:
            refined.append(refine_location(sim, c, z_safe=25.0))
        except (LostTarget, NonConvergent):
            pass
    merged = merge_candidates(refined)
    assert len(merged) == len(incs)
