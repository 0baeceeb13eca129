"""Calibrate every drone from the checkerboards and lift pedestrians to the ground.

    python demos/01_calibrate_and_lift.py

A short simple-preset sequence is simulated. For each drone in frame 0 the
pose is recovered from the visible board corners, and each observed foot
pixel is pushed back through the ground homography and compared with the
true pedestrian positions.
"""

import numpy as np

from dronebev.calib import calibrate_frame
from dronebev.geometry import ground_homography, image_to_ground_many, rotation_geodesic
from dronebev.simworld import preset, simulate

seq = simulate(preset("simple", frame_count=3, rng_seed=1))
K = seq.intrinsics
print(f"focal length {K.focal_x:.1f} px, image {K.image_width}x{K.image_height}")
print(f"{seq.drone_count} drones, {seq.config.pedestrian_count} pedestrians\n")

print("drone  corners  rms px  rot err deg  trans err cm  ground err cm")
cal = calibrate_frame(seq.captures[0], K)
truth = seq.positions[0]
for d, res in sorted(cal.items()):
    cap = seq.captures[0][d]
    pose = seq.poses[0][d]
    rot = np.degrees(rotation_geodesic(res.pose.rotation, pose.rotation))
    trans = 100 * np.linalg.norm(res.pose.translation - pose.translation)
    # lift observed feet and score each against the nearest true pedestrian
    ground = image_to_ground_many(ground_homography(res.projection), cap.ped_pixels)
    if len(ground):
        near = np.linalg.norm(ground[:, None] - truth[None], axis=2).min(axis=1)
        gerr = f"{100 * np.median(near):.1f}"
    else:
        gerr = "-"
    print(f"{d:5d}  {res.count:7d}  {res.rms:6.3f}  {rot:11.4f}  {trans:12.2f}  {gerr:>13}")

# a view that loses its boards keeps the previous frame's pose
row = list(seq.captures[1])
cap = row[0]
row[0] = type(cap)(**{**cap.__dict__, "corner_ids": cap.corner_ids[:2], "corner_world": cap.corner_world[:2], "corner_pixels": cap.corner_pixels[:2]})
held = calibrate_frame(row, K, previous=cal)
print(f"\nframe 1, drone 0 with two corners: held over = {held[0].held_over}")
