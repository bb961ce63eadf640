"""Regenerates crates/core/data/mean_shape_68.txt.

The shape is a procedural approximation of an average frontal face in the
68-point iBUG/300-W ordering. Axes: x to the viewer's right, y down,
z away from the viewer (the nose tip has the most negative z). Units are
arbitrary (roughly millimetres); the file is recentred so the centroid is
at the origin.
"""
import math

pts = []
# 0-16 jaw line, viewer's left ear -> chin -> viewer's right ear
for i in range(17):
    t = math.pi * i / 16.0
    x = -68.0 * math.cos(t)
    y = -5.0 + 80.0 * math.sin(t) ** 1.2
    z = -12.0 + 60.0 * math.cos(t) ** 2
    pts.append((x, y, z))
# 17-21 and 22-26 eyebrows
for side in (-1, 1):
    xs = [-58, -47, -35, -23, -12] if side < 0 else [12, 23, 35, 47, 58]
    for x in xs:
        u = (abs(x) - 35.0) / 23.0
        y = -40.0 + 7.0 * u * u
        z = -24.0 + 0.006 * x * x
        pts.append((float(x), y, z))
# 27-30 nose bridge
for y, z in ((-22.0, -28.0), (-10.0, -34.0), (2.0, -40.0), (14.0, -47.0)):
    pts.append((0.0, y, z))
# 31-35 nose base
for x, y, z in ((-14, 22, -30), (-7, 24, -35), (0, 25, -38), (7, 24, -35), (14, 22, -30)):
    pts.append((float(x), float(y), float(z)))
# 36-41 viewer's left eye, 42-47 viewer's right eye
left_eye = [(-48, -21), (-40, -26), (-27, -26), (-18, -21), (-27, -17), (-40, -17)]
right_eye = [(18, -21), (27, -26), (40, -26), (48, -21), (40, -17), (27, -17)]
for x, y in left_eye + right_eye:
    pts.append((float(x), float(y), -22.0 + 0.005 * x * x))
# 48-59 outer lips, 60-67 inner lips
outer = [(-26, 45), (-17, 40), (-7, 37), (0, 38), (7, 37), (17, 40), (26, 45),
         (17, 51), (7, 54), (0, 55), (-7, 54), (-17, 51)]
inner = [(-22, 45), (-7, 43), (0, 43), (7, 43), (22, 45), (7, 47), (0, 47), (-7, 47)]
for x, y in outer + inner:
    pts.append((float(x), float(y), -32.0 + 0.02 * x * x))

assert len(pts) == 68
cx = sum(p[0] for p in pts) / 68
cy = sum(p[1] for p in pts) / 68
cz = sum(p[2] for p in pts) / 68
with open("crates/core/data/mean_shape_68.txt", "w") as f:
    f.write("68\n")
    for x, y, z in pts:
        f.write(f"{x - cx:.6f} {y - cy:.6f} {z - cz:.6f}\n")
