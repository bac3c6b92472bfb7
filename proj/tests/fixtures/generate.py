"""Regenerates the committed test fixtures. Independent of the C++ code."""

import math


def color_wheel():
    # Middlebury wheel: RY, YG, GC, CB, BM, MR segment lengths.
    segments = [(15, (255, 0, 0), (255, 255, 0)), (6, (255, 255, 0), (0, 255, 0)),
                (4, (0, 255, 0), (0, 255, 255)), (11, (0, 255, 255), (0, 0, 255)),
                (13, (0, 0, 255), (255, 0, 255)), (6, (255, 0, 255), (255, 0, 0))]
    wheel = []
    for n, a, b in segments:
        for i in range(n):
            wheel.append(tuple((a[k] + (b[k] - a[k]) * i / n) / 255.0 for k in range(3)))
    return wheel


def flow_color(u, v):
    wheel = color_wheel()
    n = len(wheel)
    rad = min(math.hypot(u, v), 1.0)
    a = math.atan2(-v, -u) / math.pi
    fk = (a + 1.0) / 2.0 * (n - 1)
    k0 = int(math.floor(fk))
    k1 = (k0 + 1) % n
    f = fk - k0
    return [1.0 - rad * (1.0 - ((1 - f) * wheel[k0][c] + f * wheel[k1][c])) for c in range(3)]


def write_wheel(path):
    with open(path, "w") as out:
        out.write("# angle_deg r g b for unit flow (cos, sin), max_norm 1\n")
        for deg in (0, 90, 180, 270):
            u, v = float(round(math.cos(math.radians(deg)))), float(round(math.sin(math.radians(deg))))
            r, g, b = flow_color(u, v)
            out.write(f"{deg} {r!r} {g!r} {b!r}\n")


def write_checkerboard(path, size=8, cell=2):
    pixels = bytearray()
    for row in range(size):
        for col in range(size):
            on = ((row // cell) + (col // cell)) % 2 == 0
            pixels += bytes((255, 255, 255)) if on else bytes((17, 128, 200))
    with open(path, "wb") as out:
        out.write(f"P6\n{size} {size}\n255\n".encode() + pixels)


if __name__ == "__main__":
    write_wheel("flow_wheel.txt")
    write_checkerboard("checkerboard.ppm")
