"""Regenerate the robot fixtures shipped in ``src/egoshift/data``.

Writes a unit-cube mesh (OBJ + binary STL), a two-link planar test chain and
a dual-arm robot with two 6-joint arms mounted 0.68 m apart. Upper arm and
forearm lengths (0.32 m, 0.30 m) leave room for base shifts of 0.1 m and
10 degrees around typical tabletop targets.

    python scripts/build_robot_fixtures.py [outdir]
"""

import json
import struct
import sys
from pathlib import Path

CUBE_V = [
    (-0.5, -0.5, -0.5), (0.5, -0.5, -0.5), (0.5, 0.5, -0.5), (-0.5, 0.5, -0.5),
    (-0.5, -0.5, 0.5), (0.5, -0.5, 0.5), (0.5, 0.5, 0.5), (-0.5, 0.5, 0.5),
]
# outward-facing quads (counterclockwise seen from outside)
CUBE_Q = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (2, 3, 7, 6), (1, 2, 6, 5), (0, 4, 7, 3)]


def write_cube(out):
    lines = ["# unit cube centred on the origin"]
    lines += [f"v {x} {y} {z}" for x, y, z in CUBE_V]
    lines += ["f " + " ".join(str(i + 1) for i in q) for q in CUBE_Q]
    (out / "unit_box.obj").write_text("\n".join(lines) + "\n")

    tris = []
    for a, b, c, d in CUBE_Q:
        tris += [(a, b, c), (a, c, d)]
    with open(out / "unit_box.stl", "wb") as fh:
        fh.write(b"unit cube".ljust(80, b"\0"))
        fh.write(struct.pack("<I", len(tris)))
        for t in tris:
            fh.write(struct.pack("<3f", 0.0, 0.0, 0.0))
            for i in t:
                fh.write(struct.pack("<3f", *CUBE_V[i]))
            fh.write(struct.pack("<H", 0))


def box_visual(size, center, rgba):
    sx, sy, sz = size
    cx, cy, cz = center
    return (
        f'    <visual>\n      <origin xyz="{cx} {cy} {cz}" rpy="0 0 0"/>\n'
        f'      <geometry><mesh filename="meshes/unit_box.obj" scale="{sx} {sy} {sz}"/></geometry>\n'
        f'      <material name="m"><color rgba="{rgba}"/></material>\n    </visual>\n'
    )


def link(name, visual=""):
    if not visual:
        return f'  <link name="{name}"/>\n'
    return f'  <link name="{name}">\n{visual}  </link>\n'


def joint(name, jtype, parent, child, xyz, axis=None, limits=None):
    s = f'  <joint name="{name}" type="{jtype}">\n    <parent link="{parent}"/>\n    <child link="{child}"/>\n'
    s += f'    <origin xyz="{xyz[0]} {xyz[1]} {xyz[2]}" rpy="0 0 0"/>\n'
    if axis is not None:
        s += f'    <axis xyz="{axis[0]} {axis[1]} {axis[2]}"/>\n'
    if limits is not None:
        s += f'    <limit lower="{limits[0]}" upper="{limits[1]}" effort="10" velocity="3"/>\n'
    return s + "  </joint>\n"


ARM_GRAY = "0.72 0.72 0.75 1"
ARM_DARK = "0.25 0.25 0.28 1"
ARM_ACCENT = {"left": "0.85 0.45 0.2 1", "right": "0.2 0.45 0.85 1"}

ARM_SEGMENTS = [
    # joint, axis, limits, origin (from previous link), link visual size, centre
    ("j1", (0, 0, 1), (-2.6, 2.6), (0, 0, 0.0), (0.07, 0.07, 0.06), (0, 0, 0.03)),
    ("j2", (0, 1, 0), (-1.8, 1.8), (0, 0, 0.12), (0.32, 0.05, 0.05), (0.16, 0, 0)),
    ("j3", (0, 1, 0), (-2.6, 2.6), (0.32, 0, 0), (0.3, 0.045, 0.045), (0.15, 0, 0)),
    ("j4", (1, 0, 0), (-2.6, 2.6), (0.3, 0, 0), (0.06, 0.04, 0.04), (0.03, 0, 0)),
    ("j5", (0, 1, 0), (-1.8, 1.8), (0.06, 0, 0), (0.06, 0.04, 0.04), (0.03, 0, 0)),
    ("j6", (1, 0, 0), (-2.6, 2.6), (0.06, 0, 0), (0.04, 0.08, 0.03), (0.02, 0, 0)),
]


def dual_arm_urdf():
    s = '<?xml version="1.0"?>\n<robot name="dual_arm_fixture">\n'
    s += link("base_link", box_visual((0.16, 0.5, 0.04), (-0.08, 0, -0.02), ARM_DARK))
    for side, y in (("left", 0.34), ("right", -0.34)):
        s += link(f"{side}_mount")
        s += joint(f"{side}_mount_joint", "fixed", "base_link", f"{side}_mount", (0, y, 0))
        parent = f"{side}_mount"
        for i, (jn, axis, lim, xyz, size, centre) in enumerate(ARM_SEGMENTS):
            child = f"{side}_link{i + 1}"
            color = ARM_ACCENT[side] if i in (1, 5) else ARM_GRAY
            s += link(child, box_visual(size, centre, color))
            s += joint(f"{side}_{jn}", "revolute", parent, child, xyz, axis, lim)
            parent = child
        s += link(f"{side}_ee")
        s += joint(f"{side}_ee_joint", "fixed", parent, f"{side}_ee", (0.08, 0, 0))
        for k, sign in ((1, 1), (2, -1)):
            fl = f"{side}_finger{k}"
            s += link(fl, box_visual((0.05, 0.012, 0.02), (0.025, 0, 0), ARM_DARK))
            s += joint(f"{fl}_joint", "prismatic", parent, fl, (0.04, sign * 0.008, 0), (0, sign, 0), (0.0, 0.03))
    s += "</robot>\n"
    return s


def planar_urdf():
    s = '<?xml version="1.0"?>\n<robot name="planar_2link">\n'
    s += link("base_link")
    s += link("link1", box_visual((0.3, 0.03, 0.03), (0.15, 0, 0), ARM_GRAY))
    s += link("link2", box_visual((0.2, 0.03, 0.03), (0.1, 0, 0), ARM_GRAY))
    s += link("tip")
    s += joint("j1", "revolute", "base_link", "link1", (0, 0, 0), (0, 0, 1), (-3.14159, 3.14159))
    s += joint("j2", "revolute", "link1", "link2", (0.3, 0, 0), (0, 0, 1), (-3.14159, 3.14159))
    s += joint("tip_joint", "fixed", "link2", "tip", (0.2, 0, 0))
    s += "</robot>\n"
    return s


def main(out):
    out = Path(out)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    write_cube(out / "meshes")
    (out / "dual_arm.urdf").write_text(dual_arm_urdf())
    (out / "planar_2link.urdf").write_text(planar_urdf())
    arms = {}
    for name, side in (("L", "left"), ("R", "right")):
        arms[name] = {
            "mount_link": f"{side}_mount",
            "ee_link": f"{side}_ee",
            "joints": [f"{side}_{s[0]}" for s in ARM_SEGMENTS],
            "gripper_joints": [f"{side}_finger1_joint", f"{side}_finger2_joint"],
            "gripper_scale": 0.03,
        }
    robot = {"name": "dual_arm_fixture", "urdf": "dual_arm.urdf", "base_link": "base_link",
             "channel_order": ["L", "R"], "arms": arms}
    (out / "dual_arm.json").write_text(json.dumps(robot, indent=2) + "\n")
    planar = {"name": "planar_2link", "urdf": "planar_2link.urdf", "base_link": "base_link",
              "arms": {"L": {"mount_link": "base_link", "ee_link": "tip", "joints": ["j1", "j2"]}}}
    (out / "planar_2link.json").write_text(json.dumps(planar, indent=2) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src" / "egoshift" / "data")
