"""Static SVG top-down trajectory plots.

Hand-rolled SVG (no raster dependencies): room boundary, obstacle discs,
goal region, one polyline per trial colored by method, and a red diamond
marker at the final point of collided trials.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .sim import World

METHOD_COLORS = {"hint": "#2ca02c", "hierarchy": "#1f77b4"}
_FALLBACK_COLORS = ("#d62728", "#9467bd", "#8c564b", "#e377c2")


@dataclass
class Trajectory:
    points: np.ndarray  # (T, 2+) world x, y per step
    method: str
    collided: bool = False


def render_svg(world: World, trajectories: list[Trajectory], scale: float = 40.0) -> str:
    """Serialize the scene to an SVG document string."""
    if not trajectories:
        raise ValueError("empty trajectory set")
    pad = 10.0
    w = world.cfg.room_width * scale + 2 * pad
    h = world.cfg.room_length * scale + 2 * pad

    def sx(x: float) -> float:
        return pad + (x + world.half_w) * scale

    def sy(y: float) -> float:
        return pad + (world.half_l - y) * scale

    root = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=f"{w:.1f}",
        height=f"{h:.1f}",
        viewBox=f"0 0 {w:.1f} {h:.1f}",
    )
    ET.SubElement(
        root, "rect",
        x=f"{pad:.1f}", y=f"{pad:.1f}",
        width=f"{world.cfg.room_width * scale:.1f}",
        height=f"{world.cfg.room_length * scale:.1f}",
        fill="white", stroke="black", attrib={"stroke-width": "2"},
    )
    for ox, oy, orad in world.obstacles:
        ET.SubElement(
            root, "circle",
            cx=f"{sx(ox):.2f}", cy=f"{sy(oy):.2f}", r=f"{orad * scale:.2f}",
            fill="#bbbbbb", stroke="#666666",
        )
    if world.goal is not None:
        gx, gy = world.goal
        ET.SubElement(
            root, "circle",
            cx=f"{sx(gx):.2f}", cy=f"{sy(gy):.2f}",
            r=f"{world.cfg.goal_radius * scale:.2f}",
            fill="#ffd54d", stroke="#bb9900", attrib={"fill-opacity": "0.6"},
        )
    fallback = 0
    seen_colors: dict[str, str] = {}
    for traj in trajectories:
        color = METHOD_COLORS.get(traj.method)
        if color is None:
            color = seen_colors.get(traj.method)
            if color is None:
                color = _FALLBACK_COLORS[fallback % len(_FALLBACK_COLORS)]
                seen_colors[traj.method] = color
                fallback += 1
        pts = " ".join(f"{sx(p[0]):.2f},{sy(p[1]):.2f}" for p in traj.points)
        ET.SubElement(
            root, "polyline",
            points=pts, fill="none", stroke=color,
            attrib={"stroke-width": "1.5", "stroke-opacity": "0.8"},
        )
        if traj.collided and len(traj.points):
            x, y = sx(traj.points[-1][0]), sy(traj.points[-1][1])
            d = 5.0
            ET.SubElement(
                root, "polygon",
                points=f"{x:.2f},{y - d:.2f} {x + d:.2f},{y:.2f} {x:.2f},{y + d:.2f} {x - d:.2f},{y:.2f}",
                fill="#d62728",
            )
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"
