"""Semantic class table for the synthetic street scene.

Indices follow the CARLA semantic tags where they exist; the last two slots
hold the custom crosswalk and cyclist classes so that the table has 24 entries.
"""

CLASS_NAMES = (
    "unlabeled", "building", "fence", "other", "pedestrian", "pole",
    "road_line", "road", "sidewalk", "vegetation", "car", "wall",
    "traffic_sign", "sky", "ground", "bridge", "rail_track", "guard_rail",
    "traffic_light", "static", "dynamic", "water", "crosswalk", "cyclist",
)

CLASS_RGB = (
    (0, 0, 0), (70, 70, 70), (100, 40, 40), (55, 90, 80), (220, 20, 60),
    (153, 153, 153), (157, 234, 50), (128, 64, 128), (244, 35, 232),
    (107, 142, 35), (0, 0, 142), (102, 102, 156), (220, 220, 0),
    (70, 130, 180), (81, 0, 81), (150, 100, 100), (230, 150, 140),
    (180, 165, 180), (250, 170, 30), (110, 190, 160), (170, 120, 50),
    (45, 60, 150), (255, 255, 255), (119, 11, 32),
)

CLASS_COUNT = len(CLASS_NAMES)
CLASS = {name: i for i, name in enumerate(CLASS_NAMES)}

FRAME_HEIGHT = 45
FRAME_WIDTH = 85


def default_palette():
    """Class index -> (name, r, g, b)."""
    return {i: (CLASS_NAMES[i],) + CLASS_RGB[i] for i in range(CLASS_COUNT)}
