"""Flat key=value run configuration.

Every numeric constant the pipeline uses lives here so a single text file
documents a run; unknown keys are rejected.  Example file:

    data_root = /data/kitti/training
    classes = car,pedestrian
    bev_resolution = 0.1
    anchor_stride = 0.5
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import MalformedInputError
from .metrics import DifficultyTable


@dataclass
class RunConfig:
    data_root: str = "."
    output_dir: str = "out"
    classes: tuple = ("car",)

    bev_x_min: float = 0.0
    bev_x_max: float = 70.0
    bev_y_min: float = -40.0
    bev_y_max: float = 40.0
    bev_resolution: float = 0.1
    height_lo: float = 0.0
    height_hi: float = 2.5
    height_slices: int = 5

    image_width: int = 1242
    image_height: int = 375
    sensor_height: float = 1.73

    anchor_stride: float = 0.5
    anchor_size_car: tuple = (3.9, 1.6, 1.56)
    anchor_size_pedestrian: tuple = (0.8, 0.6, 1.73)
    anchor_size_cyclist: tuple = (1.76, 0.6, 1.73)
    cluster_file: str = ""

    anchor_bg_iou: float = 0.3
    anchor_obj_iou_car: float = 0.5
    anchor_obj_iou_other: float = 0.45

    proposal_nms_iou: float = 0.8
    proposal_nms_keep: int = 1024
    final_nms_iou: float = 0.01

    eval_iou_car: float = 0.7
    eval_iou_other: float = 0.5
    ap_points: int = 11

    difficulty_min_height: tuple = (40.0, 25.0, 25.0)
    difficulty_max_occlusion: tuple = (0, 1, 2)
    difficulty_max_truncation: tuple = (0.15, 0.30, 0.50)

    recall_counts: tuple = (1, 2, 5, 10, 20, 50, 100, 300, 1024)
    jobs: int = 1

    def __post_init__(self):
        if self.bev_resolution <= 0:
            raise MalformedInputError("bev_resolution must be positive")
        if not (self.bev_x_max > self.bev_x_min and self.bev_y_max > self.bev_y_min):
            raise MalformedInputError("BEV extents must be well-ordered")
        if self.height_hi <= self.height_lo:
            raise MalformedInputError("height range must be non-empty")
        if self.height_slices < 1:
            raise MalformedInputError("height_slices must be >= 1")
        if self.anchor_stride <= 0:
            raise MalformedInputError("anchor_stride must be positive")
        if self.ap_points not in (11, 40):
            raise MalformedInputError("ap_points must be 11 or 40")
        if self.jobs < 1:
            raise MalformedInputError("jobs must be >= 1")

    @property
    def bev_extents(self):
        return ((self.bev_x_min, self.bev_x_max), (self.bev_y_min, self.bev_y_max))

    @property
    def ap_mode(self) -> str:
        return f"{self.ap_points}-point"

    def anchor_sizes_for(self, class_name: str):
        """Anchor dimension triples for a class; a cluster file wins over the
        built-in single-size defaults."""
        if self.cluster_file:
            from .anchor_grid import read_clusters_csv

            clusters = {k.lower(): v for k, v in read_clusters_csv(self.cluster_file).items()}
            if class_name.lower() in clusters:
                return clusters[class_name.lower()]
        key = f"anchor_size_{class_name.lower()}"
        if not hasattr(self, key):
            raise MalformedInputError(f"no anchor size configured for class {class_name!r}")
        return [getattr(self, key)]

    def eval_iou_for(self, class_name: str) -> float:
        return self.eval_iou_car if class_name.lower() == "car" else self.eval_iou_other

    def difficulty_table(self) -> DifficultyTable:
        return DifficultyTable(
            min_height=tuple(self.difficulty_min_height),
            max_occlusion=tuple(int(v) for v in self.difficulty_max_occlusion),
            max_truncation=tuple(self.difficulty_max_truncation),
        )


def _parse_value(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if like and isinstance(like[0], str):
            return tuple(parts)
        if like and isinstance(like[0], int) and not isinstance(like[0], bool):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    return raw


def load_config(text: str) -> RunConfig:
    """Parse key=value lines ('#' comments allowed) over the defaults."""
    defaults = RunConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(RunConfig)}
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedInputError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise MalformedInputError(f"line {lineno}: unknown key {key!r}")
        try:
            overrides[key] = _parse_value(raw, known[key])
        except ValueError as exc:
            raise MalformedInputError(f"line {lineno}: {exc}") from exc
    return replace(defaults, **overrides)


def read_config(path) -> RunConfig:
    with open(path, "r") as fh:
        return load_config(fh.read())
