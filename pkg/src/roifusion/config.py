"""Run configuration: strict INI-style ``key = value`` sections with full defaults."""

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .exceptions import ConfigError

FUSION_CHOICES = ("concat", "sum", "max")
SAMPLER_CHOICES = ("d-fps", "f-fps", "fused")


def _ints(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _strs(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _mlps(text):
    """``16-16-32, 32-64`` -> ((16, 16, 32), (32, 64))."""
    return tuple(tuple(int(c) for c in part.split("-") if c) for part in _strs(text))


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join("-".join(str(c) for c in mlp) for mlp in value)
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _f(section, parser, default):
    return field(default=default, metadata={"section": section, "parser": parser})


@dataclass(frozen=True)
class RunConfig:
    # data
    n_points: int = _f("data", int, 16384)
    frustum_filter: bool = _f("data", _bool, True)
    dataset: str = _f("data", str, "synthetic")
    data_path: str = _f("data", str, "")
    split: str = _f("data", str, "")
    seg_dir: str = _f("data", str, "")
    n_train: int = _f("data", int, 64)
    n_val: int = _f("data", int, 32)
    scene_points: int = _f("data", int, 2048)
    min_objects: int = _f("data", int, 1)
    max_objects: int = _f("data", int, 4)
    # keypoints
    m1: int = _f("keypoints", int, 128)
    m2: int = _f("keypoints", int, 128)
    tau_fg: float = _f("keypoints", float, 0.5)
    geo_weight: float = _f("keypoints", float, 0.0)
    # backbone
    sa_points: tuple = _f("backbone", _ints, (4096, 1024, 256, 128))
    sa_radii: tuple = _f("backbone", _floats, (0.2, 0.4, 0.8, 1.6))
    sa_neighbors: tuple = _f("backbone", _ints, (32, 32, 32, 32))
    sa_mlps: tuple = _f("backbone", _mlps, ((8, 8, 16), (16, 16, 32), (32, 32, 64), (64, 64, 128)))
    sa_samplers: tuple = _f("backbone", _strs, ("d-fps", "d-fps", "fused", "fused"))
    fp_mlps: tuple = _f("backbone", _mlps, ((128, 128), (128, 128), (128, 128), (128, 128)))
    vote_hidden: int = _f("backbone", int, 128)
    # roi
    eta: float = _f("roi", float, 1.0)
    roi_class: str = _f("roi", str, "Car")
    k_pool: int = _f("roi", int, 64)
    grid: int = _f("roi", int, 7)
    pool_mlp: tuple = _f("roi", _ints, (64, 128))
    image_out: int = _f("roi", int, 128)
    image_channels: int = _f("roi", int, 0)  # 0: one channel per score class
    dims_car: tuple = _f("roi", _floats, (1.8, 5.0, 5.0))
    dims_pedestrian: tuple = _f("roi", _floats, (1.8, 1.0, 1.0))
    dims_cyclist: tuple = _f("roi", _floats, (1.8, 1.8, 1.8))
    # fusion / head
    fusion: str = _f("fusion", str, "concat")
    fusion_mlp: tuple = _f("fusion", _ints, (128,))
    n_bins: int = _f("head", int, 12)
    head_hidden: tuple = _f("head", _ints, (128,))
    classes: tuple = _f("head", _strs, ("Car",))
    assign_radius: float = _f("head", float, 0.8)
    nms_iou: float = _f("head", float, 0.1)
    score_threshold: float = _f("head", float, 0.05)
    # loss weights
    w_cls: float = _f("loss", float, 1.0)
    w_ctr: float = _f("loss", float, 1.0)
    w_size: float = _f("loss", float, 1.0)
    w_bin: float = _f("loss", float, 1.0)
    w_res: float = _f("loss", float, 1.0)
    w_vote: float = _f("loss", float, 1.0)
    # training
    lr: float = _f("train", float, 0.002)
    drop_epoch: int = _f("train", int, 40)
    lr_factor: float = _f("train", float, 10.0)
    epochs: int = _f("train", int, 50)
    batch_size: int = _f("train", int, 4)
    roi_samples: int = _f("train", int, 0)
    # eval
    interpolation: str = _f("eval", str, "R11")
    iou_car: float = _f("eval", float, 0.7)
    iou_pedestrian: float = _f("eval", float, 0.5)
    iou_cyclist: float = _f("eval", float, 0.5)
    # run
    seed: int = _f("run", int, 0)
    out: str = _f("run", str, "")

    def __post_init__(self):
        self.validate()

    # -- checks -----------------------------------------------------------------

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        n_sa = len(self.sa_points)
        need(n_sa >= 1, "backbone needs at least one SA stage")
        for name in ("sa_radii", "sa_neighbors", "sa_mlps", "sa_samplers", "fp_mlps"):
            need(len(getattr(self, name)) == n_sa, f"{name} needs {n_sa} entries (one per SA stage)")
        need(all(s in SAMPLER_CHOICES for s in self.sa_samplers), f"samplers must be in {SAMPLER_CHOICES}")
        need(all(r > 0 for r in self.sa_radii), "SA radii must be positive")
        need(all(k >= 1 for k in self.sa_neighbors), "SA neighbour counts must be >= 1")
        need(all(len(m) >= 1 for m in self.sa_mlps) and all(len(m) >= 1 for m in self.fp_mlps),
             "SA and FP MLPs need at least one layer")
        need(list(self.sa_points) == sorted(self.sa_points, reverse=True), "SA point counts must not increase")
        need(self.sa_points[0] <= self.n_points, "first SA stage samples more points than the cloud holds")
        need(self.sa_points[-1] == self.m1, "last SA stage must end at m1 keypoints")
        need(self.fp_mlps[-1][-1] == self.sa_mlps[-1][-1],
             "last FP width must equal the keypoint feature width so the two keypoint sets can be fused")
        need(self.m1 >= 1 and self.m2 >= 0, "keypoint counts must be m1 >= 1, m2 >= 0")
        need(0.0 < self.tau_fg <= 1.0, "tau_fg must lie in (0, 1]")
        need(self.eta >= 0, "eta must be non-negative")
        need(self.fusion in FUSION_CHOICES, f"fusion must be one of {FUSION_CHOICES}")
        need(self.fusion == "concat" or self.pool_mlp[-1] == self.image_out,
             f"{self.fusion} fusion needs pool_mlp[-1] == image_out")
        need(self.n_bins >= 2, "n_bins must be >= 2")
        need(self.image_channels >= 0, "image_channels must be >= 0")
        need(self.k_pool >= 1 and self.grid >= 1, "k_pool and grid must be >= 1")
        need(self.roi_class.lower() in ("car", "pedestrian", "cyclist"), "roi_class must name a class")
        for name in ("dims_car", "dims_pedestrian", "dims_cyclist"):
            dims = getattr(self, name)
            need(len(dims) == 3 and all(d > 0 for d in dims), f"{name} needs three positive sizes (h, w, l)")
        need(len(self.classes) >= 1, "need at least one object class")
        need(self.interpolation in ("R11", "R40"), "interpolation must be R11 or R40")
        need(self.lr > 0 and self.lr_factor > 0, "learning rate and factor must be positive")
        need(self.epochs >= 0 and self.batch_size >= 1, "epochs >= 0 and batch_size >= 1 required")
        need(self.roi_samples >= 0, "roi_samples must be >= 0 (0 keeps every RoI)")
        need(self.n_train >= 1 and self.n_val >= 0, "need at least one training scene")
        need(0 <= self.min_objects <= self.max_objects, "need 0 <= min_objects <= max_objects")
        need(self.dataset in ("synthetic", "kitti"), "dataset must be synthetic or kitti")
        need(0 < self.nms_iou <= 1 and 0 <= self.score_threshold < 1, "bad NMS / score threshold")

    # -- derived ----------------------------------------------------------------------

    @property
    def class_dims(self):
        return {"Car": self.dims_car, "Pedestrian": self.dims_pedestrian, "Cyclist": self.dims_cyclist}

    @property
    def roi_dims(self):
        return self.class_dims[self.roi_class.capitalize()]

    @property
    def map_channels(self):
        return self.image_channels or len(self.classes) + 1

    @property
    def loss_weights(self):
        return {"cls": self.w_cls, "ctr": self.w_ctr, "size": self.w_size, "bin": self.w_bin, "res": self.w_res}

    @property
    def iou_thresholds(self):
        return {"Car": self.iou_car, "Pedestrian": self.iou_pedestrian, "Cyclist": self.iou_cyclist}

    def with_overrides(self, **kw):
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def toy(cls, **kw):
        """Desk-scale settings for 2048-point synthetic scenes."""
        base = dict(
            n_points=2048, scene_points=2048,
            m1=64, m2=64,
            sa_points=(256, 64), sa_radii=(0.8, 1.6), sa_neighbors=(16, 16),
            sa_mlps=((16, 32), (32, 64)), sa_samplers=("d-fps", "fused"),
            fp_mlps=((64,), (64,)), vote_hidden=64,
            k_pool=32, pool_mlp=(32, 64), image_out=64, fusion_mlp=(128,), head_hidden=(128,),
            epochs=200, drop_epoch=160, batch_size=4, roi_samples=32,
        )
        base.update(kw)
        return cls(**base)

    # -- (de)serialization -------------------------------------------------------------

    def to_text(self):
        cp = configparser.ConfigParser(interpolation=None)
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _fmt(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text, base=None):
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unparseable config: {exc}") from exc
        known = {f.name: f for f in fields(cls)}
        values = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                f = known.get(key)
                if f is None or f.metadata["section"] != sec:
                    raise ConfigError(f"unknown key [{sec}] {key}")
                try:
                    values[key] = f.metadata["parser"](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for [{sec}] {key}: {raw!r}") from exc
        if base is None:
            return cls(**values)
        return base.with_overrides(**values)

    @classmethod
    def load(cls, path, base=None):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, base)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())
