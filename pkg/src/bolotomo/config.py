"""Key-value configuration files, scale presets, and overrides.

Config files are plain text: one `key = value` per line, `#` comments,
lists comma-separated. The schema is flat dotted keys covering the grid,
the physical domain, both camera fans, the phantom distribution, the
network shape, and the training loop. Unknown keys are rejected.
"""

from __future__ import annotations

from .geometry import CameraLayoutConfig, Grid, default_layout
from .model import NetworkConfig, TrainConfig
from .phantom import PhantomSpec


class ConfigError(ValueError):
    pass


def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    return float(s)  # accepts 'inf' for e.g. an unbounded early-stop delta


def _parse_float_list(s: str) -> tuple[float, ...]:
    s = s.strip()
    return tuple(float(p) for p in s.split(",")) if s else ()


def _parse_int_list(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(p) for p in s.split(",")) if s else ()


def _parse_str(s: str) -> str:
    return s.strip()


# key -> parser; defaults are provided per scale by default_config()
SCHEMA = {
    "grid.width_px": _parse_int,
    "grid.height_px": _parse_int,
    "grid.pad_width_px": _parse_int,
    "grid.pad_height_px": _parse_int,
    "domain.width_m": _parse_float,
    "domain.height_m": _parse_float,
    "domain.origin_x": _parse_float,
    "domain.origin_y": _parse_float,
    "cameras.horizontal.pivot_x": _parse_float,
    "cameras.horizontal.pivot_y": _parse_float,
    "cameras.horizontal.overview_angles": _parse_float_list,
    "cameras.horizontal.divertor_angles": _parse_float_list,
    "cameras.vertical.pivot_x": _parse_float,
    "cameras.vertical.pivot_y": _parse_float,
    "cameras.vertical.overview_angles": _parse_float_list,
    "cameras.vertical.divertor_angles": _parse_float_list,
    "channels.reserve": _parse_int,
    "channels.dead": _parse_int_list,
    "phantom.n_blobs_min": _parse_int,
    "phantom.n_blobs_max": _parse_int,
    "phantom.sigma_min": _parse_float,
    "phantom.sigma_max": _parse_float,
    "phantom.amplitude_min": _parse_float,
    "phantom.amplitude_max": _parse_float,
    "phantom.core_region": _parse_float_list,
    "phantom.divertor_region": _parse_float_list,
    "phantom.divertor_sigma_min": _parse_float,
    "phantom.divertor_sigma_max": _parse_float,
    "phantom.divertor_probability": _parse_float,
    "network.input_dim": _parse_int,  # 0 = use the dataset's stored PCA rank
    "network.fc_width": _parse_int,
    "network.seed_maps": _parse_int,
    "network.seed_h": _parse_int,
    "network.seed_w": _parse_int,
    "network.block_maps": _parse_int,
    "network.n_upblocks": _parse_int,
    "network.out_h": _parse_int,
    "network.out_w": _parse_int,
    "train.lr": _parse_float,
    "train.batch_size": _parse_int,
    "train.max_epochs": _parse_int,
    "train.early_stop_delta": _parse_float,
    "train.early_stop_patience": _parse_int,
}

# grid and network shape per scale; the physical domain and cameras are
# scale-independent (the instrument does not change with grid resolution)
SCALES = {
    "full": dict(grid=(115, 196, 120, 200),
                 net=dict(fc_width=7500, seed_maps=20, seed_h=25, seed_w=15,
                          block_maps=30, n_upblocks=3, out_h=200, out_w=120)),
    "half": dict(grid=(58, 98, 60, 100),
                 net=dict(fc_width=4500, seed_maps=12, seed_h=25, seed_w=15,
                          block_maps=24, n_upblocks=2, out_h=100, out_w=60)),
    "quarter": dict(grid=(29, 49, 30, 50),
                    net=dict(fc_width=750, seed_maps=2, seed_h=25, seed_w=15,
                             block_maps=12, n_upblocks=1, out_h=50, out_w=30)),
}


def default_config(scale: str = "full") -> dict:
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; pick one of {sorted(SCALES)}")
    gw, gh, pw, ph = SCALES[scale]["grid"]
    grid = Grid(gw, gh, pw, ph)
    layout = default_layout(grid)
    cfg = {
        "grid.width_px": gw,
        "grid.height_px": gh,
        "grid.pad_width_px": pw,
        "grid.pad_height_px": ph,
        "domain.width_m": 2.0,
        "domain.height_m": 3.5,
        "domain.origin_x": 0.0,
        "domain.origin_y": 0.0,
        "cameras.horizontal.pivot_x": layout.horizontal_pivot[0],
        "cameras.horizontal.pivot_y": layout.horizontal_pivot[1],
        "cameras.horizontal.overview_angles": layout.horizontal_overview,
        "cameras.horizontal.divertor_angles": layout.horizontal_divertor,
        "cameras.vertical.pivot_x": layout.vertical_pivot[0],
        "cameras.vertical.pivot_y": layout.vertical_pivot[1],
        "cameras.vertical.overview_angles": layout.vertical_overview,
        "cameras.vertical.divertor_angles": layout.vertical_divertor,
        "channels.reserve": 4,
        "channels.dead": (24, 51),
        "phantom.n_blobs_min": 1,
        "phantom.n_blobs_max": 5,
        "phantom.sigma_min": 0.05,
        "phantom.sigma_max": 0.4,
        "phantom.amplitude_min": 20.0,
        "phantom.amplitude_max": 100.0,
        "phantom.core_region": (0.25, 1.0, 1.75, 3.2),
        "phantom.divertor_region": (0.6, 0.1, 1.4, 0.8),
        "phantom.divertor_sigma_min": 0.03,
        "phantom.divertor_sigma_max": 0.1,
        "phantom.divertor_probability": 0.7,
        "network.input_dim": 0,
        "train.lr": 0.001,
        "train.batch_size": 10,
        "train.max_epochs": 2000,
        "train.early_stop_delta": 1e-5,
        "train.early_stop_patience": 50,
    }
    cfg.update({f"network.{k}": v for k, v in SCALES[scale]["net"].items()})
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def load_config(path, scale: str = "full") -> dict:
    """Defaults for the scale overlaid with the file's keys."""
    with open(path) as f:
        raw = parse_config_text(f.read())
    cfg = default_config(scale)
    for key, value in raw.items():
        cfg[key] = _convert(key, value)
    return cfg


def _convert(key: str, value: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return SCHEMA[key](value)
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {e}") from e


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply repeatable --override key=value pairs."""
    out = dict(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        out[key.strip()] = _convert(key.strip(), value.strip())
    return out


def format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(cfg: dict, path):
    with open(path, "w") as f:
        for key in sorted(cfg):
            f.write(f"{key} = {format_value(cfg[key])}\n")


def make_grid(cfg: dict) -> Grid:
    return Grid(cfg["grid.width_px"], cfg["grid.height_px"],
                cfg["grid.pad_width_px"], cfg["grid.pad_height_px"],
                cfg["domain.width_m"], cfg["domain.height_m"],
                (cfg["domain.origin_x"], cfg["domain.origin_y"]))


def make_layout(cfg: dict) -> CameraLayoutConfig:
    return CameraLayoutConfig(
        (cfg["cameras.horizontal.pivot_x"], cfg["cameras.horizontal.pivot_y"]),
        (cfg["cameras.vertical.pivot_x"], cfg["cameras.vertical.pivot_y"]),
        tuple(cfg["cameras.horizontal.overview_angles"]),
        tuple(cfg["cameras.horizontal.divertor_angles"]),
        tuple(cfg["cameras.vertical.overview_angles"]),
        tuple(cfg["cameras.vertical.divertor_angles"]),
        cfg["channels.reserve"],
        tuple(cfg["channels.dead"]))


def make_phantom_spec(cfg: dict) -> PhantomSpec:
    core = tuple(cfg["phantom.core_region"])
    div = tuple(cfg["phantom.divertor_region"])
    if len(core) != 4 or len(div) != 4:
        raise ConfigError("phantom regions must be x0,y0,x1,y1")
    return PhantomSpec(
        (cfg["phantom.n_blobs_min"], cfg["phantom.n_blobs_max"]),
        (cfg["phantom.sigma_min"], cfg["phantom.sigma_max"]),
        (cfg["phantom.amplitude_min"], cfg["phantom.amplitude_max"]),
        core, div,
        (cfg["phantom.divertor_sigma_min"], cfg["phantom.divertor_sigma_max"]),
        cfg["phantom.divertor_probability"])


def make_network_config(cfg: dict, input_dim: int | None = None) -> NetworkConfig:
    dim = cfg["network.input_dim"]
    if input_dim is not None and dim == 0:
        dim = input_dim
    if dim == 0:
        raise ConfigError("network.input_dim unset and no dataset rank available")
    return NetworkConfig(dim, cfg["network.fc_width"], cfg["network.seed_maps"],
                         cfg["network.seed_h"], cfg["network.seed_w"],
                         cfg["network.block_maps"], cfg["network.n_upblocks"],
                         cfg["network.out_h"], cfg["network.out_w"])


def make_train_config(cfg: dict, shuffle_seed: int = 0) -> TrainConfig:
    return TrainConfig(cfg["train.lr"], cfg["train.batch_size"],
                       cfg["train.max_epochs"], cfg["train.early_stop_delta"],
                       cfg["train.early_stop_patience"], shuffle_seed)
