"""INI run configuration: one schema holding every tunable constant, with typed defaults.

Unknown sections or keys and malformed values raise :class:`ConfigError`
carrying ``file:line``.  ``default_ini()`` renders the full schema.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .learnkit import LstmSpec, TrainConfig
from .mobility import BehaviorParams, GmParams, Room
from .netstate import NoiseModel
from .optics import DEFAULT_FOCAL_LENGTH, BeamParams, ReceiverParams
from .simharness import SCHEMES, ScenarioConfig

__all__ = ["ConfigError", "SCHEMA", "RunConfig", "load_config", "parse_config", "default_ini"]


class ConfigError(ValueError):
    pass


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _opt_float(s):
    return None if s.strip().lower() in ("none", "") else _float(s)


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _ints(s):
    return tuple(int(x) for x in re.split(r"[,\s]+", s.strip()) if x)


def _floats(s):
    return tuple(_float(x) for x in re.split(r"[,\s]+", s.strip()) if x)


def _strs(s):
    return tuple(x for x in re.split(r"[,\s]+", s.strip()) if x)


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


# section -> key -> (parser, default, help)
SCHEMA = {
    "room": {
        "x": (_float, 5.0, "room width (m)"),
        "y": (_float, 5.0, "room depth (m)"),
        "z": (_float, 3.0, "ceiling height (m)"),
    },
    "optics": {
        "waist_radius": (_float, 5e-6, "VCSEL beam waist (m)"),
        "wavelength": (_float, 1550e-9, "(m)"),
        "lens_focal_length": (_float, DEFAULT_FOCAL_LENGTH, "thin-lens focal length (m), negative diverges"),
        "lens_distance": (_float, 0.0, "VCSEL to lens distance (m)"),
        "per_element_power": (_float, 10e-3, "optical power per array element (W)"),
        "array_dim": (int, 10, "elements per side of the square array"),
    },
    "receiver": {
        "aperture_radius": (_float, 5.64e-3, "lens aperture radius (m)"),
        "detector_area": (_float, 1e-4, "effective collection area (m^2)"),
        "fov_deg": (_float, 60.0, "half-angle field of view (deg)"),
        "responsivity": (_float, 0.7, "photodiode responsivity (A/W)"),
    },
    "noise": {
        "bandwidth": (_float, 1.5e9, "modulation bandwidth (Hz)"),
        "rin_psd_db": (_float, -155.0, "laser RIN (dB/Hz)"),
        "noise_figure_db": (_float, 5.0, "receiver amplifier noise figure (dB)"),
        "temperature": (_float, 300.0, "(K)"),
        "load_resistance": (_float, 50.0, "(ohm)"),
        "fixed_sigma2": (_opt_float, None, "override total noise variance (A^2) or none"),
    },
    "mobility": {
        "alpha": (_float, 0.8, "speed/heading memory"),
        "mean_speed": (_float, 1.0, "(m/s)"),
        "speed_noise_var": (_float, 0.1, ""),
        "heading_noise_var": (_float, 0.05, ""),
        "alpha_theta": (_float, 0.8, "elevation memory"),
        "alpha_phi": (_float, 0.8, "azimuth memory"),
        "mean_theta_deg": (_float, 30.0, "device elevation mean (deg)"),
        "mean_phi_deg": (_float, 0.0, "device azimuth mean (deg)"),
        "theta_noise_var": (_float, 0.02, ""),
        "phi_noise_var": (_float, 0.02, ""),
        "dt": (_float, 0.1, "control slot (s)"),
        "v_max": (_float, 1.5, "speed ceiling (m/s)"),
    },
    "behavior": {
        "turn_rate": (_float, 0.1, "sharp turns per second"),
        "pause_rate": (_float, 0.05, "pauses per second"),
        "pause_mean": (_float, 2.0, "mean pause length (s)"),
        "speed_burst_rate": (_float, 0.1, "speed bursts per second"),
        "burst_duration": (_float, 1.0, "(s)"),
        "orient_jitter": (_float, 0.05, "orientation jitter std (rad)"),
        "activity_mode": (str, "walking", "walking or sitting"),
    },
    "network": {
        "ap_grid": (_ints, (4, 3), "APs along x, y"),
        "n_users": (int, 8, "users per episode"),
        "user_height": (_float, 0.0, "receiver plane height (m)"),
        "interference_mode": (str, "interferer", "interferer or victim"),
    },
    "power": {
        "r_min": (_float, 0.5e9, "per-user rate demand (bit/s)"),
        "p_min": (_float, 1e-3, "(W)"),
        "p_max": (_opt_float, None, "(W); none means half the AP budget"),
        "margin_db": (_float, 3.0, "ConsPC safety margin"),
        "step_db": (_float, 1.0, "RPC step"),
        "hysteresis": (_float, 0.5, "RPC down-step threshold above r_min"),
        "oracle_levels": (int, 16, "lattice levels per user"),
        "ee_mode": (str, "log", "log or linear"),
        "rate_floor": (_float, 1.0, "rate floor in realized log-EE (bit/s)"),
    },
    "simulation": {
        "n_slots": (int, 100, "slots per episode"),
        "history": (int, 5, "states kept per user"),
        "seed": (int, 0, ""),
        "repetitions": (int, 20, "seeds per experiment point"),
        "schemes": (_strs, SCHEMES, ""),
        "user_counts": (_ints, (4, 8, 12, 16), "ee_users grid"),
        "users_speed": (_float, 1.0, "ee_users mean speed (m/s)"),
        "speeds": (_floats, (0.2, 0.6, 1.0, 1.5), "ee_speed grid (m/s)"),
        "speed_users": (int, 10, "ee_speed user count"),
        "horizons": (_ints, tuple(range(1, 11)), "rmse horizons (slots)"),
        "rmse_users": (int, 20, "rmse test users"),
        "rmse_steps": (int, 300, "rmse test steps per user"),
    },
    "predictor": {
        "hidden_units": (int, 64, ""),
        "layers": (int, 2, ""),
        "dropout": (_float, 0.2, ""),
        "learning_rate": (_float, 1e-3, ""),
        "batch_size": (int, 64, ""),
        "epochs": (int, 100, ""),
        "train_users": (int, 100, "users in the training set"),
        "train_steps": (int, 250, "steps per training user"),
        "val_fraction": (_float, 0.1, ""),
    },
    "allocator": {
        "scenarios": (int, 12000, "labelled training scenarios"),
        "max_users": (int, 4, "CNN user capacity"),
        "learning_rate": (_float, 1e-3, ""),
        "batch_size": (int, 64, ""),
        "epochs": (int, 30, "fewer passes over a larger set generalise better"),
        "r_min_lo": (_float, 0.25e9, "scenario demand range (bit/s)"),
        "r_min_hi": (_float, 1.0e9, ""),
    },
}

_CHOICES = {("behavior", "activity_mode"): ("walking", "sitting"),
            ("network", "interference_mode"): ("interferer", "victim"),
            ("power", "ee_mode"): ("log", "linear")}


@dataclass
class RunConfig:
    values: dict
    source: str = "<defaults>"

    def __getitem__(self, section):
        return self.values[section]

    def to_dict(self):
        return {s: dict(v) for s, v in self.values.items()}

    # builders ----------------------------------------------------------
    def room(self):
        r = self["room"]
        return Room(r["x"], r["y"], r["z"])

    def beam(self):
        return BeamParams(**self["optics"])

    def receiver(self):
        r = dict(self["receiver"])
        r["fov_half_angle"] = math.radians(r.pop("fov_deg"))
        return ReceiverParams(**r)

    def noise(self):
        n = self["noise"]
        return NoiseModel(bandwidth=n["bandwidth"], rin_psd_db=n["rin_psd_db"],
                          noise_figure_db=n["noise_figure_db"], responsivity=self["receiver"]["responsivity"],
                          temperature=n["temperature"], load_resistance=n["load_resistance"],
                          fixed_sigma2=n["fixed_sigma2"])

    def gm(self):
        m = dict(self["mobility"])
        m["mean_theta"] = math.radians(m.pop("mean_theta_deg"))
        m["mean_phi"] = math.radians(m.pop("mean_phi_deg"))
        return GmParams(**m)

    def behavior(self):
        return BehaviorParams(**self["behavior"])

    def scenario(self, **over) -> ScenarioConfig:
        n, p, s = self["network"], self["power"], self["simulation"]
        kw = dict(room=self.room(), ap_grid=n["ap_grid"], beam=self.beam(), receiver=self.receiver(),
                  noise=self.noise(), n_users=n["n_users"], gm=self.gm(), behavior=self.behavior(),
                  n_slots=s["n_slots"], seed=s["seed"], history=s["history"], r_min=p["r_min"],
                  p_min=p["p_min"], p_max=p["p_max"], margin_db=p["margin_db"], step_db=p["step_db"],
                  hysteresis=p["hysteresis"], rate_floor=p["rate_floor"], ee_mode=p["ee_mode"],
                  interference_mode=n["interference_mode"], user_height=n["user_height"])
        kw.update(over)
        return ScenarioConfig(**kw)

    def lstm_spec(self):
        q = self["predictor"]
        return LstmSpec(hidden_units=q["hidden_units"], layers=q["layers"], dropout=q["dropout"],
                        sequence_length=self["simulation"]["history"])

    def train_config(self, section):
        q = self[section]
        return TrainConfig(learning_rate=q["learning_rate"], batch_size=q["batch_size"], epochs=q["epochs"])


def _line_index(text):
    """(section, key) -> line number, and section -> header line number."""
    keys, heads, sec = {}, {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            heads.setdefault(sec, i)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and sec is not None:
            keys.setdefault((sec, m.group(1).strip().lower()), i)
    return keys, heads


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"{source}:{e.lineno}: text before the first [section]") from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else "?"
        raise ConfigError(f"{source}:{lineno}: malformed line") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigError(f"{source}:{e.lineno}: duplicate {'key' if hasattr(e, 'option') else 'section'}") from None
    keys, heads = _line_index(text)
    values = {sec: {k: d for k, (_, d, _) in fields.items()} for sec, fields in SCHEMA.items()}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{heads.get(sec, '?')}: unknown section [{sec}]; "
                              f"valid: {', '.join(SCHEMA)}")
        for key, raw in cp.items(sec, raw=True):
            line = keys.get((sec, key), "?")
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}:{line}: unknown key '{key}' in [{sec}]")
            parser = SCHEMA[sec][key][0]
            try:
                v = parser(raw)
            except ValueError as e:
                raise ConfigError(f"{source}:{line}: bad value for {sec}.{key} = {raw!r} ({e})") from None
            choices = _CHOICES.get((sec, key))
            if choices and v not in choices:
                raise ConfigError(f"{source}:{line}: {sec}.{key} must be one of {', '.join(choices)}")
            values[sec][key] = v
    bad = [s for s in values["simulation"]["schemes"] if s not in SCHEMES]
    if bad:
        line = keys.get(("simulation", "schemes"), "?")
        raise ConfigError(f"{source}:{line}: unknown scheme(s) {', '.join(bad)}; valid: {', '.join(SCHEMES)}")
    cfg = RunConfig(values, source)
    try:  # let the domain types check their own invariants
        cfg.scenario()
        cfg.lstm_spec()
    except ValueError as e:
        raise ConfigError(f"{source}: invalid configuration: {e}") from None
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config("", "<defaults>")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
    return parse_config(text, str(path))


def default_ini() -> str:
    out = []
    for sec, fields in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, (_, default, help_) in fields.items():
            out.append(f"{key} = {_fmt(default)}" + (f"  # {help_}" if help_ else ""))
        out.append("")
    return "\n".join(out)
