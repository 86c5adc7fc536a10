"""Human-editable apparatus configuration (YAML, versioned) and the
factory that assembles an Apparatus from it."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from . import apparatus as ap
from . import photophysics as ph
from . import pulses as pl
from . import spin

CONFIG_SCHEMA = "nvlab-config/1"


class ConfigError(RuntimeError):
    pass


def default_config() -> dict:
    return {
        "schema": CONFIG_SCHEMA,
        "seed": 20240501,
        "backend": "pulseblaster",
        "sample": {"preset": "acceptance", "seed": 1},
        "optics": {
            "na": 0.9,
            "wavelength_nm": 532.0,
            "psf_sigma_um": 0.1281,
            "psf_sigma_axial_factor": 3.0,
            "pcb_hole_d_mm": 1.0,
            "pcb_standoff_um": 150.0,
        },
        "detector": {
            "dead_time_ns": 22.0,
            "dark_rate_cps": 250.0,
            "channels": 2,
            "splitter": True,
        },
        "magnet": {
            "distance_mm": 15.0,
            "theta_deg": ap.MAGIC_ANGLE_DEG,
            "phi_deg": 45.0,
            "b_ref_gauss": 100.0,
            "d_ref_mm": 10.0,
        },
        "laser": {"p_sat_uw": 270.0, "r_sat_hz": 4.0e7},
        "rates": {
            "radiative_hz": 1.0 / 14.8e-9,
            "singlet_hz": 1.0 / 178e-9,
            "isc_e1_hz": ph.ISC_E1_DEFAULT,
            "isc_e0_hz": ph.ISC_E0_DEFAULT,
            "singlet_branch_g0": ph.SINGLET_BRANCH_G0_DEFAULT,
            "collection_efficiency": ph.COLLECTION_EFF_DEFAULT,
        },
        "mw_chain": {
            "amp_gain_db": 45.0,
            # 100 ns pi time at 0 dBm source power
            "k_rabi_hz_per_sqrt_w": float(ap.MwChain().k_rabi_hz_per_sqrt_w),
        },
        "cw_odmr": {"contrast_max": 0.15, "omega_sat_hz": 3.0e6},
        "noise": {"drift_um_per_sqrt_min": 0.020},
        "latencies_ns": {pl.LASER_GATE: 800.0, pl.MW_SWITCH: 40.0},
        # what the control software believes; equal to the true values by
        # default so that compiled timing lands where commanded
        "assumed_latencies_ns": {pl.LASER_GATE: 800.0, pl.MW_SWITCH: 40.0},
        "quadrature": {"n_static": 15, "n_bath": 12},
    }


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    schema = cfg.get("schema")
    if schema != CONFIG_SCHEMA:
        raise ConfigError(
            f"config schema {schema!r} not supported; expected "
            f"{CONFIG_SCHEMA}")
    return cfg


def save_config(cfg: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True))


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    out.update(override or {})
    return out


def build_sample(cfg: dict) -> ap.SampleMap:
    sample_cfg = cfg.get("sample", {})
    if "sites" in sample_cfg:
        sites = []
        for s in sample_cfg["sites"]:
            nuclear = None
            if s.get("nuclear") == "N15":
                nuclear = spin.N15(s.get("a_par_hz", spin.N15().a_par))
            elif s.get("nuclear") == "C13":
                nuclear = spin.C13(s.get("a_par_hz", spin.C13().a_par))
            sites.append(ap.NvSite(
                position=np.asarray(s["position_um"], dtype=float),
                orientation=s.get("orientation", 0),
                nuclear=nuclear,
                brightness=s.get("brightness", 1.0),
                t2_star=s.get("t2_star_s", 1.5e-6),
                tc=s.get("tc_s", 10.7e-6),
                t1=s.get("t1_s", 6.0e-3)))
        return ap.SampleMap(sites,
                            background_rate=sample_cfg.get(
                                "background_cps", 2000.0),
                            name=sample_cfg.get("name", "custom"))
    preset = sample_cfg.get("preset", "acceptance")
    if preset not in ap.SAMPLE_PRESETS:
        raise ConfigError(f"unknown sample preset {preset!r}")
    return ap.SAMPLE_PRESETS[preset](seed=sample_cfg.get("seed", 1))


def build_apparatus(cfg: dict) -> ap.Apparatus:
    cfg = _merge(default_config(), cfg)
    o = _merge(default_config()["optics"], cfg.get("optics"))
    optics = ap.OpticsProfile(
        na=o["na"], wavelength=o["wavelength_nm"] * 1e-9,
        psf_sigma=o["psf_sigma_um"],
        psf_sigma_axial_factor=o["psf_sigma_axial_factor"],
        pcb_hole_d=o["pcb_hole_d_mm"] * 1e-3,
        pcb_standoff=o["pcb_standoff_um"] * 1e-6)
    d = _merge(default_config()["detector"], cfg.get("detector"))
    detector = ap.DetectorProfile(
        dead_time=d["dead_time_ns"] * 1e-9, dark_rate=d["dark_rate_cps"],
        channels=d["channels"], splitter=d["splitter"])
    m = _merge(default_config()["magnet"], cfg.get("magnet"))
    magnet = ap.MagnetState(
        distance_mm=m["distance_mm"], theta_deg=m["theta_deg"],
        phi_deg=m["phi_deg"], b_ref_gauss=m["b_ref_gauss"],
        d_ref_mm=m["d_ref_mm"])
    r = _merge(default_config()["rates"], cfg.get("rates"))
    rates = ph.RateParams(
        radiative_rate=r["radiative_hz"], singlet_rate=r["singlet_hz"],
        isc_e1=r["isc_e1_hz"], isc_e0=r["isc_e0_hz"],
        singlet_branch_g0=r["singlet_branch_g0"],
        collection_efficiency=r["collection_efficiency"])
    mw = _merge(default_config()["mw_chain"], cfg.get("mw_chain"))
    chain = ap.MwChain(amp_gain_db=mw["amp_gain_db"],
                       k_rabi_hz_per_sqrt_w=mw["k_rabi_hz_per_sqrt_w"])
    cw = _merge(default_config()["cw_odmr"], cfg.get("cw_odmr"))
    cw_model = ap.CwOdmrModel(contrast_max=cw["contrast_max"],
                              omega_sat=cw["omega_sat_hz"])
    noise_cfg = _merge(default_config()["noise"], cfg.get("noise"))
    noise = ap.NoiseModel(
        drift_um_per_sqrt_min=noise_cfg["drift_um_per_sqrt_min"])
    backend_name = cfg.get("backend", "pulseblaster")
    if backend_name not in pl.BACKENDS:
        raise ConfigError(f"unknown backend {backend_name!r}")
    lat = {ch: ns * 1e-9 for ch, ns in cfg.get("latencies_ns", {}).items()}
    q = _merge(default_config()["quadrature"], cfg.get("quadrature"))
    laser_cfg = _merge(default_config()["laser"], cfg.get("laser"))
    apparatus = ap.Apparatus(
        sample=build_sample(cfg), optics=optics, detector=detector,
        magnet=magnet, rates=rates, mw_chain=chain, cw_model=cw_model,
        noise=noise, backend=pl.BACKENDS[backend_name](),
        true_latencies=pl.DelayCalibration(lat),
        quadrature=ap.QuadratureSpec(q["n_static"], q["n_bath"]),
        seed=cfg.get("seed", 0))
    apparatus.laser.p_sat_uw = laser_cfg["p_sat_uw"]
    apparatus.laser.r_sat = laser_cfg["r_sat_hz"]
    return apparatus


def assumed_calibration(cfg: dict) -> pl.DelayCalibration:
    """The latencies the control software compensates for (the student's
    calibration), as opposed to the hardware truth."""
    cfg = _merge(default_config(), cfg)
    lat = {ch: ns * 1e-9
           for ch, ns in cfg.get("assumed_latencies_ns", {}).items()}
    return pl.DelayCalibration(lat)
