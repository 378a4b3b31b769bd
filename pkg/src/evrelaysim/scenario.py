"""Runnable experiment configurations: topologies, presets, and the
scenario file format.

A scenario pins everything a run needs (topology, link calibration, guard
parameters, vehicle and column profiles, attack script, seed), so a
(scenario, seed) pair fully determines every output byte. Scenario files
are INI-style text with one section per concern; see the README for the
grammar and `write_scenario_file` for the canonical writer.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .attacker import EVASION_EARLY_GUESS, EVASION_NONE, PEER_LINK_PRESETS, \
    PROC_DELAY_S, AttackScript
from .guard import DBConfig
from .netsim import LatencyModel

TOPO_DIRECT = "legit_direct"
TOPO_BRIDGING = "devices_bridging"
TOPO_CROSS = "cross_relay"

_TOPOLOGIES = (TOPO_DIRECT, TOPO_BRIDGING, TOPO_CROSS)


class ConfigError(ValueError):
    """A scenario field is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class LinkCalibration:
    """One-way latency models of the fixed plumbing.

    cable is the direct EV-to-column run; when a device sits in line the
    run splits into two segments whose delays sum to the plain cable's."""

    cable: LatencyModel = LatencyModel.jittered(0.15e-3, 0.02e-3)
    cable_segment: LatencyModel = LatencyModel.jittered(0.075e-3, 0.012e-3)
    proc_delay_s: float = PROC_DELAY_S


@dataclass(frozen=True)
class EvSpec:
    """Vehicle profile: identity, battery, and charging intent."""

    contract_id: str
    cert_id: str
    cert_valid: bool = True
    battery_kwh: float = 40.0
    soc: float = 0.2
    target_kwh: float = 30.0
    max_power_kw: float = 10.0
    departure_s: int = 14400
    auto_session: bool = True
    sdp_retry_interval_s: float | None = None
    sdp_max_retries: int = 0


@dataclass(frozen=True)
class SeSpec:
    """Charging column profile."""

    evse_id: str
    cert_id: str
    cert_valid: bool = True
    max_power_kw: float = 22.0
    bidirectional: bool = False


def _default_victim(retries: bool = False) -> EvSpec:
    return EvSpec(contract_id="V-001", cert_id="CERT-V-001",
                  sdp_retry_interval_s=1.0 if retries else None,
                  sdp_max_retries=30 if retries else 0)


def _default_attacker() -> EvSpec:
    return EvSpec(contract_id="A-007", cert_id="CERT-A-007",
                  battery_kwh=60.0, soc=0.1)


@dataclass(frozen=True)
class Scenario:
    """One experiment: a topology plus everything needed to replay it."""

    name: str
    topology: str = TOPO_DIRECT
    peer_link: str | LatencyModel | None = None
    guard_enabled: bool = True
    guard: DBConfig = field(default_factory=DBConfig)
    evasion: str = EVASION_NONE
    evasion_alphabet: int | None = None  # None: mirror guard alphabet
    attack_script: AttackScript | None = None
    runs: int = 1000
    seed: int = 42
    horizon_s: float = 60.0
    session_duration_s: float = 10.0
    metering_interval_s: float = 1.0
    victim: EvSpec = field(default_factory=_default_victim)
    attacker: EvSpec | None = None
    evse_a: SeSpec = field(default_factory=lambda: SeSpec("EVSE-A", "CERT-SE-A"))
    evse_b: SeSpec | None = None
    victim_plug_at_s: float = 0.0
    attacker_plug_at_s: float = 0.0
    victim_returns_at_s: float | None = None
    links: LinkCalibration = field(default_factory=LinkCalibration)
    trace: bool = False

    @property
    def is_attack(self) -> bool:
        return self.topology == TOPO_CROSS

    def peer_model(self) -> LatencyModel | None:
        if self.peer_link is None:
            return None
        if isinstance(self.peer_link, LatencyModel):
            return self.peer_link
        model = PEER_LINK_PRESETS.get(self.peer_link) \
            or _APPENDIX_PEER_MODELS.get(self.peer_link)
        if model is None:
            raise ConfigError(f"peer_link: unknown preset {self.peer_link!r}")
        return model

    def validate(self) -> None:
        if self.topology not in _TOPOLOGIES:
            raise ConfigError(f"topology: unknown value {self.topology!r}")
        if self.runs < 1:
            raise ConfigError(f"runs: must be >= 1, got {self.runs}")
        if self.topology == TOPO_CROSS:
            if self.attacker is None or self.evse_b is None:
                raise ConfigError(
                    "topology: cross_relay requires two EVs and two columns")
            if self.peer_link is None:
                raise ConfigError("peer_link: required for cross_relay")
            self.peer_model()
        if self.evasion not in (EVASION_NONE, EVASION_EARLY_GUESS):
            raise ConfigError(f"evasion: unknown mode {self.evasion!r}")
        if self.horizon_s <= 0:
            raise ConfigError("horizon_s: must be positive")


# Wireless propagation variants of the device-to-device link: two models,
# two distances, two WiFi generations.
_APPENDIX_PEER_MODELS = {
    f"{model}_{dist}m_{std}": LatencyModel.propagation(
        model, float(dist), f"80211{std}")
    for model in ("ldpl", "lns") for dist in (2, 10) for std in ("g", "ac")
}


def _eval_scenario(name: str, **kw) -> Scenario:
    return Scenario(name=name, **kw)


def _cross_scenario(name: str, peer_link) -> Scenario:
    return Scenario(
        name=name,
        topology=TOPO_CROSS,
        peer_link=peer_link,
        attack_script=AttackScript.default(),
        victim=_default_victim(retries=True),
        attacker=_default_attacker(),
        evse_b=SeSpec("EVSE-B", "CERT-SE-B"),
        victim_returns_at_s=3600.0,
        horizon_s=7200.0,
    )


def _build_presets() -> dict:
    presets = {
        "wired": (
            "legitimate column, no devices installed",
            lambda: _eval_scenario("wired"),
        ),
        "wired_off": (
            "devices installed in line but only bridging",
            lambda: _eval_scenario("wired_off", topology=TOPO_BRIDGING),
        ),
        "wired_on": (
            "cross-relay over a cabled device-to-device tunnel",
            lambda: _cross_scenario("wired_on", "wired"),
        ),
        "wifi_5cm": (
            "cross-relay over WiFi through a router 5 cm away",
            lambda: _cross_scenario("wifi_5cm", "wifi_router_5cm"),
        ),
        "wifi_2m": (
            "cross-relay over WiFi through a router 2 m away",
            lambda: _cross_scenario("wifi_2m", "wifi_router_2m"),
        ),
        "wifi_adhoc": (
            "cross-relay over ad-hoc WiFi, no router hop",
            lambda: _cross_scenario("wifi_adhoc", "wifi_adhoc"),
        ),
    }
    for key in _APPENDIX_PEER_MODELS:
        model, dist, std = key.split("_")
        presets[key] = (
            f"cross-relay over 802.11{std} WiFi, {model.upper()} propagation, "
            f"devices {dist} apart",
            (lambda k: lambda: _cross_scenario(k, k))(key),
        )
    return presets


_PRESETS = _build_presets()


def list_presets() -> dict:
    """Name to one-line description for every built-in scenario."""
    return {name: desc for name, (desc, _) in _PRESETS.items()}


def get_preset(name: str, seed: int | None = None,
               runs: int | None = None) -> Scenario:
    entry = _PRESETS.get(name)
    if entry is None:
        raise ConfigError(f"preset: unknown name {name!r}")
    sc = entry[1]()
    if seed is not None:
        sc = replace(sc, seed=seed)
    if runs is not None:
        sc = replace(sc, runs=runs)
    sc.validate()
    return sc


def make_evasion_scenario(alphabet: int, exchanges: int, runs: int,
                          seed: int = 42,
                          peer_link: str = "wired") -> Scenario:
    """Cross-relay world where the devices answer challenges early with
    random guesses. The attacker's own controller stays dormant so the run
    isolates the victim-side verdict."""
    sc = _cross_scenario(f"early_guess_n{alphabet}_k{exchanges}", peer_link)
    return replace(
        sc,
        guard=replace(sc.guard, exchanges=exchanges, alphabet=alphabet),
        evasion=EVASION_EARLY_GUESS,
        evasion_alphabet=alphabet,
        attack_script=None,
        attacker=replace(sc.attacker, auto_session=False),
        victim=replace(sc.victim, sdp_retry_interval_s=None, sdp_max_retries=0),
        victim_returns_at_s=None,
        session_duration_s=5.0,
        horizon_s=60.0,
        runs=runs,
        seed=seed,
    )


# -- scenario file IO --------------------------------------------------------

def write_scenario_file(sc: Scenario, path: str) -> None:
    """Serialize a scenario to the INI-style text format."""
    cp = configparser.ConfigParser()
    main = {
        "name": sc.name,
        "topology": sc.topology,
        "guard": "on" if sc.guard_enabled else "off",
        "runs": str(sc.runs),
        "seed": str(sc.seed),
        "horizon_s": repr(sc.horizon_s),
        "session_duration_s": repr(sc.session_duration_s),
        "metering_interval_s": repr(sc.metering_interval_s),
        "victim_plug_at_s": repr(sc.victim_plug_at_s),
        "attacker_plug_at_s": repr(sc.attacker_plug_at_s),
        "trace": str(sc.trace).lower(),
    }
    if isinstance(sc.peer_link, str):
        main["peer_link"] = sc.peer_link
    if sc.victim_returns_at_s is not None:
        main["victim_returns_at_s"] = repr(sc.victim_returns_at_s)
    cp["scenario"] = main

    g = sc.guard
    cp["guard_config"] = {
        "exchanges": str(g.exchanges),
        "alphabet": str(g.alphabet),
        "mu_max_s": repr(g.mu_max_s),
        "sigma_max_s": repr(g.sigma_max_s),
        "exchange_timeout_s": repr(g.exchange_timeout_s),
    }

    def ev_section(spec: EvSpec) -> dict:
        out = {
            "contract": spec.contract_id,
            "cert": spec.cert_id,
            "valid": str(spec.cert_valid).lower(),
            "battery_kwh": repr(spec.battery_kwh),
            "soc": repr(spec.soc),
            "target_kwh": repr(spec.target_kwh),
            "max_power_kw": repr(spec.max_power_kw),
            "departure_s": str(spec.departure_s),
            "auto_session": str(spec.auto_session).lower(),
            "sdp_max_retries": str(spec.sdp_max_retries),
        }
        if spec.sdp_retry_interval_s is not None:
            out["sdp_retry_interval_s"] = repr(spec.sdp_retry_interval_s)
        return out

    def se_section(spec: SeSpec) -> dict:
        return {
            "id": spec.evse_id,
            "cert": spec.cert_id,
            "valid": str(spec.cert_valid).lower(),
            "max_power_kw": repr(spec.max_power_kw),
            "bidirectional": str(spec.bidirectional).lower(),
        }

    cp["victim_ev"] = ev_section(sc.victim)
    cp["evse_a"] = se_section(sc.evse_a)
    if sc.attacker is not None:
        cp["attacker_ev"] = ev_section(sc.attacker)
    if sc.evse_b is not None:
        cp["evse_b"] = se_section(sc.evse_b)

    if isinstance(sc.peer_link, LatencyModel):
        m = sc.peer_link
        sec = {"kind": m.kind}
        if m.kind == "preset":
            sec.update(preset_name=m.preset_name,
                       distance_m=repr(m.distance_m),
                       wifi_standard=m.wifi_standard)
        else:
            sec.update(base_delay_s=repr(m.base_delay_s),
                       jitter_std_s=repr(m.jitter_std_s))
        cp["peer_link_custom"] = sec

    attack = {"evasion": sc.evasion}
    if sc.evasion_alphabet is not None:
        attack["evasion_alphabet"] = str(sc.evasion_alphabet)
    if sc.attack_script is not None:
        attack["enabled"] = "true"
        for act in sc.attack_script.actions:
            if act.kind == "plug_attacker_ev":
                attack["plug_attacker_at_s"] = repr(act.at_s)
            elif act.kind == "send_stop_to_victim_evse":
                attack["stop_victim_evse_at_s"] = repr(act.at_s)
            elif act.kind == "unplug":
                attack["unplug_at_s"] = repr(act.at_s)
            elif act.kind == "set_discharge_schedule" and act.schedule:
                attack["discharge_target_kwh"] = repr(act.schedule.target_kwh)
                attack["discharge_max_power_kw"] = repr(
                    act.schedule.max_power_w / 1000)
    else:
        attack["enabled"] = "false"
    cp["attack"] = attack

    with open(path, "w") as fh:
        cp.write(fh)


def parse_scenario_file(path: str) -> Scenario:
    """Parse the INI-style scenario format back into a Scenario."""
    from .messages import ChargeSchedule

    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"scenario file: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"scenario file: {exc}") from exc

    try:
        main = cp["scenario"]

        def ev_spec(section) -> EvSpec:
            return EvSpec(
                contract_id=section["contract"],
                cert_id=section["cert"],
                cert_valid=section.getboolean("valid", True),
                battery_kwh=section.getfloat("battery_kwh", 40.0),
                soc=section.getfloat("soc", 0.2),
                target_kwh=section.getfloat("target_kwh", 30.0),
                max_power_kw=section.getfloat("max_power_kw", 10.0),
                departure_s=section.getint("departure_s", 14400),
                auto_session=section.getboolean("auto_session", True),
                sdp_retry_interval_s=section.getfloat(
                    "sdp_retry_interval_s", fallback=None),
                sdp_max_retries=section.getint("sdp_max_retries", 0),
            )

        def se_spec(section) -> SeSpec:
            return SeSpec(
                evse_id=section["id"],
                cert_id=section["cert"],
                cert_valid=section.getboolean("valid", True),
                max_power_kw=section.getfloat("max_power_kw", 22.0),
                bidirectional=section.getboolean("bidirectional", False),
            )

        guard_cfg = DBConfig()
        if cp.has_section("guard_config"):
            g = cp["guard_config"]
            guard_cfg = DBConfig(
                exchanges=g.getint("exchanges", 100),
                alphabet=g.getint("alphabet", 128),
                mu_max_s=g.getfloat("mu_max_s", 2e-3),
                sigma_max_s=g.getfloat("sigma_max_s", 0.5e-3),
                exchange_timeout_s=g.getfloat("exchange_timeout_s", 0.05),
            )

        peer_link = main.get("peer_link", fallback=None)
        if cp.has_section("peer_link_custom"):
            pl = cp["peer_link_custom"]
            kind = pl["kind"]
            if kind == "preset":
                peer_link = LatencyModel.propagation(
                    pl["preset_name"], pl.getfloat("distance_m"),
                    pl["wifi_standard"])
            elif kind in ("constant", "jittered"):
                peer_link = LatencyModel(
                    kind=kind, base_delay_s=pl.getfloat("base_delay_s"),
                    jitter_std_s=pl.getfloat("jitter_std_s", 0.0))
            else:
                raise ConfigError(f"peer_link_custom.kind: {kind!r}")

        evasion = EVASION_NONE
        evasion_alphabet = None
        script = None
        if cp.has_section("attack"):
            a = cp["attack"]
            evasion = a.get("evasion", EVASION_NONE)
            evasion_alphabet = a.getint("evasion_alphabet", fallback=None)
            if a.getboolean("enabled", False):
                discharge = None
                if a.get("discharge_target_kwh", fallback=None) is not None:
                    discharge = ChargeSchedule.from_kwh(
                        a.getfloat("discharge_target_kwh"),
                        a.getfloat("discharge_max_power_kw", 10.0),
                        14400)
                script = AttackScript.default(
                    plug_at_s=a.getfloat("plug_attacker_at_s", 5.0),
                    stop_at_s=a.getfloat("stop_victim_evse_at_s", 60.0),
                    unplug_at_s=a.getfloat("unplug_at_s", 3650.0),
                    discharge_schedule=discharge,
                )

        sc = Scenario(
            name=main.get("name", "unnamed"),
            topology=main.get("topology", TOPO_DIRECT),
            peer_link=peer_link,
            guard_enabled=main.get("guard", "on").lower() != "off",
            guard=guard_cfg,
            evasion=evasion,
            evasion_alphabet=evasion_alphabet,
            attack_script=script,
            runs=main.getint("runs", 1000),
            seed=main.getint("seed", 42),
            horizon_s=main.getfloat("horizon_s", 60.0),
            session_duration_s=main.getfloat("session_duration_s", 10.0),
            metering_interval_s=main.getfloat("metering_interval_s", 1.0),
            victim=ev_spec(cp["victim_ev"]) if cp.has_section("victim_ev")
            else _default_victim(),
            attacker=ev_spec(cp["attacker_ev"])
            if cp.has_section("attacker_ev") else None,
            evse_a=se_spec(cp["evse_a"]) if cp.has_section("evse_a")
            else SeSpec("EVSE-A", "CERT-SE-A"),
            evse_b=se_spec(cp["evse_b"]) if cp.has_section("evse_b") else None,
            victim_plug_at_s=main.getfloat("victim_plug_at_s", 0.0),
            attacker_plug_at_s=main.getfloat("attacker_plug_at_s", 0.0),
            victim_returns_at_s=main.getfloat("victim_returns_at_s",
                                              fallback=None),
            trace=main.getboolean("trace", False),
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"scenario file: {exc}") from exc
    sc.validate()
    return sc
