"""Deterministic discrete-event laboratory for relay attacks on EV
plug-and-charge sessions and the RTT distance-bounding countermeasure."""

from .attacker import (
    AttackAction,
    AttackExecutor,
    AttackScript,
    ChoreographyViolation,
    PEER_LINK_PRESETS,
    RelayDevice,
    early_guess_respond,
    run_attack,
)
from .guard import (
    DBConfig,
    DBTranscript,
    DBVerdict,
    check_thresholds,
    compute_stats,
    generate_challenge,
    guess_success_probability,
    interleave,
    run_distance_bounding,
    run_fast_exchange,
    verify_transcript,
)
from .harness import (
    RunResult,
    ScenarioReport,
    build_world,
    emit_report,
    percentile_nearest_rank,
    run_one,
    run_scenario,
)
from .messages import ChargeSchedule, decode_frame, encode_frame
from .netsim import LatencyModel, Link, Network, SimClock, make_rng, sample_delay
from .nodes import EvNode, SeNode, World
from .power import (
    Battery,
    BillingLedger,
    ControlCenter,
    EvsePower,
    MeterReading,
    bill,
    tick_power,
)
from .scenario import (
    ConfigError,
    EvSpec,
    LinkCalibration,
    Scenario,
    SeSpec,
    get_preset,
    list_presets,
    make_evasion_scenario,
    parse_scenario_file,
    write_scenario_file,
)
from .session import (
    Certificate,
    ContractCredential,
    Phase,
    ProtocolViolation,
    SecureChannel,
    SessionState,
    authorize,
    establish_secure_channel,
    evcc_step,
    secc_step,
)

__version__ = "0.1.0"
