"""Reference constants for three apps (VGG16-, ResNet50- and YOLO-v3-like).

The cubic coefficients are measured latency/accuracy profiles. They come
without memory ranges, so each domain here is a span where the latency
cubic is positive and increasing and the accuracy cubic sits at the model's
known accuracy level.
"""

from __future__ import annotations

import json
from importlib import resources

from .profiles import CubicProfile, ProfileKind, profile_from_dict

LATENCY_COEFFS = {
    "vgg16": (-0.0001472, 0.1135, -28.16, 2267.0),
    "resnet50": (1.021e-05, -0.01083, 4.648, -683.0),
    "yolov3": (-6.706e-06, 0.01861, -15.5, 4241.0),
}
ACCURACY_COEFFS = {
    "vgg16": (-7.781e-07, 0.0006417, -0.1753, 108.4),
    "resnet50": (1.285e-07, -0.000181, 0.08553, 62.48),
    "yolov3": (6.764e-08, -0.0001834, 0.1676, 2.821),
}
DOMAINS_MIB = {
    "vgg16": (230.0, 300.0),
    "resnet50": (300.0, 560.0),
    "yolov3": (634.0, 1040.0),
}
# resident base-model memory measured per app, and their sum
BASE_MEMORY_MIB = {"vgg16": 228.0, "resnet50": 273.0, "yolov3": 323.0}
MU_TOTAL_MIB = 823.0

MEMORY_CAPACITY_MIB = 1600.0
EPSILON_MS = 15.0
DEADLINES_MS = (700.0, 500.0, 250.0)
YOLO_WCET_MS = {"min": 148.0, "median": 470.0, "max": 702.0}
YOLO_GRANT_MIB = 1026.0
ACCURACY_DROP_THRESHOLD_PCT = 3.0
LUT_ENTRIES = 50

# fraction of quantized layers at which a family member matches the
# full-load baseline in latency / in memory, and the share of members
# beating the baseline on both
BASELINE_LATENCY_TIE_INT_FRACTION = 0.227
BASELINE_MEMORY_TIE_INT_FRACTION = 0.307
BASELINE_DOMINATING_FRACTION = 0.737

APP_NAMES = ("vgg16", "resnet50", "yolov3")
LAYER_COUNTS = {"vgg16": 16, "resnet50": 50, "yolov3": 30}


def latency_profile(app: str, domain=None) -> CubicProfile:
    lo, hi = domain or DOMAINS_MIB[app]
    return CubicProfile(*LATENCY_COEFFS[app], lo, hi, ProfileKind.LATENCY)


def accuracy_profile(app: str, domain=None) -> CubicProfile:
    lo, hi = domain or DOMAINS_MIB[app]
    return CubicProfile(*ACCURACY_COEFFS[app], lo, hi, ProfileKind.ACCURACY)


def packaged_profile(filename: str) -> CubicProfile:
    """Load one of the bundled ``data/*.json`` profile documents."""
    text = resources.files("mixalloc").joinpath("data", filename).read_text()
    return profile_from_dict(json.loads(text))


def calibrated_app(app: str, seed: int = 0, layer_count: int | None = None):
    from .synth import synthesize_workload

    return synthesize_workload(
        layer_count or LAYER_COUNTS[app],
        seed,
        latency_profile(app),
        accuracy_profile(app),
        name=app,
    )


# scenario chain: YOLO alone, then three branches (VGG joins, ResNet joins,
# both join), each tightening the deadline 700 -> 500 -> 250 ms
EVENT_SPACING_MS = 3000.0
FRAME_PERIOD_MS = 1000.0


def scenario_chain_events():
    from .simulator import EventKind as K, ScenarioEvent as E

    t = EVENT_SPACING_MS
    d700, d500, d250 = DEADLINES_MS
    steps = [
        [(K.APP_START, "yolov3")],
        [(K.APP_START, "vgg16")],
        [(K.DEADLINE_CHANGE, d500)],
        [(K.DEADLINE_CHANGE, d250)],
        [(K.APP_STOP, "vgg16"), (K.DEADLINE_CHANGE, d700), (K.APP_START, "resnet50")],
        [(K.DEADLINE_CHANGE, d500)],
        [(K.DEADLINE_CHANGE, d250)],
        [(K.APP_START, "vgg16"), (K.DEADLINE_CHANGE, d700)],
        [(K.DEADLINE_CHANGE, d500)],
        [(K.DEADLINE_CHANGE, d250)],
    ]
    return [E(i * t, kind, arg) for i, batch in enumerate(steps) for kind, arg in batch]


def scenario_chain(seed: int = 0, apps=None):
    """The ten-state chain as one timeline, one event batch every few frames."""
    from .simulator import Scenario, prepare_app

    apps = apps or [prepare_app(calibrated_app(n, seed)) for n in APP_NAMES]
    events = scenario_chain_events()
    return Scenario(
        apps=apps,
        initial_deadline_ms=DEADLINES_MS[0],
        memory_capacity_mib=MEMORY_CAPACITY_MIB,
        epsilon_ms=EPSILON_MS,
        frame_period_ms=FRAME_PERIOD_MS,
        events=events,
        duration_ms=events[-1].at_ms + EVENT_SPACING_MS,
        seed=seed,
    )
