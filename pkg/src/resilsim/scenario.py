"""Scenario files: JSON schema, loading, running, and trace export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from resilsim.casestudy import (
    CaseStudy,
    CaseStudyConfig,
    ExperimentReport,
    build_case_study,
    colour_outlier_faults,
    exp1_config,
    exp2_config,
    random_pieces,
    run_experiment_1,
    run_experiment_2,
)
from resilsim.kernel import FaultSpec
from resilsim.metrics import MetricReport, StepTrace, build_report, parse_faults, parse_verdicts
from resilsim.plant import BounceNoise, PlantGeometry

PRESETS = ("exp1", "exp2")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "preset": {"enum": list(PRESETS)},
        "experiment": {"enum": list(PRESETS)},
        "seed": {"type": "integer"},
        "until_ms": _pos,
        "pieces": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["colour", "arrival_ms"],
                "additionalProperties": False,
                "properties": {"colour": {"enum": ["red", "blue", "white"]}, "arrival_ms": _num},
            },
        },
        "random_pieces": {
            "type": "object",
            "required": ["count"],
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "first_ms": _num,
                "spacing_steps": {"type": "integer", "minimum": 2},
            },
        },
        "geometry": {"type": "object"},
        "exec_ms": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
        "comm_ms": {"type": "number", "minimum": 0},
        "debounce_ms": {
            "type": "object",
            "required": ["Beh1", "Beh2"],
            "additionalProperties": False,
            "properties": {"Beh1": _pos, "Beh2": _pos},
        },
        "period_ms": _pos,
        "deadline_ms": _pos,
        "links": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "jitter_ms": {"type": "number", "minimum": 0},
                "drop_prob": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "bounce": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_edges": {"type": "integer", "minimum": 0},
                "window_ms": _pos,
                "probability": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "faults": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["target"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "target": {"type": "string"},
                    "t0_ms": {"type": "number", "minimum": 0},
                    "kind": {"enum": ["permanent", "intermittent", "transient"]},
                    "effect": {"enum": ["down", "slowdown", "stuck_value", "leak"]},
                    "factor": {"type": ["number", "string"]},
                    "value": _num,
                    "on_ms": _pos,
                    "off_ms": _pos,
                    "duration_ms": _pos,
                },
            },
        },
        "colour_outliers": {
            "type": "object",
            "required": ["pieces"],
            "additionalProperties": False,
            "properties": {
                "pieces": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "value": _num,
            },
        },
        "demand": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
        "metric_target": {"type": "string"},
        "observer_h_ms": _pos,
    },
}


class ScenarioError(ValueError):
    pass


def load_scenario(source: str) -> dict:
    """A preset name or a path to a JSON scenario file."""
    if source in PRESETS:
        return {"name": source, "preset": source, "experiment": source}
    path = Path(source)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {source}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: invalid JSON: {exc}") from None
    validate_scenario(data)
    return data


def validate_scenario(data: dict) -> None:
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"schema violation at {where}: {exc.message}") from None


def is_stochastic(data: dict) -> bool:
    links = data.get("links", {})
    return links.get("jitter_ms", 0) > 0 or links.get("drop_prob", 0) > 0 or bool(data.get("bounce"))


def to_config(data: dict, seed: int | None = None, until_ms: float | None = None) -> CaseStudyConfig:
    validate_scenario(data)
    if seed is None:
        seed = data.get("seed")
    if seed is None:
        if is_stochastic(data):
            raise ScenarioError("scenario uses jitter or noise; a seed is required")
        seed = 0
    preset = data.get("preset")
    cfg = {"exp1": exp1_config, "exp2": exp2_config}.get(preset, CaseStudyConfig)()
    cfg.seed = seed
    if "geometry" in data:
        g = dict(data["geometry"])
        for key in ("barriers", "ejectors"):
            if key in g:
                g[key] = tuple((n, float(p)) for n, p in g[key])
        try:
            cfg.geometry = PlantGeometry(**g)
        except TypeError as exc:
            raise ScenarioError(f"geometry: {exc}") from None
    if "until_ms" in data:
        cfg.until_ms = data["until_ms"]
    if "pieces" in data:
        cfg.pieces = [(p["colour"], p["arrival_ms"]) for p in data["pieces"]]
    if "random_pieces" in data:
        rp = data["random_pieces"]
        cfg.pieces = random_pieces(
            rp["count"], rp.get("seed", seed), rp.get("first_ms", 1660.0), rp.get("spacing_steps", 3), cfg.geometry.step_ms
        )
    for key, value in data.get("exec_ms", {}).items():
        comp, _, beh = key.partition("/")
        cfg.exec_ms[(comp, beh or "*")] = value
    if "comm_ms" in data:
        cfg.comm_ms = data["comm_ms"]
    if "debounce_ms" in data:
        cfg.debounce_ms = dict(data["debounce_ms"])
    if "period_ms" in data:
        cfg.c1_period_ms = data["period_ms"]
    if "deadline_ms" in data:
        cfg.c1_deadline_ms = data["deadline_ms"]
    links = data.get("links", {})
    cfg.jitter_ms = links.get("jitter_ms", cfg.jitter_ms)
    cfg.drop_prob = links.get("drop_prob", cfg.drop_prob)
    if "bounce" in data:
        cfg.bounce = BounceNoise(**data["bounce"])
    if "faults" in data:
        try:
            cfg.faults = [FaultSpec.from_dict(f, default_id=f"F{i + 1}") for i, f in enumerate(data["faults"])]
        except ValueError as exc:
            raise ScenarioError(f"fault: {exc}") from None
    if "colour_outliers" in data:
        co = data["colour_outliers"]
        if any(i >= len(cfg.pieces) for i in co["pieces"]):
            raise ScenarioError("colour_outliers references a piece index out of range")
        cfg.faults = cfg.faults + colour_outlier_faults(cfg, co["pieces"], co.get("value", 600.0))
    if "demand" in data:
        cfg.demand = [tuple(p) for p in data["demand"]]
    if "metric_target" in data:
        cfg.metric_target = data["metric_target"]
    if "observer_h_ms" in data:
        cfg.observer_h_ms = data["observer_h_ms"]
    if until_ms is not None:
        cfg.until_ms = until_ms
    return cfg


@dataclass
class RunResult:
    case: CaseStudy
    report: MetricReport
    experiment: ExperimentReport | None


def run_scenario(data: dict, seed: int | None = None, until_ms: float | None = None) -> RunResult:
    cfg = to_config(data, seed, until_ms)
    experiment = data.get("experiment")
    exp_report = None
    if experiment == "exp1":
        exp_report, cs = run_experiment_1(cfg)
    elif experiment == "exp2":
        exp_report, cs = run_experiment_2(cfg)
    else:
        cs = build_case_study(cfg).run()
    return RunResult(cs, cs.report(), exp_report)


def _csv(header: str, lines) -> str:
    return header + "\n" + "".join(line + "\n" for line in lines)


TRACE_FILES = {
    "availability": "availability.trace",
    "demand": "demand.trace",
    "verdicts": "verdicts.csv",
    "faults": "faults.csv",
    "report": "report.json",
}


def write_trace_dir(result: RunResult, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    cs = result.case
    files = {
        "dispatch.log": _csv("tick,entity,event_kind,detail", cs.kernel.dispatch_log),
        "activations.csv": _csv("tick,component,behaviour,state,event,emissions", cs.runtime.activation_log),
        "deliveries.csv": _csv("tick,topic,publisher,subscriber,payload,transit_ms,status", cs.middleware.delivery_log),
        "drops.csv": _csv("tick,component,event,arrival_tick,reason", cs.runtime.drop_log),
        "plant.csv": _csv("tick,piece,event,detail", cs.plant.log),
        TRACE_FILES["verdicts"]: _csv("tick,component,contract,event,kind", cs.verdict_lines()),
        TRACE_FILES["faults"]: _csv("tick,fault_id,target,event,effect", cs.fault_lines()),
        TRACE_FILES["availability"]: cs.availability().to_text(),
        TRACE_FILES["demand"]: cs.demand().to_text(),
        TRACE_FILES["report"]: result.report.dumps(),
    }
    if result.experiment is not None:
        files["experiment.json"] = result.experiment.dumps()
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        written.append(path)
    return written


def replay(trace_dir: Path) -> MetricReport:
    """Recompute the metric report from exported traces and logs."""
    texts = {}
    for key, name in TRACE_FILES.items():
        if key == "report":
            continue
        path = trace_dir / name
        try:
            texts[key] = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read {path}: {exc}") from None
    availability = StepTrace.from_text(texts["availability"])
    demand = StepTrace.from_text(texts["demand"])
    return build_report(availability, demand, parse_verdicts(texts["verdicts"]), parse_faults(texts["faults"]))

