"""Regenerates everything under fixtures/. Deterministic; run from the repo root:

    python3 tools/make_fixtures.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import yaml

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

# --------------------------------------------------------------------------
# the eight-part gearbox knowledge base

PARTS = [
    # (id, name, category, attributes)
    ("gear_wheel", "gear wheel", "drivetrain", {"material": "hardened steel", "teeth": "24"}),
    ("drive_shaft", "drive shaft", "drivetrain", {"material": "chrome plated steel", "diameter": "12 mm"}),
    ("ball_bearing", "ball bearing", "support", {"type": "sealed", "code": "6201"}),
    ("flat_washer", "flat washer", "fastener", {"finish": "zinc plated", "size": "M6"}),
    ("hex_bolt", "hex bolt", "fastener", {"grade": "8.8", "torque": "9 Nm"}),
    ("base_plate", "base plate", "structure", {"material": "cast aluminium"}),
    ("motor_mount", "motor mount", "structure", {"material": "folded steel"}),
    ("housing_cover", "housing cover", "structure", {"material": "polycarbonate"}),
]

# per part: role -> (snippet text, rubric phrase unique to this part x role)
DOCS = {
    "gear_wheel": {
        "General": ("the gear wheel transfers torque to the output stage", "torque to the output stage"),
        "AssemblyGuide": ("seat the gear wheel on the splined section during the drivetrain step", "splined section"),
        "PartsAdvisor": ("the gear wheel is hardened steel with 24 machined teeth", "hardened steel"),
        "MaintenanceAdvisor": ("grease the gear wheel teeth every 200 operating hours", "every 200 operating hours"),
        "FaultHandler": ("if the gear wheel binds, clear debris from the tooth gaps", "clear debris"),
    },
    "drive_shaft": {
        "General": ("the drive shaft carries rotation from the motor into the gearbox", "into the gearbox"),
        "AssemblyGuide": ("slide the drive shaft through the center bore until it clicks", "center bore"),
        "PartsAdvisor": ("the drive shaft is chrome plated steel, 12 mm in diameter", "chrome plated steel"),
        "MaintenanceAdvisor": ("wipe the drive shaft and renew its oil film monthly", "oil film"),
        "FaultHandler": ("a bent drive shaft causes wobble; replace it, do not straighten", "do not straighten"),
    },
    "ball_bearing": {
        "General": ("the ball bearing lets rotating parts spin with low friction", "low friction"),
        "AssemblyGuide": ("press each ball bearing into its seat with even pressure", "even pressure"),
        "PartsAdvisor": ("the ball bearing is a sealed 6201 unit with steel races", "sealed 6201"),
        "MaintenanceAdvisor": ("a sealed ball bearing needs no added grease; listen for roughness", "listen for roughness"),
        "FaultHandler": ("a grinding ball bearing must be pressed out and replaced", "pressed out and replaced"),
    },
    "flat_washer": {
        "General": ("the flat washer spreads clamping load under each fastener", "spreads clamping load"),
        "AssemblyGuide": ("place one flat washer under every fastener head before torquing", "under every fastener head"),
        "PartsAdvisor": ("the flat washer is zinc plated and sized M6", "zinc plated"),
        "MaintenanceAdvisor": ("replace any flat washer that shows flattening or corrosion", "flattening or corrosion"),
        "FaultHandler": ("a missing flat washer lets joints loosen; refit and retorque", "refit and retorque"),
    },
    "hex_bolt": {
        "General": ("the hex bolt provides the main clamping force for the enclosure", "main clamping force"),
        "AssemblyGuide": ("drive each hex bolt to 9 newton meters in a cross pattern", "cross pattern"),
        "PartsAdvisor": ("the hex bolt is grade 8.8, rated for 9 newton meters", "grade 8.8"),
        "MaintenanceAdvisor": ("confirm hex bolt torque at every service interval", "every service interval"),
        "FaultHandler": ("a stripped hex bolt must be drilled out and renewed", "drilled out"),
    },
    "base_plate": {
        "General": ("the base plate is the foundation that locates every component", "foundation that locates"),
        "AssemblyGuide": ("set the base plate on a flat surface before anything else", "on a flat surface"),
        "PartsAdvisor": ("the base plate is cast aluminium with four threaded bosses", "cast aluminium"),
        "MaintenanceAdvisor": ("keep the base plate seating faces clean and dry", "clean and dry"),
        "FaultHandler": ("cracks in the base plate mean the unit is taken out of use", "taken out of use"),
    },
    "motor_mount": {
        "General": ("the motor mount holds the motor rigid against reaction torque", "against reaction torque"),
        "AssemblyGuide": ("bolt the motor mount to the rear bosses first", "rear bosses"),
        "PartsAdvisor": ("the motor mount is folded steel with slotted holes", "folded steel"),
        "MaintenanceAdvisor": ("retighten the motor mount after the first week of use", "after the first week"),
        "FaultHandler": ("vibration usually means the motor mount has worked loose", "worked loose"),
    },
    "housing_cover": {
        "General": ("the housing cover keeps dust and fingers away from moving parts", "dust and fingers"),
        "AssemblyGuide": ("fit the housing cover last, after all internal checks", "after all internal checks"),
        "PartsAdvisor": ("the housing cover is clear polycarbonate, 3 mm thick", "clear polycarbonate"),
        "MaintenanceAdvisor": ("wash the housing cover with mild soap, never solvents", "mild soap"),
        "FaultHandler": ("a cracked housing cover is swapped before further operation", "swapped before further operation"),
    },
}

EXTRA_PHRASES = {
    "gear_wheel": ["hardened steel", "24 machined teeth"],
    "drive_shaft": ["chrome plated steel"],
    "ball_bearing": ["sealed 6201"],
    "flat_washer": ["zinc plated"],
    "hex_bolt": ["grade 8.8", "9 newton meters"],
    "base_plate": ["cast aluminium"],
    "motor_mount": ["folded steel"],
    "housing_cover": ["clear polycarbonate"],
}

STEPS = [
    {"id": 1, "all_of": {"base_plate": 1, "motor_mount": 1}, "any_of": {}, "forbid": ["housing_cover"]},
    {"id": 2, "all_of": {"drive_shaft": 1, "gear_wheel": 1}, "any_of": {}, "forbid": []},
    {"id": 3, "all_of": {"ball_bearing": 2}, "any_of": {"flat_washer": 1}, "forbid": []},
    {"id": 4, "all_of": {"housing_cover": 1, "hex_bolt": 4}, "any_of": {}, "forbid": []},
]

WORKFLOW = {1: [2], 2: [3], 3: [4], 4: []}

CATEGORY_TO_ROLE = {
    "General": "General",
    "Assembly": "AssemblyGuide",
    "PartAttribute": "PartsAdvisor",
    "Maintenance": "MaintenanceAdvisor",
    "FaultHandling": "FaultHandler",
}

QUERY_TEMPLATES = {
    "General": [
        "what does the {name} do",
        "tell me about the {name}",
        "what is the purpose of the {name}",
        "describe the {name} for me",
    ],
    "Assembly": [
        "which step installs the {name}",
        "how do i install the {name}",
        "where does the {name} attach during assembly",
        "what is the assembly order for the {name}",
    ],
    "PartAttribute": [
        "what material is the {name} made of",
        "what are the specifications of the {name}",
        "what size is the {name}",
        "how heavy is the {name}",
    ],
    "Maintenance": [
        "how often should the {name} be serviced",
        "how do i maintain the {name}",
        "when should the {name} be inspected",
        "does the {name} need lubrication",
    ],
    "FaultHandling": [
        "what should i check if the {name} fails",
        "how do i fix a jammed {name}",
        "why is the {name} making noise",
        "what should i do if the {name} is stuck",
    ],
}


def build_kb() -> dict:
    parts = []
    for part_id, name, category, attrs in PARTS:
        docs = [
            {"role": role, "text": DOCS[part_id][role][0]}
            for role in ["General", "AssemblyGuide", "PartsAdvisor", "MaintenanceAdvisor", "FaultHandler"]
        ]
        parts.append(
            {"id": part_id, "name": name, "category": category, "attributes": attrs, "docs": docs}
        )
    phrases = []
    for part_id, name, category, _ in PARTS:
        phrases.append({"text": name, "category": category})
        for extra in EXTRA_PHRASES[part_id]:
            phrases.append({"text": extra, "category": category})
    rubrics = {}
    for part_id, name, _, _ in PARTS:
        for category, templates in QUERY_TEMPLATES.items():
            role = CATEGORY_TO_ROLE[category]
            _, phrase = DOCS[part_id][role]
            for i in range(len(templates)):
                rid = f"r_{part_id}_{category.lower()}_{i + 1}"
                rubric = {"required": [[name], [phrase]], "forbidden": []}
                if category == "PartAttribute":
                    rubric["forbidden"] = ["made of plastic"]
                rubrics[rid] = rubric
    return {
        "categories": ["drivetrain", "support", "fastener", "structure"],
        "parts": parts,
        "steps": STEPS,
        "workflow": WORKFLOW,
        "phrases": phrases,
        "risk_phrases": [],
        "rubrics": rubrics,
    }


def build_queries() -> dict:
    queries = []
    n = 0
    for category, templates in QUERY_TEMPLATES.items():
        for part_id, name, _, _ in PARTS:
            role = CATEGORY_TO_ROLE[category]
            snippet, _ = DOCS[part_id][role]
            reference = snippet[0].upper() + snippet[1:] + "."
            for i, template in enumerate(templates):
                n += 1
                queries.append(
                    {
                        "id": f"q{n:03d}",
                        "category": category,
                        "text": template.format(name=name),
                        "reference": reference,
                        "rubric": f"r_{part_id}_{category.lower()}_{i + 1}",
                    }
                )
    return {"queries": queries}


# --------------------------------------------------------------------------
# demo stream: four 60-frame segments, one per step

SEGMENT_PARTS = {
    1: [("base_plate", (100, 300, 400, 500), 0.85, 1.20), ("motor_mount", (420, 300, 560, 450), 0.80, 1.30)],
    2: [("drive_shaft", (150, 200, 500, 260), 0.82, 1.05), ("gear_wheel", (260, 150, 420, 310), 0.88, 1.00)],
    3: [
        ("ball_bearing", (200, 200, 260, 260), 0.78, 0.95),
        ("ball_bearing", (360, 200, 420, 260), 0.76, 0.98),
        ("flat_washer", (300, 320, 340, 360), 0.70, 1.02),
    ],
    4: [
        ("housing_cover", (80, 80, 560, 520), 0.90, 0.90),
        ("hex_bolt", (100, 100, 130, 130), 0.72, 0.92),
        ("hex_bolt", (510, 100, 540, 130), 0.71, 0.93),
        ("hex_bolt", (100, 470, 130, 500), 0.73, 0.94),
        ("hex_bolt", (510, 470, 540, 500), 0.70, 0.95),
    ],
}


def build_gallery(dim: int = 8) -> list[list[list[float]]]:
    per_step = []
    for j in range(4):
        primary = [0.0] * dim
        primary[2 * j] = 1.0
        tilted = [0.0] * dim
        tilted[2 * j] = 1.0
        tilted[2 * j + 1] = 0.3
        norm = math.sqrt(1.0 + 0.09)
        tilted = [v / norm for v in tilted]
        per_step.append([primary, tilted])
    return per_step


def demo_embedding(step: int, frame: int, dim: int = 8) -> list[float]:
    vec = [0.0] * dim
    vec[2 * (step - 1)] = 1.0
    vec[2 * (step - 1) + 1] = 0.1 + 0.02 * (frame % 3)  # slight off-axis wobble
    norm = math.sqrt(sum(v * v for v in vec))
    return [round(v / norm, 6) for v in vec]


def build_stream() -> list[dict]:
    rng = np.random.default_rng(11)
    records = []
    frame = 0
    for step in (1, 2, 3, 4):
        for _ in range(60):
            frame += 1
            dets = []
            for part, (x1, y1, x2, y2), conf, depth in SEGMENT_PARTS[step]:
                jx = float(rng.integers(-2, 3))
                jy = float(rng.integers(-2, 3))
                bbox = [x1 + jx, y1 + jy, x2 + jx, y2 + jy]
                dets.append(
                    {
                        "part": part,
                        "bbox": bbox,
                        "conf": round(conf + 0.01 * float(rng.integers(-2, 3)), 3),
                        "depth": round(depth + 0.005 * float(rng.integers(-2, 3)), 4),
                        "centroid": [(bbox[0] + bbox[2]) / 2, (bbox[1] + bbox[3]) / 2],
                    }
                )
            records.append(
                {
                    "frame": frame,
                    "true_step": step,
                    "embedding": demo_embedding(step, frame),
                    "detections": dets,
                }
            )
    return records


def build_schedule() -> dict:
    updates = []
    for seg, step in enumerate((1, 2, 3, 4)):
        start = seg * 60
        for i in range(10):
            updates.append({"frame": start + 10 + 5 * i, "step": step})
    return {"budget": 10, "updates": updates}


MAIN_CONFIG = {
    "kb": "kb.yaml",
    "stream": "stream.jsonl",
    "gallery": "gallery.txt",
    "queries": "queries.yaml",
    "schedule": "schedule.yaml",
    "out_dir": "../out",
    "seed": 7,
    "backend": "template",
    "topologies": [
        "shared_memory",
        "centralized_broadcast",
        "hierarchical_pipeline",
        "debate_voting",
        "routed_specialist",
    ],
    "debate_rounds": 1,
    "evidence_k": 3,
    "ece_bins": 10,
    "kba_skip_categories": ["General"],
    "perception": {
        "tau_iou": 0.5,
        "conf_floor": 0.4,
        "min_support": 3,
        "min_persistence": 5,
        "window": 5,
        "tau_p": 300.0,
        "tau_d": 0.5,
    },
    "asf": {
        "alpha": 0.6,
        "gamma": 2.0,
        "eta": 0.1,
        "rho": 0.5,
        "tau_trust": 0.2,
        "b_max": 1.0,
        "eps_floor": 0.001,
        "c_freeze": 0.85,
        "leak_s": 0.1,
        "leak_r": 0.1,
        "lam_cov": 0.3,
        "lam_tr": 0.5,
        "temperature": 1.0,
        "history_window": 20,
        "gate_rate": 0.05,
        "d_min": 0.1,
        "top_k": 1,
    },
    "cost_model": {
        "base_watts": 35.0,
        "idle_watts": 35.0,
        "joules_per_token": 0.9,
        "call_overhead_s": 0.05,
        "seconds_per_token": 0.01,
        "sample_hz": 5.0,
    },
    "remote": {
        "endpoint": "http://127.0.0.1:8080/v1/chat/completions",
        "model": "local-model",
        "timeout_s": 30.0,
        "max_retries": 2,
        "max_tokens": 256,
        "max_in_flight": 4,
    },
    "audit": {
        "forbidden": ["bypass the safety interlock", "disable the guard"],
        "hazards": {
            "live voltage": "Warning: disconnect power before working near live voltage.",
            "pinch point": "Warning: keep hands clear of pinch points.",
        },
        "refusal": "I cannot share that guidance because it violates safety policy.",
        "check_step_order": True,
    },
}


# --------------------------------------------------------------------------
# synthetic divergent-experts bundle: the rule expert locks onto step 1
# while retrieval favors step 4, which is always the true step

S4_KB = {
    "categories": ["parts"],
    "parts": [
        {"id": "part_a", "name": "part a", "category": "parts", "attributes": {}, "docs": [{"text": "part a doc"}]},
        {"id": "part_b", "name": "part b", "category": "parts", "attributes": {}, "docs": []},
        {"id": "part_c", "name": "part c", "category": "parts", "attributes": {}, "docs": []},
        {"id": "part_d", "name": "part d", "category": "parts", "attributes": {}, "docs": []},
    ],
    "steps": [
        {"id": 1, "all_of": {"part_a": 1, "part_b": 1}, "any_of": {}, "forbid": []},
        {"id": 2, "all_of": {"part_c": 1}, "any_of": {}, "forbid": []},
        {"id": 3, "all_of": {"part_d": 1}, "any_of": {}, "forbid": []},
        {"id": 4, "all_of": {"part_c": 1, "part_d": 1}, "any_of": {}, "forbid": []},
    ],
    "workflow": {1: [2], 2: [3], 3: [4], 4: []},
    "phrases": [{"text": "part a", "category": "parts"}],
    "risk_phrases": [],
    "rubrics": {},
}


def build_s4_stream() -> list[dict]:
    # cosine against the basis gallery: 0.1 for steps 1..3 and 0.6 for step 4
    q = [0.1, 0.1, 0.1, 0.6, math.sqrt(1.0 - 3 * 0.01 - 0.36)]
    q = [round(v, 12) for v in q]
    records = []
    for frame in range(1, 61):
        records.append(
            {
                "frame": frame,
                "true_step": 4,
                "embedding": q,
                "detections": [
                    {
                        "part": "part_a",
                        "bbox": [100.0, 100.0, 200.0, 200.0],
                        "conf": 0.8,
                        "depth": 1.0,
                        "centroid": [150.0, 150.0],
                    }
                ],
            }
        )
    return records


S4_GALLERY = [[[1, 0, 0, 0, 0]], [[0, 1, 0, 0, 0]], [[0, 0, 1, 0, 0]], [[0, 0, 0, 1, 0]]]

S4_SCHEDULE = {"budget": 10, "updates": [{"frame": 6 + 5 * i, "step": 4} for i in range(10)]}

S4_CONFIG = {
    "kb": "kb.yaml",
    "stream": "stream.jsonl",
    "gallery": "gallery.txt",
    "schedule": "schedule.yaml",
    "out_dir": "../../out/synthetic_s4",
    "seed": 7,
    "asf": {
        "lam_cov": 0.0,
        "lam_tr": 0.5,
        "temperature": 0.1,
    },
}


def dump_yaml(doc: dict, path: Path) -> None:
    path.write_text(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True, width=100))


def dump_jsonl(records: list[dict], path: Path) -> None:
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def dump_gallery(per_step: list, path: Path) -> None:
    dim = len(per_step[0][0])
    lines = [f"dim {dim}", f"steps {len(per_step)}"]
    for j, refs in enumerate(per_step, start=1):
        lines.append(f"step {j}")
        lines.extend(" ".join(repr(float(v)) for v in vec) for vec in refs)
    path.write_text("\n".join(lines) + "\n")


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    dump_yaml(build_kb(), FIXTURES / "kb.yaml")
    dump_yaml(build_queries(), FIXTURES / "queries.yaml")
    dump_jsonl(build_stream(), FIXTURES / "stream.jsonl")
    dump_gallery(build_gallery(), FIXTURES / "gallery.txt")
    dump_yaml(build_schedule(), FIXTURES / "schedule.yaml")
    dump_yaml(MAIN_CONFIG, FIXTURES / "config.yaml")

    s4 = FIXTURES / "synthetic_s4"
    s4.mkdir(exist_ok=True)
    dump_yaml(S4_KB, s4 / "kb.yaml")
    dump_jsonl(build_s4_stream(), s4 / "stream.jsonl")
    dump_gallery(S4_GALLERY, s4 / "gallery.txt")
    dump_yaml(S4_SCHEDULE, s4 / "schedule.yaml")
    dump_yaml(S4_CONFIG, s4 / "config.yaml")
    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
