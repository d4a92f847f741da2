"""Regenerate the derived test fixtures.

Run from the repository root after changing the bundled prompt template:

    python3 tests/fixtures/make_fixtures.py

Mock-backend fixtures are keyed by the sha256 of the full prompt, so they go
stale whenever the template changes; ``test_fixtures_fresh`` catches that.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from oracles import fk_frame  # noqa: E402
from scipy.spatial.transform import Rotation  # noqa: E402

from gesturebot.gsd import build_prompt, default_template  # noqa: E402
from gesturebot.llm import fingerprint  # noqa: E402
from gesturebot.pose import frame_to_dict  # noqa: E402


def _answer(label: str, reasoning: str, style: str = "plain") -> str:
    if style == "plain":
        return f"Classification: {label}\nReasoning: {reasoning}"
    if style == "think":
        return (
            "<think>\nThe speaker could mean several things here. Could it be NEITHER? "
            "Let me decide.\n</think>\n"
            f"Classification: {label}\nReasoning: {reasoning}"
        )
    if style == "lower":
        return f"classification: {label.lower()}\nreasoning: {reasoning}"
    if style == "bold":
        return f"**Classification:** {label}\n**Reasoning:** {reasoning}"
    raise ValueError(style)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def _responses(rows) -> dict[str, str]:
    template = default_template()
    return {fingerprint(build_prompt(template, text)): resp for text, resp in rows}


# -- GSD evaluation sets ---------------------------------------------------------------

CONSENT = [
    "May I listen to your chest now?",
    "Is it okay if I take your blood pressure?",
    "Do I have your permission to examine your abdomen?",
    "Can I lift your sleeve to check the injection site?",
    "Would you mind if I touch your wrist to feel your pulse?",
    "Are you comfortable with me looking at your throat?",
    "Is it alright if I press gently on your stomach?",
    "Yes, you can go ahead and check my knee.",
    "Sure, I'm happy for you to do that.",
    "Do you agree to the blood test we discussed?",
    "Can I place this cuff on your arm?",
    "Is it fine if a student observes today?",
    "You have my permission to proceed.",
    "May I shine a light in your eyes?",
    "Okay, go ahead with the injection.",
]
INSTRUCTION = [
    "Please lie down on the bed.",
    "Take a deep breath in and hold it.",
    "Raise your right arm above your head.",
    "Turn your head slowly to the left.",
    "Open your mouth and say ah.",
    "Squeeze my fingers as hard as you can.",
    "Sit up straight for me.",
    "Point to where it hurts the most.",
    "Bend your knee towards your chest.",
    "Follow my finger with your eyes.",
    "Stand up and walk to the door.",
    "Breathe out slowly through your mouth.",
    "Roll onto your left side.",
    "Relax your shoulders and let your arms hang.",
    "Cough for me, please.",
]
NEITHER = [
    "The results came back normal last week.",
    "I have been feeling tired since Monday.",
    "My daughter drove me here this morning.",
    "Your appointment is on the fourth floor.",
    "The pain started after I lifted a heavy box.",
    "We will get the scan results on Friday.",
    "I usually take my tablets with breakfast.",
    "The weather has been awful lately.",
    "That medication can cause some drowsiness.",
    "I had the same problem two years ago.",
    "Your blood pressure is slightly higher than last time.",
    "The nurse will be with you shortly.",
    "It mostly hurts at night.",
    "I've never had surgery before.",
    "The clinic closes at six today.",
    "My father had diabetes.",
    "Thank you for coming in today.",
    "I forgot to bring my glasses.",
    "The swelling has gone down a bit.",
    "We talked about this at the last visit.",
]

# (true class, index in its list) -> what the replayed model answers instead
EVAL50_ERRORS = {
    ("Consent", 7): "INSTRUCTION",
    ("Consent", 8): "NEITHER",
    ("Consent", 12): "UNKNOWN",
    ("Instruction", 6): "NEITHER",
    ("Instruction", 13): "NEITHER",
    ("Instruction", 14): "CONSENT",
    ("Neither", 3): "INSTRUCTION",
    ("Neither", 11): "INSTRUCTION",
    ("Neither", 16): "UNKNOWN",
}
STYLES = ("plain", "think", "lower", "bold")


def eval50():
    rows, responses = [], []
    k = 0
    for true, sentences in (("Consent", CONSENT), ("Instruction", INSTRUCTION), ("Neither", NEITHER)):
        for i, text in enumerate(sentences):
            sid = f"e50-{k:03d}"
            rows.append({"sentence_id": sid, "text": text, "label": true})
            pred = EVAL50_ERRORS.get((true, i), true.upper())
            if pred == "UNKNOWN":
                resp = "Classification: QUESTION\nReasoning: The speaker is making small talk."
            else:
                resp = _answer(pred, f"Replayed answer for {sid}.", STYLES[k % len(STYLES)])
            responses.append((text, resp))
            k += 1
    return rows, _responses(responses)


EVAL6 = [
    ("e6-0", "May I check your ears?", "Consent", "Classification: CONSENT\nReasoning: Asks permission."),
    ("e6-1", "Is it okay if I examine your back?", "Consent",
     "<think>\nPermission or instruction?\n</think>\nClassification: PERMISSION\nReasoning: Asks leave."),
    ("e6-2", "Stick out your tongue.", "Instruction", "Classification: INSTRUCTION\nReasoning: Directs an action."),
    ("e6-3", "Lift your chin a little.", "Instruction", "Classification: NEITHER\nReasoning: Unclear."),
    ("e6-4", "The lab is closed on Sundays.", "Neither", "classification: neither\nreasoning: A statement."),
    ("e6-5", "My knee has been sore all week.", "Neither", "Classification: CONSENT\nReasoning: Misread."),
]

ROUTE = [
    ("Raise both arms above your head.", _answer("INSTRUCTION", "Directs the patient to move their arms.")),
    ("The weather is lovely today.", _answer("NEITHER", "A remark with no request or permission.")),
    ("May I take your pulse?", _answer("CONSENT", "Requests permission to touch the patient.")),
]


# -- corpus ------------------------------------------------------------------------------

SEGMENTS = [
    ("Good morning, I'm Dr.", 0.0, 1.2, "visit01"),
    ("Patel.", 1.2, 1.8, "visit01"),
    ("May I listen", 2.0, 2.6, "visit01"),
    ("to your chest?", 2.6, 3.4, "visit01"),
    ("Take a deep breath in.", 3.6, 4.9, "visit01"),
    ("The results came back normal last week.", 5.0, 7.0, "visit01"),
    ("and then we", 7.2, 8.0, "visit01"),
    ("Please lie down on the bed.", 0.5, 2.0, "visit02"),
    ("I have been feeling tired since Monday!", 2.1, 4.0, "visit02"),
    ("Is it okay if I take your blood pressure?", 4.2, 6.0, "visit02"),
]

# sentence text -> labels from annotators a, b, c ("?" = no usable answer)
VOTES = {
    "Good morning, I'm Dr. Patel.": ("NEITHER", "NEITHER", "NEITHER"),
    "May I listen to your chest?": ("CONSENT", "CONSENT", "CONSENT"),
    "Take a deep breath in.": ("INSTRUCTION", "INSTRUCTION", "NEITHER"),
    "The results came back normal last week.": ("NEITHER", "NEITHER", "NEITHER"),
    "and then we": ("?", "NEITHER", "NEITHER"),
    "Please lie down on the bed.": ("INSTRUCTION", "INSTRUCTION", "INSTRUCTION"),
    "I have been feeling tired since Monday!": ("NEITHER", "NEITHER", "NEITHER"),
    "Is it okay if I take your blood pressure?": ("CONSENT", "CONSENT", "INSTRUCTION"),
}


def annotator_fixtures():
    out = {}
    for k, name in enumerate("abc"):
        pairs = []
        for text, votes in VOTES.items():
            v = votes[k]
            resp = "I cannot tell." if v == "?" else _answer(v, f"Annotator {name} reading.")
            pairs.append((text, resp))
        out[name] = _responses(pairs)
    return out


# (final label, annotator votes, human reviewer or None); 5 Consent, 6 Instruction, 9 Neither
FINALIZED_PLAN = (
    [("Consent", ("Consent", "Consent"), "rn")] * 3
    + [("Consent", ("Consent", "Neither"), "rn")] * 2
    + [("Instruction", ("Instruction", "Instruction"), "md")] * 4
    + [("Instruction", ("Instruction", "Consent"), "md")] * 2
    + [("Neither", ("Neither", "Neither"), None)] * 8
    + [("Neither", ("Instruction", "Neither"), "rn")]
)


def finalized_corpus():
    rows = []
    for k, (final, votes, reviewer) in enumerate(FINALIZED_PLAN):
        rows.append({
            "id": f"fin-{k:05d}", "text": f"Finalized sentence number {k}.",
            "start": float(k), "end": k + 0.9, "source_id": "fin",
            "annotations": [{"annotator": name, "label": v, "reasoning": ""} for name, v in zip("ab", votes)],
            "final_label": final, "resolved_by": reviewer,
        })
    return rows


# -- motion ------------------------------------------------------------------------------


def upper_body_bvh(frames: int = 600, fps: int = 60) -> str:
    """Smooth upper-body motion; shoulder roll briefly exceeds the robot's range."""
    names = ("Head", "LeftArm", "LeftForeArm", "LeftHand", "RightArm", "RightForeArm", "RightHand")
    lines = ["HIERARCHY", "ROOT Hips", "{", "  OFFSET 0.0 0.0 0.0",
             "  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation"]
    for n in names:
        lines += [f"  JOINT {n}", "  {", "    OFFSET 0.0 10.0 0.0",
                  "    CHANNELS 3 Zrotation Xrotation Yrotation",
                  "    End Site", "    {", "      OFFSET 0.0 5.0 0.0", "    }", "  }"]
    lines += ["}", "MOTION", f"Frames: {frames}", f"Frame Time: {1 / fps:.10f}"]
    for i in range(frames):
        t = i / fps
        s = math.sin(2 * math.pi * 0.5 * t)
        c = math.cos(2 * math.pi * 0.4 * t)
        head = (0.0, 10 * s, 20 * s)  # Z, X=pitch, Y=yaw
        l_arm = (30 + 70 * (0.5 + 0.5 * s), 40 + 40 * c, 0.0)  # Z=roll, X=pitch
        l_fore = (-(10 + 50 * (0.5 - 0.5 * c)), 0.0, -30 * s)  # Z=elbow roll, Y=elbow yaw
        l_hand = (0.0, 0.0, 15 * c)
        r_arm = (-l_arm[0], l_arm[1], 0.0)
        r_fore = (-l_fore[0], 0.0, -l_fore[2])
        r_hand = (0.0, 0.0, -l_hand[2])
        row = [0.0, 90.0, 0.0, 0.0, 0.0, 0.0]
        for triple in (head, l_arm, l_fore, l_hand, r_arm, r_fore, r_hand):
            row.extend(triple)
        lines.append(" ".join(f"{v:.4f}" for v in row))
    return "\n".join(lines) + "\n"


def short_wave_bvh() -> str:
    """24 frames of a single waving arm; used for the downsampling time check."""
    lines = ["HIERARCHY", "ROOT Hips", "{", "\tOFFSET 0 0 0",
             "\tCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation",
             "\tJOINT RightArm", "\t{", "\t\tOFFSET -6 14 0", "\t\tCHANNELS 3 Zrotation Xrotation Yrotation",
             "\t\tEnd Site", "\t\t{", "\t\t\tOFFSET -12 0 0", "\t\t}", "\t}", "}",
             "MOTION", "Frames: 24", "Frame Time: 0.0166667"]
    for i in range(24):
        lines.append(f"0 90 0 0 0 0 {-20 - i:.1f} {60 - 2 * i:.1f} {5 * math.sin(i / 4):.5f}")
    return "\n".join(lines) + "\n"


def instruction_landmarks(frames: int = 36, fps: int = 30):
    """Both arms rising from the sides; y-up world coordinates."""
    rot = Rotation.from_euler("y", 0.3)
    rows = []
    for i in range(frames):
        a = i / (frames - 1)
        angles = {
            "LShoulderPitch": 1.3 - 1.1 * a, "LShoulderRoll": 0.15 + 0.35 * a,
            "LElbowYaw": -0.4 - 0.4 * a, "LElbowRoll": -0.2 - 0.6 * a,
            "RShoulderPitch": 1.3 - 1.1 * a, "RShoulderRoll": -0.15 - 0.35 * a,
            "RElbowYaw": 0.4 + 0.4 * a, "RElbowRoll": 0.2 + 0.6 * a,
        }
        frame = fk_frame(angles, rotation=rot, translation=(0.5, 1.0, 2.0), t=round(i / fps, 6))
        d = frame_to_dict(frame)
        d["points"] = {n: {k: round(v, 6) for k, v in p.items()} for n, p in d["points"].items()}
        rows.append(d)
    return rows


def main() -> None:
    gsd, bvh, pose, corpus = HERE / "gsd", HERE / "bvh", HERE / "pose", HERE / "corpus"
    for d in (gsd, bvh, pose, corpus):
        d.mkdir(exist_ok=True)

    rows, responses = eval50()
    _write_jsonl(gsd / "eval_50.jsonl", rows)
    _write_json(gsd / "eval_50_responses.json", dict(sorted(responses.items())))
    _write_jsonl(gsd / "eval_6.jsonl", [{"sentence_id": s, "text": t, "label": lab} for s, t, lab, _ in EVAL6])
    _write_json(gsd / "eval_6_responses.json", dict(sorted(_responses([(t, r) for _, t, _, r in EVAL6]).items())))
    _write_json(gsd / "route_responses.json", dict(sorted(_responses(ROUTE).items())))

    _write_jsonl(corpus / "segments.jsonl",
                 [{"text": t, "start": s, "end": e, "source_id": src} for t, s, e, src in SEGMENTS])
    for name, fx in annotator_fixtures().items():
        _write_json(corpus / f"annotator_{name}.json", dict(sorted(fx.items())))
    _write_jsonl(corpus / "finalized.jsonl", finalized_corpus())
    _write_json(corpus / "reported_totals.json", {"Consent": 117, "Instruction": 912, "Neither": 2707, "total": 3736})

    (bvh / "upper_body_60hz.bvh").write_text(upper_body_bvh(), encoding="utf-8")
    (bvh / "short_wave.bvh").write_text(short_wave_bvh(), encoding="utf-8")
    _write_jsonl(pose / "instruction_raise.jsonl", instruction_landmarks())


if __name__ == "__main__":
    main()
