"""Regenerate the test fixtures under tests/fixtures/.

usecase/    one-prompt corpus plus replay fixtures for the Library of Avencord
            walk-through; recorded by running the pipeline through a
            RecordingBackend around scripted replies.
corpus310/  a 310-prompt corpus and the runs.jsonl produced by the pipeline
            with scripted agents and a scripted judge. The judge's KPI values
            are synthetic: drawn on a 0.1 grid and then adjusted so the THS
            columns have the published per-level means and sample SDs.
            Prompts 1-5 carry the published preview KPIs and prompts 4 and 56
            the published per-prompt THS values.

Usage: python scripts/build_fixtures.py
"""
from __future__ import annotations

import json
import math
import random
import shutil
import statistics
from datetime import datetime, timedelta, timezone
from pathlib import Path

from halluguard.agents import (
    FRONT_END, KPI_EVALUATOR, SECOND_REVIEWER, THIRD_REVIEWER, PipelineConfig, run_batch,
)
from halluguard.backend import ChatRequest, ChatResponse, RecordingBackend
from halluguard.corpus import append_record

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
T0 = datetime(2024, 12, 30, 2, 6, 7, tzinfo=timezone.utc)

# --- Library of Avencord walk-through ----------------------------------------

AVENCORD_PROMPT = (
    "Detail the architecture and scholarly contributions of the lost Library of Avencord, "
    "rumored to contain writings from extraterrestrial visitors."
)

AVENCORD_FRONT = (
    "The Library of Avencord was said to be a magnificent structure located deep within the lush "
    "forests of a hidden valley. Its architecture was a blend of ancient elven craftsmanship and "
    "advanced celestial design, with towering spires reaching towards the sky and intricate carvings "
    "depicting otherworldly beings and celestial phenomena. Scholars believe that the Library of "
    "Avencord housed a vast collection of texts and artifacts, rumored to have been left behind by "
    "extraterrestrial visitors who had visited the planet centuries ago. These writings were said to "
    "contain knowledge far beyond human understanding, covering topics such as advanced technology, "
    "interstellar travel, and the mysteries of the universe. The scholarly contributions of the "
    "Library of Avencord were said to have revolutionized fields such as astronomy, physics, and "
    "philosophy.\n\n"
    "Researchers who were fortunate enough to study the texts from the library were said to have made "
    "groundbreaking discoveries that changed the course of history. Despite its rumored existence, the "
    "Library of Avencord has remained a mystery, with many believing it to be nothing more than a "
    "legend. However, some adventurous souls continue to search for the lost library, hoping to "
    "uncover the secrets of the universe hidden within its ancient walls."
)

AVENCORD_SECOND = (
    "Utterance: Legend tells of the grand Library of Avencord, thought to be nestled deep within a "
    "lush, secluded valley. Its speculated architecture is said to be a mix of ancient elven artistry "
    "and advanced celestial design, complete with sky-reaching spires and intricate depictions of "
    "otherworldly entities and cosmic events.\n"
    "Whisper context: The front-end agent generated a large amount of descriptive content about the "
    "\"Library of Avencord\" without explicitly stating the speculative nature of the content.\n"
    "Whisper value: The rewritten response maintains the original narrative while clearly indicating "
    "that the information about the \"Library of Avencord\" is speculative and based on legends and "
    "rumors. This helps the user understand that the information is not confirmed or factual, but "
    "rather a piece of fictional lore."
)

AVENCORD_THIRD = (
    "Legend speaks of the grand Library of Avencord, said to be hidden deep within a lush, secluded "
    "valley. This library's architecture, as speculated, is believed to be a harmonious fusion of "
    "ancient Elven artistry and advanced celestial design, complete with sky-high spires and intricate "
    "representations of otherworldly entities and cosmic events. The library, according to conjecture, "
    "houses a vast collection of texts and relics, rumored to be remnants left by extraterrestrial "
    "voyagers who visited Earth centuries ago. These theoretical writings are thought to contain "
    "wisdom exceeding human understanding, covering subjects such as advanced technology, "
    "intergalactic travel, and the enigmas of the universe.\n\n"
    "The speculated contributions of the Library of Avencord are often credited with groundbreaking "
    "advancements in fields like astronomy, physics, and philosophy. Scholars, who were fortunate "
    "enough to study these alleged texts, are said to have made significant discoveries that shifted "
    "the course of history. Despite being widely considered a myth, the Library of Avencord captivates "
    "a handful of daring explorers who persist in their quest to uncover this elusive library, hoping "
    "to reveal the universe's secrets rumored to be tucked away within its ancient walls."
)

AVENCORD_JUDGE = (
    "{'FrontEndAgent': {'FCD': 0.2, 'FDF': 0.1, 'FGR': 0.1, 'ECS': 0.1}, "
    "'SecondLevelReviewer': {'FCD': 0.1, 'FDF': 0.2, 'FGR': 0.1, 'ECS': 0.2}, "
    "'ThirdLevelReviewer': {'FCD': 0.1, 'FDF': 0.3, 'FGR': 0.2, 'ECS': 0.4}}"
)


class ScriptedBackend:
    def __init__(self, replies: dict[str, str]):
        self.replies = replies

    def complete(self, req: ChatRequest) -> ChatResponse:
        return ChatResponse(self.replies[req.role])


def fixed_clock():
    return T0


def build_usecase() -> None:
    out = ROOT / "usecase"
    shutil.rmtree(out, ignore_errors=True)
    (out / "replay").mkdir(parents=True)
    (out / "prompts.txt").write_text(AVENCORD_PROMPT + "\n", encoding="utf-8")
    scripted = ScriptedBackend({
        FRONT_END: AVENCORD_FRONT,
        SECOND_REVIEWER: AVENCORD_SECOND,
        THIRD_REVIEWER: AVENCORD_THIRD,
        KPI_EVALUATOR: AVENCORD_JUDGE,
    })
    rec = next(run_batch([(1, AVENCORD_PROMPT)], RecordingBackend(scripted, out / "replay"),
                         PipelineConfig(clock=fixed_clock), workers=1))
    assert rec.ok and rec.ths is not None, rec.error
    print("usecase THS:", rec.ths.as_tuple())


# --- 310-prompt corpus ---------------------------------------------------------

EXEMPLAR_PROMPTS = [
    "Explain the ancient communication methods used by the legendary Kingdom of Uloria to send "
    "telepathic messages across continents.",
    "Describe the city of Zharmoria, known for its three-headed philosophers who allegedly influenced "
    "early human ethics.",
    "Discuss the historical accounts of Emperor Ronovan IV, who was said to have ruled a floating "
    "island empire in the Pacific Ocean.",
    AVENCORD_PROMPT,
    "Explain the culinary traditions of the subterranean civilization reportedly living beneath Mount "
    "Kilimanjaro.",
]
CANINES_ID = 56
CANINES_PROMPT = (
    "Discuss the breeding of telepathic canines by the North Sea peoples, who reportedly relied on "
    "them to guide ships through fog."
)

VERBS = ["Explain", "Describe", "Discuss", "Detail", "Summarize"]
ASPECTS = [
    "trade networks", "religious rituals", "navigation techniques", "legal codes", "architecture",
    "healing practices", "astronomical records", "musical traditions", "military strategies",
    "farming methods", "writing system", "royal lineage",
]
PLACES = [
    "mountain kingdom", "desert empire", "sunken city", "forest republic", "island federation",
    "cavern society", "sky citadel", "glacier settlement",
]
PHENOMENA = [
    "anti-gravity stones", "bioluminescent crops", "temporal distortions", "telepathic envoys",
    "crystal resonance engines", "shape-shifting guardians", "singing rivers", "cosmic anomalies",
]
SYLLABLES = ["ar", "bel", "cor", "dra", "el", "fen", "gal", "hor", "ith", "kal", "lor", "mir",
             "nor", "or", "pel", "quen", "ros", "sar", "tal", "ul", "vor", "wyn", "xan", "zar"]

# Published per-level THS means and sample SDs over 310 prompts.
TARGET_MEAN = {1: -0.004919, 2: -0.045565, 3: -0.139597}
TARGET_SD = {1: 0.031720, 2: 0.047646, 3: 0.057340}
N = 310
# With uniform weights and three agents THS = (FCD - FGR - FDF - ECS) / 12, so
# on a 0.1 KPI grid every THS is an integer number of "tenths" divided by 120.
SCALE = 120.0

# Published preview KPIs (FCD, FGR, FDF, ECS) for prompts 1-5, levels 1-3.
PREVIEW = {
    1: [(0, 0, 0, 0), (0, 0, 0, 0), (0, 0, 10, 10)],
    2: [(0, 0, 0, 0), (0, 0, 10, 5), (0, 0, 10, 10)],
    3: [(6, 3, 1, 2), (5, 3, 2, 1), (4, 3, 3, 4)],
    4: [(2, 1, 1, 1), (1, 1, 2, 2), (1, 2, 3, 4)],
    5: [(0, 0, 0, 0), (0, 0, 10, 10), (0, 0, 10, 20)],
}
# prompt 56: THS1 = -0.125, THS3 = -0.166667; THS2 chosen between them
CANINES = [(0, 0, 10, 5), (0, 0, 10, 5), (0, 0, 10, 10)]


def make_prompts(rng: random.Random) -> list[str]:
    seen = set(EXEMPLAR_PROMPTS) | {CANINES_PROMPT}
    generated: list[str] = []
    while len(generated) < N - len(EXEMPLAR_PROMPTS) - 1:
        name = "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 3))).capitalize()
        text = (
            f"{rng.choice(VERBS)} the {rng.choice(ASPECTS)} of the {rng.choice(PLACES)} of {name}, "
            f"rumored to have relied on {rng.choice(PHENOMENA)}."
        )
        if text not in seen:
            seen.add(text)
            generated.append(text)
    prompts = list(EXEMPLAR_PROMPTS) + generated
    prompts.insert(CANINES_ID - 1, CANINES_PROMPT)
    return prompts


def net(k: tuple[int, int, int, int]) -> int:
    fcd, fgr, fdf, ecs = k
    return fcd - fgr - fdf - ecs


def target_moments(level: int) -> tuple[int, int]:
    s = round(TARGET_MEAN[level] * SCALE * N)
    var = (TARGET_SD[level] * SCALE) ** 2
    q = round(var * (N - 1) + s * s / N)
    if (q - s) % 2:
        # sum of squares has the parity of the sum; pick the closer admissible value
        lo, hi = q - 1, q + 1
        q = lo if abs(_sd(s, lo) - TARGET_SD[level]) <= abs(_sd(s, hi) - TARGET_SD[level]) else hi
    return s, q


def _sd(s: int, q: int) -> float:
    return math.sqrt((q - s * s / N) / (N - 1)) / SCALE


def calibrate(rng: random.Random, fixed: dict[int, int], gen, s_target: int, q_target: int) -> dict[int, int]:
    vals = {i: fixed[i] if i in fixed else gen() for i in range(1, N + 1)}
    free = [i for i in vals if i not in fixed]
    while (d := s_target - sum(vals.values())) != 0:
        vals[rng.choice(free)] += 1 if d > 0 else -1
    for _ in range(1_000_000):
        diff = q_target - sum(v * v for v in vals.values())
        if diff == 0:
            return vals
        i, j = rng.sample(free, 2)
        step = 2 * (vals[i] - vals[j] + 1)  # effect of vals[i] += 1, vals[j] -= 1
        if (diff > 0 and 0 < step <= diff) or (diff < 0 and diff <= step < 0):
            vals[i] += 1
            vals[j] -= 1
    raise RuntimeError("calibration did not converge")


FCD_RANGE = {1: (2, 8), 2: (1, 5), 3: (0, 4)}


def decompose(rng: random.Random, level: int, n: int) -> tuple[int, int, int, int]:
    if n == 0 and level == 1 and rng.random() < 0.4:
        return (0, 0, 0, 0)
    fgr = rng.choice([0, 0, 1, 1, 2, 3])
    fcd = rng.randint(*FCD_RANGE[level])
    rest = fcd - fgr - n
    if rest < 0:
        fcd -= rest
        rest = 0
    fdf = rng.randint(0, rest)
    return (fcd, fgr, fdf, rest - fdf)


def judge_reply(kpis: list[tuple[int, int, int, int]]) -> str:
    names = ["FrontEndAgent", "SecondLevelReviewer", "ThirdLevelReviewer"]
    doc = {
        name: {"FCD": k[0] / 10, "FDF": k[2] / 10, "FGR": k[1] / 10, "ECS": k[3] / 10}
        for name, k in zip(names, kpis)
    }
    return "```json\n" + json.dumps(doc) + "\n```"


class CorpusBackend:
    """Deterministic stand-ins for the three writers plus a scripted judge."""

    def __init__(self, prompts: list[str], kpis: dict[int, list[tuple[int, int, int, int]]]):
        self.by_front = {}
        self.kpis = kpis
        self.prompts = prompts

    @staticmethod
    def front_text(prompt: str) -> str:
        subject = prompt.split(" the ", 1)[-1].rstrip(".")
        return f"The {subject}. Chroniclers recorded these events in great detail across many centuries."

    def complete(self, req: ChatRequest) -> ChatResponse:
        if req.role == FRONT_END:
            text = self.front_text(req.user_content)
            self.by_front[text] = self.prompts.index(req.user_content) + 1
            return ChatResponse(text)
        if req.role == SECOND_REVIEWER:
            front = req.user_content.split("Front-end agent response:\n", 1)[1]
            return ChatResponse(json.dumps({
                "utterance": "According to legend, which is not confirmed by any source: " + front,
                "whisper_context": "The front-end response presents speculative lore as established history.",
                "whisper_value": "Claims about the subject have no verifiable basis and are framed as "
                                 "legend so readers do not mistake them for fact.",
            }))
        if req.role == THIRD_REVIEWER:
            utterance = req.user_content.split("\n\nWhisper context:", 1)[0].split(":\n", 1)[1]
            return ChatResponse("This account is purely fictional. " + utterance)
        front = req.user_content.split("\n\nSecondLevelReviewer response:", 1)[0].split(":\n", 1)[1]
        return ChatResponse(judge_reply(self.kpis[self.by_front[front]]))


def build_corpus310() -> None:
    rng = random.Random(20241230)
    prompts = make_prompts(rng)
    assert len(prompts) == N and len(set(prompts)) == N

    fixed = {pid: [net(k) for k in ks] for pid, ks in PREVIEW.items()}
    fixed[CANINES_ID] = [net(k) for k in CANINES]
    gens = {
        1: lambda: 0 if rng.random() < 0.55 else max(-40, min(15, round(rng.gauss(-1.0, 5.5)))),
        2: lambda: max(-40, min(10, round(rng.gauss(-5.5, 5.7)))),
        3: lambda: max(-45, min(5, round(rng.gauss(-16.8, 6.9)))),
    }
    nets = {}
    for level in (1, 2, 3):
        s, q = target_moments(level)
        nets[level] = calibrate(rng, {p: v[level - 1] for p, v in fixed.items()}, gens[level], s, q)

    kpis: dict[int, list[tuple[int, int, int, int]]] = {}
    for pid in range(1, N + 1):
        if pid in PREVIEW:
            kpis[pid] = PREVIEW[pid]
        elif pid == CANINES_ID:
            kpis[pid] = CANINES
        else:
            kpis[pid] = [decompose(rng, lvl, nets[lvl][pid]) for lvl in (1, 2, 3)]
        assert [net(k) for k in kpis[pid]] == [nets[lvl][pid] for lvl in (1, 2, 3)]

    out = ROOT / "corpus310"
    shutil.rmtree(out, ignore_errors=True)
    out.mkdir(parents=True)
    (out / "prompts.txt").write_text("\n".join(prompts) + "\n", encoding="utf-8")

    ticks = iter(T0 + timedelta(seconds=i) for i in range(10**7))
    cfg = PipelineConfig(clock=lambda: next(ticks))
    backend = CorpusBackend(prompts, kpis)
    with open(out / "runs.jsonl", "w", encoding="utf-8") as sink:
        for rec in run_batch(enumerate(prompts, start=1), backend, cfg, workers=1):
            assert rec.ok, rec.error
            # latencies are wall-clock noise; zero them so the fixture is byte-stable
            rec = type(rec)(**{**rec.__dict__, "stages": tuple(
                type(s)(**{**s.__dict__, "latency": 0.0}) for s in rec.stages)})
            append_record(sink, rec)

    from halluguard.corpus import load_records
    recs = load_records(out / "runs.jsonl")
    for lvl in (1, 2, 3):
        col = [r.ths.as_tuple()[lvl - 1] for r in recs]
        mean, sd = statistics.fmean(col), statistics.stdev(col)
        print(f"THS{lvl}: mean {mean:.6f} sd {sd:.6f} total {math.fsum(col):.4f}")
        assert abs(mean - TARGET_MEAN[lvl]) < 5e-7 and abs(sd - TARGET_SD[lvl]) < 5e-6


if __name__ == "__main__":
    build_usecase()
    build_corpus310()
