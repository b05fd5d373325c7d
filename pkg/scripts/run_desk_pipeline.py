"""
Desk Pipeline Runner
────────────────────
Runs synth-gen → build-graphs → train → eval → ablate → alpha-sweep through
the CLI with one named preset, writing everything under runs/<preset>/.

Usage:
    python scripts/run_desk_pipeline.py                 # smoke (seconds)
    python scripts/run_desk_pipeline.py desk            # 60-record ordering check
    python scripts/run_desk_pipeline.py full            # full-size model settings
    python scripts/run_desk_pipeline.py desk --seed 3   # another corpus and split
"""

import argparse
import os
import sys

sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

from orchestration.cli import dispatch  # noqa: E402

PRESETS = {
    "smoke": {
        "records": 10,
        "width": 16,
        "model": ["--d", "8", "--n-blocks", "1", "--n-heads", "2"],
        "train": ["--epochs", "3", "--batch-size", "2", "--trials", "1"],
        "variants": "graph+attention+lr_skip+localized,graph+localized",
        "block_counts": "1",
    },
    "desk": {
        "records": 60,
        "width": 32,
        "model": ["--d", "32", "--n-blocks", "4", "--n-heads", "8", "--alpha0", "0.25"],
        "train": ["--epochs", "100", "--batch-size", "4", "--trials", "3"],
        "variants": "graph+attention+lr_skip+localized,graph+attention+localized,graph+localized",
        "block_counts": "1,4",
    },
    "full": {
        "records": 200,
        "width": 256,
        "model": ["--d", "64", "--n-blocks", "8", "--n-heads", "8", "--alpha0", "0.25"],
        "train": ["--epochs", "100", "--batch-size", "4", "--trials", "5"],
        "variants": None,
        "block_counts": "1,8",
    },
}

# Aliases
PRESETS["quick"] = PRESETS["smoke"]
PRESETS["desk-scale"] = PRESETS["desk"]


def run(preset_key: str, seed: int) -> int:
    preset = PRESETS.get(preset_key)
    if preset is None:
        print(f"❌  Unknown preset '{preset_key}'. Choose from: {', '.join(PRESETS)}")
        return 1

    root = os.path.join("runs", preset_key)
    records = os.path.join(root, "records.jsonl")
    graphs = os.path.join(root, "graphs")
    train_dir = os.path.join(root, "train")
    common = ["--seed", str(seed)]
    variants = ["--variants", preset["variants"]] if preset["variants"] else []

    steps = [
        ("synth-gen", ["--count", str(preset["records"]), "--width", str(preset["width"]), "--out", records]),
        ("build-graphs", ["--in", records, "--out", graphs]),
        ("train", ["--graphs", graphs, "--out", train_dir] + preset["model"] + preset["train"][:4]),
        ("eval", ["--graphs", graphs, "--checkpoint", os.path.join(train_dir, "checkpoint.json"), "--out", os.path.join(root, "eval")]),
        ("ablate", ["--in", records, "--out", os.path.join(root, "ablate")] + variants + preset["model"] + preset["train"]),
        (
            "alpha-sweep",
            ["--graphs", graphs, "--out", os.path.join(root, "alpha_sweep"), "--block-counts", preset["block_counts"]]
            + preset["model"]
            + preset["train"],
        ),
    ]

    print(f"\n📦 Running preset: {preset_key} (seed {seed})")
    for index, (command, flags) in enumerate(steps, start=1):
        print(f"   Step {index}/{len(steps)}: {command}")
        code = dispatch([command] + flags + common)
        if code != 0:
            print(f"❌  {command} failed with exit code {code}")
            return code

    print(f"✅  Preset {preset_key} finished. Artifacts are in {root}/\n")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the whole pipeline with a named preset")
    parser.add_argument("preset", nargs="?", default="smoke", choices=sorted(PRESETS))
    parser.add_argument("--seed", type=int, default=0)
    options = parser.parse_args()
    sys.exit(run(options.preset, options.seed))
