#!/usr/bin/env python3
"""Write the default scene assets (camera, marking map, service config) to a
working directory, ready for the calibrate/serve CLI commands."""

import argparse
import json
import shutil
from importlib import resources
from pathlib import Path

from helideck.calibration import save_camera
from helideck.service import ServiceConfig, service_config_to_doc
from helideck.simulator import ScenarioConfig, default_camera


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="assets", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    intr, extr = default_camera()
    save_camera(out / "camera.json", intr, extr)

    for name in ("markings.json", "skeleton.json"):
        ref = resources.files("helideck.data").joinpath(name)
        shutil.copyfile(str(ref), out / name)

    config = ServiceConfig(
        scenario=ScenarioConfig(
            camera_path=str(out / "camera.json"),
            marking_map_path=str(out / "markings.json"),
        ),
        skeleton_path=str(out / "skeleton.json"),
        checkpoint_path=str(out / "checkpoint.json"),
    )
    with open(out / "service.json", "w", encoding="utf-8") as f:
        json.dump(service_config_to_doc(config), f, indent=2, sort_keys=True)
        f.write("\n")

    print(f"assets written to {out}/")
    print("next: helideck gen-data --out data && helideck train-yaw "
          f"--train-data data/train.jsonl --test-data data/test.jsonl --out {out}/checkpoint.json")


if __name__ == "__main__":
    main()
