"""Frame-extraction helper.

Samples frames from a video at a fixed rate and writes JPEG files plus a
``frames.json`` manifest of ``{"time": seconds, "ref": path}`` records — the
candidate-frame input format of the dataset pipeline's video ingestion stage.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path


def extract_frames(video_path: str, out_dir: str, fps: float = 1.0) -> list[dict]:
    import cv2

    capture = cv2.VideoCapture(str(video_path))
    if not capture.isOpened():
        raise RuntimeError(f"cannot open video {video_path}")
    native_fps = capture.get(cv2.CAP_PROP_FPS) or 0.0
    if native_fps <= 0:
        raise RuntimeError(f"video {video_path} reports no frame rate")
    step = max(1, round(native_fps / fps))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    index = 0
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        if index % step == 0:
            timestamp = index / native_fps
            ref = out / f"frame_{index:06d}.jpg"
            if not cv2.imwrite(str(ref), frame):
                raise RuntimeError(f"failed to write {ref}")
            manifest.append({"time": round(timestamp, 3), "ref": str(ref)})
        index += 1
    capture.release()

    (out / "frames.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("video", help="input video file")
    parser.add_argument("--out-dir", required=True, help="directory for JPEG frames")
    parser.add_argument("--fps", type=float, default=1.0,
                        help="frames to keep per second (default 1.0)")
    args = parser.parse_args(argv)
    manifest = extract_frames(args.video, args.out_dir, fps=args.fps)
    print(f"extracted {len(manifest)} frames to {args.out_dir}")


if __name__ == "__main__":
    main()
