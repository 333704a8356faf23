"""Protocol-v1 stdio server backed by the synthetic detector.

Spawned as a subprocess by the remote-backend tests. Fault injection via
--fault lets the negative tests exercise schema violations without a
broken real server.
"""

import argparse
import json
import sys

from bsed.backends import SyntheticBackend, SyntheticTemplate
from bsed.core import BBox
from bsed.remote import decode_image_png_b64

TEMPLATES = [
    SyntheticTemplate(bbox=BBox(16, 16, 48, 48), class_id=0,
                      color=(200 / 255, 60 / 255, 40 / 255), emit_threshold=0.0),
]


def detection_payload(det):
    return {
        "bbox": list(det.bbox.as_tuple()),
        "class_id": det.class_id,
        "class_scores": {str(k): v for k, v in det.class_scores.items()},
        "objectness": det.objectness,
    }


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--fault", choices=["none", "missing-bbox", "bad-json", "wrong-id"],
                        default="none")
    parser.add_argument("--max-batch", type=int, default=16)
    parser.add_argument("--concurrent", action="store_true")
    args = parser.parse_args()

    backend = SyntheticBackend(TEMPLATES)
    out = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            out.write(json.dumps({"op": "error", "message": "bad json"}) + "\n")
            out.flush()
            continue
        op = message.get("op")
        if op == "hello":
            out.write(json.dumps({
                "op": "hello", "protocol": 1, "classes": ["thing", "other"],
                "max_batch": args.max_batch, "concurrent_safe": args.concurrent,
            }) + "\n")
        elif op == "detect":
            if args.fault == "bad-json":
                out.write("this is not json\n")
                out.flush()
                continue
            images = [decode_image_png_b64(im["png_b64"]) for im in message["images"]]
            results = backend.detect_batch(images)
            payload = [[detection_payload(d) for d in dets] for dets in results]
            if args.fault == "missing-bbox":
                for dets in payload:
                    for d in dets:
                        d.pop("bbox", None)
            reply_id = message["id"] + 1 if args.fault == "wrong-id" else message["id"]
            out.write(json.dumps({"op": "detections", "id": reply_id,
                                  "results": payload}) + "\n")
        elif op == "shutdown":
            return 0
        else:
            out.write(json.dumps({"op": "error", "id": message.get("id"),
                                  "message": f"unknown op {op!r}"}) + "\n")
        out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
