"""Regenerates the bundled 16x16 fixture datasets.

Run from this directory: python3 generate.py
"""

import json
import random
from pathlib import Path

from PIL import Image

SIZE = 16
HERE = Path(__file__).resolve().parent


def save_gray(path, pixels):
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.new("L", (SIZE, SIZE))
    img.putdata([max(0, min(255, round(v * 255))) for row in pixels for v in row])
    img.save(path, optimize=False)


def blank(level=0.0):
    return [[level] * SIZE for _ in range(SIZE)]


def blob(pixels, cy, cx, radius, value):
    for y in range(SIZE):
        for x in range(SIZE):
            if (y - cy) ** 2 + (x - cx) ** 2 <= radius * radius:
                pixels[y][x] = max(pixels[y][x], value)


def speckle(pixels, rng, amount=0.08):
    for row in pixels:
        for x in range(SIZE):
            row[x] = min(1.0, row[x] + rng.random() * amount)


def write_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text.strip() + "\n")


def classification(rng):
    root = HERE / "classification"
    samples = [
        ("left", "l1", [(7, 3, 3, 0.9)],
         "The model predicted left; the salient region covers the bright round blob on the left side of the image, so the prediction is supported and the verdict is a match."),
        ("left", "l2", [(3, 4, 2, 1.0), (12, 2, 2, 0.8)],
         "The model predicted left; two bright spots on the left edge form the salient region, the right side stays dark, and the verdict is a match."),
        ("left", "l3", [(9, 5, 4, 0.7)],
         "The model predicted left; the salient region is a large soft blob left of centre, the background is not a confusion source, and the verdict is a match."),
        ("right", "r1", [(8, 12, 3, 0.95)],
         "The model predicted right; the salient region covers the bright blob on the right side of the image, so the prediction is supported and the verdict is a match."),
        ("right", "r2", [(8, 3, 3, 0.9), (4, 13, 1, 0.6)],
         "The model predicted left although the label is right; the salient region is a bright blob on the left while the small right spot is ignored, so the model was confused by another object and the verdict is a mismatch."),
    ]
    for label, name, blobs, ref in samples:
        px = blank()
        speckle(px, rng)
        for cy, cx, r, v in blobs:
            blob(px, cy, cx, r, v)
        save_gray(root / label / f"{name}.png", px)
        write_text(root / label / f"{name}.ref.txt", ref)


def segmentation(rng):
    root = HERE / "segmentation"
    write_text(root / "labels.txt", "background\nforeground")
    samples = [
        ("s1", [(5, 5, 3, 0.9)], None,
         "The model predicted foreground; the salient region is the bright disc in the upper left, which matches the annotated foreground, and the verdict is a match."),
        ("s2", [(10, 10, 4, 0.85)], None,
         "The model predicted foreground; the salient region covers the large disc in the lower right that is annotated as foreground, and the verdict is a match."),
        ("s3", [(4, 12, 2, 1.0), (12, 4, 2, 0.8)], None,
         "The model predicted foreground; the salient region spans two bright discs in opposite corners, both annotated as foreground, and the verdict is a match."),
        ("s4", [(8, 8, 5, 0.75)], None,
         "The model predicted foreground; the salient region is the central disc, the dark background is not confused with it, and the verdict is a match."),
        ("s5", [(8, 4, 3, 0.9)], (8, 12, 3),
         "The model predicted foreground; the salient region is the bright disc on the left, but the annotated foreground lies on the right, so the model was confused by another object and the verdict is a mismatch."),
    ]
    for name, blobs, gt_override, ref in samples:
        px = blank()
        speckle(px, rng, 0.1)
        for cy, cx, r, v in blobs:
            blob(px, cy, cx, r, v)
        save_gray(root / "images" / f"{name}.png", px)
        write_text(root / "images" / f"{name}.ref.txt", ref)
        mask = Image.new("L", (SIZE, SIZE))
        if gt_override is None:
            labels = [1 if v > 0.5 else 0 for row in px for v in row]
        else:
            cy, cx, r = gt_override
            labels = [
                1 if (y - cy) ** 2 + (x - cx) ** 2 <= r * r else 0
                for y in range(SIZE)
                for x in range(SIZE)
            ]
        mask.putdata(labels)
        (root / "masks").mkdir(parents=True, exist_ok=True)
        mask.save(root / "masks" / f"{name}.png", optimize=False)


def detection(rng):
    root = HERE / "detection"
    # (name, spot y, spot x, annotated category, annotated box offset)
    samples = [
        ("d1", 4, 3, 1, (0, 0),
         "The model predicted left; the detected box sits on the bright spot in the upper left, the salient region covers that spot, and the verdict is a match."),
        ("d2", 11, 5, 1, (0, 0),
         "The model predicted left; the box is centred on the bright spot in the lower left and the salient region agrees with it, so the verdict is a match."),
        ("d3", 6, 12, 2, (0, 0),
         "The model predicted right; the box covers the bright spot on the right side, the salient region is tight around it, and the verdict is a match."),
        ("d4", 13, 13, 2, (0, 0),
         "The model predicted right; the salient region is the bright spot near the lower right corner, matching the annotated box, and the verdict is a match."),
        ("d5", 8, 2, 2, (0, 9),
         "The model predicted left; the box is on a bright spot at the left edge while the annotated object lies on the right, so the detector was confused by another object and the verdict is a mismatch."),
    ]
    images, annotations = [], []
    for i, (name, sy, sx, cat, (dy, dx)) in enumerate(
        [(n, y, x, c, o) for n, y, x, c, o, _ in samples], start=1
    ):
        px = blank()
        speckle(px, rng, 0.05)
        blob(px, sy, sx, 1.5, 0.6)
        px[sy][sx] = 1.0
        save_gray(root / "images" / f"{name}.png", px)
        images.append({"id": i, "file_name": f"{name}.png", "height": SIZE, "width": SIZE})
        annotations.append({
            "id": i,
            "image_id": i,
            "category_id": cat,
            "bbox": [sx + dx - 0.5, sy + dy - 0.5, 2.0, 2.0],
        })
    for name, *_, ref in samples:
        write_text(root / "images" / f"{name}.ref.txt", ref)
    coco = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "left"}, {"id": 2, "name": "right"}],
    }
    (root / "annotations.json").write_text(json.dumps(coco, indent=2) + "\n")


def main():
    rng = random.Random(20240501)
    classification(rng)
    segmentation(rng)
    detection(rng)


if __name__ == "__main__":
    main()
