"""Export tiny encoder and detector graphs used as test fixtures.

Writes into the target directory (default crates/core/tests/fixtures/models):

  tiny-enc.onnx, tiny-enc.json     encoder graph and preprocessing sidecar
  tiny-det.onnx, tiny-det.json     detector graph and sidecar
  test_image.png                   reference image (input_size square, so no resize)
  tiny-enc.reference.json          exporter-side input tensor and embedding

The weights are seeded, so rerunning reproduces the same files up to
exporter version differences.
"""

import argparse
import json
import pathlib

import numpy as np
import torch
from PIL import Image

SIZE = 32
MEAN = [0.48145466, 0.4578275, 0.40821073]
STD = [0.26862954, 0.26130258, 0.27577711]
DIM = 16


class TinyEncoder(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = torch.nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.pool = torch.nn.AdaptiveAvgPool2d(4)
        self.proj = torch.nn.Linear(8 * 4 * 4, DIM)

    def forward(self, x):
        h = torch.relu(self.conv(x))
        h = self.pool(h).flatten(1)
        return self.proj(h)


class TinyDetector(torch.nn.Module):
    """Two fixed boxes in canvas pixels whose scores follow the input mean."""

    def __init__(self):
        super().__init__()
        self.register_buffer(
            "boxes", torch.tensor([[2.0, 2.0, 20.0, 20.0], [8.0, 4.0, 30.0, 28.0]])
        )
        self.register_buffer("classes", torch.tensor([[1.0], [3.0]]))

    def forward(self, x):
        m = x.mean()
        scores = torch.stack([torch.sigmoid(m + 2.0), torch.sigmoid(m + 1.0)]).unsqueeze(1)
        return torch.cat([self.boxes, scores, self.classes], dim=1)


def preprocess(img):
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    arr = (arr - np.array(MEAN, dtype=np.float32)) / np.array(STD, dtype=np.float32)
    return arr.transpose(2, 0, 1)[None].astype(np.float32)


def test_image():
    rng = np.random.default_rng(7)
    base = rng.integers(0, 256, size=(SIZE, SIZE, 3), dtype=np.uint8)
    base[8:24, 8:24] = [200, 40, 40]
    return Image.fromarray(base, "RGB")


def export(model, path, output_name):
    model.eval()
    dummy = torch.zeros(1, 3, SIZE, SIZE)
    torch.onnx.export(
        model,
        (dummy,),
        str(path),
        input_names=["pixel_values"],
        output_names=[output_name],
        opset_version=17,
        dynamo=False,
    )


def sidecar(kind, output, dim=None):
    out = {"kind": kind, "input_size": SIZE, "mean": MEAN, "std": STD, "pad_value": 0, "output": output}
    if dim is not None:
        out["dim"] = dim
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="crates/core/tests/fixtures/models")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(1234)

    enc = TinyEncoder()
    export(enc, out / "tiny-enc.onnx", "embedding")
    (out / "tiny-enc.json").write_text(json.dumps(sidecar("encoder", "embedding", DIM), indent=2) + "\n")

    det = TinyDetector()
    export(det, out / "tiny-det.onnx", "detections")
    (out / "tiny-det.json").write_text(json.dumps(sidecar("detector", "detections"), indent=2) + "\n")

    img = test_image()
    img.save(out / "test_image.png")
    x = preprocess(img)
    with torch.no_grad():
        emb = enc(torch.from_numpy(x)).numpy().reshape(-1)
    reference = {
        "model": "tiny-enc",
        "image": "test_image.png",
        "input_shape": list(x.shape),
        "input": [float(v) for v in x.reshape(-1)],
        "embedding": [float(v) for v in emb],
    }
    (out / "tiny-enc.reference.json").write_text(json.dumps(reference) + "\n")


if __name__ == "__main__":
    main()
