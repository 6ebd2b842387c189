"""Smoke test for the formlink Python extension.

Build first:  cargo build --release -p formlink-py
Then run:     python3 python/smoke_test.py

The compiled library is found in target/release (or target/debug), or at the
path in FORMLINK_PY_LIB, and imported as `formlink`.
"""

import importlib.util
import json
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def find_library():
    explicit = os.environ.get("FORMLINK_PY_LIB")
    if explicit:
        return pathlib.Path(explicit)
    for profile in ("release", "debug"):
        for name in ("libformlink.so", "libformlink.dylib", "formlink.dll"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("formlink extension not built; run: cargo build --release -p formlink-py")


def load(tmp):
    lib = find_library()
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    target = pathlib.Path(tmp) / ("formlink" + suffix)
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("formlink", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


TOY = {
    "form": [
        {"id": 0, "label": "question", "text": "Name:", "box": [10, 10, 60, 20],
         "words": [{"text": "Name:", "box": [10, 10, 60, 20]}], "linking": [[0, 1]]},
        {"id": 1, "label": "answer", "text": "Ada", "box": [70, 10, 110, 20],
         "words": [{"text": "Ada", "box": [70, 10, 110, 20]}], "linking": [[0, 1]]},
        {"id": 2, "label": "question", "text": "Date", "box": [10, 40, 50, 50],
         "words": [{"text": "Date", "box": [10, 40, 50, 50]}], "linking": [[2, 3]]},
        {"id": 3, "label": "answer", "text": "1815", "box": [10, 60, 50, 70],
         "words": [{"text": "1815", "box": [10, 60, 50, 70]}], "linking": [[2, 3]]},
    ]
}


def main():
    with tempfile.TemporaryDirectory() as tmp:
        fl = load(tmp)

        doc = fl.Document.from_json(json.dumps(TOY), "toy", (200.0, 100.0))
        assert doc.gold_links == [(0, 1), (2, 3)]
        regions = doc.extract_regions()
        assert regions and all(e["region_id"] is not None for e in doc.entities)
        edges = doc.encode_edges()
        assert len(edges) == 4 and all(len(bits) == 7 for _, _, bits in edges)

        # untrained model: zero biaffine gives p = 0.5 everywhere
        model = fl.Model({"feature_dim": 8, "heads": 2, "head_dim": 8, "type_dim": 4, "hash_dim": 32}, 0)
        assert all(abs(p - 0.5) < 1e-12 for _, _, p in model.score(doc))

        out = pathlib.Path(tmp) / "synth"
        docs = fl.synth({"docs": 6, "rows": [2, 3], "cols": [2, 2]}, 1, str(out))
        assert len(docs) == 6 and len(list(out.glob("*.json"))) == 6
        loaded = fl.load_dataset(str(out))
        assert [d.doc_id for d in loaded] == sorted(d.doc_id for d in docs)

        config = {"steps": 30, "feature_dim": 16, "heads": 2, "head_dim": 16, "type_dim": 8, "hash_dim": 64}
        trained, trace = fl.train(docs[:4], config)
        assert len(trace) == 30 and trace[0]["lr"] == 0.0
        again, trace2 = fl.train(docs[:4], config)
        assert trace == trace2

        report = trained.evaluate(docs[4:])
        assert 0.0 <= report["f1"] <= 1.0
        preds = trained.predict(docs[4:], "constrained")
        for p in preds:
            answers = [a for _, a in p["links"]]
            assert len(answers) == len(set(answers))

        ckpt = pathlib.Path(tmp) / "model.ckpt"
        trained.save(str(ckpt))
        back = fl.Model.load(str(ckpt))
        assert back.score(docs[4]) == trained.score(docs[4])

        svg = fl.render(docs[0], mode="regions")
        assert svg.startswith("<?xml") and "<svg" in svg
        assert fl.lr_schedule(0, 100, 0.1, 5e-5) == 0.0

        try:
            fl.Document.load("/nonexistent/file.json")
        except OSError:
            pass
        else:
            raise AssertionError("expected OSError")
        try:
            trained.evaluate(docs[4:], "greedy")
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
