"""
End to end from the command line
================================

synth -> train -> evaluate -> extract, each step the same as running ``eegtse <cmd>``
in a shell. Small sizes so it finishes in about a minute on one CPU; the scores only show
that the pieces fit together, a model this small and this briefly trained separates little.
"""

import json
import tempfile
from pathlib import Path

from eegtse.cli import main

work = Path(tempfile.mkdtemp(prefix="eegtse_demo_"))
corpus, run, report = work / "corpus", work / "run", work / "report"

main(["synth", "--trials", "20", "--seconds", "1", "--rate", "1600", "--electrodes", "4",
      "--segment-seconds", "0.25", "--test-seconds", "1", "--carrier-gap-octaves", "1.5",
      "--out", str(corpus)])

main(["train", "--preset", "mini", "--manifest", str(corpus), "--epochs", "15", "--batch-size", "4",
      "--lr", "3e-3", "--dynamic-mixing", "--out", str(run)])
for line in (run / "train_log.jsonl").read_text().splitlines()[-3:]:
    print(json.loads(line))

main(["evaluate", "--checkpoint", str(run / "best"), "--manifest", str(corpus),
      "--out", str(report), "--figure", "metrics.png"])

seg = json.loads((corpus / "manifest.jsonl").read_text().splitlines()[-1])
main(["extract", "--checkpoint", str(run / "best"), "--mixture", str(corpus / seg["mixture"]),
      "--eeg", str(corpus / seg["eeg"]), "--out", str(work / "estimate.wav")])

# ablation over the GM depth records parameter count and activation memory per value
main(["ablate", "--preset", "mini", "--manifest", str(corpus), "--epochs", "1", "--batch-size", "4",
      "--axis", "gm-layers", "--values", "1..3", "--out", str(work / "ablate")])
print("outputs in", work)
