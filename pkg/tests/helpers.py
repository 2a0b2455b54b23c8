"""Small synthetic datasets shared by the slower tests."""

import numpy as np

from pehop.roi import OrganMask, crop_study
from pehop.synth import SyntheticStudySpec, generate_study, philox
from pehop.volume import apply_windows, assemble_slabs

# one line per acceptance check, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def cropped_study(seed, idx, positive, size=64, spec=None):
    spec = spec or SyntheticStudySpec()
    s = generate_study(spec, philox(seed, f"s{idx}"), f"s{idx}", positive=positive)
    c = crop_study(apply_windows(s["volume"]), OrganMask(s["lung"]), OrganMask(s["heart"]),
                   (size, size))
    slabs = assemble_slabs(c.cropped).slabs.astype(np.float32)
    labels = np.array(s["slice_labels"])[c.bbox[0]:c.bbox[1]]
    return s, c, slabs, labels


def eight_slab_set(seed=1):
    """Four lesion slabs and four lesion-free slabs from four positive studies."""
    pos, neg = [], []
    for i in range(4):
        _, _, slabs, labels = cropped_study(seed, i, True)
        pos.append(slabs[np.argmax(labels == 1)])
        neg.append(slabs[np.argmax(labels == 0)])
    return np.stack(pos + neg), np.array([1] * 4 + [0] * 4)


def landmark_set(seed=2, n_studies=4, size=64):
    """One central slab per study with its encoded landmark targets."""
    from pehop.hopnet.landmarks import encode_landmarks

    spec = SyntheticStudySpec(landmark_absent_prob=0.0)
    xs, targets, masks = [], [], []
    for i in range(n_studies):
        s, c, slabs, _ = cropped_study(seed, i, bool(i % 2), size, spec)
        z0, z1, y0, y1, x0, x1 = c.bbox
        raw = np.array([[(lm["x"] - x0 + 0.5) * size / (x1 - x0) - 0.5,
                         (lm["y"] - y0 + 0.5) * size / (y1 - y0) - 0.5,
                         lm["z"] - z0] for lm in s["landmarks"]])
        center = len(slabs) // 2
        v, m = encode_landmarks(raw, center, (len(slabs), size, size)).flat()
        xs.append(slabs[center])
        targets.append(v)
        masks.append(m)
    return np.stack(xs), np.stack(targets), np.stack(masks)


def checksum(module):
    return {k: v.copy() for k, v in module.state_dict().items()}


SMALL_CONFIG = {
    "synth": {"dims": [16, 64, 64], "n_empty_masks": 1},
    "n_studies": 10,
    "train": {"steps": 20, "batch_size": 8},
    "pretrain": {"steps": 10, "batch_size": 8},
    "seed": 7,
}

SMOKE_STEPS = ("synth", "preprocess", "pretrain", ("train", "--hop", "1"),
               ("train", "--hop", "2"), "infer", "tune", "eval")


def write_config(path, **overrides):
    import json

    cfg = {**SMALL_CONFIG, **overrides}
    path.write_text(json.dumps(cfg))
    return path


def run_cli(out, config, *argv):
    from pehop.cli import main

    return main([*argv, "--out", str(out), "--config", str(config)])


def run_smoke(out, config, steps=SMOKE_STEPS):
    for step in steps:
        argv = (step,) if isinstance(step, str) else step
        code = run_cli(out, config, *argv)
        assert code == 0, f"{argv} exited {code}"
