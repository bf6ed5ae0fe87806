"""Open-vocabulary queries: label every pixel by cosine similarity between
the rendered language features and a set of label embeddings, and visualize
the feature fields with PCA.

Run:  python3 demos/open_vocabulary.py
"""

import os

import numpy as np

from splatfield import metrics, rasterizer, segment, tensorio
from splatfield.cli import label_color
from splatfield.scene import synth_scene

OUT = os.path.join(os.path.dirname(__file__), "out", "open_vocabulary")
os.makedirs(OUT, exist_ok=True)

field, scene = synth_scene(seed=3, n_gaussians=16, n_views=4, image_size=96)
labels = segment.LabelSet(scene.label_names, scene.label_embeddings)
print("label set:", ", ".join(labels.names))

out = rasterizer.render(field, scene.cams[1])
res = segment.open_vocab_segment(out.feat_lang, labels)

img = np.zeros((96, 96, 3))
for i in range(len(labels.names)):
    img[res.labels == i] = label_color(i) / 255.0
tensorio.write_image(img, os.path.join(OUT, "label_map.png"))

# Agreement with the geometric ground-truth labels. The raw number counts
# the soft footprint fringes (predicted as a class, labeled background), so
# also report the solid-coverage region on its own.
miou, macc = segment.miou_macc(res.labels, scene.labels[1], len(labels.names))
solid = out.alpha > 0.5
miou_s, macc_s = segment.miou_macc(res.labels[solid], scene.labels[1][solid],
                                   len(labels.names))
print(f"vs ground truth: mIoU {miou:.3f}, mAcc {macc:.3f} "
      f"(solid coverage only: {miou_s:.3f} / {macc_s:.3f})")

# PCA false-color views of both feature heads (the classic feature-field
# visualization): consistent structure across poses.
for name, feat in [("pca_seg", out.feat_seg), ("pca_lang", out.feat_lang)]:
    tensorio.write_image(metrics.pca_project(feat), os.path.join(OUT, f"{name}.png"))
tensorio.write_image(np.clip(out.color, 0, 1), os.path.join(OUT, "color.png"))
print(f"wrote label map + PCA views to {OUT}")
