"""Embed block features in 2-D and watch the classes separate.

Runs the exact t-SNE on features tapped from the first and the last
dense block of the trained demo model. Early features cluster by
low-level texture; by the last block the bonafide/attack margin is
what dominates the map.
"""

import numpy as np

from _common import demo_data, out_dir, quick_model

from irispad.explain import extract_block_features, tsne, write_embedding_csv


def cluster_spread(coords, labels, name):
    """Crude separation number: min inter-class gap / max class radius."""
    classes = sorted(set(labels))
    centers = {c: coords[[l == c for l in labels]].mean(axis=0) for c in classes}
    radius = max(
        np.linalg.norm(coords[[l == c for l in labels]] - centers[c], axis=1).mean()
        for c in classes
    )
    gap = min(
        np.linalg.norm(centers[a] - centers[b])
        for i, a in enumerate(classes)
        for b in classes[i + 1 :]
    )
    print(f"  {name}: min center gap {gap:7.2f}  mean cluster radius {radius:6.2f}")


def main():
    model = quick_model()
    _, test_set = demo_data()
    labels = [im.label for im in test_set]
    out = out_dir("embeddings")

    binary = ["bonafide" if l == "bonafide" else "attack" for l in labels]
    for block in (0, model.num_blocks - 1):
        feats = extract_block_features(model, test_set, block)
        emb = tsne(feats, seed=0, iters=500)
        emb.block_index = block
        emb.labels = labels
        write_embedding_csv(out / f"embedding_block{block}.csv", emb)
        print(f"block {block}: {feats.shape[1]}-dim features, final KL {emb.kl:.4f}")
        cluster_spread(emb.coords, labels, "four classes")
        cluster_spread(emb.coords, binary, "bonafide vs attack")

    print(f"\nembeddings written to {out} (x,y,label CSV, one file per block)")


if __name__ == "__main__":
    main()
