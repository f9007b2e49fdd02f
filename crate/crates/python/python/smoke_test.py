"""Builds the extension module and exercises the bindings end to end.

Usage: python3 crates/python/python/smoke_test.py [--no-build]
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def build(dest: Path) -> None:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "gypsum-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libgypsum_py.so"
    shutil.copy(lib, dest / "gypsum_py.so")


def main() -> None:
    work = Path(tempfile.mkdtemp(prefix="gypsum-py-"))
    try:
        if "--no-build" not in sys.argv:
            build(work)
            sys.path.insert(0, str(work))
        import gypsum_py as g

        assert abs(g.spectral_angle([1.0, 0.0], [0.0, 2.0]) - math.pi / 2) < 1e-12
        assert g.ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5
        assert abs(g.nmi([0, 0, 1, 1], [0, 1, 0, 1])) < 1e-12
        pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]
        assert abs(g.calinski_harabasz(pts, [0, 0, 1, 1]) - 200.0) < 1e-9
        assert abs(g.davies_bouldin(pts, [0, 0, 1, 1]) - 0.1) < 1e-9
        assert all(abs(v - 1.0) < 1e-12 for v in g.continuum_remove([1.0, 2.0, 3.0], [0.2, 0.4, 0.6]))

        scene = g.synth_scene(rows=32, cols=32, endmembers=3, seed=1)
        spectra, origins, wl = g.preprocess_cube(scene.cube(), scene.wavelengths, continuum_removal=False)
        assert len(spectra) == 32 * 32 and len(origins) == len(spectra)
        d, cost, _, _ = g.hysime(spectra)
        assert d == 3, (d, cost)

        ae = g.Autoencoder.train(spectra, d, seed=0, max_epochs=40)
        z = ae.encode(spectra)
        assert len(z[0]) == d and ae.epoch_loss[-1] < ae.epoch_loss[0]
        ckpt = work / "ae.json"
        ae.save(str(ckpt))
        assert g.Autoencoder.load(str(ckpt)).encode(spectra[:5]) == z[:5]

        gmm = g.GaussianMixture.fit(z, 2 * d, seed=0)
        trace = gmm.log_likelihood_trace
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
        labels = gmm.predict(z)
        merged, steps = g.merge(spectra, labels, 0.05)
        truth = scene.labels
        assert g.ari(merged, truth) > 0.9, g.ari(merged, truth)
        km_labels, _, _ = g.kmeans(g.pca_project(spectra, 5)[1], 3, seed=0)
        assert g.f1_matched(km_labels, truth) > 0.5

        config = g.write_synth(str(work / "scene"), seed=2)
        result = g.run(str(config), out=str(work / "run"))
        manifest = json.loads(result.manifest_json)
        metrics = json.loads(result.metrics_json)
        assert (result.d, result.k) == (5, 10), (result.d, result.k)
        assert manifest["gypsum"]["k"] == 2 * manifest["gypsum"]["d"]
        assert metrics["gypsum"]["spectral"]["ari"] >= 0.9
        assert "baseline" in metrics
        print(
            f"ok: d={result.d} k={result.k} final_k={result.final_k} "
            f"ari={metrics['gypsum']['spectral']['ari']:.4f} "
            f"baseline_ari={metrics['baseline']['spectral']['ari']:.4f}"
        )
    finally:
        shutil.rmtree(work, ignore_errors=True)


if __name__ == "__main__":
    main()
