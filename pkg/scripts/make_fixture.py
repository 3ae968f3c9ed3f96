"""Regenerate the bundled synthetic test manifest (100 images, 1,685 annotation pairs)."""

from hmr.dataset import dump_manifest, fixture_manifest_path, make_fixture_manifest, summarize

if __name__ == "__main__":
    samples = make_fixture_manifest(100, 1685, seed=7)
    dump_manifest(samples, fixture_manifest_path())
    s = summarize(samples)
    print(f"{s.images} images, {s.annotations} pairs -> {fixture_manifest_path()}")
