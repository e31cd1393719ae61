"""Smoke test for the moodnet_py extension.

Run after `maturin develop -m crates/python/Cargo.toml`, or after
`cargo build -p moodnet-py --release` (the built library is then loaded
straight from target/release).
"""

import math
import os
import shutil
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))


def import_module():
    try:
        import moodnet_py

        return moodnet_py
    except ImportError:
        pass
    built = os.path.join(HERE, "..", "target", "release", "libmoodnet_py.so")
    if not os.path.exists(built):
        sys.exit("moodnet_py is not installed and target/release/libmoodnet_py.so is missing")
    tmp = tempfile.mkdtemp()
    shutil.copy(built, os.path.join(tmp, "moodnet_py.so"))
    sys.path.insert(0, tmp)
    import moodnet_py

    return moodnet_py


def main():
    m = import_module()

    t = m.Tensor([2, 3], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    assert t.shape == [2, 3] and len(t) == 6
    try:
        m.Tensor([2, 2], [1.0])
        raise AssertionError("shape mismatch accepted")
    except m.MoodnetError:
        pass

    assert m.tokenize("Hello, World!  it's") == ["hello", "world", "it's"]
    assert abs(m.r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) - 1.0) < 1e-12

    rate = 44100
    tone = [0.3 * math.sin(2 * math.pi * 440 * i / rate) for i in range(rate)]
    mel = m.mel_spectrogram(tone, rate)
    assert mel.shape[0] == 40 and mel.shape[1] > 40
    feats = dict(m.classical_audio_features(tone, rate))
    assert len(feats) == 32

    model = m.Model.build("lyrics:LSTM", dims=4, words=6, seed=1)
    assert model.kind == "lyrics:LSTM" and model.num_params > 0
    x = m.Tensor([2, 4, 6], [0.01 * i for i in range(48)])
    y = model.predict([x])
    assert y.shape == [2, 2]
    ok, worst = model.gradient_check([x], m.Tensor([2, 2], [0.1, -0.2, 0.3, 0.0]))
    assert ok, worst
    path = os.path.join(tempfile.mkdtemp(), "lstm.ckpt")
    model.save(path)
    assert m.Model.load(path).predict([x]).data == y.data

    xs = [[i / 10.0] for i in range(20)]
    ys = [2.0 * v[0] + 1.0 for v in xs]
    svr = m.Svr.fit(xs, ys, c=10.0, epsilon=0.01)
    assert all(abs(p - t) < 0.05 for p, t in zip(svr.predict(xs), ys))
    forest = m.Forest.fit(xs, ys, n_trees=20, seed=3)
    assert len(forest.predict(xs)) == 20

    sentences = [["sun", "love", "joy"], ["rain", "tears", "cold"]] * 20
    emb = m.Embeddings.train(sentences, dims=8, epochs=2, seed=0)
    assert emb.dims == 8 and len(emb.vector("love")) == 8
    assert emb.embed(["sun", "love"], 5).shape == [8, 5]

    truth = [(v, -v) for v in (0.1, 0.5, -0.3, 0.9, -0.7)]
    grid = m.fusion_grid(truth, [(0.0, 0.0)] * 5, truth)
    assert len(grid) == 11 and abs(grid[-1][1] - 1.0) < 1e-12

    print("moodnet_py smoke test passed")


if __name__ == "__main__":
    main()
