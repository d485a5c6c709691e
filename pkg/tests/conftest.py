import numpy as np
import pytest
from scipy.io import wavfile

from efp.wav import PcmClip


def write_wav(path, samples, rate=16000, dtype=np.int16):
    """Write test audio; float input is scaled for integer dtypes."""
    samples = np.asarray(samples)
    if np.issubdtype(dtype, np.integer) and samples.dtype.kind == "f":
        if dtype == np.int16:
            samples = (samples * 32767.0).round().astype(np.int16)
        elif dtype == np.uint8:
            samples = ((samples * 127.0).round() + 128).astype(np.uint8)
        else:
            raise ValueError(f"no scaling rule for {dtype}")
    else:
        samples = samples.astype(dtype)
    wavfile.write(path, rate, samples)
    return path


def make_clip(samples, rate=16000, clip_id="clip"):
    return PcmClip(
        samples=np.asarray(samples, dtype=np.float64), sample_rate_hz=rate, clip_id=clip_id
    )


def sine_clip(freq_hz, rate=16000, amplitude=0.5, clip_id="sine"):
    t = np.arange(2 * rate) / rate
    return make_clip(amplitude * np.sin(2 * np.pi * freq_hz * t), rate, clip_id)


def noise_clip(seed, rate=16000, amplitude=0.1, clip_id="noise"):
    rng = np.random.default_rng(seed)
    return make_clip(amplitude * rng.standard_normal(2 * rate), rate, clip_id)


@pytest.fixture
def tiny_corpus_dir(tmp_path):
    """Two classes, three 2 s files each: low-band vs high-band noise."""
    rng = np.random.default_rng(42)
    for label, (lo, hi) in (("low", (200, 600)), ("high", (3000, 5000))):
        class_dir = tmp_path / "corpus" / label
        class_dir.mkdir(parents=True)
        for i in range(3):
            spectrum = np.fft.rfft(rng.standard_normal(32000))
            freqs = np.fft.rfftfreq(32000, d=1 / 16000)
            spectrum[(freqs < lo) | (freqs > hi)] = 0.0
            samples = np.fft.irfft(spectrum, n=32000)
            samples = 0.3 * samples / np.abs(samples).max()
            write_wav(class_dir / f"{label}_{i}.wav", samples)
    return tmp_path / "corpus"


def fd_checkable_pair(seed, dims, y, margin=1.0):
    """Random net and input pair at a generic point for gradient checks.

    Twin branches share every parameter. Along a direction that shifts both
    embeddings identically (an output bias whose unit is active in both
    branches) the distance is exactly flat: the true derivative is 0.0 and a
    central difference returns pure rounding noise, so the relative-error
    formula reports garbage no matter how correct backprop is. To keep every
    coordinate informative, the output biases are set to the midpoint of the
    two branches' pre-bias values, which makes each output unit active in
    exactly one branch. Pairs are redrawn until all pre-activations clear
    the finite-difference window around the ReLU kink and the distance is
    away from the loss kinks (d near 0, d near the margin).
    """
    from efp.net import init_params

    rng = np.random.default_rng([seed, 91])
    params = init_params(seed, dims)
    for b in params.biases[:-1]:
        mag = rng.uniform(0.05, 0.4, size=b.shape)
        b += mag * rng.choice([-1.0, 1.0], size=b.shape)

    def hidden_forward(x):
        h = np.asarray(x, dtype=np.float64)
        zs = []
        for w, b in zip(params.weights[:-1], params.biases[:-1]):
            z = h @ w.T + b
            zs.append(z)
            h = np.maximum(z, 0.0)
        return zs, h

    w_out = params.weights[-1]
    while True:
        x1 = rng.standard_normal(dims[0])
        x2 = rng.standard_normal(dims[0])
        zs1, h1 = hidden_forward(x1)
        zs2, h2 = hidden_forward(x2)
        if any(np.abs(z).min() < 1e-3 for z in zs1 + zs2):
            continue
        if any(not (np.any(z1 > 0) and np.any(z2 > 0)) for z1, z2 in zip(zs1, zs2)):
            continue
        u1 = h1 @ w_out.T
        u2 = h2 @ w_out.T
        if np.abs(u1 - u2).min() < 0.01:
            continue
        params.biases[-1][:] = -(u1 + u2) / 2.0
        e1 = np.maximum(u1 + params.biases[-1], 0.0)
        e2 = np.maximum(u2 + params.biases[-1], 0.0)
        assert not np.any((e1 > 0) & (e2 > 0))
        d = float(np.sqrt(np.sum(np.square(e1 - e2))))
        if d < 0.05 or (y == 0 and abs(d - margin) < 0.05):
            continue
        return params, x1, x2
