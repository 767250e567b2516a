"""Network assembly, seeded training, classification and input sensitivity.

A :class:`Network` is an ordered stack of layers ending in softmax. The two
analysis entry points are :func:`predict` (class probabilities) and
:func:`sensitivity` (gradient of one class probability with respect to every
input element, obtained by chaining the layers' ``backward_input`` passes).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import (
    DTYPE,
    Conv2D,
    Dense,
    Flatten,
    Layer,
    MaxPool2x2,
    ReLU,
    ShapeError,
    Softmax,
    gaussian_fan_in_scale,
    layer_from_spec,
)

MAGIC = b"NSAL"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """A model file is corrupt, truncated or from an unknown version."""


@dataclass(frozen=True)
class SensitivityField:
    """Gradient of one class probability w.r.t. the input image.

    ``grad`` has the input's H x W x C shape; ``pixel_norm`` is the per-pixel
    Euclidean norm of ``grad`` over the channel axis.
    """

    grad: np.ndarray
    pixel_norm: np.ndarray


class Network:
    """Immutable-by-convention stack of layers mapping an image to classes."""

    def __init__(self, layers: list[Layer], input_shape, class_names: list[str]):
        if not layers or not isinstance(layers[-1], Softmax):
            raise ValueError("a network must end in a softmax layer")
        if any(isinstance(layer, Softmax) for layer in layers[:-1]):
            raise ValueError("softmax may appear only as the final layer")
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.class_names = [str(n) for n in class_names]
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        if shape != (len(self.class_names),):
            raise ShapeError(
                f"network produces {shape} but {len(self.class_names)} class names given"
            )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_index(self, name_or_index: str) -> int:
        """Resolve a class given as a name or a decimal index."""
        if name_or_index in self.class_names:
            return self.class_names.index(name_or_index)
        try:
            idx = int(name_or_index)
        except ValueError:
            idx = -1
        if not 0 <= idx < self.num_classes:
            raise ValueError(
                f"unknown class {name_or_index!r}; valid classes: "
                + ", ".join(f"{i}={n}" for i, n in enumerate(self.class_names))
            )
        return idx

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        if image.shape != self.input_shape:
            raise ShapeError(
                f"image shape {image.shape} does not match network input {self.input_shape}"
            )
        if not np.all(np.isfinite(image)):
            raise ValueError("image contains non-finite values")
        if image.min() < 0.0 or image.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        return np.ascontiguousarray(image, dtype=DTYPE)

    def _forward_trace(self, x: np.ndarray) -> list[np.ndarray]:
        """Inputs seen by each layer, plus the final output, in order."""
        trace = [x]
        for layer in self.layers:
            trace.append(layer.forward(trace[-1]))
        return trace


def predict(net: Network, image: np.ndarray) -> np.ndarray:
    """Class probabilities of ``image``; a float32 vector summing to 1."""
    x = net._check_image(image)
    for layer in net.layers:
        x = layer.forward(x)
    return x


def sensitivity(net: Network, image: np.ndarray, class_index: int) -> SensitivityField:
    """Gradient of ``predict(net, image)[class_index]`` w.r.t. the image."""
    if not 0 <= class_index < net.num_classes:
        raise ValueError(
            f"class index {class_index} out of range [0, {net.num_classes})"
        )
    x = net._check_image(image)
    trace = net._forward_trace(x)
    grad = np.zeros(net.num_classes, dtype=DTYPE)
    grad[class_index] = 1.0
    for i in range(len(net.layers) - 1, -1, -1):
        grad = net.layers[i].backward_input(trace[i], grad)
    pixel_norm = np.sqrt(np.sum(np.square(grad), axis=2))
    return SensitivityField(grad=grad, pixel_norm=pixel_norm)


def train(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    lr: float,
    seed: int,
) -> Network:
    """Plain per-example SGD on cross-entropy; deterministic given ``seed``.

    Parameters are updated in place and the same network object is returned.
    The epoch shuffle order comes from ``numpy.random.default_rng(seed)``.
    """
    images = np.asarray(images, dtype=DTYPE)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("training dataset is empty")
    if images.shape[1:] != net.input_shape:
        raise ShapeError(
            f"dataset images {images.shape[1:]} do not match network input {net.input_shape}"
        )
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise ValueError("labels out of range")
    rng = np.random.default_rng(seed)
    lr32 = DTYPE(lr)
    body = net.layers[:-1]  # softmax folded into the cross-entropy gradient
    for _ in range(epochs):
        for i in rng.permutation(len(images)):
            trace = net._forward_trace(images[i])
            grad = trace[-1].copy()
            grad[labels[i]] -= 1.0
            for j in range(len(body) - 1, -1, -1):
                layer = body[j]
                param_grads = layer.backward_params(trace[j], grad)
                grad = layer.backward_input(trace[j], grad)
                for p, gp in zip(layer.params(), param_grads):
                    p -= lr32 * gp
    return net


def cross_entropy(net: Network, image: np.ndarray, label: int) -> float:
    """Negative log probability of the true class."""
    return float(-np.log(predict(net, image)[label]))


def accuracy(net: Network, images: np.ndarray, labels: np.ndarray) -> float:
    hits = sum(
        int(np.argmax(predict(net, img)) == lab) for img, lab in zip(images, labels)
    )
    return hits / len(labels)


def default_network(
    input_shape=(32, 32, 3),
    class_names=("square", "disk", "triangle", "cross"),
    seed: int = 0,
) -> Network:
    """Desk-scale classifier: two conv/relu/pool stages, one dense head."""
    h, w, c = input_shape
    if h % 4 or w % 4:
        raise ShapeError("default architecture needs H and W divisible by 4")
    k = len(class_names)
    rng = np.random.default_rng(seed)

    def conv(kh, kw, cin, cout):
        scale = gaussian_fan_in_scale(kh * kw * cin)
        kernel = rng.normal(0.0, scale, size=(kh, kw, cin, cout))
        return Conv2D(kernel.astype(DTYPE), np.zeros(cout, dtype=DTYPE))

    flat = (h // 4) * (w // 4) * 16
    dense_w = rng.normal(0.0, gaussian_fan_in_scale(flat), size=(k, flat))
    layers = [
        conv(3, 3, c, 8),
        ReLU(),
        MaxPool2x2(),
        conv(3, 3, 8, 16),
        ReLU(),
        MaxPool2x2(),
        Flatten(),
        Dense(dense_w.astype(DTYPE), np.zeros(k, dtype=DTYPE)),
        Softmax(),
    ]
    return Network(layers, input_shape, list(class_names))


# Model file layout (little-endian throughout):
#   bytes 0-3   magic "NSAL"
#   bytes 4-5   format version, u16
#   bytes 6-9   header length N, u32
#   N bytes     UTF-8 JSON: {"input_shape", "class_names", "layers": [spec...]}
#   rest        parameters as float32, in layer order, weights before biases,
#               each array row-major


def save_model(net: Network, path) -> None:
    header = json.dumps(
        {
            "input_shape": list(net.input_shape),
            "class_names": net.class_names,
            "layers": [layer.spec_dict() for layer in net.layers],
        },
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for layer in net.layers:
            for p in layer.params():
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_model(path) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n: int, offset: int, what: str) -> tuple[bytes, int]:
        if offset + n > len(blob):
            raise ModelFormatError(
                f"truncated model file: needed {n} bytes for {what} "
                f"at byte offset {offset}, file has {len(blob)}"
            )
        return blob[offset : offset + n], offset + n

    chunk, off = take(4, 0, "magic")
    if chunk != MAGIC:
        raise ModelFormatError(f"bad magic bytes {chunk!r} at byte offset 0")
    chunk, off = take(2, off, "version")
    version = struct.unpack("<H", chunk)[0]
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {version} (expected {FORMAT_VERSION})"
        )
    chunk, off = take(4, off, "header length")
    header_len = struct.unpack("<I", chunk)[0]
    chunk, off = take(header_len, off, "header")
    try:
        header = json.loads(chunk.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable header at byte offset 10: {exc}") from None
    layers = [layer_from_spec(spec) for spec in header["layers"]]
    for layer in layers:
        for p in layer.params():
            chunk, off = take(p.size * 4, off, f"{layer.kind} parameters")
            p[...] = np.frombuffer(chunk, dtype="<f4").reshape(p.shape)
    if off != len(blob):
        raise ModelFormatError(
            f"{len(blob) - off} unexpected trailing bytes at byte offset {off}"
        )
    return Network(layers, header["input_shape"], header["class_names"])
