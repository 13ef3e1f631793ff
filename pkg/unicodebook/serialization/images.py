"""Binary PPM (P6, maxval 255) encoding for image dumps."""

import numpy as np

from unicodebook.domain.errors import ShapeMismatchError


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError("encode_ppm", image.shape, ("H", "W", 3))
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + to_bytes(image).tobytes()


def tile(images: np.ndarray, columns: int = 8, gap: int = 1) -> np.ndarray:
    """Arrange a (B, H, W, 3) batch into one grid image on a white background."""
    b, h, w, c = images.shape
    columns = max(1, min(columns, b))
    rows = -(-b // columns)
    out = np.ones((rows * (h + gap) - gap, columns * (w + gap) - gap, c))
    for i, image in enumerate(images):
        r, col = divmod(i, columns)
        out[r * (h + gap) : r * (h + gap) + h, col * (w + gap) : col * (w + gap) + w] = image
    return out
