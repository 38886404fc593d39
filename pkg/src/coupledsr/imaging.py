"""Image I/O, bicubic resampling, patch extraction/reassembly and
training-set construction.

Images are single-channel float64 grids in [0, 1].  Two on-disk formats are
supported: binary 8-bit PGM ("P5", maxval 255) and a raw float-matrix format
("MAT1 <rows> <cols>" header followed by row-major little-endian doubles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TrainingBatch


class ImageFormatError(Exception):
    """Raised for unsupported or malformed image files."""


@dataclass(frozen=True)
class Image:
    """A height x width grid of scalars in [0, 1], row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"image must be 2-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image entries must be finite")
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PatchGrid:
    """Vectorized patches with their origins and removed per-patch means.

    ``patches`` is N x P (N = patch_side**2, one column per patch, pixels
    ordered column-major within the patch) and holds mean-removed values;
    adding ``dc_means[j]`` back reproduces the source pixels at origin j.
    """

    patch_side: int
    origins: np.ndarray          # (P, 2) int, (row, col)
    patches: np.ndarray          # (N, P)
    dc_means: np.ndarray         # (P,)


def read_image(path) -> Image:
    """Read a P5 PGM (8-bit, maxval 255; values map to [0,1] by v/255) or a
    MAT1 float matrix (read verbatim)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic.startswith(b"P5"):
            fh.seek(0)
            return _read_pgm(fh)
        if magic == b"MAT1":
            fh.seek(0)
            return _read_mat(fh)
    raise ImageFormatError(f"unsupported magic {magic!r}; expected P5 or MAT1")


def _read_pgm_token(fh) -> bytes:
    # Tokens are separated by whitespace; '#' starts a comment to end of line.
    tok = bytearray()
    while True:
        b = fh.read(1)
        if not b:
            raise ImageFormatError("malformed PGM header: unexpected end of file")
        if b == b"#":
            while b not in (b"\n", b""):
                b = fh.read(1)
            continue
        if b.isspace():
            if tok:
                return bytes(tok)
            continue
        tok.extend(b)


def _read_pgm(fh) -> Image:
    if _read_pgm_token(fh) != b"P5":
        raise ImageFormatError("not a binary PGM (P5) file")
    try:
        width = int(_read_pgm_token(fh))
        height = int(_read_pgm_token(fh))
        maxval = int(_read_pgm_token(fh))
    except ValueError as exc:
        raise ImageFormatError("malformed PGM header") from exc
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval}; only 8-bit "
                               "(maxval 255) is accepted")
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PGM dimensions {width}x{height}")
    payload = fh.read(width * height)
    if len(payload) != width * height:
        raise ImageFormatError(f"PGM payload truncated: {len(payload)} of "
                               f"{width * height} bytes")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Image(raw.astype(np.float64) / 255.0)


def _read_mat(fh) -> Image:
    header = bytearray()
    while True:
        b = fh.read(1)
        if not b:
            raise ImageFormatError("malformed MAT1 header: unexpected end of file")
        if b == b"\n":
            break
        header.extend(b)
    parts = header.decode("ascii").split()
    if len(parts) != 3 or parts[0] != "MAT1":
        raise ImageFormatError(f"malformed MAT1 header {parts}")
    rows, cols = int(parts[1]), int(parts[2])
    nbytes = rows * cols * 8
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise ImageFormatError(f"MAT1 payload truncated: {len(payload)} of {nbytes} bytes")
    return Image(np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy())


def write_image(img: Image, path) -> None:
    """Write PGM for '.pgm' paths (round-half-up to 8 bit, clamped), MAT1
    otherwise (bit-exact doubles)."""
    path = str(path)
    if path.lower().endswith(".pgm"):
        quant = np.clip(np.floor(img.pixels * 255.0 + 0.5), 0, 255).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
            fh.write(quant.tobytes())
    else:
        with open(path, "wb") as fh:
            fh.write(f"MAT1 {img.height} {img.width}\n".encode("ascii"))
            fh.write(img.pixels.astype("<f8").tobytes())


def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    inner = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    outer = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def _resample_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-resampling matrix (n_out x n_in) for the a=-0.5 cubic kernel.

    For downscaling the kernel is widened by the inverse scale factor
    (antialiasing).  Source coordinates are clamped at the borders and each
    output row is normalized to sum to one.
    """
    scale = n_out / n_in
    # Center-aligned mapping: output pixel centers land at (i + 0.5)/scale - 0.5.
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    if scale < 1.0:
        width = 2.0 / scale
        kscale = scale
    else:
        width = 2.0
        kscale = 1.0
    left = np.floor(centers - width).astype(np.int64) + 1
    n_taps = int(np.ceil(2.0 * width)) + 1
    taps = left[:, None] + np.arange(n_taps)[None, :]
    weights = _cubic_kernel((centers[:, None] - taps) * kscale) * kscale
    weights /= weights.sum(axis=1, keepdims=True)
    src = np.clip(taps, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), n_taps)
    np.add.at(mat, (rows, src.ravel()), weights.ravel())
    return mat


def bicubic_resize(img: Image, out_width: int, out_height: int) -> Image:
    """Separable cubic-convolution resize (a = -0.5) with antialiased
    downscaling and clamped edges; output clamped to [0, 1]."""
    if out_width < 1 or out_height < 1:
        raise ValueError("output dimensions must be >= 1")
    wr = _resample_weights(img.height, out_height)
    wc = _resample_weights(img.width, out_width)
    out = wr @ img.pixels @ wc.T
    return Image(np.clip(out, 0.0, 1.0))


def rgb_to_gray(r: Image, g: Image, b: Image) -> Image:
    """Luma conversion 0.299 r + 0.587 g + 0.114 b."""
    if r.pixels.shape != g.pixels.shape or r.pixels.shape != b.pixels.shape:
        raise ValueError("channel dimensions must match")
    return Image(0.299 * r.pixels + 0.587 * g.pixels + 0.114 * b.pixels)


def _origin_axis(size: int, patch_side: int, stride: int) -> np.ndarray:
    last = size - patch_side
    points = list(range(0, last + 1, stride))
    if points[-1] != last:
        points.append(last)          # clamp the final patch to the border
    return np.asarray(points, dtype=np.int64)


def extract_patches(img: Image, patch_side: int, stride: int) -> PatchGrid:
    """Overlapping patches at ``stride`` spacing with the last row/column
    clamped to the image edge; patches come back mean-removed."""
    h, w = img.pixels.shape
    if patch_side > min(h, w):
        raise ValueError(f"patch side {patch_side} exceeds image size {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows = _origin_axis(h, patch_side, stride)
    cols = _origin_axis(w, patch_side, stride)
    windows = np.lib.stride_tricks.sliding_window_view(
        img.pixels, (patch_side, patch_side))
    sel = windows[np.ix_(rows, cols)]                      # (nr, nc, p, p)
    # Column-major vectorization within each patch.
    patches = sel.transpose(0, 1, 3, 2).reshape(rows.size * cols.size, -1).T.copy()
    origins = np.stack(np.meshgrid(rows, cols, indexing="ij"),
                       axis=-1).reshape(-1, 2)
    dc = patches.mean(axis=0)
    patches -= dc[None, :]
    return PatchGrid(patch_side=patch_side, origins=origins,
                     patches=patches, dc_means=dc)


def reassemble(grid: PatchGrid, width: int, height: int) -> Image:
    """Average overlapping patch contributions (DC added back) per pixel."""
    p = grid.patch_side
    acc = np.zeros((height, width))
    count = np.zeros((height, width))
    blocks = (grid.patches + grid.dc_means[None, :]).T.reshape(-1, p, p)
    for (r, c), block in zip(grid.origins, blocks):
        acc[r:r + p, c:c + p] += block.T      # undo column-major vectorization
        count[r:r + p, c:c + p] += 1.0
    if np.any(count == 0):
        raise ValueError("patch grid does not cover every pixel")
    return Image(acc / count)


def build_training_batch(lr_imgs, hr_imgs, guide_imgs, patch_side: int,
                         scale: int, variance_threshold: float,
                         max_t: int, seed: int) -> TrainingBatch:
    """Construct aligned (x_l, x_h, y) training columns from registered
    image triples.

    Each LR image is bicubic-upscaled to its HR mate's size, patch triples
    are extracted at stride 1, triples whose upscaled-LR patch has population
    variance below ``variance_threshold`` are dropped, all three patches are
    mean-removed, and the survivors are subsampled (seeded, uniform) down to
    ``max_t`` columns.
    """
    if not (len(lr_imgs) == len(hr_imgs) == len(guide_imgs)):
        raise ValueError("image lists must have equal length")
    cols_l, cols_h, cols_g = [], [], []
    for lr, hr, guide in zip(lr_imgs, hr_imgs, guide_imgs):
        if hr.pixels.shape != guide.pixels.shape:
            raise ValueError("HR and guidance images must share dimensions")
        expect = (int(np.ceil(lr.height * scale)), int(np.ceil(lr.width * scale)))
        if hr.pixels.shape != expect:
            raise ValueError(
                f"HR size {hr.pixels.shape} does not match LR size "
                f"{lr.pixels.shape} at scale {scale} (expected {expect})")
        up = bicubic_resize(lr, hr.width, hr.height)
        g_up = extract_patches(up, patch_side, 1)
        g_hr = extract_patches(hr, patch_side, 1)
        g_gd = extract_patches(guide, patch_side, 1)
        variance = np.mean(g_up.patches ** 2, axis=0)   # patches are mean-removed
        keep = variance >= variance_threshold
        cols_l.append(g_up.patches[:, keep])
        cols_h.append(g_hr.patches[:, keep])
        cols_g.append(g_gd.patches[:, keep])
    x_l = np.hstack(cols_l)
    x_h = np.hstack(cols_h)
    y = np.hstack(cols_g)
    if x_l.shape[1] == 0:
        raise ValueError("no patches survive the variance filter; training "
                         "batch is empty")
    if x_l.shape[1] > max_t:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(x_l.shape[1], size=max_t, replace=False))
        x_l, x_h, y = x_l[:, pick], x_h[:, pick], y[:, pick]
    return TrainingBatch(x_l=x_l, x_h=x_h, y=y)
