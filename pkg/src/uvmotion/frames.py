"""Numbered image-sequence I/O (``{frame:06}.png``), RGB in memory."""

from __future__ import annotations

import os
import re

import cv2
import numpy as np

from .errors import DataError, NonContiguousFrames

NAME = re.compile(r"^(\d{6})\.(png|ppm)$")


def frame_name(i):
    return f"{i:06d}.png"


def list_frames(directory):
    """Sorted frame paths in ``directory``; numbering must be 0..N-1 without gaps."""
    if not os.path.isdir(directory):
        raise DataError(f"not a directory: {directory}")
    found = {}
    for name in os.listdir(directory):
        m = NAME.match(name)
        if m:
            found[int(m.group(1))] = os.path.join(directory, name)
    idx = sorted(found)
    if not idx:
        raise DataError(f"no frames in {directory}")
    if idx != list(range(len(idx))):
        missing = sorted(set(range(idx[-1] + 1)) - set(idx))
        raise NonContiguousFrames(f"{directory}: frame {missing[0]:06d} missing")
    return [found[i] for i in idx]


def read_frame(path):
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise DataError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def read_sequence(directory):
    frames = [read_frame(p) for p in list_frames(directory)]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DataError(f"{directory}: frames differ in size {sorted(shapes)}")
    return frames


def write_frame(path, img):
    img = np.asarray(img)
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(path, img):
        raise DataError(f"cannot write image {path}")


def write_sequence(directory, frames):
    os.makedirs(directory, exist_ok=True)
    for i, f in enumerate(frames):
        write_frame(os.path.join(directory, frame_name(i)), f)
