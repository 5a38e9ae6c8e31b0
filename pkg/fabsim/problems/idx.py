# Copyright 2026 The fabsim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Reader for the IDX files MNIST-style datasets ship in."""

from pathlib import Path
from typing import Optional, Union
import gzip
import logging

import numpy as np

from ..exceptions import DomainError
from .classification import Dataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

logger = logging.getLogger(__name__)


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path: Union[str, Path]) -> np.ndarray:
    """Read an unsigned-byte IDX file (optionally gzipped) into an array.

    Raises:
        DomainError: On an unsupported magic number or a truncated payload.
    """
    path = Path(path)
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise DomainError(f"{path} is too short to be an IDX file")
    magic = int.from_bytes(raw[:4], "big")
    if magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise DomainError(f"{path} has unsupported IDX magic {magic:#010x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    shape = tuple(int.from_bytes(raw[4 + 4 * d : 8 + 4 * d], "big") for d in range(ndim))
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if data.size != int(np.prod(shape)):
        raise DomainError(f"{path} holds {data.size} values, header says {shape}")
    logger.debug("Read %s with shape %s", path, shape)
    return data.reshape(shape)


def load_idx_dataset(
    images: Union[str, Path], labels: Union[str, Path], limit: Optional[int] = None
) -> Dataset:
    """Load an image/label pair as a `Dataset` of flattened, [0, 1]-scaled features."""
    X = read_idx(images)
    y = read_idx(labels)
    if X.shape[0] != y.shape[0]:
        raise DomainError(f"{X.shape[0]} images but {y.shape[0]} labels")
    if limit is not None:
        X, y = X[:limit], y[:limit]
    return Dataset(X.reshape(len(X), -1).astype(float) / 255.0, y.astype(int))
