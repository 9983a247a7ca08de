#!/usr/bin/env python3
# Copyright 2026 The fedpoison Authors
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

"""Download MovieLens 100K and place u.data under data/ml-100k/."""

import argparse
import io
import pathlib
import urllib.request
import zipfile

URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default=pathlib.Path(__file__).resolve().parent.parent / "data" / "ml-100k",
                        type=pathlib.Path)
    parser.add_argument("--url", default=URL)
    args = parser.parse_args()
    with urllib.request.urlopen(args.url) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    args.dest.mkdir(parents=True, exist_ok=True)
    (args.dest / "u.data").write_bytes(archive.read("ml-100k/u.data"))
    print(f"wrote {args.dest / 'u.data'}")


if __name__ == "__main__":
    main()
