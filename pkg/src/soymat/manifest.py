"""Run manifests: what a command was given and what it wrote."""

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

from . import __version__

MANIFEST_NAME = "manifest.json"
REPLAY_NAME = "replay_manifest.json"


def sha256_file(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def hash_tree(root, exclude=(MANIFEST_NAME, REPLAY_NAME)):
    """``{relative_path: sha256}`` for every file under ``root``, sorted."""
    out = {}
    for dirpath, dirs, files in os.walk(root):
        dirs.sort()
        for f in sorted(files):
            full = os.path.join(dirpath, f)
            rel = os.path.relpath(full, root).replace(os.sep, "/")
            if rel not in exclude:
                out[rel] = sha256_file(full)
    return dict(sorted(out.items()))


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int = None
    configs: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)    # path -> sha256
    outputs: dict = field(default_factory=dict)   # path relative to the output dir -> sha256
    version: str = __version__

    def record_inputs(self, paths):
        for p in paths:
            if os.path.isdir(p):
                for rel, digest in hash_tree(p).items():
                    self.inputs[os.path.join(p, rel)] = digest
            elif os.path.exists(p):
                self.inputs[p] = sha256_file(p)
        return self

    def write(self, out_dir, name=MANIFEST_NAME):
        self.outputs = hash_tree(out_dir)
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path):
        if os.path.isdir(path):
            path = os.path.join(path, MANIFEST_NAME)
        with open(path) as fh:
            return cls(**json.load(fh))
