# core/artifacts.py
import os
import tempfile
from pathlib import Path

import structlog

from .digests import canonical_json, digest_file, fnv1a_64

audit_logger = structlog.get_logger("cropwatch.audit")


def atomic_write_bytes(path, data: bytes):
    """Write to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str):
    return atomic_write_bytes(path, text.encode('utf-8'))


def write_json(path, payload):
    return atomic_write_text(path, canonical_json(payload))


class RunArtifacts:
    """
    Collects what one command run reads and writes, then emits the
    manifest. Only reproducible fields go into the manifest file.
    """

    def __init__(self, command, out_dir, seed, config):
        self.command = command
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.config = config
        self.config_digest = fnv1a_64(canonical_json(config).encode('utf-8'))
        self.inputs = {}
        self.outputs = {}

    def add_input(self, label, path=None, digest=None):
        self.inputs[label] = digest if digest is not None else digest_file(path)

    def path(self, name):
        return self.out_dir / name

    def write_text(self, name, text):
        target = atomic_write_text(self.path(name), text)
        self._track(name, text.encode('utf-8'))
        return target

    def write_json(self, name, payload):
        return self.write_text(name, canonical_json(payload))

    def track_file(self, name):
        self._track(name, self.path(name).read_bytes())

    def _track(self, name, data):
        self.outputs[name] = fnv1a_64(data)
        audit_logger.info(f"Wrote {self.path(name)}", digest=self.outputs[name])

    def write_config_echo(self):
        return self.write_json(f"{self.command}.config.json", self.config)

    def manifest(self):
        return {
            'command': self.command,
            'seed': self.seed,
            'config_digest': self.config_digest,
            'inputs': dict(sorted(self.inputs.items())),
            'outputs': dict(sorted(self.outputs.items())),
        }

    def write_manifest(self):
        return atomic_write_text(self.path(f"{self.command}.manifest.json"), canonical_json(self.manifest()))
