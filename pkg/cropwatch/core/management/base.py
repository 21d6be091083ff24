"""
Shared plumbing for the experiment commands: config resolution, run
artifacts, run records and error translation.
"""
import time
from pathlib import Path

import structlog
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError

from core.artifacts import RunArtifacts
from core.exceptions import CropwatchError, ValidationError
from core.models import RunRecord
from core.serializers import load_config_file, validated

logger = structlog.get_logger("cropwatch.commands")

MAX_SEED = (1 << 64) - 1


def resolve_seed(flag, file_value):
    """--seed beats the config file, which beats CROPWATCH_DEFAULT_SEED."""
    seed = flag if flag is not None else file_value
    if seed is None:
        seed = settings.CROPWATCH_DEFAULT_SEED
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        raise ValidationError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return seed


class RunCommand(BaseCommand):
    """
    Base class for commands that turn a resolved config into files under
    ``--out``. Subclasses set ``name``, ``serializer_class`` and
    ``flags`` (option dest -> config key) and implement ``run``.
    """
    name = None
    serializer_class = None
    flags = {}

    def add_arguments(self, parser):
        parser.add_argument('--config', help="JSON file with the run configuration.")
        parser.add_argument('--seed', type=int, help="Root seed (unsigned 64-bit).")
        parser.add_argument('--out', help="Output directory (default: CROPWATCH_OUTPUT_DIR/<command>).")
        self.add_run_arguments(parser)

    def add_run_arguments(self, parser):
        pass

    def overrides(self, options):
        return {key: options[dest] for dest, key in self.flags.items() if options.get(dest) is not None}

    def run(self, values, artifacts):
        raise NotImplementedError

    def handle(self, *args, **options):
        started = time.monotonic()
        artifacts = None
        try:
            data = load_config_file(options.get('config'))
            seed = resolve_seed(options.get('seed'), data.pop('seed', None))
            data.update(self.overrides(options))
            values = dict(validated(self.serializer_class, data, self.name))
            out_dir = Path(options.get('out') or settings.CROPWATCH_OUTPUT_DIR / self.name)
            artifacts = RunArtifacts(self.name, out_dir, seed, {**values, 'seed': seed})
            if options.get('config'):
                artifacts.add_input('config', options['config'])
            self.run(values, artifacts)
            artifacts.write_config_echo()
            artifacts.write_manifest()
        except OSError as exc:
            self.record(artifacts, started, 'FAILED', str(exc))
            raise CommandError(f"{self.name}: {exc}", returncode=2)
        except (CropwatchError, IndexError) as exc:
            self.record(artifacts, started, 'FAILED', str(exc))
            raise CommandError(f"{self.name}: {exc}", returncode=1)
        self.record(artifacts, started, 'SUCCESS')
        return None

    def record(self, artifacts, started, status, message=''):
        wall_time = round(time.monotonic() - started, 3)
        logger.info("Command finished", command=self.name, status=status, wall_time_seconds=wall_time)
        if artifacts is None:
            return
        try:
            RunRecord.objects.create(
                command=self.name,
                seed=str(artifacts.seed),
                config_digest=artifacts.config_digest,
                output_dir=str(artifacts.out_dir),
                input_digests=dict(artifacts.inputs),
                output_digests=dict(artifacts.outputs),
                wall_time_seconds=wall_time,
                status=status,
                message=message,
            )
        except DatabaseError as exc:
            logger.warning("Run record not stored", command=self.name, error=str(exc))
