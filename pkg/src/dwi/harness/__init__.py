"""Experiment harness: file formats, metrics, pipeline stages and the CLI."""
from .config import RunConfig, load_config, parse_config
from .formats import (CheckpointMeta, load_checkpoint, load_protos, save_checkpoint,
                      save_protos)
from .metrics import miou
from .pipeline import (run_all, run_eval, run_finetune, run_fit_proto, run_pretrain,
                       run_report, run_sweep_lambda)
