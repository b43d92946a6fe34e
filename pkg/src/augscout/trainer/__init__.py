from .core import (
    Continue,
    EarlyStopSpec,
    EarlyStopState,
    FitResult,
    RunRecord,
    Stop,
    TrainerSpec,
    available_trainers,
    default_trainer_spec,
    early_stop_step,
    get_trainer,
    per_class_accuracy,
    register_trainer,
    train_and_eval,
    unregister_trainer,
)
from .protocol import (
    JobDocument,
    command_for,
    register_command,
    run_command_job,
    run_job_document,
    unregister_command,
    write_json_atomic,
)
from .tuning import TuneResult, select_config, tune
