import logging
import os
from typing import Any, Dict, Mapping, Optional

from langchain_core.runnables import RunnableConfig

from src.core.state import EvaluationState, RunConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "ROI10D_"


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """RunConfig fields set through ROI10D_<FIELD> variables."""
    environ = os.environ if environ is None else environ
    found = {}
    for name in RunConfig.model_fields:
        key = f"{ENV_PREFIX}{name.upper()}"
        if key in environ:
            found[name] = environ[key]
    return found


def resolve_run_config(base: RunConfig, overrides: Mapping[str, Any], environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Precedence: explicit overrides > environment > base."""
    data = base.model_dump()
    data.update(env_overrides(environ))
    data.update({k: v for k, v in overrides.items() if k in RunConfig.model_fields and v is not None})
    return RunConfig.model_validate(data)


def hydrate_from_env(state: EvaluationState, config: Optional[RunnableConfig] = None) -> Dict[str, Any]:
    cfg = (config or {}).get("configurable", {})

    run = resolve_run_config(state.config, cfg)
    run.validate_paths(need_predictions=True)
    logger.debug("Hydrated run config: %s", run.model_dump(mode="json"))
    return {"config": run}
