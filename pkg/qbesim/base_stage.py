import time
import logging
from typing import Any, Dict, List

logger = logging.getLogger(__name__)


class BaseStage:
    """
    Base class for the stages of a protocol run.
    Each stage receives the accumulated run data and returns it enriched with its own results.
    """

    def __init__(self, stage_name: str):
        """
        Initialize the stage.

        Args:
            stage_name: Human-readable name used in log lines
        """
        self.stage_name = stage_name

    def log_activity(self, message: str, level: int = logging.INFO):
        """Log stage activity."""
        logger.log(level, f"[{self.stage_name}] {message}")

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Process input data and return results.
        To be implemented by subclasses.

        Args:
            input_data: Input data dictionary

        Returns:
            Results dictionary
        """
        raise NotImplementedError("Subclasses must implement process method")


class StageOrchestrator:
    """
    Runs registered stages in workflow order, feeding each stage the previous stage's output.
    """

    def __init__(self):
        self.stages: Dict[str, BaseStage] = {}

    def register_stage(self, stage_id: str, stage: BaseStage):
        """
        Register a stage with the orchestrator.

        Args:
            stage_id: Unique identifier for the stage
            stage: Stage instance
        """
        self.stages[stage_id] = stage
        logger.debug(f"Stage {stage_id} registered")

    def execute_workflow(self, workflow: List[Dict[str, Any]], initial_data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Execute a workflow of stage steps.

        Args:
            workflow: List of steps with stage_id and optional parameters
            initial_data: Data passed to the first stage

        Returns:
            Dictionary with workflow_steps, final_result, status and (on failure)
            error, failed_stage and exception
        """
        current_data = initial_data
        results = {
            'workflow_steps': [],
            'final_result': None,
            'status': 'in_progress'
        }

        stage_id = None
        try:
            for step in workflow:
                stage_id = step.get('stage_id')
                if not stage_id or stage_id not in self.stages:
                    raise KeyError(f"Invalid stage ID: {stage_id}")

                stage = self.stages[stage_id]
                input_data = {**current_data, **step.get('parameters', {})}

                started = time.perf_counter()
                step_result = stage.process(input_data)
                results['workflow_steps'].append({
                    'stage_id': stage_id,
                    'added_keys': sorted(set(step_result) - set(input_data)),
                    'seconds': time.perf_counter() - started,
                    'status': 'success'
                })
                current_data = step_result

            results['final_result'] = current_data
            results['status'] = 'complete'

        except Exception as e:
            logger.error(f"Error in stage {stage_id}: {str(e)}")
            results['status'] = 'error'
            results['error'] = str(e)
            results['failed_stage'] = stage_id
            results['exception'] = e
            results['workflow_steps'].append({'stage_id': stage_id, 'status': 'error', 'error': str(e)})

        return results
