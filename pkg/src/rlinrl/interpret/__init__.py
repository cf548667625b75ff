from .masknet import (MaskNetwork, MaskUsageError, InterpreterPolicy, attentive_state, compute_mask,
                      sparsity)
from .rewards import (IntegrityError, action_distance, action_match_reward, batch_consistency,
                      branch_returns, reward_distance, rlinrl_reward, rlinrl_reward_K)
from .trainer import (LOG_COLUMNS, MODES, InterpreterConfig, InterpreterResult, StartStates,
                      build_interpreter, rollout_pool, sample_start_states, train_interpreter)
