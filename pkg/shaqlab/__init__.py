from .mcg import (MarkovConvexGame,
                  coalition_value_iteration,
                  joint_value_iteration,
                  all_coalition_values,
                  check_convexity,
                  generate_convex_game,
                  validate_game)
from .shapley import (markov_shapley_table_exact,
                      markov_shapley_table_sampled,
                      marginal_contribution)
from .validity import (check_efficiency,
                       check_dummy,
                       check_fairness,
                       check_markov_core)
from .bellman import apply_operator, fixed_point_iterate, stochastic_sbo_update
from .shaq_ import ShapleyQLearner, shaq
from .environments import MatrixGame, PredatorPrey, mcg_as_env
