# Default configuration

# Embedding (phi)
DEFAULT_EMBED_DIM = 64
DEFAULT_HIDDEN = (128, 128)
DEFAULT_NORM = 'l1'
DEFAULT_ALPHA_EXPONENT = 2.0
DEFAULT_BATCH_SIZE = 512
DEFAULT_LR = 5e-4
DEFAULT_WEIGHT_DECAY = 0.0
DEFAULT_EMBED_STEPS = 100000
DEFAULT_LOG_EVERY = 100
DEFAULT_VIOLATION_TOLERANCE = 0.5

# Prioritized replay
DEFAULT_PER_ALPHA = 0.6
DEFAULT_PER_EPSILON = 0.1
DEFAULT_PRIORITY = 'penalty'

# Latent transition model (rho)
DEFAULT_DYN_HIDDEN = 128
DEFAULT_DYN_STEPS = 10000

# Plan-Dist
DEFAULT_HORIZON = 5
DEFAULT_NUM_SEQUENCES = 20
DEFAULT_PLAN_BUDGET = 50
DEFAULT_NUM_GOALS = 100

# Tabular Q-learning
DEFAULT_Q_EPISODES = 500
DEFAULT_Q_LR = 0.5
DEFAULT_GAMMA = 0.99
DEFAULT_EPSILON_START = 1.0
DEFAULT_EPSILON_END = 0.05
DEFAULT_EPSILON_DECAY_EPISODES = 200
DEFAULT_SUCCESS_THRESHOLD = 0.95
DEFAULT_SUCCESS_WINDOW = 20

# GCSL
DEFAULT_GCSL_STEPS = 20000
DEFAULT_GCSL_BATCH_SIZE = 256

# Data collection
DEFAULT_NUM_TRAJECTORIES = 100
DEFAULT_COLLECT_EPSILON = 0.1

# Environments
DEFAULT_MAX_EPISODE_STEPS = 50
GRID_ACTIONS = 4
MOUNTAIN_HILL_ACTIONS = 3

# Audits on non-enumerable envs
DEFAULT_EVAL_PAIRS = 10000

# Query server
DEFAULT_PORT = 9000

MANIFEST_SUFFIX = '.manifest.json'
