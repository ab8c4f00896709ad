# return codes returned by the intruder command
# when intruder is killed by signal N, rc = 128 + N
EXIT_SUCCESS = 0  # everything done, no problems
EXIT_WARNING = 1  # reached normal end of operation, but there were issues
EXIT_ERROR = 2  # usage or input error, terminated abruptly
EXIT_EMPTY = 3  # nothing to act on (e.g. no intruders found)
EXIT_DIVERGED = 4  # training produced a non-finite loss

# intruder scan defaults: cosine threshold and number of tuned singular vectors examined
DEFAULT_EPSILON = 0.5
DEFAULT_K = 10

# scaling factors swept by the intervention experiments
LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)

# epsilon grid used by "intruder sweep" when none is given
EPSILON_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

# numerical tolerances (all arithmetic is float64)
RECONSTRUCTION_TOL = 1e-10
ORTHONORMALITY_TOL = 1e-8
UNIT_NORM_TOL = 1e-12

# checkpoint store
CHECKPOINT_VERSION = 1
MANIFEST_SUFFIX = '.manifest.json'
PAYLOAD_SUFFIX = '.bin'
PAYLOAD_DTYPE = '<f8'  # little-endian float64, row-major
ITEMSIZE = 8

# random number generation
RNG_ALGORITHM = 'PCG64'

# toy lab dimensions, chosen so that 1/sqrt(64) = 0.125 is the chance-level cosine
TOY_INPUT_DIM = 64
TOY_HIDDEN_DIM = 64
BODY_NAMES = ('body.0.weight', 'body.1.weight')

# synthetic pre-trained body: singular values scale * decay**i
BASE_SPECTRUM_SCALE = 4.0
BASE_SPECTRUM_DECAY = 0.85
BASE_SEED = 1234
# the base's first layer reads its top singular directions from the leading input
# coordinates ("known" features); fine-tuning tasks put their class means on the rest
KNOWN_INPUT_FRACTION = 0.5

# synthetic tasks
TASK_CLASSES = 4
TASK_TRAIN_SIZE = 512
TASK_TEST_SIZE = 512
TASK_MARGIN = 1.0
TASK_NOISE = 0.5  # total noise norm; per coordinate it is TASK_NOISE / sqrt(n_in)
PROXY_TASK_ID = 'proxy'
PROXY_SEED = 99

# head retraining: full-batch softmax regression on frozen features
HEAD_FIT_STEPS = 500

# trainer defaults
TRAINER_MODES = ('full', 'lora', 'lora-freeze-a')
DEFAULT_MODE = 'full'
DEFAULT_RANK = 4
DEFAULT_LR = 0.01
DEFAULT_STEPS = 2000
DEFAULT_BATCH_SIZE = 32
SNAPSHOT_FRACTION = 0.1  # snapshot every 10% of the steps unless configured
FIXED_ALPHA = 8.0

# pinned hyper-parameters of the method comparison and continual experiments
COMPARISON_FULL_LR = 0.005
COMPARISON_LORA_LR = 0.003
COMPARISON_LORA_ALPHA = FIXED_ALPHA
COMPARISON_SEEDS = (0, 1, 2)
COMPARISON_RANKS = (1, 4, 16)

# continual learning: one task per seed, trained in this order
CONTINUAL_TASK_SEEDS = (1, 2, 3)

# learning-rate sweep grid, straddling convergence; runs LoRA with this rank and alpha = 2r
LR_GRID = (0.003, 0.01, 0.03, 0.1)
LR_SWEEP_RANK = 1

DASHES = '-' * 78
