"""Contains default hyperparameters, grids, file formats and dataset info."""


class TrainingDefaults:
    """
    Default values of every training config key.

    Adam betas and epsilon, batch size, epoch count, embedding dimensions and
    the regularizer weight follow the published setup. Learning rate, weight
    decay and the adaptive sampler mechanics are not published and are chosen
    here.
    """
    MODE = 'projb'  # projb | proje
    LOSS = 'listwise'  # pointwise | listwise
    SAMPLER = 'candidate'  # candidate | weighted | adaptive
    P_Y = 0.5
    DELTA = 0.001
    LR = 0.01
    WEIGHT_DECAY = 1e-5
    BATCH_SIZE = 30
    EPOCHS = 100
    DIMS_ENTITY = 100
    DIMS_RELATION = 75
    SEED = 0
    CLUSTER_UPDATE = 'adaptive'  # none | adaptive
    BETA1 = 0.8
    BETA2 = 0.99
    EPS = 1e-8
    ACTIVATION = 'sigmoid'  # sigmoid | tanh
    DIRECTIONS = 'both'  # both | tail
    ADAPTIVE_DECAY = 0.9
    ADAPTIVE_FLOOR = 0.05
    ADAPTIVE_INIT = 0.5
    FEATURE_SCALE = 'log1p'  # none | log1p | max
    FEATURE_METHOD = 'kmeans'
    FEATURE_KERNEL = 'nn'
    KNN_NEIGHBORS = 10
    EVAL_DIRECTIONS = 'tail'  # tail | both


class FeatureSettings:
    """
    Clustering fine-tuner grids and solver settings.
    """
    METHODS = ('spectral_kmeans', 'kmeans', 'fuzzy_cmeans', 'knn_graph')
    KERNELS = ('rbf', 'sigmoid', 'polynomial', 'linear', 'cosine')
    ALL_KERNELS = ('rbf', 'sigmoid', 'polynomial', 'linear', 'cosine', 'nn', 'none')
    ENTITY_KS = (50, 100, 200, 400)
    RELATION_KS = (50, 75, 150, 300)
    KMEANS_MAX_ITER = 300
    KMEANS_TOL = 1e-6  # relative center movement
    FUZZY_M = 2.0
    FUZZY_MAX_ITER = 300
    FUZZY_TOL = 1e-6


class EvaluationSettings:
    """
    Ranking metrics and experiment harness settings.
    """
    HITS_AT = (1, 3, 10)
    RANK_CHUNK = 256
    LOCAL_OPTIMA_TRIALS = 50
    ALPHA = 0.05
    SWEEP_BATCH_SIZES = (1, 10, 30)
    TABLE4_BATCH_SIZES = (1, 10, 30)
    TABLE4_FEATURES = ('pca', 'cluster')
    TABLE4_UPDATES = ('none', 'adaptive')
    TABLE4_SAMPLERS = ('candidate', 'weighted', 'adaptive')
    SEPTILES = 7
    PROBABILITY_FLOOR = 1e-12


class DatasetInfo:
    """
    Split file names and published dataset sizes.

    Download archives are the original release archives. Each entry maps a
    split name to the member path inside the archive.
    """
    SPLITS = ('train', 'valid', 'test')
    SPLIT_FILES = {'train': 'train.txt', 'valid': 'valid.txt', 'test': 'test.txt'}
    FB15K_SIZES = {'entities': 14951, 'relations': 1345, 'train': 483142, 'valid': 50000, 'test': 59071}
    ARCHIVES = {
        'fb15k': {
            'url': 'https://everest.hds.utc.fr/lib/exe/fetch.php?media=en:fb15k.tgz',
            'members': {
                'train': 'FB15k/freebase_mtr100_mte100-train.txt',
                'valid': 'FB15k/freebase_mtr100_mte100-valid.txt',
                'test': 'FB15k/freebase_mtr100_mte100-test.txt',
            },
        },
        'wn18': {
            'url': 'https://everest.hds.utc.fr/lib/exe/fetch.php?media=en:wordnet-mlj12.tar.gz',
            'members': {
                'train': 'wordnet-mlj12/wordnet-mlj12-train.txt',
                'valid': 'wordnet-mlj12/wordnet-mlj12-valid.txt',
                'test': 'wordnet-mlj12/wordnet-mlj12-test.txt',
            },
        },
    }
    USER_AGENT_HEADER = {'user-agent': 'ProjBEngine/1.0.0', "accept": "*/*"}
    MAX_DOWNLOAD_ATTEMPTS = 5


class BinaryFormats:
    """
    Magic bytes and versions of the feature and checkpoint files.
    """
    FEATURE_MAGIC = b'PJBF'
    FEATURE_VERSION = 1
    CHECKPOINT_MAGIC = b'PJBC'
    CHECKPOINT_VERSION = 1
    MODE_CODES = {'proje': 0, 'projb': 1}


class ExitCodes:
    """
    Process exit codes of the command line.
    """
    OK = 0
    USAGE = 1
    DATA = 2
    NUMERICAL = 3


class EnvVars:
    """
    Environment variables read by the command line.
    """
    THREADS = 'PROJB_THREADS'
