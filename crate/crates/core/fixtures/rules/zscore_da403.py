import numpy as np
from scipy import stats


def inference(sample: np.ndarray) -> np.ndarray:
    values = sample[:, 0]
    labels = np.zeros(sample.shape[0])
    # Calculate z-scores
    z_scores = np.abs(stats.zscore(values))
    # Abnormal Rule 1: If z-score is greater than 3, the data point is abnormal
    labels[z_scores > 3] = 1
    return labels
