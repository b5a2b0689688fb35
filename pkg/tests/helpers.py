import numpy as np

from dcdnn.dataset import TrainSample
from dcdnn.fcnet import input_dim


def make_sample(ref, target, block_size=4, ref_lines=1, group_id=-1, origin_xy=(0, 0), image_id=0, mean=0.0):
    return TrainSample(np.asarray(ref, dtype=np.float64), np.asarray(target, dtype=np.float64), mean,
                       (image_id, origin_xy[0], origin_xy[1], block_size), ref_lines, group_id)


def random_samples(rng, count, block_size=4, ref_lines=1, scale=20.0):
    return [make_sample(rng.normal(0, scale, input_dim(block_size, ref_lines)),
                        rng.normal(0, scale, block_size * block_size),
                        block_size, ref_lines, group_id=i, origin_xy=(0, 4 * i))
            for i in range(count)]
