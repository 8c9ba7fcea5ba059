"""Small shared fixtures for the model and CLI tests."""

from roifusion.config import RunConfig


def tiny_config(**kw):
    base = dict(n_points=512, scene_points=1024, m1=16, m2=16, sa_points=(64, 16),
                sa_neighbors=(8, 8), sa_mlps=((8, 16), (16, 32)), fp_mlps=((32,), (32,)),
                vote_hidden=16, k_pool=8, pool_mlp=(8, 16), image_out=16, fusion_mlp=(32,),
                head_hidden=(32,), epochs=2, drop_epoch=1, batch_size=2, roi_samples=8,
                n_train=4, n_val=2)
    base.update(kw)
    return RunConfig.toy(**base)
