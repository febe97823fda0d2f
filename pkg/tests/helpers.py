from h2g2net.graph import DatasetSchema, HierarchicalSample, ModalitySchema


def make_schema(channels=(1, 2), feature_len=4, class_count=2, names=None):
    names = names or [f"M{i}" for i in range(len(channels))]
    mods = tuple(ModalitySchema(n, c) for n, c in zip(names, channels))
    return DatasetSchema(mods, feature_len, class_count)


def random_sample(schema, rng, subject="a", label=0, sample_id="s0", scale=1.0):
    feats = {m.name: rng.uniform(-scale, scale, (m.channel_count, schema.feature_len))
             for m in schema.modalities}
    return HierarchicalSample(subject, label, feats, sample_id)
