from .taggers import BaseTagger, FileTagger, OracleTagger, NoisyTagger, build_tagger
