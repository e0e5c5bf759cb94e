import zlib

import numpy as np


def derive_seed_sequence(root_seed: int, subsystem: str, *counters: int) -> np.random.SeedSequence:
    """
    由顶层种子 + 子系统名 + 计数器派生出独立的 SeedSequence。
    子系统名用 crc32 转成稳定整数，不受 Python 哈希随机化影响。
    """
    key = (zlib.crc32(subsystem.encode("utf-8")),) + tuple(int(c) for c in counters)
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)


def make_rng(root_seed: int, subsystem: str, *counters: int) -> np.random.Generator:
    """基于计数器的 Philox 生成器，同一 (seed, subsystem, counters) 永远得到同一序列"""
    return np.random.Generator(np.random.Philox(derive_seed_sequence(root_seed, subsystem, *counters)))


def derive_seed(root_seed: int, subsystem: str, *counters: int) -> int:
    """派生一个 63 位整数种子，用于需要 int 种子的接口"""
    state = derive_seed_sequence(root_seed, subsystem, *counters).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
