"""Design-space exploration for convolution loop-nest orderings.

Enumerates every ordering of the six-deep direct-convolution loop nest,
replays each ordering's memory-access stream through a configurable
multi-level cache model, and analyzes the resulting cost surface: which
orderings are robustly fast, how few random samples find a good one, and
how the picture shifts with cache size, thread count and tiling splits.
"""

from .conv import (
    CANONICAL_ORDER,
    WORD_BYTES,
    ArrayLayout,
    LayerParams,
    LoopDim,
    check_perm,
    innermost_dependent_depth,
    needs_atomic,
    oracle_convolve,
    parse_perm,
    perm_str,
    permuted_convolve,
    word_strides,
)
from .permindex import (
    SCHEMES,
    adjacent_transposition_edges,
    all_perms,
    index_of,
    perm_of,
    sjt_path,
)
from .tracegen import (
    Event,
    MemRef,
    RefKind,
    SparsityOptions,
    Tick,
    TraceOptions,
    dump_trace,
    generate_trace,
    ref_count,
    tally,
)
from .cachesim import (
    CacheConfig,
    CacheLevelConfig,
    CacheStats,
    ConfigError,
    config_from_dict,
    config_to_dict,
    preset_config,
    simulate,
    simulate_opt,
    two_level,
    windowed_ipc,
)
from .fastpath import simulate_fast, trace_addresses
from .codegen import CodegenOptions, emit_c, expected_checksum, source_filename
from .explorer import (
    DesignSpace,
    SQUEEZENET_LAYERS,
    load_layers_file,
    preset_layers,
    preset_space,
    read_results,
    run_sweep,
    synthetic_layers,
    tile_sweep,
)
from .analysis import (
    CoverageError,
    ReuseMap,
    SpeedupTable,
    best_of_k,
    first_touch_ranks,
    mc_success_rate,
    random_sampling_requirement,
    rank_permutations,
    reuse_map,
    sample_size,
    speedup_table,
    stability_groups,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
