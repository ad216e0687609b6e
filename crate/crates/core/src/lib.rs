//! Engine for search-augmented reasoning segmentation: rollout grammar,
//! hierarchical rewards, group-relative policy optimisation maths, the
//! multi-turn episode loop, retrieval backends and segmentation metrics.

pub mod annotation;
pub mod config;
pub mod episode;
pub mod grpo;
pub mod mask;
pub mod metrics;
pub mod retrieval;
pub mod reward;
pub mod similarity;
pub mod trajectory;

pub use annotation::{uniform_frame_indices, AnnotationError, FrameRecord, SampleAnnotation};
pub use config::{ConfigError, RunConfig};
pub use episode::{
    build_context, run_episode, ConversationContext, EpisodeConfig, EpisodeError, EpisodeRecord, Policy,
    ScriptedPolicy, SearchLogEntry, Tokenizer, TruncationReason, WhitespaceTokenizer,
};
pub use grpo::{
    apply_info_mask, clipped_objective, compute_advantages, AdvantageSet, GrpoError, ObjectiveConfig,
    RolloutGroup, TokenLayout, TokenSequence,
};
pub use mask::{BinaryMask, MaskError};
pub use metrics::{GtPrompt, MetricReport, MetricsError};
pub use retrieval::{
    BackendError, LocalSearchEngine, SearchEngine, SearchEntry, SearchResultSet, TextIndex,
};
pub use reward::{reward_total, RewardBreakdown, RewardConfig};
pub use similarity::{LexicalCosine, SimilarityProvider};
pub use trajectory::{
    count_valid_actions, parse_trajectory, serialize_trajectory, Mode, SearchCall, SearchTool, Terminal,
    Trajectory,
};
