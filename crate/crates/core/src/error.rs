use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: input is missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("no records left after filtering")]
    EmptyDataset,

    #[error("formula error: {0}")]
    Formula(String),

    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("too few observations: n = {n}, p = {p}")]
    TooFewObservations { n: usize, p: usize },

    #[error("both treatment arms are required ({0})")]
    SingleArm(String),

    #[error("nothing to impute from: every productivity value is missing")]
    NothingToImpute,

    #[error("productivity has missing values; run imputation first")]
    MissingProductivity,

    #[error("fold {0} does not contain both treatment arms")]
    SingleArmFold(usize),

    #[error("degenerate propensity model: logit scores have zero spread")]
    DegenerateScores,

    #[error("degenerate scale: zero pooled variance with unequal means for `{0}`")]
    DegenerateScale(String),

    #[error("no overlap: all overlap weights are numerically zero")]
    NoOverlap,

    #[error("degenerate simulation spec: {0}")]
    DegenerateSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no inputs")]
    NoInputs,

    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn in_stage(stage: &str, source: Error) -> Self {
        Error::Stage { stage: stage.to_string(), source: Box::new(source) }
    }
}
