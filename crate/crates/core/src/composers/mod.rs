//! The composer engine: (spec, snapshot, completion target, budget) to a
//! [`ComposedExample`].

pub mod fit;
pub mod synthetic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use fit::{fit_and_concat, fit_files, format_file, ContextBudget, FittedContext, Transform};
pub use synthetic::{
    corrupt_tokens, duplication_context, half_memory_dropout, leak_transform, masked_leak_transform,
    masked_segments, random_token_context,
};

use crate::error::ConfigError;
use crate::model::{ComposedExample, ComposerKind, ComposerSpec, CompletionTarget, Mode, Modifier, RepositorySnapshot};
use crate::pysurface::{extract_declarations, extract_text_chunks, strip_to_code};
use crate::relevance::{RankScheme, SnapshotIndex};
use crate::tokenizer::left_truncate_text;

/// Kinds the `mixed` composer draws from.
pub const MIXED_CHOICES: [ComposerKind; 7] = [
    ComposerKind::FileLevel,
    ComposerKind::PathDistancePy,
    ComposerKind::HalfMemoryPy,
    ComposerKind::DeclarationsPy,
    ComposerKind::TextFiles,
    ComposerKind::RandomFiles,
    ComposerKind::Duplication,
];

/// Per-example seed: the first 8 bytes of SHA-256 over the run seed and the example id.
pub fn derive_seed(seed: u64, example_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(example_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Uniform draw over [`MIXED_CHOICES`]; duplication is redrawn in evaluation mode.
pub fn mixed_choice<R: Rng + ?Sized>(mode: Mode, rng: &mut R) -> ComposerKind {
    loop {
        let k = MIXED_CHOICES[rng.gen_range(0..MIXED_CHOICES.len())];
        if !(mode == Mode::Evaluation && k == ComposerKind::Duplication) {
            return k;
        }
    }
}

/// Composes one example, indexing the snapshot on the fly.
pub fn compose(
    spec: &ComposerSpec,
    snapshot: &RepositorySnapshot,
    completion: &CompletionTarget,
    budget: &ContextBudget<'_>,
) -> Result<ComposedExample, ConfigError> {
    compose_indexed(spec, &SnapshotIndex::new(snapshot), completion, budget)
}

/// Composes one example against a prebuilt index, so several completion files
/// of one commit share the line-set cache.
pub fn compose_indexed(
    spec: &ComposerSpec,
    index: &SnapshotIndex<'_>,
    completion: &CompletionTarget,
    budget: &ContextBudget<'_>,
) -> Result<ComposedExample, ConfigError> {
    spec.validate()?;
    let example_id = completion.example_id();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &example_id));
    let (kind, resolved) = match spec.kind {
        ComposerKind::Mixed => {
            let k = mixed_choice(spec.mode, &mut rng);
            (k, Some(k))
        }
        k => (k, None),
    };
    let context = compose_context(kind, spec, index, completion, budget, &mut rng);
    Ok(ComposedExample {
        example_id,
        repo: completion.repo.clone(),
        commit: completion.commit.clone(),
        composer: spec.id(),
        modifier: spec.modifier,
        resolved_composer: resolved,
        completion_path: completion.file.path.clone(),
        context,
        completion: format_file(&completion.file),
    })
}

fn ranked_context(
    scheme: RankScheme,
    modifier: Modifier,
    index: &SnapshotIndex<'_>,
    completion: &CompletionTarget,
    budget: &ContextBudget<'_>,
    rank_seed: u64,
    transform: Option<&mut Transform<'_>>,
) -> String {
    let mut ranked = index.rank(completion, scheme, rank_seed);
    if modifier == Modifier::Irrelevant {
        ranked = ranked.inverted();
    }
    let mut fitted = fit_files(&ranked, budget, transform);
    if modifier == Modifier::Reversed {
        fitted.reverse();
    }
    fitted.concat()
}

/// Keeps a synthetic context within the budget after a lossy decode or an
/// appended leak segment.
fn clamp(text: String, budget: &ContextBudget<'_>) -> String {
    if budget.tokenizer.count(&text) <= budget.max_context_tokens {
        text
    } else {
        left_truncate_text(budget.tokenizer, &text, budget.max_context_tokens).0
    }
}

fn compose_context(
    kind: ComposerKind,
    spec: &ComposerSpec,
    index: &SnapshotIndex<'_>,
    completion: &CompletionTarget,
    budget: &ContextBudget<'_>,
    rng: &mut ChaCha8Rng,
) -> String {
    let modifier = spec.modifier;
    let ranked = |scheme, transform: Option<&mut Transform<'_>>, rank_seed| {
        ranked_context(scheme, modifier, index, completion, budget, rank_seed, transform)
    };
    match kind {
        ComposerKind::FileLevel => String::new(),
        ComposerKind::PathDistancePy => ranked(RankScheme::PathDistancePy, None, 0),
        ComposerKind::LinesIouPy => ranked(RankScheme::LinesIouPy, None, 0),
        ComposerKind::TextFiles => ranked(RankScheme::TextGroups, None, 0),
        ComposerKind::RandomFiles => ranked(RankScheme::RandomAll, None, rng.gen()),
        ComposerKind::RandomPy => ranked(RankScheme::RandomPy, None, rng.gen()),
        ComposerKind::CodeChunks => {
            let mut t = |c: &str| strip_to_code(c);
            ranked(RankScheme::PathDistancePy, Some(&mut t), 0)
        }
        ComposerKind::DeclarationsPy => {
            let mut t = |c: &str| extract_declarations(c);
            ranked(RankScheme::PathDistancePy, Some(&mut t), 0)
        }
        ComposerKind::TextChunksPy => {
            let mut t = |c: &str| extract_text_chunks(c);
            ranked(RankScheme::PathDistancePy, Some(&mut t), 0)
        }
        ComposerKind::HalfMemoryPy => {
            let p = spec.dropout_p;
            let mut t = |c: &str| half_memory_dropout(c, p, &mut *rng);
            ranked(RankScheme::PathDistancePy, Some(&mut t), 0)
        }
        ComposerKind::RandomTokens => {
            let tok = budget.tokenizer;
            let ids = random_token_context(budget.max_context_tokens, rng, tok);
            clamp(tok.decode(&ids), budget)
        }
        ComposerKind::Duplication => duplication_context(&completion.file, budget),
        ComposerKind::Leak => {
            let base = ranked(RankScheme::PathDistancePy, None, 0);
            let out = leak_transform(&base, &completion.file.content, spec.leak_segments, rng, budget.tokenizer);
            clamp(out, budget)
        }
        ComposerKind::MaskedLeak => {
            let base = ranked(RankScheme::PathDistancePy, None, 0);
            let out = masked_leak_transform(&base, &completion.file.content, spec.mask_p, rng, budget.tokenizer);
            clamp(out, budget)
        }
        ComposerKind::Mixed => unreachable!("mixed resolves to a concrete kind first"),
    }
}
