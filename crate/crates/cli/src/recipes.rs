//! The recipe book: named multi-arm experiments with paired seeds.

/// How a recipe arm initializes its policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecipeInit {
    /// All-zero logits (train purely from scratch).
    Untrained,
    /// Warm start from supervised imitation of oracle-optimal sequences.
    Imitation,
}

/// One arm of a recipe: a label plus config overrides.
#[derive(Debug, Clone)]
pub struct RecipeArm {
    pub name: &'static str,
    pub overrides: &'static [&'static str],
    pub init: RecipeInit,
}

/// A named experiment producing one metrics file per (arm, seed). Arms share
/// seeds, so paired runs see common random numbers.
#[derive(Debug, Clone)]
pub struct ExperimentRecipe {
    pub name: &'static str,
    pub arms: &'static [RecipeArm],
    pub default_seeds: &'static [u64],
}

impl ExperimentRecipe {
    /// Relative output files the recipe produces for the given seeds.
    pub fn expected_outputs(&self, seeds: &[u64]) -> Vec<String> {
        let mut out = Vec::new();
        for arm in self.arms {
            for seed in seeds {
                out.push(format!("{}/{}_seed{}/metrics.csv", self.name, arm.name, seed));
            }
        }
        out
    }
}

/// Scalar-reward GRPO with length and filler bias versus unbiased pairwise
/// GenRM with BRPO, under common random numbers.
pub const HACKING_SEPARATION: ExperimentRecipe = ExperimentRecipe {
    name: "hacking_separation",
    arms: &[
        RecipeArm {
            name: "arm_scalar_grpo",
            overrides: &[
                "advantage.mode=grpo",
                "reward.source=scalar",
                "scalar_rm.lambda_len=0.2",
                "scalar_rm.lambda_filler=0.2",
            ],
            init: RecipeInit::Untrained,
        },
        RecipeArm {
            name: "arm_genrm_brpo",
            overrides: &["advantage.mode=brpo", "reward.source=genrm_sim"],
            init: RecipeInit::Untrained,
        },
    ],
    default_seeds: &[1, 2, 3],
};

/// Train from scratch with the pairwise judge (the unbiased arm on its own).
pub const ZERO_START: ExperimentRecipe = ExperimentRecipe {
    name: "zero_start",
    arms: &[RecipeArm {
        name: "arm_genrm_brpo",
        overrides: &["advantage.mode=brpo", "reward.source=genrm_sim"],
        init: RecipeInit::Untrained,
    }],
    default_seeds: &[1],
};

/// Warm-start variant: the policy first imitates the oracle-optimal
/// sequences of the task pool, then trains with the pairwise judge.
pub const WARM_START: ExperimentRecipe = ExperimentRecipe {
    name: "warm_start",
    arms: &[RecipeArm {
        name: "arm_genrm_brpo_warm",
        overrides: &["advantage.mode=brpo", "reward.source=genrm_sim"],
        init: RecipeInit::Imitation,
    }],
    default_seeds: &[1],
};

pub const BOOK: &[&ExperimentRecipe] = &[&HACKING_SEPARATION, &ZERO_START, &WARM_START];

pub fn find(name: &str) -> Option<&'static ExperimentRecipe> {
    BOOK.iter().copied().find(|r| r.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_names_unique_and_seeds_nonempty() {
        let mut names: Vec<&str> = BOOK.iter().map(|r| r.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), BOOK.len());
        for recipe in BOOK {
            assert!(!recipe.default_seeds.is_empty());
            assert!(!recipe.arms.is_empty());
        }
    }

    #[test]
    fn paired_recipe_produces_six_files_for_three_seeds() {
        let outputs = HACKING_SEPARATION.expected_outputs(&[1, 2, 3]);
        assert_eq!(outputs.len(), 6);
    }
}
